//! Training loop: random aligned crops, permutation-invariant SI-SNR
//! objective, adaptive-moment updates with global gradient clipping, plateau
//! learning-rate halving, and checkpoints that resume bit-exactly.
//!
//! Every random draw is derived from (seed, purpose tag, counters) instead
//! of a long-lived generator, so a resumed run replays the exact draws the
//! uninterrupted run would have made.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::loss::pit_loss_graph;
use crate::metrics;
use crate::model::checkpoint::{self, TrainState};
use crate::model::Model;
use crate::tensor::Tensor;
use crate::util::{seeded_rng, tag};
use crate::wav::{read_wav, SAMPLE_RATE};
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub crop_seconds: f64,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
    pub seed: u64,
    /// Extra checkpoint cadence in steps; 0 saves only per epoch.
    pub checkpoint_every: u64,
    /// Hard cap on optimizer steps; 0 means unlimited.
    pub max_steps: u64,
    /// Stop once the mean train-set SI-SNR reaches this many dB.
    pub stop_at_train_si_snr: Option<f64>,
    /// Epochs without validation improvement before the rate halves.
    pub plateau_patience: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            learning_rate: 1.5e-4,
            max_epochs: 120,
            crop_seconds: 3.0,
            grad_clip: 5.0,
            seed: 0,
            checkpoint_every: 0,
            max_steps: 0,
            stop_at_train_si_snr: None,
            plateau_patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn crop_samples(&self) -> usize {
        (self.crop_seconds * SAMPLE_RATE as f64).round() as usize
    }

    pub fn validate(&self, window: usize) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.crop_samples() < window {
            return Err(Error::config(format!(
                "crop of {} samples is shorter than the encoder window {window}",
                self.crop_samples()
            )));
        }
        if self.plateau_patience < 1 {
            return Err(Error::config("plateau patience must be at least 1"));
        }
        Ok(())
    }
}

/// One training or evaluation utterance held in memory.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub id: String,
    pub mixture: Vec<f64>,
    pub references: Vec<Vec<f64>>,
}

/// Read every manifest entry's mixture and reference waveforms.
pub fn load_utterances(manifest: &Path) -> Result<Vec<Utterance>> {
    let entries = crate::mixsim::read_manifest(manifest)?;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let (mixture, _) = read_wav(&e.mixture)?;
        let mut references = Vec::with_capacity(e.sources.len());
        for p in &e.sources {
            let (wave, _) = read_wav(p)?;
            if wave.len() != mixture.len() {
                return Err(Error::audio(format!(
                    "{}: reference length {} does not match mixture length {}",
                    e.id,
                    wave.len(),
                    mixture.len()
                )));
            }
            references.push(wave);
        }
        if mixture.is_empty() || references.is_empty() {
            return Err(Error::audio(format!("{}: empty utterance", e.id)));
        }
        out.push(Utterance {
            id: e.id,
            mixture,
            references,
        });
    }
    Ok(out)
}

/// One shared random offset for the mixture and every reference; inputs at
/// or under the crop length are right-padded with zeros instead.
pub fn random_crop<R: Rng>(
    mixture: &[f64],
    references: &[Vec<f64>],
    crop: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = mixture.len();
    if n <= crop {
        let pad = |x: &[f64]| {
            let mut out = x.to_vec();
            out.resize(crop, 0.0);
            out
        };
        return (pad(mixture), references.iter().map(|r| pad(r)).collect());
    }
    let offset = rng.gen_range(0..=n - crop);
    (
        mixture[offset..offset + crop].to_vec(),
        references
            .iter()
            .map(|r| r[offset..offset + crop].to_vec())
            .collect(),
    )
}

/// Adam accumulators, aligned with the model's declared parameter order.
pub struct Optimizer {
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl Optimizer {
    pub fn new(model: &Model<f32>) -> Self {
        let zeros: Vec<Tensor<f32>> = model
            .params()
            .iter()
            .map(|(_, t)| Tensor::zeros(&t.shape))
            .collect();
        Optimizer {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Rebuild from checkpointed state, checking names and shapes.
    pub fn from_state(model: &Model<f32>, state: &TrainState) -> Result<Self> {
        let params = model.params();
        if state.m.len() != params.len() || state.v.len() != params.len() {
            return Err(Error::checkpoint(format!(
                "optimizer state covers {} of {} parameters",
                state.m.len(),
                params.len()
            )));
        }
        let check = |moments: &[(String, Tensor<f32>)]| -> Result<Vec<Tensor<f32>>> {
            moments
                .iter()
                .zip(&params)
                .map(|((mn, mt), (pn, pt))| {
                    if mn != pn || mt.shape != pt.shape {
                        return Err(Error::checkpoint(format!(
                            "optimizer moment {mn} does not match parameter {pn}"
                        )));
                    }
                    Ok(mt.clone())
                })
                .collect()
        };
        Ok(Optimizer {
            step: state.step,
            m: check(&state.m)?,
            v: check(&state.v)?,
        })
    }

    fn named_moments(&self, model: &Model<f32>) -> (Vec<(String, Tensor<f32>)>, Vec<(String, Tensor<f32>)>) {
        let names: Vec<String> = model.params().iter().map(|(n, _)| n.clone()).collect();
        let pair = |ts: &[Tensor<f32>]| {
            names
                .iter()
                .cloned()
                .zip(ts.iter().cloned())
                .collect::<Vec<_>>()
        };
        (pair(&self.m), pair(&self.v))
    }
}

/// One cropped batch member, single precision for the graph.
pub struct CropItem {
    pub id: String,
    pub mixture: Vec<f32>,
    pub references: Vec<Vec<f32>>,
}

pub struct StepStats {
    pub loss: f64,
    /// Pre-clip global gradient norm.
    pub grad_norm: f64,
}

/// One optimizer step on one batch: forward every mixture, mean PIT loss,
/// backward, clip the global gradient norm, apply the adaptive-moment
/// update. A non-finite loss aborts and names the offending sample.
pub fn train_step(
    model: &mut Model<f32>,
    batch: &[CropItem],
    opt: &mut Optimizer,
    lr: f64,
    grad_clip: f64,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut g: Graph<f32> = Graph::new();
    let vars = model.bind(&mut g, true);
    let param_vars = vars.collect();

    let mut item_losses: Vec<Var> = Vec::with_capacity(batch.len());
    for item in batch {
        let x = g.constant(Tensor::from_slice(&[1, item.mixture.len()], &item.mixture)?);
        let ests = model.forward_graph(&mut g, &vars, x, item.mixture.len())?;
        let refs: Vec<Var> = item
            .references
            .iter()
            .map(|r| Ok(g.constant(Tensor::from_slice(&[1, r.len()], r)?)))
            .collect::<Result<_>>()?;
        let (item_loss, _) = pit_loss_graph(&mut g, &ests, &refs)?;
        let value = g.value(item_loss).data[0];
        if !value.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite loss on sample {} at step {}",
                item.id,
                opt.step + 1
            )));
        }
        item_losses.push(item_loss);
    }

    let mut total = item_losses[0];
    for &l in &item_losses[1..] {
        total = g.add(total, l)?;
    }
    let loss = g.scale(total, 1.0 / batch.len() as f32);
    let loss_value = g.value(loss).data[0] as f64;
    // each item is clamped to +-30 dB, so the mean can only leave the
    // interval through single-precision rounding noise
    if !loss_value.is_finite() || loss_value.abs() > metrics::DB_CLAMP + 1e-3 {
        return Err(Error::numeric(format!(
            "batch loss {loss_value} escaped the clamp interval"
        )));
    }
    g.backward(loss)?;

    let mut sq = 0.0f64;
    for &pv in &param_vars {
        if let Some(grad) = g.grad(pv) {
            for &gv in grad {
                sq += (gv as f64) * (gv as f64);
            }
        }
    }
    let grad_norm = sq.sqrt();
    let clip_scale = if grad_norm > grad_clip {
        grad_clip / grad_norm
    } else {
        1.0
    };

    opt.step += 1;
    let t = opt.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    let mut params = model.params_mut();
    for (k, (_, tensor)) in params.iter_mut().enumerate() {
        let grad = g.grad(param_vars[k]);
        for (i, p) in tensor.data.iter_mut().enumerate() {
            let gi = grad.map_or(0.0, |gr| gr[i] as f64) * clip_scale;
            let m = ADAM_BETA1 * f64::from(opt.m[k].data[i]) + (1.0 - ADAM_BETA1) * gi;
            let v = ADAM_BETA2 * f64::from(opt.v[k].data[i]) + (1.0 - ADAM_BETA2) * gi * gi;
            opt.m[k].data[i] = m as f32;
            opt.v[k].data[i] = v as f32;
            let update = lr * (m / bias1) / ((v / bias2).sqrt() + ADAM_EPS);
            *p = (*p as f64 - update) as f32;
        }
    }

    Ok(StepStats {
        loss: loss_value,
        grad_norm,
    })
}

/// Mean PIT SI-SNR of the model's separations over a set, full length.
pub fn mean_pit_si_snr(model: &Model<f32>, set: &[Utterance]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let mut acc = 0.0;
    for u in set {
        let mixture: Vec<f32> = u.mixture.iter().map(|&v| v as f32).collect();
        let ests = model.separate(&mixture)?;
        let ests: Vec<Vec<f64>> = ests
            .iter()
            .map(|e| e.iter().map(|&v| v as f64).collect())
            .collect();
        let (score, _) = metrics::pit_si_snr(&ests, &u.references)?;
        acc += score;
    }
    Ok(acc / set.len() as f64)
}

pub struct FitResult {
    /// Mean batch loss per optimizer step.
    pub loss_curve: Vec<f64>,
    /// (epoch, mean validation SI-SNR) per completed epoch.
    pub val_curve: Vec<(u64, f64)>,
    /// Last measured train-set SI-SNR, if the stop criterion was active.
    pub train_si_snr: Option<f64>,
    pub steps: u64,
    pub stopped_early: bool,
}

fn save_state(
    path: &Path,
    model: &Model<f32>,
    opt: &Optimizer,
    seed: u64,
    epoch: u64,
    lr: f64,
    plateau: u32,
    best_val: f64,
) -> Result<()> {
    let (m, v) = opt.named_moments(model);
    let state = TrainState {
        step: opt.step,
        epoch,
        seed,
        lr,
        plateau_epochs: plateau,
        best_val_si_snr: best_val,
        m,
        v,
    };
    checkpoint::save(path, model, Some(&state))
}

/// Epoch loop over the training set with seeded shuffling, optional
/// validation scoring with best-checkpoint retention and plateau halving,
/// and bit-exact resume from a checkpointed `TrainState`.
pub fn fit<W: Write>(
    model: &mut Model<f32>,
    train_set: &[Utterance],
    val_set: &[Utterance],
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    resume: Option<&TrainState>,
    log: &mut W,
) -> Result<FitResult> {
    config.validate(model.config.window)?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let steps_per_epoch = (train_set.len() + config.batch_size - 1) / config.batch_size;
    let crop = config.crop_samples();

    let (mut opt, mut lr, mut plateau, mut best_val) = match resume {
        Some(state) => {
            if state.seed != config.seed {
                return Err(Error::checkpoint(format!(
                    "checkpoint was trained with seed {}, this run is configured with {}",
                    state.seed, config.seed
                )));
            }
            (
                Optimizer::from_state(model, state)?,
                state.lr,
                state.plateau_epochs,
                state.best_val_si_snr,
            )
        }
        None => (
            Optimizer::new(model),
            config.learning_rate,
            0,
            f64::NEG_INFINITY,
        ),
    };
    let start_step = opt.step;

    writeln!(log, "#kind\tstep\tepoch\tloss\tgrad_norm\tlr")?;

    let mut loss_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut train_si_snr = None;
    let mut stopped_early = false;

    let start_epoch = (start_step / steps_per_epoch as u64) as usize;
    'epochs: for epoch in start_epoch..config.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = seeded_rng(config.seed, &[tag::SHUFFLE, epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let global = epoch as u64 * steps_per_epoch as u64 + bi as u64;
            if global < start_step {
                continue;
            }
            let batch: Vec<CropItem> = chunk
                .iter()
                .enumerate()
                .map(|(slot, &idx)| {
                    let u = &train_set[idx];
                    let mut crop_rng =
                        seeded_rng(config.seed, &[tag::CROP, global, slot as u64]);
                    let (mix, refs) = random_crop(&u.mixture, &u.references, crop, &mut crop_rng);
                    CropItem {
                        id: u.id.clone(),
                        mixture: mix.iter().map(|&v| v as f32).collect(),
                        references: refs
                            .iter()
                            .map(|r| r.iter().map(|&v| v as f32).collect())
                            .collect(),
                    }
                })
                .collect();

            let stats = train_step(model, &batch, &mut opt, lr, config.grad_clip)?;
            loss_curve.push(stats.loss);
            writeln!(
                log,
                "train\t{}\t{}\t{:.6}\t{:.6}\t{:.8}",
                opt.step, epoch, stats.loss, stats.grad_norm, lr
            )?;

            if config.checkpoint_every > 0 && opt.step % config.checkpoint_every == 0 {
                if let Some(dir) = checkpoint_dir {
                    save_state(
                        &dir.join("last.ckpt"),
                        model,
                        &opt,
                        config.seed,
                        opt.step / steps_per_epoch as u64,
                        lr,
                        plateau,
                        best_val,
                    )?;
                }
            }
            if config.max_steps > 0 && opt.step >= config.max_steps {
                stopped_early = true;
            }
            if stopped_early {
                break;
            }
        }

        if let Some(threshold) = config.stop_at_train_si_snr {
            let score = mean_pit_si_snr(model, train_set)?;
            train_si_snr = Some(score);
            writeln!(
                log,
                "train_eval\t{}\t{}\t{:.4}\t-\t{:.8}",
                opt.step, epoch, score, lr
            )?;
            if score >= threshold {
                stopped_early = true;
            }
        }

        if !stopped_early && !val_set.is_empty() {
            let score = mean_pit_si_snr(model, val_set)?;
            val_curve.push((epoch as u64, score));
            writeln!(
                log,
                "val\t{}\t{}\t{:.4}\t-\t{:.8}",
                opt.step, epoch, score, lr
            )?;
            if score > best_val {
                best_val = score;
                plateau = 0;
                if let Some(dir) = checkpoint_dir {
                    save_state(
                        &dir.join("best.ckpt"),
                        model,
                        &opt,
                        config.seed,
                        opt.step / steps_per_epoch as u64,
                        lr,
                        plateau,
                        best_val,
                    )?;
                }
            } else {
                plateau += 1;
                if plateau >= config.plateau_patience {
                    lr *= 0.5;
                    plateau = 0;
                }
            }
        }

        if let Some(dir) = checkpoint_dir {
            save_state(
                &dir.join("last.ckpt"),
                model,
                &opt,
                config.seed,
                opt.step / steps_per_epoch as u64,
                lr,
                plateau,
                best_val,
            )?;
        }
        if stopped_early {
            break 'epochs;
        }
    }

    // covers runs that never enter the loop, e.g. a zero-epoch save of the
    // initial model
    if let Some(dir) = checkpoint_dir {
        save_state(
            &dir.join("last.ckpt"),
            model,
            &opt,
            config.seed,
            opt.step / steps_per_epoch as u64,
            lr,
            plateau,
            best_val,
        )?;
    }

    Ok(FitResult {
        loss_curve,
        val_curve,
        train_si_snr,
        steps: opt.step,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig, Upsampling};
    use std::io::sink;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            feature_channels: 8,
            window: 16,
            hop: 8,
            depth: 1,
            blocks: 1,
            sources: 2,
            states: 4,
            upsampling: Upsampling::TransposedConv,
            bottleneck_channels: 8,
        }
    }

    fn sine(n: usize, freq: f64, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|t| amp * (std::f64::consts::TAU * freq * t as f64 / 8000.0).sin())
            .collect()
    }

    fn toy_utterances(n_samples: usize) -> Vec<Utterance> {
        let a = sine(n_samples, 400.0, 0.4);
        let b = sine(n_samples, 1100.0, 0.4);
        let mixture: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        vec![Utterance {
            id: "toy".to_string(),
            mixture,
            references: vec![a, b],
        }]
    }

    fn crop_items(utts: &[Utterance]) -> Vec<CropItem> {
        utts.iter()
            .map(|u| CropItem {
                id: u.id.clone(),
                mixture: u.mixture.iter().map(|&v| v as f32).collect(),
                references: u
                    .references
                    .iter()
                    .map(|r| r.iter().map(|&v| v as f32).collect())
                    .collect(),
            })
            .collect()
    }

    fn param_bits(model: &Model<f32>) -> Vec<u32> {
        model
            .params()
            .iter()
            .flat_map(|(_, t)| t.data.iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn crop_degenerate_padding_and_determinism() {
        let mix: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let refs = vec![mix.clone()];
        let mut rng = seeded_rng(1, &[400]);
        let (c, r) = random_crop(&mix, &refs, 100, &mut rng);
        assert_eq!(c, mix);
        assert_eq!(r[0], mix);

        let (c, _) = random_crop(&mix[..60], &refs, 100, &mut rng);
        assert_eq!(c.len(), 100);
        assert_eq!(&c[..60], &mix[..60]);
        assert!(c[60..].iter().all(|&v| v == 0.0));

        let (a, _) = random_crop(&mix, &refs, 40, &mut seeded_rng(2, &[401]));
        let (b, _) = random_crop(&mix, &refs, 40, &mut seeded_rng(2, &[401]));
        assert_eq!(a, b);
    }

    #[test]
    fn crop_offsets_are_uniform() {
        // 5 s at 8 kHz cropped to 3 s: offsets live in [0, 16000]; the ramp
        // makes the drawn offset readable off the first cropped sample
        let mix: Vec<f64> = (0..40_000).map(|i| i as f64).collect();
        let refs: Vec<Vec<f64>> = Vec::new();
        let mut rng = seeded_rng(3, &[402]);
        let mut bins = [0u32; 10];
        let draws = 10_000;
        let (mut lo, mut hi) = (usize::MAX, 0);
        for _ in 0..draws {
            let (c, _) = random_crop(&mix, &refs, 24_000, &mut rng);
            let offset = c[0] as usize;
            lo = lo.min(offset);
            hi = hi.max(offset);
            bins[(offset * 10 / 16_001).min(9)] += 1;
        }
        let expected = draws as f64 / 10.0;
        let chi2: f64 = bins
            .iter()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        // 9 degrees of freedom at p = 0.001
        assert!(chi2 < 27.88, "chi-square {chi2}");
        assert!(lo < 10 && hi > 15_990, "offset range [{lo}, {hi}]");
    }

    #[test]
    fn zero_learning_rate_and_zero_clip_leave_parameters_alone() {
        let utts = toy_utterances(240);
        let batch = crop_items(&utts);

        let mut model: Model<f32> = Model::init(tiny_config(), 5).unwrap();
        let before = param_bits(&model);
        let mut opt = Optimizer::new(&model);
        train_step(&mut model, &batch, &mut opt, 0.0, 5.0).unwrap();
        assert_eq!(param_bits(&model), before);
        assert_eq!(opt.step, 1);

        let mut model: Model<f32> = Model::init(tiny_config(), 5).unwrap();
        let before = param_bits(&model);
        let mut opt = Optimizer::new(&model);
        let stats = train_step(&mut model, &batch, &mut opt, 1e-3, 0.0).unwrap();
        assert!(stats.grad_norm > 0.0);
        assert_eq!(param_bits(&model), before);
    }

    #[test]
    fn repeated_batch_loss_trends_down() {
        let utts = toy_utterances(240);
        let batch = crop_items(&utts);
        let mut model: Model<f32> = Model::init(tiny_config(), 6).unwrap();
        let mut opt = Optimizer::new(&model);
        let mut first = 0.0;
        let mut last = 0.0;
        for k in 0..50 {
            let stats = train_step(&mut model, &batch, &mut opt, 1e-3, 5.0).unwrap();
            if k == 0 {
                first = stats.loss;
            }
            last = stats.loss;
        }
        assert!(last < first, "first {first}, last {last}");
    }

    #[test]
    fn poisoned_parameters_never_train_silently() {
        let utts = toy_utterances(240);
        let batch = crop_items(&utts);
        let mut model: Model<f32> = Model::init(tiny_config(), 7).unwrap();
        model.params_mut()[0].1.data[0] = f32::NAN;
        let mut opt = Optimizer::new(&model);
        // debug builds stop at the graph's finiteness assertion, release
        // builds at the trainer's loss guard; neither may step
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            train_step(&mut model, &batch, &mut opt, 1e-3, 5.0).map(|_| ())
        }));
        assert!(!matches!(outcome, Ok(Ok(()))), "NaN parameter trained without complaint");
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut model: Model<f32> = Model::init(tiny_config(), 7).unwrap();
        let mut opt = Optimizer::new(&model);
        assert!(train_step(&mut model, &[], &mut opt, 1e-3, 5.0).is_err());
    }

    #[test]
    fn fit_zero_epochs_returns_the_initial_model() {
        let utts = toy_utterances(400);
        let mut model: Model<f32> = Model::init(tiny_config(), 8).unwrap();
        let before = param_bits(&model);
        let config = TrainConfig {
            max_epochs: 0,
            crop_seconds: 0.03,
            ..TrainConfig::default()
        };
        let result = fit(&mut model, &utts, &[], &config, None, None, &mut sink()).unwrap();
        assert_eq!(param_bits(&model), before);
        assert!(result.loss_curve.is_empty());
        assert_eq!(result.steps, 0);
    }

    #[test]
    fn fixed_seed_runs_are_bit_identical() {
        let utts = toy_utterances(400);
        let config = TrainConfig {
            max_epochs: 3,
            crop_seconds: 0.03,
            learning_rate: 1e-3,
            seed: 11,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model: Model<f32> = Model::init(tiny_config(), 9).unwrap();
            let mut log = Vec::new();
            let result = fit(&mut model, &utts, &[], &config, None, None, &mut log).unwrap();
            (param_bits(&model), result.loss_curve, log)
        };
        let (p1, l1, log1) = run();
        let (p2, l2, log2) = run();
        assert_eq!(p1, p2);
        assert_eq!(l1.len(), 3);
        for (a, b) in l1.iter().zip(&l2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(log1, log2);
    }

    #[test]
    fn resume_matches_uninterrupted_training() {
        let utts = toy_utterances(400);
        let base = TrainConfig {
            crop_seconds: 0.03,
            learning_rate: 1e-3,
            seed: 13,
            ..TrainConfig::default()
        };

        // uninterrupted: 5 epochs
        let mut straight: Model<f32> = Model::init(tiny_config(), 10).unwrap();
        let config = TrainConfig {
            max_epochs: 5,
            ..base.clone()
        };
        fit(&mut straight, &utts, &[], &config, None, None, &mut sink()).unwrap();

        // interrupted: 2 epochs, checkpoint, resume for the remaining 3
        let dir = tempfile::tempdir().unwrap();
        let mut first: Model<f32> = Model::init(tiny_config(), 10).unwrap();
        let config = TrainConfig {
            max_epochs: 2,
            ..base.clone()
        };
        fit(&mut first, &utts, &[], &config, Some(dir.path()), None, &mut sink()).unwrap();

        let (mut resumed, state) = checkpoint::load(&dir.path().join("last.ckpt")).unwrap();
        let state = state.unwrap();
        assert_eq!(state.step, 2);
        let config = TrainConfig {
            max_epochs: 5,
            ..base.clone()
        };
        fit(
            &mut resumed,
            &utts,
            &[],
            &config,
            None,
            Some(&state),
            &mut sink(),
        )
        .unwrap();

        assert_eq!(param_bits(&straight), param_bits(&resumed));
    }
}
