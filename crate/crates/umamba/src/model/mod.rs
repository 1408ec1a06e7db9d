//! The separation network: a learned encoder over raw samples, a stack of
//! U-shaped state-space blocks, per-source mask estimation, and a transposed
//! convolution decoder back to the waveform domain.

pub mod block;
pub mod checkpoint;
pub mod mamba;
pub mod profile;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::util::{seeded_rng, tag};
use crate::{Error, Result};

use block::{BlockParams, BlockVars};

/// How each U-ladder step doubles the frame count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Upsampling {
    TransposedConv,
    NearestNeighbor,
    Linear,
}

impl FromStr for Upsampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transposed-conv" => Ok(Upsampling::TransposedConv),
            "nearest-neighbor" => Ok(Upsampling::NearestNeighbor),
            "linear" => Ok(Upsampling::Linear),
            other => Err(Error::config(format!(
                "unknown upsampling mode {other:?}; expected transposed-conv, nearest-neighbor, or linear"
            ))),
        }
    }
}

impl fmt::Display for Upsampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Upsampling::TransposedConv => "transposed-conv",
            Upsampling::NearestNeighbor => "nearest-neighbor",
            Upsampling::Linear => "linear",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Encoder output channels (the mask width).
    pub feature_channels: usize,
    /// Encoder kernel length in samples.
    pub window: usize,
    /// Encoder stride in samples.
    pub hop: usize,
    /// Downsampling steps per block.
    pub depth: usize,
    /// Number of stacked blocks.
    pub blocks: usize,
    /// Sources to separate.
    pub sources: usize,
    /// State dimension of the selective scan.
    pub states: usize,
    pub upsampling: Upsampling,
    /// Channel width inside each block.
    pub bottleneck_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_channels: 128,
            window: 41,
            hop: 20,
            depth: 4,
            blocks: 16,
            sources: 2,
            states: 16,
            upsampling: Upsampling::TransposedConv,
            bottleneck_channels: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("feature_channels", self.feature_channels),
            ("window", self.window),
            ("hop", self.hop),
            ("depth", self.depth),
            ("blocks", self.blocks),
            ("sources", self.sources),
            ("states", self.states),
            ("bottleneck_channels", self.bottleneck_channels),
        ] {
            if v < 1 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if self.hop > self.window {
            return Err(Error::config(format!(
                "hop {} exceeds window {}; adjacent frames would skip samples",
                self.hop, self.window
            )));
        }
        Ok(())
    }

    /// Frame count the encoder produces for a waveform of `samples`.
    pub fn frames(&self, samples: usize) -> Result<usize> {
        if samples < self.window {
            return Err(Error::shape(format!(
                "input has {samples} samples but the encoder needs at least {}",
                self.window
            )));
        }
        Ok((samples - self.window) / self.hop + 1)
    }
}

pub struct Model<S: Scalar> {
    pub config: ModelConfig,
    pub encoder_w: Tensor<S>,
    pub encoder_b: Tensor<S>,
    pub blocks: Vec<BlockParams<S>>,
    pub mask_w: Tensor<S>,
    pub mask_b: Tensor<S>,
    pub decoder_w: Tensor<S>,
    pub decoder_b: Tensor<S>,
}

pub struct ModelVars {
    pub encoder_w: Var,
    pub encoder_b: Var,
    pub blocks: Vec<BlockVars>,
    pub mask_w: Var,
    pub mask_b: Var,
    pub decoder_w: Var,
    pub decoder_b: Var,
}

/// Fan-in scaled uniform init, the usual default for conv and linear layers.
pub(crate) fn uniform_tensor<S: Scalar, R: Rng>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
) -> Tensor<S> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n)
            .map(|_| S::from_f64(rng.gen_range(-bound..bound)))
            .collect(),
    }
}

impl<S: Scalar> Model<S> {
    /// Fresh model with all parameters drawn from streams keyed by `seed`.
    /// Weights are fan-in uniform; plain biases start at zero so a fresh
    /// model maps silence to silence.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed, &[tag::MODEL_INIT]);
        let f = config.feature_channels;
        let width = config.bottleneck_channels;
        let encoder_w = uniform_tensor(&mut rng, &[f, 1, config.window], config.window);
        let encoder_b = Tensor::zeros(&[f]);
        let mut blocks = Vec::with_capacity(config.blocks);
        for i in 0..config.blocks {
            let in_channels = if i == 0 { f } else { width };
            blocks.push(BlockParams::init(
                &mut rng,
                in_channels,
                width,
                config.states,
                config.depth,
                config.upsampling,
            )?);
        }
        let mask_w = uniform_tensor(&mut rng, &[config.sources * f, width, 1], width);
        let mask_b = Tensor::zeros(&[config.sources * f]);
        let decoder_w = uniform_tensor(&mut rng, &[f, 1, config.window], f * config.window);
        let decoder_b = Tensor::zeros(&[1]);
        Ok(Model {
            config,
            encoder_w,
            encoder_b,
            blocks,
            mask_w,
            mask_b,
            decoder_w,
            decoder_b,
        })
    }

    /// Named views of every learnable tensor, in a stable order shared with
    /// `params_mut`, `bind`, and the checkpoint layout.
    pub fn params(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        out.push(("encoder.w".to_string(), &self.encoder_w));
        out.push(("encoder.b".to_string(), &self.encoder_b));
        for (i, b) in self.blocks.iter().enumerate() {
            b.push_params(&format!("block{i}"), &mut out);
        }
        out.push(("mask.w".to_string(), &self.mask_w));
        out.push(("mask.b".to_string(), &self.mask_b));
        out.push(("decoder.w".to_string(), &self.decoder_w));
        out.push(("decoder.b".to_string(), &self.decoder_b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        out.push(("encoder.w".to_string(), &mut self.encoder_w));
        out.push(("encoder.b".to_string(), &mut self.encoder_b));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.push_params_mut(&format!("block{i}"), &mut out);
        }
        out.push(("mask.w".to_string(), &mut self.mask_w));
        out.push(("mask.b".to_string(), &mut self.mask_b));
        out.push(("decoder.w".to_string(), &mut self.decoder_w));
        out.push(("decoder.b".to_string(), &mut self.decoder_b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Insert every parameter into `g`, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> ModelVars {
        let add = |g: &mut Graph<S>, t: &Tensor<S>| {
            if trainable {
                g.param(t)
            } else {
                g.constant(t.clone())
            }
        };
        let encoder_w = add(g, &self.encoder_w);
        let encoder_b = add(g, &self.encoder_b);
        let blocks = self.blocks.iter().map(|b| b.bind(g, trainable)).collect();
        let mask_w = add(g, &self.mask_w);
        let mask_b = add(g, &self.mask_b);
        let decoder_w = add(g, &self.decoder_w);
        let decoder_b = add(g, &self.decoder_b);
        ModelVars {
            encoder_w,
            encoder_b,
            blocks,
            mask_w,
            mask_b,
            decoder_w,
            decoder_b,
        }
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            encoder_w: self.encoder_w.cast(),
            encoder_b: self.encoder_b.cast(),
            blocks: self.blocks.iter().map(|b| b.cast()).collect(),
            mask_w: self.mask_w.cast(),
            mask_b: self.mask_b.cast(),
            decoder_w: self.decoder_w.cast(),
            decoder_b: self.decoder_b.cast(),
        }
    }

    /// Full forward pass on an existing graph. `mixture` is a (1, samples)
    /// leaf; returns one (1, samples) waveform per source.
    pub fn forward_graph(
        &self,
        g: &mut Graph<S>,
        v: &ModelVars,
        mixture: Var,
        samples: usize,
    ) -> Result<Vec<Var>> {
        let cfg = &self.config;
        cfg.frames(samples)?;
        let f = cfg.feature_channels;

        let enc_pre = g.conv1d(mixture, v.encoder_w, Some(v.encoder_b), cfg.hop, 0)?;
        let enc = g.relu(enc_pre);

        let mut feat = enc;
        for bv in &v.blocks {
            feat = block::forward(g, bv, cfg, feat)?;
        }

        let mask_pre = g.conv1d(feat, v.mask_w, Some(v.mask_b), 1, 0)?;
        let masks = g.relu(mask_pre);

        let mut outs = Vec::with_capacity(cfg.sources);
        for s in 0..cfg.sources {
            let mask = g.row_slice(masks, s * f, f)?;
            let masked = g.mul(mask, enc)?;
            let dec = g.conv_t1d(masked, v.decoder_w, Some(v.decoder_b), cfg.hop)?;
            let produced = g.value(dec).shape[1];
            let out = if produced >= samples {
                g.col_slice(dec, 0, samples)?
            } else {
                g.pad_cols(dec, 0, samples - produced)?
            };
            outs.push(out);
        }
        Ok(outs)
    }

    /// Run the whole pipeline on a waveform and return the separated sources.
    pub fn separate(&self, mixture: &[S]) -> Result<Vec<Vec<S>>> {
        let mut g: Graph<S> = Graph::new();
        let v = self.bind(&mut g, false);
        let x = g.constant(Tensor::from_slice(&[1, mixture.len()], mixture)?);
        let outs = self.forward_graph(&mut g, &v, x, mixture.len())?;
        Ok(outs.into_iter().map(|o| g.value(o).data.clone()).collect())
    }

    /// Encoder alone: strided conv plus ReLU, giving the (F, T) feature map.
    pub fn encode(&self, wave: &[S]) -> Result<Tensor<S>> {
        self.config.frames(wave.len())?;
        let mut g: Graph<S> = Graph::new();
        let w = g.constant(self.encoder_w.clone());
        let b = g.constant(self.encoder_b.clone());
        let x = g.constant(Tensor::from_slice(&[1, wave.len()], wave)?);
        let pre = g.conv1d(x, w, Some(b), self.config.hop, 0)?;
        let y = g.relu(pre);
        Ok(g.value(y).clone())
    }

    /// Mask head alone: 1x1 conv from the block-stack output followed by
    /// ReLU, split into one nonnegative (F, T) mask per source.
    pub fn estimate_masks(&self, features: &Tensor<S>) -> Result<Vec<Tensor<S>>> {
        let f = self.config.feature_channels;
        let mut g: Graph<S> = Graph::new();
        let w = g.constant(self.mask_w.clone());
        let b = g.constant(self.mask_b.clone());
        let x = g.constant(features.clone());
        let pre = g.conv1d(x, w, Some(b), 1, 0)?;
        let masks = g.relu(pre);
        (0..self.config.sources)
            .map(|s| {
                let m = g.row_slice(masks, s * f, f)?;
                Ok(g.value(m).clone())
            })
            .collect()
    }

    /// Decoder alone: transposed conv back to one channel, fitted to
    /// `samples` by cropping or zero-padding the tail.
    pub fn decode(&self, masked: &Tensor<S>, samples: usize) -> Result<Vec<S>> {
        let mut g: Graph<S> = Graph::new();
        let w = g.constant(self.decoder_w.clone());
        let b = g.constant(self.decoder_b.clone());
        let x = g.constant(masked.clone());
        let dec = g.conv_t1d(x, w, Some(b), self.config.hop)?;
        let produced = g.value(dec).shape[1];
        let out = if produced >= samples {
            g.col_slice(dec, 0, samples)?
        } else {
            g.pad_cols(dec, 0, samples - produced)?
        };
        Ok(g.value(out).data.clone())
    }
}

impl ModelVars {
    /// Trainable leaves in `params()` order, for optimizer bookkeeping.
    pub fn collect(&self) -> Vec<Var> {
        let mut out = Vec::new();
        out.extend([self.encoder_w, self.encoder_b]);
        for b in &self.blocks {
            b.collect(&mut out);
        }
        out.extend([self.mask_w, self.mask_b, self.decoder_w, self.decoder_b]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use profile::{count_macs, count_params};

    fn tiny(mode: Upsampling) -> ModelConfig {
        ModelConfig {
            feature_channels: 8,
            window: 16,
            hop: 8,
            depth: 2,
            blocks: 2,
            sources: 2,
            states: 4,
            upsampling: mode,
            bottleneck_channels: 8,
        }
    }

    fn sine(n: usize, period: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (i as f64 * std::f64::consts::TAU / period).sin())
            .collect()
    }

    #[test]
    fn parameter_budget_frozen_values() {
        let d = ModelConfig::default();
        assert_eq!(count_params(&d), 4_264_865);

        let mut narrow = d.clone();
        narrow.feature_channels = 64;
        narrow.bottleneck_channels = 64;
        assert_eq!(count_params(&narrow), 1_133_153);

        let mut wide = d.clone();
        wide.feature_channels = 192;
        wide.bottleneck_channels = 192;
        assert_eq!(count_params(&wide), 9_395_425);

        let mut short = d.clone();
        short.blocks = 12;
        assert_eq!(count_params(&short), 3_209_561);

        let mut tall = d.clone();
        tall.blocks = 20;
        assert_eq!(count_params(&tall), 5_320_169);

        let mut deep = d.clone();
        deep.depth = 8;
        assert_eq!(count_params(&deep), 4_371_361);
    }

    #[test]
    fn mac_budget_frozen_value_and_length_scaling() {
        let d = ModelConfig::default();
        let full = count_macs(&d, 24000);
        assert_eq!(full, 2_967_612_672);
        let half = count_macs(&d, 12000);
        let ratio = half as f64 / full as f64;
        assert!((ratio - 0.5).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn analytic_params_match_actual_tensors() {
        let configs = [
            ModelConfig::default(),
            tiny(Upsampling::TransposedConv),
            tiny(Upsampling::NearestNeighbor),
            tiny(Upsampling::Linear),
            ModelConfig {
                feature_channels: 8,
                window: 7,
                hop: 3,
                depth: 3,
                blocks: 3,
                sources: 3,
                states: 5,
                upsampling: Upsampling::TransposedConv,
                bottleneck_channels: 6,
            },
            ModelConfig {
                feature_channels: 5,
                window: 4,
                hop: 2,
                depth: 1,
                blocks: 1,
                sources: 1,
                states: 2,
                upsampling: Upsampling::Linear,
                bottleneck_channels: 5,
            },
        ];
        for cfg in configs {
            let m: Model<f32> = Model::init(cfg.clone(), 11).unwrap();
            assert_eq!(
                m.param_count() as u64,
                count_params(&cfg),
                "config {cfg:?}"
            );
            // the three param orderings must agree
            let names: Vec<String> = m.params().into_iter().map(|(n, _)| n).collect();
            let mut m2 = m.cast::<f64>();
            let names_mut: Vec<String> = m2.params_mut().into_iter().map(|(n, _)| n).collect();
            assert_eq!(names, names_mut);
            let mut g: Graph<f64> = Graph::new();
            let vars = m2.bind(&mut g, true);
            assert_eq!(vars.collect().len(), names.len());
        }
    }

    #[test]
    fn analytic_macs_match_instrumented_forward() {
        let cases = [
            (tiny(Upsampling::TransposedConv), 160usize),
            (tiny(Upsampling::NearestNeighbor), 160),
            (tiny(Upsampling::Linear), 161),
            (
                ModelConfig {
                    feature_channels: 8,
                    window: 7,
                    hop: 3,
                    depth: 3,
                    blocks: 3,
                    sources: 3,
                    states: 5,
                    upsampling: Upsampling::TransposedConv,
                    bottleneck_channels: 6,
                },
                517,
            ),
        ];
        for (cfg, samples) in cases {
            let m: Model<f64> = Model::init(cfg.clone(), 3).unwrap();
            let mut g: Graph<f64> = Graph::new();
            g.enable_profiling();
            let v = m.bind(&mut g, false);
            let wave = sine(samples, 50.0);
            let x = g.constant(Tensor::from_slice(&[1, samples], &wave).unwrap());
            m.forward_graph(&mut g, &v, x, samples).unwrap();
            assert_eq!(
                g.macs(),
                count_macs(&cfg, samples),
                "config {cfg:?} at {samples} samples"
            );
        }
    }

    #[test]
    fn separate_keeps_length_and_source_count() {
        let cfg = tiny(Upsampling::TransposedConv);
        let m: Model<f64> = Model::init(cfg, 5).unwrap();
        let wave = sine(4021, 31.0);
        let outs = m.separate(&wave).unwrap();
        assert_eq!(outs.len(), 2);
        for o in &outs {
            assert_eq!(o.len(), 4021);
            assert!(o.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn zero_mask_head_silences_every_source() {
        let cfg = tiny(Upsampling::Linear);
        let mut m: Model<f64> = Model::init(cfg, 6).unwrap();
        m.mask_w = Tensor::zeros(&m.mask_w.shape.clone());
        m.mask_b = Tensor::zeros(&m.mask_b.shape.clone());
        let outs = m.separate(&sine(500, 17.0)).unwrap();
        for o in outs {
            assert!(o.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn encoder_is_homogeneous_at_init() {
        let cfg = tiny(Upsampling::TransposedConv);
        let m: Model<f64> = Model::init(cfg, 7).unwrap();
        let zero = m.encode(&vec![0.0; 200]).unwrap();
        assert!(zero.data.iter().all(|v| *v == 0.0));
        let wave = sine(200, 23.0);
        let once = m.encode(&wave).unwrap();
        let doubled: Vec<f64> = wave.iter().map(|v| 2.0 * v).collect();
        let twice = m.encode(&doubled).unwrap();
        for (a, b) in once.data.iter().zip(&twice.data) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        assert_eq!(once.shape, vec![8, (200 - 16) / 8 + 1]);
    }

    #[test]
    fn masks_are_nonnegative_and_per_source() {
        let cfg = tiny(Upsampling::TransposedConv);
        let m: Model<f64> = Model::init(cfg, 8).unwrap();
        let feats = m.encode(&sine(300, 13.0)).unwrap();
        let masks = m.estimate_masks(&feats).unwrap();
        assert_eq!(masks.len(), 2);
        for mask in &masks {
            assert_eq!(mask.shape, feats.shape);
            assert!(mask.data.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn block_reduces_to_u_branch_when_mixer_projection_is_zero() {
        let cfg = tiny(Upsampling::TransposedConv);
        let mut m: Model<f64> = Model::init(cfg.clone(), 9).unwrap();
        let shape = m.blocks[0].mamba.out_proj.shape.clone();
        m.blocks[0].mamba.out_proj = Tensor::zeros(&shape);
        let mut g: Graph<f64> = Graph::new();
        let bv = m.blocks[0].bind(&mut g, false);
        let x = g.constant(Tensor::from_slice(&[8, 40], &sine(320, 9.0)).unwrap());
        let full = block::forward(&mut g, &bv, &cfg, x).unwrap();
        let branch = block::u_branch(&mut g, &bv, &cfg, x).unwrap();
        assert_eq!(g.value(full).data, g.value(branch).data);
    }

    #[test]
    fn ladder_shapes_trace_and_mode_agreement() {
        // frame ladder for the default geometry on 3 s of audio
        let mut lens = vec![1198usize];
        for _ in 0..4 {
            let p = *lens.last().unwrap();
            lens.push((p - 1) / 2 + 1);
        }
        assert_eq!(lens, vec![1198, 599, 300, 150, 75]);

        // every mode lifts each level back to the same shape
        for mode in [
            Upsampling::TransposedConv,
            Upsampling::NearestNeighbor,
            Upsampling::Linear,
        ] {
            let cfg = ModelConfig {
                upsampling: mode,
                ..tiny(mode)
            };
            let m: Model<f64> = Model::init(cfg, 10).unwrap();
            let outs = m.separate(&sine(1000, 29.0)).unwrap();
            assert_eq!(outs.len(), 2);
            for o in outs {
                assert_eq!(o.len(), 1000);
            }
        }
    }

    #[test]
    fn config_validation_and_short_inputs_are_rejected() {
        let mut cfg = ModelConfig::default();
        cfg.hop = 50;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::default();
        cfg.sources = 0;
        assert!(cfg.validate().is_err());

        assert!("cubic".parse::<Upsampling>().is_err());
        assert_eq!(
            "nearest-neighbor".parse::<Upsampling>().unwrap(),
            Upsampling::NearestNeighbor
        );

        let m: Model<f64> = Model::init(tiny(Upsampling::Linear), 12).unwrap();
        let err = m.separate(&vec![0.1; 8]).unwrap_err().to_string();
        assert!(err.contains("at least 16"), "{err}");

        // 32 samples -> 3 frames, too few for two halvings
        let err = m.separate(&vec![0.1; 32]).unwrap_err().to_string();
        assert!(err.contains("halved"), "{err}");
    }
}
