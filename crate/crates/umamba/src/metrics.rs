//! Separation quality measures on plain waveforms: scale-invariant SNR with
//! permutation search, the improvement family (SI-SNRi, SDRi, SIRi), and a
//! short-time Fourier magnitude grid for visual inspection.
//!
//! Every dB value is clamped to [-30, +30] so perfect reconstruction and
//! total failure both stay finite.

use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::ssm::lti::solve_linear;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Clamp bound in dB for every metric.
pub const DB_CLAMP: f64 = 30.0;
/// Largest source count the exhaustive permutation search accepts.
pub const MAX_SOURCES: usize = 6;

fn clamp_db(v: f64) -> f64 {
    v.clamp(-DB_CLAMP, DB_CLAMP)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn energy(a: &[f64]) -> f64 {
    dot(a, a)
}

fn zero_mean(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        return -DB_CLAMP;
    }
    if den == 0.0 {
        return DB_CLAMP;
    }
    clamp_db(10.0 * (num / den).log10())
}

fn check_lengths(est: &[f64], reference: &[f64]) -> Result<()> {
    if est.len() != reference.len() || est.is_empty() {
        return Err(Error::shape(format!(
            "signals must have equal nonzero length, got {} and {}",
            est.len(),
            reference.len()
        )));
    }
    Ok(())
}

/// Scale-invariant SNR in dB: both signals are mean-removed, the estimate is
/// compared against its least-squares projection onto the reference.
pub fn si_snr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_lengths(est, reference)?;
    let e = zero_mean(est);
    let r = zero_mean(reference);
    let r_energy = energy(&r);
    if r_energy == 0.0 {
        return Err(Error::invalid(
            "reference has zero energy after mean removal",
        ));
    }
    let alpha = dot(&e, &r) / r_energy;
    let target_energy = alpha * alpha * r_energy;
    let err_energy: f64 = e
        .iter()
        .zip(&r)
        .map(|(ev, rv)| {
            let d = ev - alpha * rv;
            d * d
        })
        .sum();
    Ok(ratio_db(target_energy, err_energy))
}

/// Plain SNR against the raw reference, no mean removal, no rescaling.
pub fn sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_lengths(est, reference)?;
    let r_energy = energy(reference);
    if r_energy == 0.0 {
        return Err(Error::invalid("reference has zero energy"));
    }
    let err_energy: f64 = est
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - r) * (e - r))
        .sum();
    Ok(ratio_db(r_energy, err_energy))
}

pub fn si_snri(est: &[f64], reference: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(si_snr(est, reference)? - si_snr(mixture, reference)?)
}

pub fn sdri(est: &[f64], reference: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(sdr(est, reference)? - sdr(mixture, reference)?)
}

/// All permutations of 0..s in lexicographic order.
pub fn permutations(s: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..s).collect();
    fn rec(prefix: &mut Vec<usize>, rest: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..rest.len() {
            let v = rest.remove(i);
            prefix.push(v);
            rec(prefix, rest, out);
            prefix.pop();
            rest.insert(i, v);
        }
    }
    rec(&mut Vec::new(), &mut items, &mut out);
    out
}

/// Exhaustive permutation-invariant assignment. Returns the best mean SI-SNR
/// over matched pairs and the permutation achieving it (est i matched with
/// ref perm[i]). Ties go to the lexicographically smallest permutation.
pub fn pit_si_snr(ests: &[Vec<f64>], refs: &[Vec<f64>]) -> Result<(f64, Vec<usize>)> {
    let s = ests.len();
    if s == 0 || refs.len() != s {
        return Err(Error::shape(format!(
            "need matching nonzero source counts, got {} and {}",
            s,
            refs.len()
        )));
    }
    if s > MAX_SOURCES {
        return Err(Error::invalid(format!(
            "exhaustive permutation search is capped at {MAX_SOURCES} sources, got {s}"
        )));
    }
    let mut scores = vec![vec![0.0; s]; s];
    for (i, est) in ests.iter().enumerate() {
        for (j, reference) in refs.iter().enumerate() {
            scores[i][j] = si_snr(est, reference)?;
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(s) {
        let mean = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| scores[i][j])
            .sum::<f64>()
            / s as f64;
        let better = match &best {
            None => true,
            Some((b, _)) => mean > *b,
        };
        if better {
            best = Some((mean, perm));
        }
    }
    Ok(best.expect("at least one permutation"))
}

/// Negated best mean SI-SNR: the training objective, evaluation flavor.
pub fn pit_loss(ests: &[Vec<f64>], refs: &[Vec<f64>]) -> Result<(f64, Vec<usize>)> {
    let (mean, perm) = pit_si_snr(ests, refs)?;
    Ok((-mean, perm))
}

/// Signal-to-interference ratio of one estimate: its projection onto the
/// matched reference versus the rest of its projection onto the reference
/// span. `refs` must be linearly independent.
pub fn sir(est: &[f64], refs: &[Vec<f64>], matched: usize) -> Result<f64> {
    let s = refs.len();
    if s < 2 {
        return Err(Error::invalid(
            "interference is undefined with fewer than 2 references",
        ));
    }
    if matched >= s {
        return Err(Error::invalid(format!(
            "matched reference {matched} out of range for {s} sources"
        )));
    }
    for r in refs {
        check_lengths(est, r)?;
    }
    // normal equations: G c = R est, G[i][j] = <r_i, r_j>
    let mut gram = Tensor::zeros(&[s, s]);
    let mut rhs = Tensor::zeros(&[s, 1]);
    for i in 0..s {
        for j in 0..s {
            gram.data[i * s + j] = dot(&refs[i], &refs[j]);
        }
        rhs.data[i] = dot(&refs[i], est);
    }
    let coeff = solve_linear(&gram, &rhs)
        .map_err(|_| Error::invalid("reference set is rank deficient"))?;

    let n = est.len();
    let mut target = vec![0.0; n];
    let mut interference = vec![0.0; n];
    let matched_gain = dot(&refs[matched], est) / gram.data[matched * s + matched];
    for t in 0..n {
        target[t] = matched_gain * refs[matched][t];
        let mut span = 0.0;
        for i in 0..s {
            span += coeff.data[i] * refs[i][t];
        }
        interference[t] = span - target[t];
    }
    Ok(ratio_db(energy(&target), energy(&interference)))
}

/// Mean SIR improvement of already-matched estimates over the mixture.
pub fn siri(ests: &[Vec<f64>], refs: &[Vec<f64>], mixture: &[f64]) -> Result<f64> {
    if ests.len() != refs.len() {
        return Err(Error::shape("estimate and reference counts differ"));
    }
    let s = refs.len();
    let mut improvement = 0.0;
    for i in 0..s {
        improvement += sir(&ests[i], refs, i)? - sir(mixture, refs, i)?;
    }
    Ok(improvement / s as f64)
}

/// Hann-windowed short-time Fourier magnitudes, linear scale, laid out as a
/// (fft_size/2 + 1, frames) grid.
pub fn stft_magnitude(wave: &[f64], fft_size: usize, hop: usize) -> Result<Tensor<f64>> {
    if !fft_size.is_power_of_two() || fft_size < 2 {
        return Err(Error::invalid(format!(
            "fft size must be a power of two, got {fft_size}"
        )));
    }
    if hop == 0 || hop > fft_size {
        return Err(Error::invalid(format!(
            "hop must be in 1..={fft_size}, got {hop}"
        )));
    }
    if wave.len() < fft_size {
        return Err(Error::shape(format!(
            "waveform has {} samples, shorter than one {fft_size}-point frame",
            wave.len()
        )));
    }
    let frames = (wave.len() - fft_size) / hop + 1;
    let bins = fft_size / 2 + 1;
    let window: Vec<f64> = (0..fft_size)
        .map(|n| 0.5 * (1.0 - (std::f64::consts::TAU * n as f64 / fft_size as f64).cos()))
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(fft_size);
    let mut grid = Tensor::zeros(&[bins, frames]);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for f in 0..frames {
        for n in 0..fft_size {
            buf[n] = Complex::new(wave[f * hop + n] * window[n], 0.0);
        }
        fft.process(&mut buf);
        for (b, row) in buf.iter().take(bins).enumerate() {
            grid.data[b * frames + f] = row.norm();
        }
    }
    Ok(grid)
}

/// Spectrogram floor in dB; anything quieter renders flat.
pub const SPECTROGRAM_FLOOR_DB: f64 = -80.0;

/// dB-scaled spectrogram with the floor applied.
pub fn spectrogram(wave: &[f64], fft_size: usize, hop: usize) -> Result<Tensor<f64>> {
    let mut grid = stft_magnitude(wave, fft_size, hop)?;
    for v in &mut grid.data {
        *v = if *v > 0.0 {
            (20.0 * v.log10()).max(SPECTROGRAM_FLOOR_DB)
        } else {
            SPECTROGRAM_FLOOR_DB
        };
    }
    Ok(grid)
}

/// Plain-text spectrogram: a dims line and a floor line, then one
/// tab-separated row per frequency bin.
pub fn write_spectrogram<W: Write>(out: &mut W, grid: &Tensor<f64>) -> Result<()> {
    let (bins, frames) = grid.dims2()?;
    writeln!(out, "{bins} {frames}")?;
    writeln!(out, "{}", SPECTROGRAM_FLOOR_DB)?;
    for b in 0..bins {
        let row: Vec<String> = grid.row(b).iter().map(|v| format!("{v:.2}")).collect();
        writeln!(out, "{}", row.join("\t"))?;
    }
    Ok(())
}

/// One evaluated utterance, ready for the tab-separated report.
pub struct ReportRow {
    pub id: String,
    pub si_snr: f64,
    pub si_snri: f64,
    pub sdri: f64,
    pub siri: f64,
    /// Reference index matched to each estimate, 0-based.
    pub permutation: Vec<usize>,
}

/// Score one utterance: permutation-align the estimates, then aggregate each
/// metric over the matched pairs.
pub fn evaluate_utterance(
    id: &str,
    mixture: &[f64],
    ests: &[Vec<f64>],
    refs: &[Vec<f64>],
) -> Result<ReportRow> {
    let (mean_si_snr, permutation) = pit_si_snr(ests, refs)?;
    let s = ests.len();
    let mut mean_si_snri = 0.0;
    let mut mean_sdri = 0.0;
    for (i, &j) in permutation.iter().enumerate() {
        mean_si_snri += si_snri(&ests[i], &refs[j], mixture)?;
        mean_sdri += sdri(&ests[i], &refs[j], mixture)?;
    }
    mean_si_snri /= s as f64;
    mean_sdri /= s as f64;

    let siri_value = if s >= 2 {
        let matched_refs: Vec<Vec<f64>> = permutation.iter().map(|&j| refs[j].clone()).collect();
        siri(ests, &matched_refs, mixture)?
    } else {
        0.0
    };

    Ok(ReportRow {
        id: id.to_string(),
        si_snr: mean_si_snr,
        si_snri: mean_si_snri,
        sdri: mean_sdri,
        siri: siri_value,
        permutation,
    })
}

/// Tab-separated report, one line per utterance, permutation written 1-based.
pub fn write_report<W: Write>(out: &mut W, rows: &[ReportRow]) -> Result<()> {
    writeln!(out, "#id\tsi_snr\tsi_snri\tsdri\tsiri\tpermutation")?;
    for r in rows {
        let perm: Vec<String> = r.permutation.iter().map(|p| (p + 1).to_string()).collect();
        writeln!(
            out,
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
            r.id,
            r.si_snr,
            r.si_snri,
            r.sdri,
            r.siri,
            perm.join(",")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;
    use rand::Rng;

    fn randv(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded_rng(seed, &[100]);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn si_snr_perfect_scaled_and_orthogonal() {
        let r: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(si_snr(&r, &r).unwrap(), 30.0);
        let double: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_snr(&double, &r).unwrap(), 30.0);

        // orthogonal, zero-mean, equal-energy error gives exactly 0 dB
        let e: Vec<f64> = (0..64)
            .map(|i| if (i / 2) % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        assert!(dot(&e, &r).abs() < 1e-12);
        let est: Vec<f64> = r.iter().zip(&e).map(|(a, b)| a + b).collect();
        assert!(si_snr(&est, &r).unwrap().abs() < 1e-12);

        assert!(si_snr(&r, &vec![0.5; 64]).is_err());
    }

    #[test]
    fn si_snr_scale_invariance_random() {
        let r = randv(200, 1);
        let est = randv(200, 2);
        let a = si_snr(&est, &r).unwrap();
        for c in [0.01, 3.0, 250.0] {
            let scaled: Vec<f64> = est.iter().map(|v| c * v).collect();
            let b = si_snr(&scaled, &r).unwrap();
            assert!((a - b).abs() < 1e-9, "c={c}: {a} vs {b}");
        }
    }

    #[test]
    fn pit_matches_brute_force_and_breaks_ties_low() {
        let refs: Vec<Vec<f64>> = (0..3).map(|i| randv(128, 10 + i)).collect();
        let ests: Vec<Vec<f64>> = (0..3).map(|i| randv(128, 20 + i)).collect();
        let (best, perm) = pit_si_snr(&ests, &refs).unwrap();

        let mut scores = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                scores[i][j] = si_snr(&ests[i], &refs[j]).unwrap();
            }
        }
        let all = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let mut brute = f64::NEG_INFINITY;
        let mut brute_perm = [0; 3];
        for p in all {
            let m = (scores[0][p[0]] + scores[1][p[1]] + scores[2][p[2]]) / 3.0;
            if m > brute {
                brute = m;
                brute_perm = p;
            }
        }
        assert_eq!(best, brute);
        assert_eq!(perm, brute_perm.to_vec());

        // identical sources make every permutation tie; smallest must win
        let same = vec![randv(64, 5), randv(64, 5)];
        let (_, perm) = pit_si_snr(&same, &same).unwrap();
        assert_eq!(perm, vec![0, 1]);
    }

    #[test]
    fn pit_perfect_swap_and_relabeling() {
        let refs = vec![randv(100, 31), randv(100, 32)];
        let (loss, perm) = pit_loss(&refs.clone(), &refs).unwrap();
        assert_eq!(loss, -30.0);
        assert_eq!(perm, vec![0, 1]);

        let swapped = vec![refs[1].clone(), refs[0].clone()];
        let (loss2, perm2) = pit_loss(&swapped, &refs).unwrap();
        assert_eq!(loss2, -30.0);
        assert_eq!(perm2, vec![1, 0]);

        // permuting the refs permutes the argmax by composition
        let ests = vec![randv(100, 41), randv(100, 42), randv(100, 43)];
        let refs3 = vec![randv(100, 51), randv(100, 52), randv(100, 53)];
        let (v1, p1) = pit_si_snr(&ests, &refs3).unwrap();
        let sigma = [2usize, 0, 1]; // new position j holds old ref sigma[j]
        let relabeled: Vec<Vec<f64>> = sigma.iter().map(|&j| refs3[j].clone()).collect();
        let (v2, p2) = pit_si_snr(&ests, &relabeled).unwrap();
        assert!((v1 - v2).abs() < 1e-12);
        let composed: Vec<usize> = p2.iter().map(|&j| sigma[j]).collect();
        assert_eq!(composed, p1);
    }

    #[test]
    fn improvement_metrics_identities() {
        let r = randv(150, 61);
        let mix = randv(150, 62);
        assert!(si_snri(&mix, &r, &mix).unwrap().abs() < 1e-12);
        assert!(sdri(&mix, &r, &mix).unwrap().abs() < 1e-12);
        let at_ref = si_snri(&r, &r, &mix).unwrap();
        assert!((at_ref - (30.0 - si_snr(&mix, &r).unwrap())).abs() < 1e-12);
        let at_ref_sdr = sdri(&r, &r, &mix).unwrap();
        assert!((at_ref_sdr - (30.0 - sdr(&mix, &r).unwrap())).abs() < 1e-12);
    }

    #[test]
    fn sir_decomposition_cases() {
        let n = 64;
        let s1: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let s2: Vec<f64> = (0..n)
            .map(|i| if (i / 2) % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let refs = vec![s1.clone(), s2.clone()];

        // exact match, orthogonal refs: no interference
        assert_eq!(sir(&s1, &refs, 0).unwrap(), 30.0);

        // equal mix of two orthogonal equal-energy refs: 0 dB
        let both: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| a + b).collect();
        assert!(sir(&both, &refs, 0).unwrap().abs() < 1e-12);

        // rank-deficient references are rejected
        let dep = vec![s1.clone(), s1.iter().map(|v| 2.0 * v).collect()];
        assert!(sir(&both, &dep, 0).is_err());

        // random fixture against an independent least-squares solve
        let e = randv(n, 71);
        let refs = vec![randv(n, 72), randv(n, 73)];
        let got = sir(&e, &refs, 1).unwrap();
        let g00 = dot(&refs[0], &refs[0]);
        let g01 = dot(&refs[0], &refs[1]);
        let g11 = dot(&refs[1], &refs[1]);
        let b0 = dot(&refs[0], &e);
        let b1 = dot(&refs[1], &e);
        let det = g00 * g11 - g01 * g01;
        let c0 = (b0 * g11 - b1 * g01) / det;
        let c1 = (g00 * b1 - g01 * b0) / det;
        let tgt: Vec<f64> = refs[1].iter().map(|v| v * (b1 / g11)).collect();
        let intf: Vec<f64> = (0..n)
            .map(|t| c0 * refs[0][t] + c1 * refs[1][t] - tgt[t])
            .collect();
        let want = clamp_db(10.0 * (energy(&tgt) / energy(&intf)).log10());
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn spectrogram_tone_floor_and_parseval() {
        let n = 2048;
        let tone: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::TAU * 1000.0 * i as f64 / 8000.0).sin())
            .collect();
        let grid = spectrogram(&tone, 256, 128).unwrap();
        let (bins, frames) = grid.dims2().unwrap();
        assert_eq!(bins, 129);
        for f in 0..frames {
            let mut peak = 0;
            let mut best = f64::NEG_INFINITY;
            for b in 0..bins {
                if grid.data[b * frames + f] > best {
                    best = grid.data[b * frames + f];
                    peak = b;
                }
            }
            assert_eq!(peak, 32, "frame {f}");
        }

        let silent = spectrogram(&vec![0.0; 512], 256, 128).unwrap();
        assert!(silent.data.iter().all(|v| *v == SPECTROGRAM_FLOOR_DB));

        // unnormalized DFT satisfies sum|X|^2 = N * sum|x_windowed|^2
        let wave = randv(700, 81);
        let fft_size = 256;
        let hop = 100;
        let mags = stft_magnitude(&wave, fft_size, hop).unwrap();
        let (bins, frames) = mags.dims2().unwrap();
        let window: Vec<f64> = (0..fft_size)
            .map(|k| 0.5 * (1.0 - (std::f64::consts::TAU * k as f64 / fft_size as f64).cos()))
            .collect();
        for f in 0..frames {
            let mut spec = 0.0;
            for b in 0..bins {
                let m2 = mags.data[b * frames + f].powi(2);
                let double = b != 0 && b != bins - 1;
                spec += if double { 2.0 * m2 } else { m2 };
            }
            let time: f64 = (0..fft_size)
                .map(|k| (wave[f * hop + k] * window[k]).powi(2))
                .sum();
            let rel = (spec - fft_size as f64 * time).abs() / (fft_size as f64 * time);
            assert!(rel < 1e-6, "frame {f}: rel {rel}");
        }

        assert!(spectrogram(&tone, 255, 128).is_err());
        assert!(spectrogram(&tone[..100], 256, 128).is_err());
        assert!(spectrogram(&tone, 256, 300).is_err());
    }

    #[test]
    fn report_formatting() {
        let rows = vec![ReportRow {
            id: "utt_0001".to_string(),
            si_snr: 11.25,
            si_snri: 10.5,
            sdri: 9.75,
            siri: 8.5,
            permutation: vec![1, 0],
        }];
        let mut buf = Vec::new();
        write_report(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with('#'));
        assert_eq!(
            lines.next().unwrap(),
            "utt_0001\t11.2500\t10.5000\t9.7500\t8.5000\t2,1"
        );
    }

    #[test]
    fn permutation_enumeration_is_lexicographic() {
        assert_eq!(
            permutations(3),
            vec![
                vec![0, 1, 2],
                vec![0, 2, 1],
                vec![1, 0, 2],
                vec![1, 2, 0],
                vec![2, 0, 1],
                vec![2, 1, 0],
            ]
        );
        assert_eq!(permutations(1), vec![vec![0]]);
        assert_eq!(permutations(4).len(), 24);
    }
}
