//! Reverberant mixture assembly: convolve dry sources with their room
//! responses, add noise at a drawn SNR, and peak-normalize, keeping every
//! component so the mixture always re-sums from its parts.

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::mixsim::rir::image_source_rir;
use crate::mixsim::room::RoomInstance;
use crate::wav::SAMPLE_RATE;
use crate::{Error, Result};

pub const DEFAULT_SNR_RANGE: (f64, f64) = (0.0, 5.0);
pub const DEFAULT_MAX_ORDER: usize = 30;
/// Peak amplitude of the normalized mixture.
pub const MIXTURE_PEAK: f64 = 0.9;

/// One simulated utterance and all of its ingredients. The stored waveforms
/// satisfy mixture = sum(reverberant_sources) + noise samplewise.
#[derive(Clone, Debug)]
pub struct MixtureSample {
    pub mixture: Vec<f64>,
    /// Per-source reverberated references, post normalization.
    pub reverberant_sources: Vec<Vec<f64>>,
    /// Noise as it appears in the mixture (SNR gain and normalization in).
    pub noise: Vec<f64>,
    pub room: RoomInstance,
    pub seed: u64,
    /// Requested speech-to-noise ratio in dB.
    pub snr_db: f64,
    pub noise_gain: f64,
    pub peak_gain: f64,
}

/// Linear convolution via the FFT; output length a.len() + b.len() - 1.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex<f64>> = a
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n)
        .collect();
    let mut fb: Vec<Complex<f64>> = b
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n)
        .collect();
    forward.process(&mut fa);
    forward.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inverse.process(&mut fa);
    fa.iter().take(out_len).map(|c| c.re / n as f64).collect()
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Build one mixture: reverberate each dry source with its calibrated room
/// response, draw an SNR from `snr_range`, scale the noise to meet it
/// against the summed reverberant speech, and normalize the mixture peak to
/// 0.9 with the same gain on every component. Dry sources are cropped to the
/// shortest one.
pub fn make_mixture<R: Rng>(
    dry_sources: &[Vec<f64>],
    noise: &[f64],
    room: &RoomInstance,
    snr_range: (f64, f64),
    max_order: usize,
    seed: u64,
    rng: &mut R,
) -> Result<MixtureSample> {
    if dry_sources.is_empty() || dry_sources.len() != room.sources.len() {
        return Err(Error::invalid(format!(
            "{} dry sources for a room with {} source positions",
            dry_sources.len(),
            room.sources.len()
        )));
    }
    let n = dry_sources.iter().map(|s| s.len()).min().unwrap();
    if n == 0 {
        return Err(Error::invalid("empty dry source"));
    }
    if noise.len() < n {
        return Err(Error::invalid(format!(
            "noise has {} samples, sources have {n}",
            noise.len()
        )));
    }
    for (i, s) in dry_sources.iter().enumerate() {
        if energy(&s[..n]) == 0.0 {
            return Err(Error::invalid(format!("dry source {i} is silent")));
        }
    }

    let mut reverberant: Vec<Vec<f64>> = Vec::with_capacity(dry_sources.len());
    for (i, s) in dry_sources.iter().enumerate() {
        let rir = image_source_rir(room, i, SAMPLE_RATE, max_order)?;
        let mut rev = fft_convolve(&s[..n], &rir);
        rev.truncate(n);
        reverberant.push(rev);
    }

    let mut speech = vec![0.0; n];
    for rev in &reverberant {
        for (m, &v) in speech.iter_mut().zip(rev) {
            *m += v;
        }
    }

    let snr_db = if snr_range.1 > snr_range.0 {
        rng.gen_range(snr_range.0..snr_range.1)
    } else {
        snr_range.0
    };
    let noise = &noise[..n];
    let noise_energy = energy(noise);
    let noise_gain = if noise_energy == 0.0 {
        0.0
    } else {
        (energy(&speech) / (noise_energy * 10f64.powf(snr_db / 10.0))).sqrt()
    };

    let mixture: Vec<f64> = speech
        .iter()
        .zip(noise)
        .map(|(s, w)| s + noise_gain * w)
        .collect();
    let peak = mixture.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::invalid("mixture is silent"));
    }
    let peak_gain = MIXTURE_PEAK / peak;

    Ok(MixtureSample {
        mixture: mixture.iter().map(|v| v * peak_gain).collect(),
        reverberant_sources: reverberant
            .iter()
            .map(|rev| rev.iter().map(|v| v * peak_gain).collect())
            .collect(),
        noise: noise.iter().map(|v| v * noise_gain * peak_gain).collect(),
        room: room.clone(),
        seed,
        snr_db,
        noise_gain,
        peak_gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixsim::room::sabine_absorption;
    use crate::util::seeded_rng;
    use rand::Rng;

    fn test_room(sources: usize) -> RoomInstance {
        let dims = [6.0, 5.0, 3.2];
        let t60 = 0.25;
        let positions = (0..sources)
            .map(|i| [3.0 + 0.9 * (i as f64 + 1.0).cos(), 2.5 + 0.9 * (i as f64 + 1.0).sin(), 1.4])
            .collect();
        RoomInstance {
            dims,
            t60,
            receiver: [3.0, 2.5, 1.5],
            sources: positions,
            absorption: sabine_absorption(dims, t60).unwrap(),
        }
    }

    fn tone(n: usize, freq: f64, seed: u64) -> Vec<f64> {
        let mut rng = seeded_rng(seed, &[300]);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        (0..n)
            .map(|t| 0.5 * (std::f64::consts::TAU * freq * t as f64 / 8000.0 + phase).sin())
            .collect()
    }

    #[test]
    fn convolution_matches_the_direct_sum() {
        let a = [1.0, -2.0, 0.5, 3.0];
        let b = [0.25, 1.0, -1.0];
        let got = fft_convolve(&a, &b);
        let mut want = vec![0.0; a.len() + b.len() - 1];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                want[i + j] += x * y;
            }
        }
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10);
        }
    }

    #[test]
    fn components_resum_to_the_mixture() {
        let room = test_room(2);
        let dry = vec![tone(4000, 310.0, 1), tone(4200, 440.0, 2)];
        let mut nrng = seeded_rng(3, &[301]);
        let noise: Vec<f64> = (0..4000).map(|_| nrng.gen_range(-0.3..0.3)).collect();
        let mix = make_mixture(&dry, &noise, &room, (0.0, 5.0), 12, 7, &mut seeded_rng(7, &[302]))
            .unwrap();

        assert_eq!(mix.mixture.len(), 4000);
        assert_eq!(mix.reverberant_sources.len(), 2);
        let peak = mix.mixture.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - MIXTURE_PEAK).abs() < 1e-12);

        for t in 0..4000 {
            let resum =
                mix.reverberant_sources[0][t] + mix.reverberant_sources[1][t] + mix.noise[t];
            assert!((mix.mixture[t] - resum).abs() <= 1e-6 * peak, "sample {t}");
        }
    }

    #[test]
    fn zero_noise_means_pure_speech_sum() {
        let room = test_room(2);
        let dry = vec![tone(3000, 250.0, 4), tone(3000, 350.0, 5)];
        let mix = make_mixture(
            &dry,
            &vec![0.0; 3000],
            &room,
            (0.0, 5.0),
            12,
            0,
            &mut seeded_rng(0, &[303]),
        )
        .unwrap();
        assert_eq!(mix.noise_gain, 0.0);
        assert!(mix.noise.iter().all(|&v| v == 0.0));
        for t in 0..3000 {
            let speech = mix.reverberant_sources[0][t] + mix.reverberant_sources[1][t];
            assert!((mix.mixture[t] - speech).abs() < 1e-12);
        }
    }

    #[test]
    fn requested_snr_is_realized_exactly() {
        let room = test_room(2);
        let dry = vec![tone(3500, 220.0, 6), tone(3500, 330.0, 7)];
        let mut nrng = seeded_rng(8, &[304]);
        let noise: Vec<f64> = (0..3500).map(|_| nrng.gen_range(-0.5..0.5)).collect();
        let mix = make_mixture(&dry, &noise, &room, (5.0, 5.0), 12, 0, &mut seeded_rng(9, &[305]))
            .unwrap();
        assert_eq!(mix.snr_db, 5.0);
        let speech: Vec<f64> = (0..3500)
            .map(|t| mix.reverberant_sources[0][t] + mix.reverberant_sources[1][t])
            .collect();
        let measured = 10.0 * (energy(&speech) / energy(&mix.noise)).log10();
        assert!((measured - 5.0).abs() < 0.01, "measured {measured}");
    }

    #[test]
    fn silent_and_mismatched_inputs_are_rejected() {
        let room = test_room(2);
        let good = tone(2000, 300.0, 10);
        assert!(make_mixture(
            &[good.clone(), vec![0.0; 2000]],
            &vec![0.1; 2000],
            &room,
            (0.0, 5.0),
            8,
            0,
            &mut seeded_rng(1, &[306]),
        )
        .is_err());
        assert!(make_mixture(
            &[good.clone()],
            &vec![0.1; 2000],
            &room,
            (0.0, 5.0),
            8,
            0,
            &mut seeded_rng(1, &[306]),
        )
        .is_err());
        assert!(make_mixture(
            &[good.clone(), good.clone()],
            &vec![0.1; 100],
            &room,
            (0.0, 5.0),
            8,
            0,
            &mut seeded_rng(1, &[306]),
        )
        .is_err());
    }
}
