//! Dry-signal providers for dataset generation: synthetic harmonic tones
//! (keeps tests corpus-free), white and pink noise, and WAV-directory
//! readers for user-supplied material.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::util::gaussian;
use crate::wav::{read_wav, SAMPLE_RATE};
use crate::{Error, Result};

/// Sum of random harmonics with a random onset and a short attack ramp.
pub fn tone_source<R: Rng>(rng: &mut R, samples: usize) -> Vec<f64> {
    let f0: f64 = rng.gen_range(100.0..400.0);
    let partials = rng.gen_range(3..=5usize);
    let amps: Vec<f64> = (1..=partials)
        .map(|h| rng.gen_range(0.2..1.0) / h as f64)
        .collect();
    let phases: Vec<f64> = (0..partials)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    let onset = rng.gen_range(0..samples.max(2) / 2);
    let attack = (SAMPLE_RATE as usize / 25).max(1); // 40 ms

    let mut wave = vec![0.0; samples];
    for (t, w) in wave.iter_mut().enumerate().skip(onset) {
        let k = (t - onset) as f64;
        let env = ((k + 1.0) / attack as f64).min(1.0);
        let mut v = 0.0;
        for h in 0..partials {
            v += amps[h]
                * (std::f64::consts::TAU * f0 * (h + 1) as f64 * k / SAMPLE_RATE as f64
                    + phases[h])
                    .sin();
        }
        *w = env * v;
    }
    let peak = wave.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in &mut wave {
            *v *= 0.7 / peak;
        }
    }
    wave
}

pub fn white_noise<R: Rng>(rng: &mut R, samples: usize) -> Vec<f64> {
    (0..samples).map(|_| 0.2 * gaussian(rng)).collect()
}

/// Pink (1/f) noise: white noise through Kellet's 7-pole filter bank.
pub fn pink_noise<R: Rng>(rng: &mut R, samples: usize) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    (0..samples)
        .map(|_| {
            let w = gaussian(rng);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let pink = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
            0.11 * pink
        })
        .collect()
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::audio(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::audio(format!(
            "{}: no .wav files found",
            dir.display()
        )));
    }
    Ok(files)
}

fn read_checked(path: &Path) -> Result<Vec<f64>> {
    let (wave, rate) = read_wav(path)?;
    if rate != SAMPLE_RATE {
        return Err(Error::audio(format!(
            "{}: expected {SAMPLE_RATE} Hz, got {rate}",
            path.display()
        )));
    }
    Ok(wave)
}

/// Where dry source signals come from.
#[derive(Clone, Debug)]
pub enum SourceKind {
    Tones,
    Dir(PathBuf),
}

impl SourceKind {
    /// Produce `count` distinct dry utterances of exactly `samples` samples.
    pub fn dry_sources<R: Rng>(
        &self,
        rng: &mut R,
        count: usize,
        samples: usize,
    ) -> Result<Vec<Vec<f64>>> {
        match self {
            SourceKind::Tones => Ok((0..count).map(|_| tone_source(rng, samples)).collect()),
            SourceKind::Dir(dir) => {
                let files = wav_files(dir)?;
                if files.len() < count {
                    return Err(Error::audio(format!(
                        "{}: need {count} distinct files, found {}",
                        dir.display(),
                        files.len()
                    )));
                }
                let mut picked: Vec<usize> = Vec::with_capacity(count);
                while picked.len() < count {
                    let i = rng.gen_range(0..files.len());
                    if !picked.contains(&i) {
                        picked.push(i);
                    }
                }
                picked
                    .iter()
                    .map(|&i| {
                        let wave = read_checked(&files[i])?;
                        if wave.len() < samples {
                            return Err(Error::audio(format!(
                                "{}: {} samples, need {samples}",
                                files[i].display(),
                                wave.len()
                            )));
                        }
                        Ok(wave[..samples].to_vec())
                    })
                    .collect()
            }
        }
    }
}

/// Where ambient noise comes from.
#[derive(Clone, Debug)]
pub enum NoiseKind {
    White,
    Pink,
    Dir(PathBuf),
}

impl NoiseKind {
    /// Produce exactly `samples` samples of noise; directory files shorter
    /// than that are tiled.
    pub fn noise<R: Rng>(&self, rng: &mut R, samples: usize) -> Result<Vec<f64>> {
        match self {
            NoiseKind::White => Ok(white_noise(rng, samples)),
            NoiseKind::Pink => Ok(pink_noise(rng, samples)),
            NoiseKind::Dir(dir) => {
                let files = wav_files(dir)?;
                let wave = read_checked(&files[rng.gen_range(0..files.len())])?;
                if wave.is_empty() {
                    return Err(Error::audio(format!("{}: empty noise file", dir.display())));
                }
                Ok((0..samples).map(|t| wave[t % wave.len()]).collect())
            }
        }
    }
}
