//! Batch generation of mixture datasets on disk, and the tab-separated
//! manifest that indexes them. Every sample is seeded independently from
//! the master seed and its index, so regeneration is bit-identical and
//! order-independent.

use std::fs;
use std::path::{Path, PathBuf};

use crate::mixsim::mixture::{make_mixture, MixtureSample, DEFAULT_MAX_ORDER, DEFAULT_SNR_RANGE};
use crate::mixsim::room::{sample_room, RoomConfig};
use crate::mixsim::sources::{NoiseKind, SourceKind};
use crate::util::{derive_seed, seeded_rng, tag};
use crate::wav::{write_wav, SAMPLE_RATE};
use crate::{Error, Result};

/// First token of a valid manifest header line.
pub const MANIFEST_VERSION: &str = "#mixset-v1";

#[derive(Clone, Debug)]
pub struct DatasetConfig {
    pub count: usize,
    pub seed: u64,
    /// Speakers per mixture.
    pub sources: usize,
    /// Utterance length in samples.
    pub samples: usize,
    pub snr_range: (f64, f64),
    pub max_order: usize,
    pub source_kind: SourceKind,
    pub noise_kind: NoiseKind,
    pub room: RoomConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            count: 8,
            seed: 0,
            sources: 2,
            samples: 4 * SAMPLE_RATE as usize,
            snr_range: DEFAULT_SNR_RANGE,
            max_order: DEFAULT_MAX_ORDER,
            source_kind: SourceKind::Tones,
            noise_kind: NoiseKind::White,
            room: RoomConfig::default(),
        }
    }
}

/// One parsed manifest row, paths resolved against the manifest location.
#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub id: String,
    pub mixture: PathBuf,
    pub sources: Vec<PathBuf>,
    pub noise: PathBuf,
    pub dims: [f64; 3],
    pub t60: f64,
    pub snr_db: f64,
    pub seed: u64,
}

/// Generate one sample of the dataset; exposed so callers can materialize a
/// single index without touching disk.
pub fn generate_sample(config: &DatasetConfig, index: usize) -> Result<MixtureSample> {
    let i = index as u64;
    let room = sample_room(
        &config.room,
        config.sources,
        &mut seeded_rng(config.seed, &[tag::ROOM, i]),
    )?;
    let dry = config.source_kind.dry_sources(
        &mut seeded_rng(config.seed, &[tag::SOURCE, i]),
        config.sources,
        config.samples,
    )?;
    let noise = config
        .noise_kind
        .noise(&mut seeded_rng(config.seed, &[tag::NOISE, i]), config.samples)?;
    let sample_seed = derive_seed(config.seed, &[tag::MIX, i]);
    make_mixture(
        &dry,
        &noise,
        &room,
        config.snr_range,
        config.max_order,
        sample_seed,
        &mut seeded_rng(config.seed, &[tag::MIX, i]),
    )
}

fn write_sample_wavs(dir: &Path, sample: &MixtureSample) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::audio(format!("{}: {e}", dir.display())))?;
    let mut names = vec!["mixture.wav".to_string()];
    write_wav(&dir.join("mixture.wav"), &sample.mixture, SAMPLE_RATE)?;
    for (s, wave) in sample.reverberant_sources.iter().enumerate() {
        let name = format!("s{}.wav", s + 1);
        write_wav(&dir.join(&name), wave, SAMPLE_RATE)?;
        names.push(name);
    }
    write_wav(&dir.join("noise.wav"), &sample.noise, SAMPLE_RATE)?;
    names.push("noise.wav".to_string());
    Ok(names)
}

/// Write `config.count` mixtures under `out_dir` and return the manifest
/// path. Layout: one directory per sample holding mixture.wav, s1..sS.wav,
/// noise.wav; manifest.tsv indexes them with relative paths. A zero count
/// writes a header-only manifest.
pub fn generate_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<PathBuf> {
    if config.sources == 0 {
        return Err(Error::invalid("dataset needs at least one source per mixture"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::audio(format!("{}: {e}", out_dir.display())))?;
    let mut manifest = String::new();
    manifest.push_str(MANIFEST_VERSION);
    manifest.push_str("\tid\tmixture\tsources\tnoise\tdims\tt60\tsnr\tseed\n");

    for index in 0..config.count {
        let sample = generate_sample(config, index)?;
        let id = format!("sample_{index:05}");
        let names = write_sample_wavs(&out_dir.join(&id), &sample)?;
        let sources = names[1..names.len() - 1]
            .iter()
            .map(|n| format!("{id}/{n}"))
            .collect::<Vec<_>>()
            .join(",");
        manifest.push_str(&format!(
            "{id}\t{id}/mixture.wav\t{sources}\t{id}/noise.wav\t{:.4}x{:.4}x{:.4}\t{:.4}\t{:.4}\t{}\n",
            sample.room.dims[0],
            sample.room.dims[1],
            sample.room.dims[2],
            sample.room.t60,
            sample.snr_db,
            sample.seed,
        ));
    }

    let path = out_dir.join("manifest.tsv");
    fs::write(&path, manifest).map_err(|e| Error::manifest(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T> {
    field.parse().map_err(|_| {
        Error::manifest(format!("line {line}: cannot parse {what} from {field:?}"))
    })
}

/// Parse a manifest written by `generate_dataset`.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::manifest(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.starts_with(MANIFEST_VERSION) => {}
        Some((_, header)) => {
            return Err(Error::manifest(format!(
                "unsupported manifest header {:?}",
                header.split('\t').next().unwrap_or(header)
            )))
        }
        None => return Err(Error::manifest("empty manifest")),
    }

    let mut entries = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 8 {
            return Err(Error::manifest(format!(
                "line {}: expected 8 tab-separated fields, got {}",
                n + 1,
                fields.len()
            )));
        }
        let dims_parts: Vec<&str> = fields[4].split('x').collect();
        if dims_parts.len() != 3 {
            return Err(Error::manifest(format!("line {}: bad dims {:?}", n + 1, fields[4])));
        }
        entries.push(ManifestEntry {
            id: fields[0].to_string(),
            mixture: base.join(fields[1]),
            sources: fields[2].split(',').map(|p| base.join(p)).collect(),
            noise: base.join(fields[3]),
            dims: [
                parse_field(dims_parts[0], n + 1, "length")?,
                parse_field(dims_parts[1], n + 1, "width")?,
                parse_field(dims_parts[2], n + 1, "height")?,
            ],
            t60: parse_field(fields[5], n + 1, "t60")?,
            snr_db: parse_field(fields[6], n + 1, "snr")?,
            seed: parse_field(fields[7], n + 1, "seed")?,
        });
    }
    Ok(entries)
}
