//! Plain-text run configuration: dotted key=value lines merged over the
//! defaults, command-line overrides applied last. Unknown keys are rejected,
//! and the fully resolved configuration can be re-emitted in a form that
//! parses back to the same state, so every run can persist its provenance.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::mixsim::{DatasetConfig, NoiseKind, SourceKind};
use crate::model::{ModelConfig, Upsampling};
use crate::train::TrainConfig;
use crate::{Error, Result};

/// File name the resolved configuration is persisted under.
pub const RESOLVED_NAME: &str = "config.resolved";

#[derive(Clone, Debug)]
pub struct RunConfig {
    /// Master seed; propagated into the training and simulation seeds.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    source_kind: String,
    source_dir: Option<PathBuf>,
    noise_kind: String,
    noise_dir: Option<PathBuf>,
    bottleneck_set: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            dataset: DatasetConfig::default(),
            source_kind: "tones".to_string(),
            source_dir: None,
            noise_kind: "white".to_string(),
            noise_dir: None,
            bottleneck_set: false,
        }
    }
}

fn upsampling_name(u: Upsampling) -> &'static str {
    match u {
        Upsampling::TransposedConv => "transposed-conv",
        Upsampling::NearestNeighbor => "nearest-neighbor",
        Upsampling::Linear => "linear",
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("cannot parse {value:?} for key {key}")))
}

impl RunConfig {
    /// Parse a whole configuration file over the defaults. `#` starts a
    /// comment line; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected key=value, got {line:?}", n + 1))
            })?;
            cfg.apply(key.trim(), value.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    /// Read a configuration file, or start from the defaults without one.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
                Self::parse(&text)
            }
            None => Ok(RunConfig::default()),
        }
    }

    /// Set one dotted key. Unknown keys and unparseable values are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,

            "model.feature_channels" => self.model.feature_channels = parse_value(key, value)?,
            "model.window" => self.model.window = parse_value(key, value)?,
            "model.hop" => self.model.hop = parse_value(key, value)?,
            "model.depth" => self.model.depth = parse_value(key, value)?,
            "model.blocks" => self.model.blocks = parse_value(key, value)?,
            "model.sources" => self.model.sources = parse_value(key, value)?,
            "model.states" => self.model.states = parse_value(key, value)?,
            "model.upsampling" => self.model.upsampling = value.parse()?,
            "model.bottleneck_channels" => {
                self.model.bottleneck_channels = parse_value(key, value)?;
                self.bottleneck_set = true;
            }

            "train.batch_size" => self.train.batch_size = parse_value(key, value)?,
            "train.learning_rate" => self.train.learning_rate = parse_value(key, value)?,
            "train.max_epochs" => self.train.max_epochs = parse_value(key, value)?,
            "train.crop_seconds" => self.train.crop_seconds = parse_value(key, value)?,
            "train.grad_clip" => self.train.grad_clip = parse_value(key, value)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse_value(key, value)?,
            "train.max_steps" => self.train.max_steps = parse_value(key, value)?,
            "train.plateau_patience" => self.train.plateau_patience = parse_value(key, value)?,
            "train.stop_at_si_snr" => {
                self.train.stop_at_train_si_snr = if value == "none" {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }

            "sim.count" => self.dataset.count = parse_value(key, value)?,
            "sim.sources" => self.dataset.sources = parse_value(key, value)?,
            "sim.samples" => self.dataset.samples = parse_value(key, value)?,
            "sim.snr_min" => self.dataset.snr_range.0 = parse_value(key, value)?,
            "sim.snr_max" => self.dataset.snr_range.1 = parse_value(key, value)?,
            "sim.max_order" => self.dataset.max_order = parse_value(key, value)?,
            "sim.source_kind" => match value {
                "tones" | "dir" => self.source_kind = value.to_string(),
                other => {
                    return Err(Error::config(format!(
                        "sim.source_kind must be tones or dir, got {other:?}"
                    )))
                }
            },
            "sim.source_dir" => self.source_dir = Some(PathBuf::from(value)),
            "sim.noise_kind" => match value {
                "white" | "pink" | "dir" => self.noise_kind = value.to_string(),
                other => {
                    return Err(Error::config(format!(
                        "sim.noise_kind must be white, pink, or dir, got {other:?}"
                    )))
                }
            },
            "sim.noise_dir" => self.noise_dir = Some(PathBuf::from(value)),

            "room.length_min" => self.dataset.room.length.0 = parse_value(key, value)?,
            "room.length_max" => self.dataset.room.length.1 = parse_value(key, value)?,
            "room.width_min" => self.dataset.room.width.0 = parse_value(key, value)?,
            "room.width_max" => self.dataset.room.width.1 = parse_value(key, value)?,
            "room.height_min" => self.dataset.room.height.0 = parse_value(key, value)?,
            "room.height_max" => self.dataset.room.height.1 = parse_value(key, value)?,
            "room.t60_min" => self.dataset.room.t60.0 = parse_value(key, value)?,
            "room.t60_max" => self.dataset.room.t60.1 = parse_value(key, value)?,
            "room.receiver_offset" => {
                self.dataset.room.receiver_offset = parse_value(key, value)?
            }
            "room.receiver_height_min" => {
                self.dataset.room.receiver_height.0 = parse_value(key, value)?
            }
            "room.receiver_height_max" => {
                self.dataset.room.receiver_height.1 = parse_value(key, value)?
            }
            "room.source_height_min" => {
                self.dataset.room.source_height.0 = parse_value(key, value)?
            }
            "room.source_height_max" => {
                self.dataset.room.source_height.1 = parse_value(key, value)?
            }
            "room.source_distance_min" => {
                self.dataset.room.source_distance.0 = parse_value(key, value)?
            }
            "room.source_distance_max" => {
                self.dataset.room.source_distance.1 = parse_value(key, value)?
            }

            other => return Err(Error::config(format!("unknown configuration key {other}"))),
        }
        Ok(())
    }

    /// Settle derived values and validate cross-field constraints. Called
    /// once, after the file and every override have been applied.
    pub fn finalize(&mut self) -> Result<()> {
        if !self.bottleneck_set {
            self.model.bottleneck_channels = self.model.feature_channels;
        }
        self.train.seed = self.seed;
        self.dataset.seed = self.seed;

        let ranges = [
            ("room.length", self.dataset.room.length),
            ("room.width", self.dataset.room.width),
            ("room.height", self.dataset.room.height),
            ("room.t60", self.dataset.room.t60),
            ("room.receiver_height", self.dataset.room.receiver_height),
            ("room.source_height", self.dataset.room.source_height),
            ("room.source_distance", self.dataset.room.source_distance),
            ("sim.snr", self.dataset.snr_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::config(format!(
                    "{name} range [{lo}, {hi}] is empty or not finite"
                )));
            }
        }
        if self.dataset.room.t60.0 <= 0.0 {
            return Err(Error::config("room.t60_min must be positive"));
        }
        if self.dataset.room.receiver_offset < 0.0 {
            return Err(Error::config("room.receiver_offset must not be negative"));
        }

        self.dataset.source_kind = match self.source_kind.as_str() {
            "tones" => SourceKind::Tones,
            "dir" => SourceKind::Dir(self.source_dir.clone().ok_or_else(|| {
                Error::config("sim.source_kind=dir requires sim.source_dir")
            })?),
            other => return Err(Error::config(format!("unknown source kind {other}"))),
        };
        self.dataset.noise_kind = match self.noise_kind.as_str() {
            "white" => NoiseKind::White,
            "pink" => NoiseKind::Pink,
            "dir" => NoiseKind::Dir(self.noise_dir.clone().ok_or_else(|| {
                Error::config("sim.noise_kind=dir requires sim.noise_dir")
            })?),
            other => return Err(Error::config(format!("unknown noise kind {other}"))),
        };
        Ok(())
    }

    /// Emit every key in a fixed order; parsing the result reproduces this
    /// configuration.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "seed = {}", self.seed);
        let _ = writeln!(w, "model.feature_channels = {}", self.model.feature_channels);
        let _ = writeln!(w, "model.window = {}", self.model.window);
        let _ = writeln!(w, "model.hop = {}", self.model.hop);
        let _ = writeln!(w, "model.depth = {}", self.model.depth);
        let _ = writeln!(w, "model.blocks = {}", self.model.blocks);
        let _ = writeln!(w, "model.sources = {}", self.model.sources);
        let _ = writeln!(w, "model.states = {}", self.model.states);
        let _ = writeln!(w, "model.upsampling = {}", upsampling_name(self.model.upsampling));
        let _ = writeln!(
            w,
            "model.bottleneck_channels = {}",
            self.model.bottleneck_channels
        );
        let _ = writeln!(w, "train.batch_size = {}", self.train.batch_size);
        let _ = writeln!(w, "train.learning_rate = {}", self.train.learning_rate);
        let _ = writeln!(w, "train.max_epochs = {}", self.train.max_epochs);
        let _ = writeln!(w, "train.crop_seconds = {}", self.train.crop_seconds);
        let _ = writeln!(w, "train.grad_clip = {}", self.train.grad_clip);
        let _ = writeln!(w, "train.checkpoint_every = {}", self.train.checkpoint_every);
        let _ = writeln!(w, "train.max_steps = {}", self.train.max_steps);
        match self.train.stop_at_train_si_snr {
            Some(v) => {
                let _ = writeln!(w, "train.stop_at_si_snr = {v}");
            }
            None => {
                let _ = writeln!(w, "train.stop_at_si_snr = none");
            }
        }
        let _ = writeln!(w, "train.plateau_patience = {}", self.train.plateau_patience);
        let _ = writeln!(w, "sim.count = {}", self.dataset.count);
        let _ = writeln!(w, "sim.sources = {}", self.dataset.sources);
        let _ = writeln!(w, "sim.samples = {}", self.dataset.samples);
        let _ = writeln!(w, "sim.snr_min = {}", self.dataset.snr_range.0);
        let _ = writeln!(w, "sim.snr_max = {}", self.dataset.snr_range.1);
        let _ = writeln!(w, "sim.max_order = {}", self.dataset.max_order);
        let _ = writeln!(w, "sim.source_kind = {}", self.source_kind);
        if let Some(d) = &self.source_dir {
            let _ = writeln!(w, "sim.source_dir = {}", d.display());
        }
        let _ = writeln!(w, "sim.noise_kind = {}", self.noise_kind);
        if let Some(d) = &self.noise_dir {
            let _ = writeln!(w, "sim.noise_dir = {}", d.display());
        }
        let room = &self.dataset.room;
        let _ = writeln!(w, "room.length_min = {}", room.length.0);
        let _ = writeln!(w, "room.length_max = {}", room.length.1);
        let _ = writeln!(w, "room.width_min = {}", room.width.0);
        let _ = writeln!(w, "room.width_max = {}", room.width.1);
        let _ = writeln!(w, "room.height_min = {}", room.height.0);
        let _ = writeln!(w, "room.height_max = {}", room.height.1);
        let _ = writeln!(w, "room.t60_min = {}", room.t60.0);
        let _ = writeln!(w, "room.t60_max = {}", room.t60.1);
        let _ = writeln!(w, "room.receiver_offset = {}", room.receiver_offset);
        let _ = writeln!(w, "room.receiver_height_min = {}", room.receiver_height.0);
        let _ = writeln!(w, "room.receiver_height_max = {}", room.receiver_height.1);
        let _ = writeln!(w, "room.source_height_min = {}", room.source_height.0);
        let _ = writeln!(w, "room.source_height_max = {}", room.source_height.1);
        let _ = writeln!(w, "room.source_distance_min = {}", room.source_distance.0);
        let _ = writeln!(w, "room.source_distance_max = {}", room.source_distance.1);
        s
    }

    /// Write the resolved configuration into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RESOLVED_NAME);
        std::fs::write(&path, self.resolved())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finalized(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::parse(text)?;
        cfg.finalize()?;
        Ok(cfg)
    }

    #[test]
    fn resolved_output_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply("model.feature_channels", "64").unwrap();
        cfg.apply("train.stop_at_si_snr", "10").unwrap();
        cfg.apply("sim.noise_kind", "dir").unwrap();
        cfg.apply("sim.noise_dir", "noises").unwrap();
        cfg.seed = 42;
        cfg.finalize().unwrap();
        let first = cfg.resolved();
        let mut again = RunConfig::parse(&first).unwrap();
        again.finalize().unwrap();
        assert_eq!(first, again.resolved());
        assert_eq!(again.model.bottleneck_channels, 64);
        assert_eq!(again.train.stop_at_train_si_snr, Some(10.0));
        assert!(matches!(again.dataset.noise_kind, NoiseKind::Dir(_)));
    }

    #[test]
    fn unknown_keys_and_bad_lines_are_rejected() {
        assert!(RunConfig::parse("model.feature_chanels = 64").is_err());
        let err = RunConfig::parse("model.window 41").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        let mut cfg = RunConfig::default();
        assert!(cfg.apply("train.batch_size", "four").is_err());
        assert!(cfg.apply("model.upsampling", "bilinear").is_err());
        assert!(cfg.apply("sim.source_kind", "speech").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let cfg = finalized("# a comment\n\n  seed = 7\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.dataset.seed, 7);
    }

    #[test]
    fn bottleneck_follows_feature_channels_unless_set() {
        let cfg = finalized("model.feature_channels = 64\n").unwrap();
        assert_eq!(cfg.model.bottleneck_channels, 64);

        let cfg =
            finalized("model.feature_channels = 64\nmodel.bottleneck_channels = 96\n").unwrap();
        assert_eq!(cfg.model.bottleneck_channels, 96);
    }

    #[test]
    fn empty_ranges_are_config_errors() {
        let err = finalized("room.t60_min = 0.7\nroom.t60_max = 0.3\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(finalized("room.t60_min = 0\n").is_err());
        assert!(finalized("sim.snr_min = 6\nsim.snr_max = 2\n").is_err());
    }

    #[test]
    fn directory_kinds_require_their_directories() {
        assert!(finalized("sim.source_kind = dir\n").is_err());
        let cfg = finalized("sim.source_kind = dir\nsim.source_dir = voices\n").unwrap();
        assert!(matches!(cfg.dataset.source_kind, SourceKind::Dir(ref d) if d.ends_with("voices")));
    }
}
