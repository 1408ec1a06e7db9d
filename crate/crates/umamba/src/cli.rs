//! Command-line entry point: simulation, training, separation, evaluation,
//! profiling, and spectrogram dumps behind one resolved configuration.
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::metrics;
use crate::mixsim;
use crate::model::{checkpoint, profile, Model, ModelConfig, Upsampling};
use crate::train;
use crate::wav::{read_wav, write_wav, SAMPLE_RATE};
use crate::{Error, Result};

#[derive(Parser)]
#[command(
    name = "umamba",
    version,
    about = "Reverberant speech separation: simulate data, train, separate, evaluate, profile"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    /// Key=value configuration file with dotted section prefixes.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Force single-threaded numeric paths (already the only mode; the flag
    /// pins that expectation for scripts).
    #[arg(long)]
    deterministic: bool,
    /// Extra key=value overrides, applied after the configuration file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Oracle {
    /// References scored as their own estimates.
    Refs,
    /// The mixture repeated once per source.
    Mixture,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a reverberant-mixture dataset with a manifest.
    Simulate {
        #[command(flatten)]
        shared: Shared,
        /// Number of mixtures, overriding sim.count.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a separator; writes checkpoints, a step log, and the resolved
    /// configuration under --out.
    Train {
        #[command(flatten)]
        shared: Shared,
        /// Training manifest, or the directory holding manifest.tsv.
        #[arg(long)]
        dataset: PathBuf,
        /// Validation manifest or directory; enables best-checkpoint
        /// retention and plateau learning-rate halving.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Resume from this checkpoint's training state.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many optimizer steps; 0 saves the initial model
        /// untrained.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Split one mixture WAV into per-source estimate WAVs.
    Separate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Mixture WAV, 8 kHz mono 16-bit.
        #[arg(long)]
        input: PathBuf,
    },
    /// Score separations against a manifest's references.
    Evaluate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Manifest of mixtures and references, or its directory.
        #[arg(long)]
        manifest: PathBuf,
        /// Score a fixed oracle instead of a model.
        #[arg(long, value_enum)]
        oracle: Option<Oracle>,
    },
    /// Print analytic parameter and multiply-accumulate budgets.
    Profile {
        /// Key=value configuration file with dotted section prefixes.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed, overriding the configuration file.
        #[arg(long)]
        seed: Option<u64>,
        /// Optional output directory for the table and resolved config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Force single-threaded numeric paths (already the only mode).
        #[arg(long)]
        deterministic: bool,
        /// Extra key=value overrides, applied after the configuration file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Add one row per single-knob ablation of the configured model.
        #[arg(long)]
        grid: bool,
        /// Input length in samples for the multiply-accumulate count.
        #[arg(long, default_value_t = 24_000)]
        samples: usize,
    },
    /// Dump a dB magnitude spectrogram grid for plotting.
    Spectrogram {
        #[command(flatten)]
        shared: Shared,
        /// Input WAV.
        #[arg(long)]
        input: PathBuf,
        /// FFT size, a power of two.
        #[arg(long, default_value_t = 256)]
        fft: usize,
        /// Hop between frames in samples.
        #[arg(long, default_value_t = 64)]
        hop: usize,
    },
}

/// Binary entry point; returns the process exit code.
pub fn cli_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { shared, n } => cmd_simulate(&shared, n),
        Command::Train {
            shared,
            dataset,
            val,
            resume,
            max_steps,
        } => cmd_train(&shared, &dataset, val.as_deref(), resume.as_deref(), max_steps),
        Command::Separate {
            shared,
            checkpoint,
            input,
        } => cmd_separate(&shared, &checkpoint, &input),
        Command::Evaluate {
            shared,
            checkpoint,
            manifest,
            oracle,
        } => cmd_evaluate(&shared, checkpoint.as_deref(), &manifest, oracle),
        Command::Profile {
            config,
            seed,
            out,
            deterministic: _,
            set,
            grid,
            samples,
        } => cmd_profile(config.as_deref(), seed, &set, out.as_deref(), grid, samples),
        Command::Spectrogram {
            shared,
            input,
            fft,
            hop,
        } => cmd_spectrogram(&shared, &input, fft, hop),
    }
}

/// File plus --set plus --seed, in override order, then finalized.
fn load_config(shared: &Shared) -> Result<RunConfig> {
    // all numeric paths are single-threaded, so the flag needs no plumbing
    let _ = shared.deterministic;
    load_config_parts(shared.config.as_deref(), &shared.set, shared.seed)
}

fn load_config_parts(
    path: Option<&Path>,
    set: &[String],
    seed: Option<u64>,
) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    for kv in set {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            Error::config(format!("--set {kv:?} is not of the form key=value"))
        })?;
        cfg.apply(k.trim(), v.trim())?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.finalize()?;
    Ok(cfg)
}

/// Accept either a manifest file or the directory that holds manifest.tsv.
fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("manifest.tsv")
    } else {
        p.to_path_buf()
    }
}

fn to_f32(wave: &[f64]) -> Vec<f32> {
    wave.iter().map(|&v| v as f32).collect()
}

fn to_f64(wave: &[f32]) -> Vec<f64> {
    wave.iter().map(|&v| v as f64).collect()
}

fn cmd_simulate(shared: &Shared, n: Option<usize>) -> Result<()> {
    let mut cfg = load_config(shared)?;
    if let Some(n) = n {
        cfg.dataset.count = n;
    }
    fs::create_dir_all(&shared.out)?;
    cfg.persist(&shared.out)?;
    let manifest = mixsim::generate_dataset(&cfg.dataset, &shared.out)?;
    println!(
        "wrote {} mixtures, manifest {}",
        cfg.dataset.count,
        manifest.display()
    );
    Ok(())
}

fn cmd_train(
    shared: &Shared,
    dataset: &Path,
    val: Option<&Path>,
    resume: Option<&Path>,
    max_steps: Option<u64>,
) -> Result<()> {
    let mut cfg = load_config(shared)?;
    if let Some(ms) = max_steps {
        cfg.train.max_steps = ms;
        if ms == 0 {
            cfg.train.max_epochs = 0;
        }
    }

    let train_set = train::load_utterances(&manifest_path(dataset))?;
    let val_set = match val {
        Some(p) => train::load_utterances(&manifest_path(p))?,
        None => Vec::new(),
    };

    let (mut model, state) = match resume {
        Some(p) => {
            let (m, s) = checkpoint::load(p)?;
            let s = s.ok_or_else(|| {
                Error::checkpoint(format!(
                    "{}: checkpoint has no training state to resume from",
                    p.display()
                ))
            })?;
            if let Some(flag_seed) = shared.seed {
                if flag_seed != s.seed {
                    return Err(Error::config(format!(
                        "--seed {flag_seed} conflicts with the checkpoint's seed {}",
                        s.seed
                    )));
                }
            }
            cfg.seed = s.seed;
            cfg.finalize()?;
            cfg.model = m.config.clone();
            (m, Some(s))
        }
        None => (Model::<f32>::init(cfg.model.clone(), cfg.seed)?, None),
    };

    fs::create_dir_all(&shared.out)?;
    cfg.persist(&shared.out)?;
    let mut log = io::BufWriter::new(fs::File::create(shared.out.join("train.log"))?);
    let result = train::fit(
        &mut model,
        &train_set,
        &val_set,
        &cfg.train,
        Some(&shared.out),
        state.as_ref(),
        &mut log,
    )?;
    log.flush()?;

    match result.loss_curve.last() {
        Some(loss) => println!(
            "{} steps, final loss {loss:.4}, checkpoint {}",
            result.steps,
            shared.out.join("last.ckpt").display()
        ),
        None => println!(
            "0 steps, initial checkpoint {}",
            shared.out.join("last.ckpt").display()
        ),
    }
    if let Some(score) = result.train_si_snr {
        println!("train si-snr {score:.2} dB");
    }
    if let Some((epoch, score)) = result.val_curve.last() {
        println!("val si-snr {score:.2} dB after epoch {epoch}");
    }
    Ok(())
}

fn cmd_separate(shared: &Shared, checkpoint_path: &Path, input: &Path) -> Result<()> {
    let mut cfg = load_config(shared)?;
    let (model, _) = checkpoint::load(checkpoint_path)?;
    let (mixture, rate) = read_wav(input)?;
    if rate != SAMPLE_RATE {
        return Err(Error::audio(format!(
            "{}: sample rate {rate} Hz, this model expects {SAMPLE_RATE} Hz",
            input.display()
        )));
    }
    let ests = model.separate(&to_f32(&mixture))?;
    fs::create_dir_all(&shared.out)?;
    cfg.model = model.config.clone();
    cfg.persist(&shared.out)?;
    for (i, est) in ests.iter().enumerate() {
        write_wav(
            &shared.out.join(format!("est{}.wav", i + 1)),
            &to_f64(est),
            SAMPLE_RATE,
        )?;
    }
    println!("wrote {} estimates under {}", ests.len(), shared.out.display());
    Ok(())
}

fn cmd_evaluate(
    shared: &Shared,
    checkpoint_path: Option<&Path>,
    manifest: &Path,
    oracle: Option<Oracle>,
) -> Result<()> {
    let mut cfg = load_config(shared)?;
    let model = match (checkpoint_path, oracle) {
        (Some(_), Some(_)) => {
            return Err(Error::config(
                "--checkpoint and --oracle are mutually exclusive",
            ))
        }
        (None, None) => return Err(Error::config("provide --checkpoint or --oracle")),
        (Some(p), None) => Some(checkpoint::load(p)?.0),
        (None, Some(_)) => None,
    };

    let utts = train::load_utterances(&manifest_path(manifest))?;
    let mut rows = Vec::with_capacity(utts.len());
    for u in &utts {
        let ests: Vec<Vec<f64>> = match (&model, oracle) {
            (Some(m), _) => m.separate(&to_f32(&u.mixture))?.iter().map(|e| to_f64(e)).collect(),
            (None, Some(Oracle::Refs)) => u.references.clone(),
            (None, Some(Oracle::Mixture)) => vec![u.mixture.clone(); u.references.len()],
            (None, None) => unreachable!("rejected above"),
        };
        rows.push(metrics::evaluate_utterance(&u.id, &u.mixture, &ests, &u.references)?);
    }

    fs::create_dir_all(&shared.out)?;
    if let Some(m) = &model {
        cfg.model = m.config.clone();
    }
    cfg.persist(&shared.out)?;
    let mut report = io::BufWriter::new(fs::File::create(shared.out.join("report.tsv"))?);
    metrics::write_report(&mut report, &rows)?;
    report.flush()?;

    let mut summary = format!("utterances\t{}\n", rows.len());
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mut mean = |name: &str, f: &dyn Fn(&metrics::ReportRow) -> f64| {
            let v = rows.iter().map(|r| f(r)).sum::<f64>() / n;
            summary.push_str(&format!("{name}\t{v:.4}\n"));
        };
        mean("mean_si_snr", &|r| r.si_snr);
        mean("mean_si_snri", &|r| r.si_snri);
        mean("mean_sdri", &|r| r.sdri);
        mean("mean_siri", &|r| r.siri);
    }
    fs::write(shared.out.join("summary.tsv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_profile(
    config: Option<&Path>,
    seed: Option<u64>,
    set: &[String],
    out: Option<&Path>,
    grid: bool,
    samples: usize,
) -> Result<()> {
    let cfg = load_config_parts(config, set, seed)?;
    let mut rows: Vec<(String, ModelConfig)> = vec![("configured".to_string(), cfg.model.clone())];
    if grid {
        let base = &cfg.model;
        let mut tweak = |label: &str, edit: &dyn Fn(&mut ModelConfig)| {
            let mut c = base.clone();
            edit(&mut c);
            rows.push((label.to_string(), c));
        };
        tweak("feature=64", &|c| {
            c.feature_channels = 64;
            c.bottleneck_channels = 64;
        });
        tweak("feature=192", &|c| {
            c.feature_channels = 192;
            c.bottleneck_channels = 192;
        });
        tweak("blocks=12", &|c| c.blocks = 12);
        tweak("blocks=20", &|c| c.blocks = 20);
        tweak("depth=8", &|c| c.depth = 8);
        tweak("up=nearest-neighbor", &|c| c.upsampling = Upsampling::NearestNeighbor);
        tweak("up=linear", &|c| c.upsampling = Upsampling::Linear);
    }

    let mut table = String::from("#config\tparams\tmacs\tgmacs\n");
    for (label, c) in &rows {
        let params = profile::count_params(c);
        let macs = profile::count_macs(c, samples);
        table.push_str(&format!(
            "{label}\t{params}\t{macs}\t{:.3}\n",
            macs as f64 / 1e9
        ));
    }
    print!("{table}");

    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        cfg.persist(dir)?;
        fs::write(dir.join("profile.tsv"), &table)?;
    }
    Ok(())
}

fn cmd_spectrogram(shared: &Shared, input: &Path, fft: usize, hop: usize) -> Result<()> {
    let cfg = load_config(shared)?;
    let (wave, _) = read_wav(input)?;
    let grid = metrics::spectrogram(&wave, fft, hop)?;
    fs::create_dir_all(&shared.out)?;
    cfg.persist(&shared.out)?;
    let mut out = io::BufWriter::new(fs::File::create(shared.out.join("spectrogram.tsv"))?);
    metrics::write_spectrogram(&mut out, &grid)?;
    out.flush()?;
    println!(
        "wrote {} bins x {} frames to {}",
        grid.shape[0],
        grid.shape[1],
        shared.out.join("spectrogram.tsv").display()
    );
    Ok(())
}
