//! Batch front-end: dataset generation, training, evaluation, the geometric
//! rebinning baseline and filter export, driven by an experiment config
//! JSON document (all keys optional, unknown keys rejected). Exit codes:
//! 0 success, 2 usage or configuration error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use parfan::config::ExperimentConfig;
use parfan::pipeline::{self, PhantomSource};
use parfan::spectral::FilterMode;
use parfan::Error;

#[derive(Parser)]
#[command(name = "parfan", version, about = "Parallel-to-fan beam conversion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Command-line mirrors of the experiment config keys; any flag given here
/// overrides the value loaded from `--config`.
#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long)]
    sdd_mm: Option<f64>,
    #[arg(long)]
    sid_mm: Option<f64>,
    #[arg(long)]
    detector_px: Option<usize>,
    #[arg(long)]
    detector_spacing_mm: Option<f64>,
    #[arg(long)]
    image_px: Option<usize>,
    #[arg(long)]
    image_spacing_mm: Option<f64>,
    /// Comma-separated source angles in degrees.
    #[arg(long, value_delimiter = ',')]
    trajectory_deg: Option<Vec<f64>>,
    /// Number of parallel projections per fan angle.
    #[arg(long, conflicts_with = "full_sampling")]
    n_projections: Option<usize>,
    /// One parallel projection per detector pixel.
    #[arg(long)]
    full_sampling: bool,
    #[arg(long, value_parser = parse_filter_mode)]
    filter_mode: Option<FilterMode>,
    #[arg(long)]
    lr_scale: Option<f64>,
    #[arg(long)]
    lr_filter: Option<f64>,
    #[arg(long)]
    epochs_scale: Option<usize>,
    #[arg(long)]
    epochs_filter: Option<usize>,
    #[arg(long)]
    smoothing_sigma_bins: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Phantom/noise seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<String>,
}

fn parse_filter_mode(s: &str) -> Result<FilterMode, String> {
    match s {
        "projection_independent" | "independent" => Ok(FilterMode::ProjectionIndependent),
        "projection_dependent" | "dependent" => Ok(FilterMode::ProjectionDependent),
        other => Err(format!(
            "unknown filter mode {other:?} (use projection_independent or projection_dependent)"
        )),
    }
}

impl Overrides {
    fn apply(&self, config: &mut ExperimentConfig) {
        let g = &mut config.geometry;
        if let Some(v) = self.sdd_mm {
            g.sdd_mm = v;
        }
        if let Some(v) = self.sid_mm {
            g.sid_mm = v;
        }
        if let Some(v) = self.detector_px {
            g.detector_px = v;
        }
        if let Some(v) = self.detector_spacing_mm {
            g.detector_spacing_mm = v;
        }
        if let Some(v) = self.image_px {
            g.image_px = v;
        }
        if let Some(v) = self.image_spacing_mm {
            g.image_spacing_mm = v;
        }
        if let Some(v) = &self.trajectory_deg {
            g.trajectory_deg = v.clone();
        }
        if let Some(v) = self.n_projections {
            g.n_projections = Some(v);
        }
        if self.full_sampling {
            g.n_projections = None;
        }
        let t = &mut config.training;
        if let Some(v) = self.lr_scale {
            t.lr_scale = v;
        }
        if let Some(v) = self.lr_filter {
            t.lr_filter = v;
        }
        if let Some(v) = self.epochs_scale {
            t.epochs_scale = v;
        }
        if let Some(v) = self.epochs_filter {
            t.epochs_filter = v;
        }
        if let Some(v) = self.smoothing_sigma_bins {
            t.smoothing_sigma_bins = v;
        }
        if let Some(v) = self.momentum {
            t.momentum = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = Some(v);
        }
        if let Some(v) = self.filter_mode {
            config.filter_mode = v;
        }
        if let Some(v) = self.seed {
            config.phantom_seed = v;
        }
        if let Some(v) = &self.output_dir {
            config.output_dir = v.clone();
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the phantom set, wedge sinograms and fan-beam labels.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: `<output_dir>/dataset`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the two-phase training on a generated dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory produced by `generate`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output directory (default: `<output_dir>/train`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint against fan-beam ground truth and the
    /// geometric baseline; writes per-angle profile CSVs.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint stem (the path without `.json`/`.bin`).
        #[arg(long)]
        checkpoint: PathBuf,
        /// `shepp-logan` (default) or the stem of a raw image tensor.
        #[arg(long, default_value = "shepp-logan")]
        phantom: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Classical geometric rebinning against fan-beam ground truth.
    RebinBaseline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "shepp-logan")]
        phantom: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Export a checkpoint's filter as CSV (one line per filter row,
    /// frequency-ordered).
    ExportFilter {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>, overrides: &Overrides) -> Result<ExperimentConfig, Error> {
    let mut config = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}

fn phantom_source(phantom: &str) -> PhantomSource {
    if phantom == "shepp-logan" {
        PhantomSource::SheppLogan
    } else {
        PhantomSource::File(PathBuf::from(phantom))
    }
}

fn out_dir(config: &ExperimentConfig, out: &Option<PathBuf>, sub: &str) -> PathBuf {
    out.clone()
        .unwrap_or_else(|| Path::new(&config.output_dir).join(sub))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate {
            config,
            out,
            overrides,
        } => {
            let config = load_config(&config, &overrides)?;
            let dir = out_dir(&config, &out, "dataset");
            let manifest = pipeline::run_generate(&config, &dir)?;
            println!(
                "generated {} phantoms, {} samples in {}",
                manifest.phantoms.len(),
                manifest.samples.len(),
                dir.display()
            );
            println!("dataset digest {}", manifest.dataset_digest);
        }
        Command::Train {
            config,
            dataset,
            out,
            overrides,
        } => {
            let config = load_config(&config, &overrides)?;
            let dataset = dataset.unwrap_or_else(|| out_dir(&config, &None, "dataset"));
            let dir = out_dir(&config, &out, "train");
            let outcome = pipeline::run_train(&config, &dataset, &dir)?;
            let report = &outcome.report;
            println!(
                "trained: S={} after {} scale epochs ({}), {} filter epochs",
                report.final_scale,
                report.phase1_epochs,
                if report.phase1_converged {
                    "converged"
                } else {
                    "epoch cap"
                },
                report.phase2_epochs,
            );
            if let Some(last) = report.loss_curve.last() {
                println!("final loss {}", last.loss);
            }
            println!("checkpoint at {}", outcome.checkpoint_stem.display());
        }
        Command::Evaluate {
            config,
            checkpoint,
            phantom,
            out,
            overrides,
        } => {
            let config = load_config(&config, &overrides)?;
            let dir = out_dir(&config, &out, "eval");
            let metrics =
                pipeline::run_evaluate(&config, &checkpoint, &phantom_source(&phantom), &dir)?;
            for b in &metrics.per_beta {
                println!(
                    "beta {:>6.2} deg: rel_l2 {:.6} (baseline {:.6}) corr {:.6} (baseline {:.6})",
                    b.beta_deg, b.rel_l2, b.baseline_rel_l2, b.correlation, b.baseline_correlation
                );
            }
            println!(
                "mean rel_l2 {:.6} vs baseline {:.6}; profiles in {}",
                metrics.mean_rel_l2,
                metrics.baseline_mean_rel_l2,
                dir.display()
            );
        }
        Command::RebinBaseline {
            config,
            phantom,
            out,
            overrides,
        } => {
            let config = load_config(&config, &overrides)?;
            let dir = out_dir(&config, &out, "baseline");
            let metrics =
                pipeline::run_rebin_baseline(&config, &phantom_source(&phantom), &dir)?;
            for b in &metrics.per_beta {
                println!(
                    "beta {:>6.2} deg: rel_l2 {:.6} max_abs {:.6} corr {:.6}",
                    b.beta_deg, b.rel_l2, b.max_abs, b.correlation
                );
            }
            println!("mean rel_l2 {:.6}; profiles in {}", metrics.mean_rel_l2, dir.display());
        }
        Command::ExportFilter { checkpoint, out } => {
            pipeline::export_filter(&checkpoint, &out)?;
            println!("filter written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::TrainingDiverged { .. } | Error::InvalidState(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
