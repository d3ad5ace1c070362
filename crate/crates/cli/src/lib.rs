//! The `ggls` command line: `adapt`, `ablate` and `synth`.

pub mod config;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ggls_core::data::{self, DomainDataset, SyntheticShiftSpec};
use ggls_core::{eval, solver, GglsError, Module, Result};

use crate::config::{Input, RunConfig, Settings};
use crate::output::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "ggls", version, about = "Unsupervised domain adaptation with graph-attentional landmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit on a labeled source and unlabeled target, write target predictions.
    Adapt(RunArgs),
    /// Run the five ablation variants and write a summary.
    Ablate(RunArgs),
    /// Write a synthetic shifted source/target pair as feature CSVs.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Rbf,
    Linear,
}

#[derive(Debug, Clone, Args, Default)]
pub struct RunArgs {
    /// Source feature CSV.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target feature CSV.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Config file of `key = value` lines; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "ggls-out")]
    pub out: PathBuf,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Subspace dimension (default 30, capped at half the feature count).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub neighbors: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    /// `median` or a fixed RBF width.
    #[arg(long)]
    pub bandwidth: Option<String>,
    #[arg(long)]
    pub no_landmark: bool,
    #[arg(long)]
    pub no_manifold: bool,
    #[arg(long)]
    pub no_kernel: bool,
    /// Skip z-score and unit-norm preprocessing.
    #[arg(long)]
    pub no_normalize: bool,
    /// Re-estimate the balance factor after the projection update instead of before.
    #[arg(long)]
    pub mu_after: bool,
    /// Synthetic data spec instead of files, e.g. `seed=7,rotation=30`.
    #[arg(long, value_name = "SPEC")]
    pub synthetic: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the embedded features of every training sample.
    #[arg(long)]
    pub emit_embeddings: bool,
}

impl RunArgs {
    pub fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let path = |p: &Path| p.display().to_string();
        if let Some(v) = &self.source {
            s.set("source", path(v));
        }
        if let Some(v) = &self.target {
            s.set("target", path(v));
        }
        if let Some(v) = &self.synthetic {
            s.set("synthetic", v);
        }
        for (key, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if let Some(v) = v {
                s.set(key, v);
            }
        }
        for (key, v) in [("dim", self.dim), ("neighbors", self.neighbors), ("iterations", self.iterations)] {
            if let Some(v) = v {
                s.set(key, v);
            }
        }
        if let Some(k) = self.kernel {
            s.set("kernel", if k == KernelArg::Rbf { "rbf" } else { "linear" });
        }
        if let Some(b) = &self.bandwidth {
            s.set("bandwidth", b);
        }
        for (key, on) in [
            ("no_landmark", self.no_landmark),
            ("no_manifold", self.no_manifold),
            ("no_kernel", self.no_kernel),
            ("emit_embeddings", self.emit_embeddings),
        ] {
            if on {
                s.set(key, true);
            }
        }
        if self.no_normalize {
            s.set("normalize", false);
        }
        if self.mu_after {
            s.set("mu_order", "after");
        }
        if let Some(seed) = self.seed {
            s.set("seed", seed);
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output directory for `source.csv` and `target.csv`.
    #[arg(long, default_value = "ggls-synth")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 20)]
    pub source_per_class: usize,
    #[arg(long, default_value_t = 20)]
    pub target_per_class: usize,
    #[arg(long, default_value_t = 10)]
    pub dimension: usize,
    /// Degrees, in [0, 180).
    #[arg(long, default_value_t = 30.0)]
    pub rotation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub translation: f64,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Write the target labels as -1.
    #[arg(long)]
    pub unlabeled_target: bool,
}

impl SynthArgs {
    pub fn spec(&self) -> SyntheticShiftSpec {
        SyntheticShiftSpec {
            class_count: self.classes,
            samples_per_class_source: self.source_per_class,
            samples_per_class_target: self.target_per_class,
            dimension: self.dimension,
            rotation_angle_degrees: self.rotation,
            translation_magnitude: self.translation,
            noise_sigma: self.noise,
            seed: self.seed,
        }
    }
}

/// Process exit status for an error.
pub fn exit_code(err: &GglsError) -> i32 {
    match err {
        GglsError::Config { .. } => 2,
        GglsError::DataFormat { .. } | GglsError::Io { .. } | GglsError::Eval { .. } => 3,
        GglsError::InvalidSubspace { .. } | GglsError::Numeric { .. } | GglsError::SingularSystem { .. } => 4,
    }
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest_path: PathBuf,
    pub manifest: RunManifest,
    /// Target accuracy, when truth labels were available.
    pub accuracy: Option<f64>,
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Adapt(args) => cmd_adapt(&args),
        Command::Ablate(args) => cmd_ablate(&args),
        Command::Synth(args) => cmd_synth(&args),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| GglsError::Io {
        module: Module::Cli,
        path: dir.display().to_string(),
        source,
    })
}

/// Loads the inputs and settles the subspace dimension; records digests.
fn prepare(args: &RunArgs, manifest: &mut RunManifest) -> Result<(RunConfig, DomainDataset)> {
    let mut rc = args.settings()?.resolve()?;
    let dataset = match &rc.input {
        Input::Files { source, target } => {
            let ds = data::load_dataset(source, target)?;
            manifest.push("input.source", source.display());
            manifest.push("input.source_sha256", output::file_digest(source)?);
            manifest.push("input.target", target.display());
            manifest.push("input.target_sha256", output::file_digest(target)?);
            ds
        }
        Input::Synthetic(spec) => {
            manifest.push("input.synthetic", config::format_synthetic(spec));
            data::generate_synthetic(spec)?
        }
    };
    manifest.push("input.dataset_sha256", dataset.digest());
    let smaller = dataset.source_count().min(dataset.target_count());
    if let Some(d) = rc.fit_default_dim(dataset.dimension(), smaller) {
        log::warn!(
            "default subspace dimension {} exceeds what {} features allow; using {d}",
            config::DEFAULT_DIM,
            dataset.dimension()
        );
    }
    for (k, v) in rc.snapshot() {
        manifest.push(format!("config.{k}"), v);
    }
    Ok((rc, dataset))
}

fn finish(manifest: &mut RunManifest, out: &Path, start: Instant) -> Result<PathBuf> {
    manifest.push("duration_seconds", output::float(start.elapsed().as_secs_f64()));
    let path = out.join("manifest.txt");
    manifest.write_atomic(&path)?;
    Ok(path)
}

pub fn cmd_adapt(args: &RunArgs) -> Result<Outcome> {
    let start = Instant::now();
    let mut manifest = RunManifest::default();
    manifest.push("command", "adapt");
    let (rc, dataset) = prepare(args, &mut manifest)?;
    create_dir(&args.out)?;

    let model = solver::fit(&dataset, &rc.config)?;
    let accuracy = match dataset.target_labels() {
        Some(truth) => Some(eval::accuracy(&model.target_pseudo_labels, truth)?),
        None => None,
    };

    let predictions = args.out.join("predictions.csv");
    let trace = args.out.join("trace.csv");
    output::write_predictions(&predictions, &model.target_pseudo_labels)?;
    output::write_trace(&trace, &model.trace)?;
    manifest.push("output.predictions", predictions.display());
    manifest.push("output.trace", trace.display());
    if rc.emit_embeddings {
        let path = args.out.join("embeddings.csv");
        let rows: Vec<Vec<f64>> = model
            .embedded_all
            .column_iter()
            .map(|c| c.iter().copied().collect())
            .collect();
        output::write_embeddings(&path, &rows, &model.source_labels, &model.target_pseudo_labels)?;
        manifest.push("output.embeddings", path.display());
    }
    manifest.push("variant", rc.config.ablation.variant_name());
    manifest.push("iterations", model.iterations());
    if let Some(a) = accuracy {
        manifest.push("accuracy", output::float(a));
    }
    let manifest_path = finish(&mut manifest, &args.out, start)?;
    Ok(Outcome {
        manifest_path,
        manifest,
        accuracy,
    })
}

pub fn cmd_ablate(args: &RunArgs) -> Result<Outcome> {
    let start = Instant::now();
    let mut manifest = RunManifest::default();
    manifest.push("command", "ablate");
    let (rc, dataset) = prepare(args, &mut manifest)?;
    create_dir(&args.out)?;

    let reports = eval::ablation_suite(&dataset, &rc.config)?;
    let mut rows = Vec::with_capacity(reports.len());
    for (variant, report) in &reports {
        let path = args.out.join(format!("predictions_{variant}.csv"));
        output::write_predictions(&path, &report.predictions)?;
        manifest.push(format!("output.predictions.{variant}"), path.display());
        manifest.push(format!("iterations.{variant}"), report.trace.len());
        rows.push((variant.clone(), report.accuracy, report.duration.as_secs_f64()));
    }
    let summary = args.out.join("summary.csv");
    output::write_summary(&summary, &rows)?;
    manifest.push("output.summary", summary.display());
    let manifest_path = finish(&mut manifest, &args.out, start)?;
    Ok(Outcome {
        manifest_path,
        manifest,
        accuracy: rows.first().map(|r| r.1),
    })
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Outcome> {
    let start = Instant::now();
    let spec = args.spec();
    let dataset = data::generate_synthetic(&spec)?;
    create_dir(&args.out)?;
    let source = args.out.join("source.csv");
    let target = args.out.join("target.csv");
    data::write_feature_csv(&source, dataset.source_features(), Some(dataset.source_labels()))?;
    let target_labels = if args.unlabeled_target { None } else { dataset.target_labels() };
    data::write_feature_csv(&target, dataset.target_features(), target_labels)?;

    let mut manifest = RunManifest::default();
    manifest.push("command", "synth");
    manifest.push("input.synthetic", config::format_synthetic(&spec));
    manifest.push("output.source", source.display());
    manifest.push("output.source_sha256", output::file_digest(&source)?);
    manifest.push("output.target", target.display());
    manifest.push("output.target_sha256", output::file_digest(&target)?);
    let manifest_path = finish(&mut manifest, &args.out, start)?;
    Ok(Outcome {
        manifest_path,
        manifest,
        accuracy: None,
    })
}
