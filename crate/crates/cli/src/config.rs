//! Run configuration: defaults, then a `key = value` file, then flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ggls_core::solver::{Ablation, MuUpdateOrder};
use ggls_core::{Bandwidth, GglsConfig, GglsError, KernelKind, Module, Result, SyntheticShiftSpec};

/// Keys accepted in a config file, in snapshot order.
pub const KEYS: &[&str] = &[
    "source",
    "target",
    "synthetic",
    "beta",
    "gamma",
    "lambda1",
    "lambda2",
    "dim",
    "neighbors",
    "iterations",
    "kernel",
    "bandwidth",
    "no_landmark",
    "no_manifold",
    "no_kernel",
    "normalize",
    "mu_order",
    "seed",
    "emit_embeddings",
];

/// Subspace dimension used when none is given and the data allows it.
pub const DEFAULT_DIM: usize = 30;

fn bad(message: impl Into<String>) -> GglsError {
    GglsError::config(Module::Cli, message)
}

/// Raw settings keyed by config-file name. Later insertions override.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("config line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(bad(format!("config line {}: unknown key `{key}`", n + 1)));
            }
            if map.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(bad(format!("config line {}: duplicate key `{key}`", n + 1)));
            }
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| GglsError::Io {
            module: Module::Cli,
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        debug_assert!(KEYS.contains(&key), "{key}");
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| bad(format!("invalid value `{v}` for `{key}`"))))
            .transpose()
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            None => Ok(false),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(bad(format!("`{key}` must be true or false, got `{v}`"))),
        }
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let input = match (self.get("synthetic"), self.get("source"), self.get("target")) {
            (Some(spec), None, None) => {
                let mut spec = parse_synthetic(spec)?;
                if let Some(seed) = self.parsed("seed")? {
                    spec.seed = seed;
                }
                Input::Synthetic(spec)
            }
            (None, Some(s), Some(t)) => Input::Files {
                source: PathBuf::from(s),
                target: PathBuf::from(t),
            },
            (Some(_), _, _) => return Err(bad("synthetic data excludes --source/--target")),
            _ => return Err(bad("both --source and --target are required unless --synthetic is given")),
        };

        let defaults = GglsConfig::default();
        let kernel = match self.get("kernel").unwrap_or("rbf") {
            "rbf" => {
                let bw = match self.get("bandwidth") {
                    Some(b) => b.parse::<Bandwidth>().map_err(|_| bad(format!("invalid bandwidth `{b}`")))?,
                    None => Bandwidth::Median,
                };
                KernelKind::Rbf(bw)
            }
            "linear" => {
                if self.get("bandwidth").is_some() {
                    return Err(bad("bandwidth only applies to the rbf kernel"));
                }
                KernelKind::Linear
            }
            other => return Err(bad(format!("unknown kernel `{other}` (expected rbf or linear)"))),
        };
        let mu_order = match self.get("mu_order").unwrap_or("before") {
            "before" => MuUpdateOrder::BeforeProjection,
            "after" => MuUpdateOrder::AfterProjection,
            other => return Err(bad(format!("mu_order must be before or after, got `{other}`"))),
        };
        let dim: Option<usize> = self.parsed("dim")?;
        let config = GglsConfig {
            beta: self.parsed("beta")?.unwrap_or(defaults.beta),
            gamma: self.parsed("gamma")?.unwrap_or(defaults.gamma),
            lambda1: self.parsed("lambda1")?.unwrap_or(defaults.lambda1),
            lambda2: self.parsed("lambda2")?.unwrap_or(defaults.lambda2),
            subspace_dim: dim.unwrap_or(DEFAULT_DIM),
            neighbor_count: self.parsed("neighbors")?.unwrap_or(defaults.neighbor_count),
            max_iterations: self.parsed("iterations")?.unwrap_or(defaults.max_iterations),
            kernel,
            ablation: Ablation {
                no_landmark: self.flag("no_landmark")?,
                no_manifold: self.flag("no_manifold")?,
                no_kernel: self.flag("no_kernel")?,
            },
            mu_order,
            normalize: match self.get("normalize") {
                None => defaults.normalize,
                Some(_) => self.flag("normalize")?,
            },
            seed: match &input {
                Input::Synthetic(spec) => spec.seed,
                Input::Files { .. } => self.parsed("seed")?.unwrap_or(defaults.seed),
            },
        };
        config.validate()?;
        Ok(RunConfig {
            input,
            config,
            dim_explicit: dim.is_some(),
            emit_embeddings: self.flag("emit_embeddings")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Files { source: PathBuf, target: PathBuf },
    Synthetic(SyntheticShiftSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: Input,
    pub config: GglsConfig,
    pub dim_explicit: bool,
    pub emit_embeddings: bool,
}

impl RunConfig {
    /// When no dimension was requested, shrinks the default to what a
    /// `feature_dim`-dimensional problem with `min_domain` samples per domain
    /// supports. Returns the adjusted value if it changed.
    pub fn fit_default_dim(&mut self, feature_dim: usize, min_domain: usize) -> Option<usize> {
        if self.dim_explicit || self.config.ablation.no_manifold {
            return None;
        }
        let cap = (feature_dim / 2).min(min_domain).max(1);
        (self.config.subspace_dim > cap).then(|| {
            self.config.subspace_dim = cap;
            cap
        })
    }

    /// Settings that reproduce this run, in config-file form.
    pub fn snapshot(&self) -> Vec<(&'static str, String)> {
        let c = &self.config;
        let mut out = Vec::new();
        match &self.input {
            Input::Files { source, target } => {
                out.push(("source", source.display().to_string()));
                out.push(("target", target.display().to_string()));
            }
            Input::Synthetic(spec) => out.push(("synthetic", format_synthetic(spec))),
        }
        out.push(("beta", c.beta.to_string()));
        out.push(("gamma", c.gamma.to_string()));
        out.push(("lambda1", c.lambda1.to_string()));
        out.push(("lambda2", c.lambda2.to_string()));
        out.push(("dim", c.subspace_dim.to_string()));
        out.push(("neighbors", c.neighbor_count.to_string()));
        out.push(("iterations", c.max_iterations.to_string()));
        match c.kernel {
            KernelKind::Linear => out.push(("kernel", "linear".into())),
            KernelKind::Rbf(bw) => {
                out.push(("kernel", "rbf".into()));
                out.push(("bandwidth", bw.to_string()));
            }
        }
        out.push(("no_landmark", c.ablation.no_landmark.to_string()));
        out.push(("no_manifold", c.ablation.no_manifold.to_string()));
        out.push(("no_kernel", c.ablation.no_kernel.to_string()));
        out.push(("normalize", c.normalize.to_string()));
        let order = match c.mu_order {
            MuUpdateOrder::BeforeProjection => "before",
            MuUpdateOrder::AfterProjection => "after",
        };
        out.push(("mu_order", order.into()));
        out.push(("seed", c.seed.to_string()));
        out.push(("emit_embeddings", self.emit_embeddings.to_string()));
        out
    }
}

/// Parses `key=value` pairs separated by commas, e.g. `seed=7,rotation=45`.
/// Unset fields keep the defaults; `default` alone means all defaults.
pub fn parse_synthetic(text: &str) -> Result<SyntheticShiftSpec> {
    let mut spec = SyntheticShiftSpec::default();
    let text = text.trim();
    if text.is_empty() || text == "default" {
        return Ok(spec);
    }
    for part in text.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| bad(format!("synthetic spec entry `{part}` is not key=value")))?;
        let (key, value) = (key.trim(), value.trim());
        let int = || value.parse::<usize>().map_err(|_| bad(format!("invalid integer `{value}` for `{key}`")));
        let real = || value.parse::<f64>().map_err(|_| bad(format!("invalid number `{value}` for `{key}`")));
        match key {
            "classes" => spec.class_count = int()?,
            "source_per_class" => spec.samples_per_class_source = int()?,
            "target_per_class" => spec.samples_per_class_target = int()?,
            "dimension" => spec.dimension = int()?,
            "rotation" => spec.rotation_angle_degrees = real()?,
            "translation" => spec.translation_magnitude = real()?,
            "noise" => spec.noise_sigma = real()?,
            "seed" => spec.seed = value.parse().map_err(|_| bad(format!("invalid seed `{value}`")))?,
            _ => return Err(bad(format!("unknown synthetic spec key `{key}`"))),
        }
    }
    spec.validate()?;
    Ok(spec)
}

pub fn format_synthetic(spec: &SyntheticShiftSpec) -> String {
    format!(
        "classes={},source_per_class={},target_per_class={},dimension={},rotation={},translation={},noise={},seed={}",
        spec.class_count,
        spec.samples_per_class_source,
        spec.samples_per_class_target,
        spec.dimension,
        spec.rotation_angle_degrees,
        spec.translation_magnitude,
        spec.noise_sigma,
        spec.seed
    )
}
