//! Kernel matrices over manifold features.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{GglsError, Module, Result};

/// RBF bandwidth: fixed `σ`, or the median heuristic resolved at training time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Median,
    Fixed(f64),
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bandwidth::Median => f.write_str("median"),
            Bandwidth::Fixed(s) => write!(f, "{s}"),
        }
    }
}

impl FromStr for Bandwidth {
    type Err = GglsError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("median") {
            return Ok(Bandwidth::Median);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Bandwidth::Fixed(v)),
            _ => Err(GglsError::config(
                Module::Kernel,
                format!("bandwidth must be 'median' or a positive number, got {s:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    Linear,
    Rbf(Bandwidth),
}

impl KernelKind {
    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Rbf(_) => "rbf",
        }
    }
}

/// A kernel with every parameter fixed; reused verbatim at test time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolvedKernel {
    Linear,
    /// Stores `σ²`.
    Rbf { sigma_sq: f64 },
}

impl ResolvedKernel {
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            ResolvedKernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            ResolvedKernel::Rbf { sigma_sq } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * sigma_sq)).exp()
            }
        }
    }
}

/// `N × N` kernel over pooled samples; the first `source_count` columns are source samples.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub k: DMatrix<f64>,
    pub source_count: usize,
    pub kernel: ResolvedKernel,
}

impl KernelMatrix {
    pub fn size(&self) -> usize {
        self.k.nrows()
    }
}

fn squared_distances(features: &DMatrix<f64>) -> DMatrix<f64> {
    let gram = features.transpose() * features;
    let n = gram.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)]).max(0.0)
        }
    })
}

/// Median of the nonzero squared pairwise distances; `1.0` if there are none.
pub fn median_sigma_sq(features: &DMatrix<f64>) -> f64 {
    let d2 = squared_distances(features);
    let mut vals: Vec<f64> = d2.iter().cloned().filter(|&v| v > 0.0).collect();
    if vals.is_empty() {
        return 1.0;
    }
    vals.sort_by(f64::total_cmp);
    let m = vals.len();
    if m % 2 == 1 {
        vals[m / 2]
    } else {
        0.5 * (vals[m / 2 - 1] + vals[m / 2])
    }
}

pub fn resolve(features: &DMatrix<f64>, kind: &KernelKind) -> Result<ResolvedKernel> {
    Ok(match *kind {
        KernelKind::Linear => ResolvedKernel::Linear,
        KernelKind::Rbf(Bandwidth::Median) => ResolvedKernel::Rbf {
            sigma_sq: median_sigma_sq(features),
        },
        KernelKind::Rbf(Bandwidth::Fixed(s)) => {
            if !(s > 0.0 && s.is_finite()) {
                return Err(GglsError::config(Module::Kernel, format!("bandwidth {s} must be positive")));
            }
            ResolvedKernel::Rbf { sigma_sq: s * s }
        }
    })
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GglsError::numeric(Module::Kernel, "non-finite kernel input"))
    }
}

/// Symmetric kernel matrix `K_ij = k(z_i, z_j)` over the columns of `features`.
pub fn kernel_matrix(features: &DMatrix<f64>, kind: &KernelKind, source_count: usize) -> Result<KernelMatrix> {
    check_finite(features)?;
    let kernel = resolve(features, kind)?;
    with_kernel(features, kernel, source_count)
}

/// As [`kernel_matrix`] with an already-resolved kernel.
pub fn with_kernel(features: &DMatrix<f64>, kernel: ResolvedKernel, source_count: usize) -> Result<KernelMatrix> {
    check_finite(features)?;
    let k = match kernel {
        ResolvedKernel::Linear => features.transpose() * features,
        ResolvedKernel::Rbf { sigma_sq } => squared_distances(features).map(|d2| (-d2 / (2.0 * sigma_sq)).exp()),
    };
    Ok(KernelMatrix {
        k: crate::manifold::symmetrize(k),
        source_count,
        kernel,
    })
}

/// `N × M` kernel between stored samples (rows) and new samples (columns).
pub fn kernel_cross(train: &DMatrix<f64>, new: &DMatrix<f64>, kernel: ResolvedKernel) -> Result<DMatrix<f64>> {
    if train.nrows() != new.nrows() {
        return Err(GglsError::numeric(
            Module::Kernel,
            format!("feature dimensions differ: {} vs {}", train.nrows(), new.nrows()),
        ));
    }
    check_finite(train)?;
    check_finite(new)?;
    Ok(match kernel {
        ResolvedKernel::Linear => train.transpose() * new,
        ResolvedKernel::Rbf { sigma_sq } => {
            let g = train.transpose() * new;
            let tn: Vec<f64> = train.column_iter().map(|c| c.norm_squared()).collect();
            let nn: Vec<f64> = new.column_iter().map(|c| c.norm_squared()).collect();
            DMatrix::from_fn(train.ncols(), new.ncols(), |i, j| {
                let d2 = (tn[i] + nn[j] - 2.0 * g[(i, j)]).max(0.0);
                (-d2 / (2.0 * sigma_sq)).exp()
            })
        }
    })
}
