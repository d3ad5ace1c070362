//! Unsupervised domain adaptation by Grassmannian graph-attentional landmark
//! selection.
//!
//! A labeled source feature set and an unlabeled target feature set are
//! mapped onto the geodesic flow between their PCA subspaces, kernelized, and
//! projected by a matrix `P` that jointly minimizes a balanced marginal and
//! conditional MMD, a kNN-graph locality penalty, a source label-fit term and
//! an ℓ2,1 row-sparsity penalty. Each output feature aggregates its
//! landmarks (nearest projected samples) with cosine-attention weights.
//! Target pseudo-labels are refined by 1-NN in the embedded space.
//!
//! ```no_run
//! use ggls_core::{data, solver, eval};
//!
//! let ds = data::generate_synthetic(&data::SyntheticShiftSpec::default())?;
//! let config = solver::GglsConfig { subspace_dim: 5, ..Default::default() };
//! let report = eval::evaluate(&ds, &config)?;
//! println!("target accuracy {:.3}", report.accuracy);
//! # Ok::<(), ggls_core::GglsError>(())
//! ```

pub mod classify;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kernel;
pub mod manifold;
pub mod mmd;
pub mod solver;

pub use data::{DomainDataset, SyntheticShiftSpec};
pub use error::{GglsError, Module, Result};
pub use eval::EvalReport;
pub use kernel::{Bandwidth, KernelKind};
pub use solver::{fit, predict, Ablation, FittedModel, GglsConfig, MuUpdateOrder, TraceRecord};
