//! Locality graph, its Laplacian, and the graph-attentional landmark matrix.

use nalgebra::DMatrix;

use crate::error::{GglsError, Module, Result};
use crate::kernel::KernelMatrix;

/// Denominators below this fall back to the indicator column.
const DEGENERATE_COLUMN: f64 = 1e-12;

/// `L = S − G` for a symmetric similarity graph `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    pub l: DMatrix<f64>,
}

/// Column-stochastic attention `B`; column `j` weights the landmarks of sample `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    pub b: DMatrix<f64>,
    pub neighbor_count: usize,
}

impl AttentionMatrix {
    /// `B = I`, the normalization of `A = I`.
    pub fn identity(n: usize) -> Self {
        Self {
            b: DMatrix::identity(n, n),
            neighbor_count: 0,
        }
    }
}

/// Pairwise cosine similarities of the columns; zero columns are similar to nothing.
pub fn cosine_matrix(features: &DMatrix<f64>) -> DMatrix<f64> {
    let mut unit = features.clone();
    for mut col in unit.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
    unit.transpose() * unit
}

/// The `k` columns most cosine-similar to column `j`, excluding `j`;
/// ties go to the lower index.
pub fn nearest_by_cosine(cosine: &DMatrix<f64>, j: usize, k: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..cosine.nrows()).filter(|&i| i != j).collect();
    candidates.sort_by(|&a, &b| cosine[(b, j)].total_cmp(&cosine[(a, j)]).then(a.cmp(&b)));
    candidates.truncate(k);
    candidates
}

fn check_neighbors(k: usize, n: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(GglsError::config(
            Module::Graph,
            format!("neighbor count {k} must lie in 1..{n}"),
        ));
    }
    Ok(())
}

/// Symmetric kNN graph: `G_ij = cos(z_i, z_j)` when either sample is among the
/// other's `k` nearest, else 0. Negative cosines are stored as 0.
pub fn knn_cosine_graph(features: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let n = features.ncols();
    check_neighbors(k, n)?;
    let cos = cosine_matrix(features);
    let mut g = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in nearest_by_cosine(&cos, j, k) {
            let w = cos[(i, j)].max(0.0);
            g[(i, j)] = w;
            g[(j, i)] = w;
        }
    }
    Ok(g)
}

pub fn laplacian(similarity: &DMatrix<f64>) -> Result<Laplacian> {
    let n = similarity.nrows();
    if similarity.ncols() != n {
        return Err(GglsError::numeric(Module::Graph, "similarity matrix must be square"));
    }
    let scale = similarity.abs().max().max(1.0);
    if (similarity - similarity.transpose()).abs().max() > 1e-12 * scale {
        return Err(GglsError::numeric(Module::Graph, "similarity matrix is not symmetric"));
    }
    let mut l = -similarity.clone();
    for i in 0..n {
        l[(i, i)] += similarity.row(i).sum();
    }
    Ok(Laplacian { l })
}

/// Column-normalizes attention coefficients: `B_ij = A_ij / Σ_i A_ij`.
/// Columns with a vanishing sum become `e_j`.
pub fn normalize_attention(a: &DMatrix<f64>, neighbor_count: usize) -> AttentionMatrix {
    let n = a.ncols();
    let mut b = a.clone();
    for (j, mut col) in b.column_iter_mut().enumerate() {
        let sum = col.sum();
        if sum < DEGENERATE_COLUMN {
            col.fill(0.0);
            col[j] = 1.0;
        } else {
            col /= sum;
        }
    }
    debug_assert_eq!(b.nrows(), n);
    AttentionMatrix { b, neighbor_count }
}

/// Attention coefficients from the projected samples `u_i = Pᵀk_i`.
/// Each sample attends to itself and its `k` most cosine-similar projected
/// samples; negative similarities are clamped to 0 before normalization.
pub fn attention_coefficients(projection: &DMatrix<f64>, kernel: &KernelMatrix, k: usize) -> Result<DMatrix<f64>> {
    let n = kernel.size();
    check_neighbors(k, n)?;
    if projection.nrows() != n {
        return Err(GglsError::numeric(
            Module::Graph,
            format!("projection has {} rows, kernel is {n}x{n}", projection.nrows()),
        ));
    }
    let projected = projection.transpose() * &kernel.k;
    Ok(attention_from_projected(&projected, k))
}

pub(crate) fn attention_from_projected(projected: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = projected.ncols();
    let cos = cosine_matrix(projected);
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        a[(j, j)] = cos[(j, j)].max(0.0);
        for i in nearest_by_cosine(&cos, j, k) {
            a[(i, j)] = cos[(i, j)].max(0.0);
        }
    }
    a
}

pub fn attention_matrix(projection: &DMatrix<f64>, kernel: &KernelMatrix, k: usize) -> Result<AttentionMatrix> {
    let a = attention_coefficients(projection, kernel, k)?;
    Ok(normalize_attention(&a, k))
}

/// Output features `Y = PᵀKB`; column `j` is `y_j = PᵀK b_j`.
pub fn aggregate(projection: &DMatrix<f64>, kernel: &KernelMatrix, attention: &AttentionMatrix) -> Result<DMatrix<f64>> {
    let n = kernel.size();
    if projection.nrows() != n || attention.b.shape() != (n, n) {
        return Err(GglsError::numeric(Module::Graph, "projection, kernel and attention shapes disagree"));
    }
    Ok(projection.transpose() * &kernel.k * &attention.b)
}
