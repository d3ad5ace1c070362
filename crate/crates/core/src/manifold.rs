//! Grassmannian feature learning: per-domain PCA subspaces, the geodesic
//! flow kernel `Q` between them, and the manifold features `Z = Q^{1/2} X`.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{GglsError, Module, Result};

const ORTHONORMAL_TOL: f64 = 1e-10;
/// Principal angles below this use the `θ → 0` limits of the flow integral.
const ZERO_ANGLE: f64 = 1e-8;
/// Relative cutoff for eigenvalues kept in `Q^{1/2}`.
const EIGEN_CLAMP: f64 = 1e-12;

/// A `D × d` basis with orthonormal columns; a point on the Grassmannian.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        let d = basis.ncols();
        if d == 0 || d > basis.nrows() {
            return Err(GglsError::InvalidSubspace {
                module: Module::Manifold,
                message: format!("basis shape {}x{d} is not a tall frame", basis.nrows()),
            });
        }
        let gram = basis.transpose() * &basis;
        let dev = (gram - DMatrix::identity(d, d)).abs().max();
        if !(dev <= ORTHONORMAL_TOL) {
            return Err(GglsError::InvalidSubspace {
                module: Module::Manifold,
                message: format!("basis columns are not orthonormal (max deviation {dev:e})"),
            });
        }
        Ok(Self { basis })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// Flips each column so its largest-magnitude entry (first on ties) is positive.
fn fix_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// Eigenpairs sorted by descending eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    (values, vectors)
}

/// Top-`dim` principal directions of the mean-centered columns of `features`.
pub fn pca_subspace(features: &DMatrix<f64>, dim: usize) -> Result<Subspace> {
    let (d, n) = features.shape();
    if dim == 0 || dim > d.min(n) {
        return Err(GglsError::config(
            Module::Manifold,
            format!("subspace dimension {dim} outside 1..={}", d.min(n)),
        ));
    }
    let mean = features.column_mean();
    let mut centered = features.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }

    let mut basis = None;
    if d > n {
        // Thin route through the n×n Gram matrix when samples are fewer than features.
        let (values, vectors) = sorted_eigen(centered.transpose() * &centered);
        if values[dim - 1] > 1e-10 * values[0].max(f64::MIN_POSITIVE) {
            let mut b = &centered * vectors.columns(0, dim);
            for (j, mut col) in b.column_iter_mut().enumerate() {
                col /= values[j].sqrt();
            }
            basis = Some(b);
        }
    }
    let mut basis = match basis {
        Some(b) => b,
        None => {
            let (_, vectors) = sorted_eigen(&centered * centered.transpose());
            vectors.columns(0, dim).into_owned()
        }
    };
    fix_column_signs(&mut basis);
    Subspace::new(basis)
}

/// Principal angles `θ_i ∈ [0, π/2]` between two equal-dimension subspaces,
/// ordered as the singular values of `SsᵀSt`.
pub fn principal_angles(source: &Subspace, target: &Subspace) -> Vec<f64> {
    flow_frame(source, target).angles
}

struct FlowFrame {
    /// `Ss·U1`.
    source_dirs: DMatrix<f64>,
    /// `Rs·U2`, one column per angle; zero where the angle vanishes.
    complement_dirs: DMatrix<f64>,
    angles: Vec<f64>,
}

/// Principal vectors of the pair. `Rs·U2` is obtained as the normalized
/// projection of `St·V` onto the complement of `Ss`, which equals
/// `-Rs·Rsᵀ·St·V·Σ⁻¹` for any orthonormal complement `Rs`.
fn flow_frame(source: &Subspace, target: &Subspace) -> FlowFrame {
    let ss = source.basis();
    let st = target.basis();
    let svd = SVD::new(ss.transpose() * st, true, true);
    let u1 = svd.u.expect("svd u");
    let v = svd.v_t.expect("svd v_t").transpose();
    let stv = st * &v;
    let residual = &stv - ss * (ss.transpose() * &stv);
    let d = ss.ncols();
    let mut complement_dirs = DMatrix::zeros(ss.nrows(), d);
    let mut angles = Vec::with_capacity(d);
    for i in 0..d {
        let gamma = svd.singular_values[i].clamp(0.0, 1.0);
        let sigma = residual.column(i).norm();
        // atan2 keeps precision near θ = 0 where arccos(γ) does not
        let theta = sigma.atan2(gamma).clamp(0.0, std::f64::consts::FRAC_PI_2);
        if theta >= ZERO_ANGLE && sigma > 0.0 {
            complement_dirs.set_column(i, &(-residual.column(i) / sigma));
        }
        angles.push(theta);
    }
    FlowFrame {
        source_dirs: ss * u1,
        complement_dirs,
        angles,
    }
}

/// The `D × D` geodesic flow kernel and its PSD square root.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicKernel {
    q: DMatrix<f64>,
    q_sqrt: DMatrix<f64>,
    /// Orthonormal eigenvectors of `Q` with nonzero eigenvalue.
    root_basis: DMatrix<f64>,
    /// Square roots of the matching eigenvalues.
    root_weights: DVector<f64>,
}

impl GeodesicKernel {
    /// `Q = I`, used when manifold learning is switched off.
    pub fn identity(dim: usize) -> Self {
        Self {
            q: DMatrix::identity(dim, dim),
            q_sqrt: DMatrix::identity(dim, dim),
            root_basis: DMatrix::identity(dim, dim),
            root_weights: DVector::from_element(dim, 1.0),
        }
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn q_sqrt(&self) -> &DMatrix<f64> {
        &self.q_sqrt
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    /// Numerical rank of `Q` after clamping.
    pub fn rank(&self) -> usize {
        self.root_weights.len()
    }
}

/// Diagonal entries of the integrated flow `∫₀¹ Φ(t)Φ(t)ᵀ dt` in the
/// principal-vector frame: `(source, cross, complement)` weights.
fn flow_weights(theta: f64) -> (f64, f64, f64) {
    if theta < ZERO_ANGLE {
        return (1.0, 0.0, 0.0);
    }
    let two = 2.0 * theta;
    let s = two.sin() / two;
    (0.5 * (1.0 + s), 0.5 * (two.cos() - 1.0) / two, 0.5 * (1.0 - s))
}

/// Closed-form geodesic flow kernel between two subspaces of equal dimension `d ≤ D/2`.
pub fn geodesic_kernel(source: &Subspace, target: &Subspace) -> Result<GeodesicKernel> {
    let (big_d, d) = source.basis().shape();
    if target.basis().shape() != (big_d, d) {
        return Err(GglsError::config(
            Module::Manifold,
            format!(
                "subspace shapes differ: {big_d}x{d} vs {}x{}",
                target.ambient_dim(),
                target.dim()
            ),
        ));
    }
    if 2 * d > big_d {
        return Err(GglsError::config(
            Module::Manifold,
            format!("subspace dimension {d} exceeds half the feature dimension {big_d}"),
        ));
    }
    let frame = flow_frame(source, target);

    // Frame W = [Ss·U1, Rs·U2'] where U2' keeps the columns with nonzero angle.
    let kept: Vec<usize> = (0..d).filter(|&i| frame.angles[i] >= ZERO_ANGLE).collect();
    let width = d + kept.len();
    let mut w = DMatrix::zeros(big_d, width);
    w.columns_mut(0, d).copy_from(&frame.source_dirs);
    let mut block = DMatrix::zeros(width, width);
    for i in 0..d {
        block[(i, i)] = flow_weights(frame.angles[i]).0;
    }
    for (j, &i) in kept.iter().enumerate() {
        let (_, cross, comp) = flow_weights(frame.angles[i]);
        w.set_column(d + j, &frame.complement_dirs.column(i));
        block[(i, d + j)] = cross;
        block[(d + j, i)] = cross;
        block[(d + j, d + j)] = comp;
    }

    let q = symmetrize(&w * &block * w.transpose());

    // W has orthonormal columns, so the eigenpairs of the small block lift
    // directly to those of Q.
    let (values, vectors) = sorted_eigen(block);
    let top = values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..values.len()).filter(|&i| values[i] > EIGEN_CLAMP * top).collect();
    let lifted = &w * &vectors;
    let root_basis = DMatrix::from_columns(&keep.iter().map(|&i| lifted.column(i)).collect::<Vec<_>>());
    let root_weights = DVector::from_iterator(keep.len(), keep.iter().map(|&i| values[i].sqrt()));
    let q_sqrt = if keep.is_empty() {
        DMatrix::zeros(big_d, big_d)
    } else {
        let scaled = &root_basis * DMatrix::from_diagonal(&root_weights);
        symmetrize(&scaled * root_basis.transpose())
    };
    Ok(GeodesicKernel {
        q,
        q_sqrt,
        root_basis,
        root_weights,
    })
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// `Q^{1/2} · features`.
pub fn manifold_transform(kernel: &GeodesicKernel, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if features.nrows() != kernel.dim() {
        return Err(GglsError::data(
            Module::Manifold,
            format!("features have {} rows, kernel expects {}", features.nrows(), kernel.dim()),
        ));
    }
    if kernel.rank() == 0 {
        return Ok(DMatrix::zeros(features.nrows(), features.ncols()));
    }
    let mut coords = kernel.root_basis.transpose() * features;
    for (mut row, &w) in coords.row_iter_mut().zip(kernel.root_weights.iter()) {
        row *= w;
    }
    Ok(&kernel.root_basis * coords)
}
