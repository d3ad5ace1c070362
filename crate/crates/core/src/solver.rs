//! The adaptation objective, its alternating closed-form solver, and the
//! train/predict paths.
//!
//! With embedded features `Y = PᵀKB` the objective is
//!
//! ```text
//! tr(Y (M + βL) Yᵀ) + γ‖(H − Y)R‖²_F + λ1‖P‖₂,₁ + λ2 tr(PᵀKP)
//! ```
//!
//! The ℓ2,1 term is handled by iterative reweighting: for fixed diagonal `F`
//! the smoothed problem (with `λ1 tr(PᵀFP)`) has the closed-form minimizer
//! `P = γ (KBUBᵀK + λ1F + λ2K)⁻¹ KBRHᵀ`, `U = M + βL + γR`, and `F` is then
//! refreshed from the row norms of `P`.

use nalgebra::{DMatrix, DVector};

use crate::classify::nearest_neighbor;
use crate::data::{normalize_with_scaler, one_hot, DomainDataset, FeatureScaler, LabelMatrix};
use crate::error::{GglsError, Module, Result};
use crate::graph::{self, AttentionMatrix, Laplacian};
use crate::kernel::{self, Bandwidth, KernelKind, KernelMatrix, ResolvedKernel};
use crate::manifold::{self, GeodesicKernel};
use crate::mmd::{self, MmdMatrix};

/// Row norms below this count as zero rows of `P`.
pub const ZERO_ROW: f64 = 1e-12;
/// Condition estimate above which the projection system is regularized.
pub const MAX_CONDITION: f64 = 1e12;
const JITTER_SCALE: f64 = 1e-8;
/// Relative objective change that, with unchanged pseudo-labels, ends training.
pub const OBJECTIVE_TOL: f64 = 1e-6;
/// Balance factor used before the first estimate.
pub const INITIAL_MU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    pub no_landmark: bool,
    pub no_manifold: bool,
    pub no_kernel: bool,
}

impl Ablation {
    /// Name in the `GGLS[-no…]` family.
    pub fn variant_name(&self) -> String {
        let mut suffix = String::new();
        if self.no_landmark {
            suffix.push_str("LS");
        }
        if self.no_manifold {
            suffix.push_str("MFL");
        }
        if self.no_kernel {
            suffix.push_str("KF");
        }
        if suffix.is_empty() {
            "GGLS".to_string()
        } else {
            format!("GGLS-no{suffix}")
        }
    }
}

/// When the balance factor is re-estimated within an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MuUpdateOrder {
    /// From the previous iteration's embedding, before solving for `P`.
    #[default]
    BeforeProjection,
    /// From the new embedding after `P` and `B` are updated; used next iteration.
    AfterProjection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GglsConfig {
    pub beta: f64,
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub subspace_dim: usize,
    pub neighbor_count: usize,
    pub max_iterations: usize,
    pub kernel: KernelKind,
    pub ablation: Ablation,
    pub mu_order: MuUpdateOrder,
    pub normalize: bool,
    pub seed: u64,
}

impl Default for GglsConfig {
    /// Office-Caltech SURF settings.
    fn default() -> Self {
        Self {
            beta: 0.1,
            gamma: 0.1,
            lambda1: 0.001,
            lambda2: 0.01,
            subspace_dim: 30,
            neighbor_count: 3,
            max_iterations: 10,
            kernel: KernelKind::Rbf(Bandwidth::Median),
            ablation: Ablation::default(),
            mu_order: MuUpdateOrder::default(),
            normalize: true,
            seed: 0,
        }
    }
}

impl GglsConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(GglsError::config(Module::Solver, m));
        for (name, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.max_iterations == 0 {
            return fail("iterations must be at least 1".into());
        }
        if self.subspace_dim == 0 {
            return fail("subspace dimension must be at least 1".into());
        }
        if self.neighbor_count == 0 {
            return fail("neighbor count must be at least 1".into());
        }
        if let KernelKind::Rbf(Bandwidth::Fixed(s)) = self.kernel {
            if !(s > 0.0 && s.is_finite()) {
                return fail(format!("bandwidth must be positive, got {s}"));
            }
        }
        Ok(())
    }

    /// Kernel actually used, after the no-kernel ablation.
    pub fn effective_kernel(&self) -> KernelKind {
        if self.ablation.no_kernel {
            KernelKind::Linear
        } else {
            self.kernel
        }
    }
}

/// One training iteration's summary.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub objective: f64,
    pub mu: f64,
    /// Pseudo-label accuracy, when evaluation labels are available.
    pub accuracy: Option<f64>,
    pub labels_changed: usize,
    pub mu_degenerate: bool,
}

/// Everything the objective and the projection update depend on.
#[derive(Debug, Clone)]
pub struct AdaptationState {
    pub projection: DMatrix<f64>,
    /// Diagonal of `F`.
    pub subgradient: DVector<f64>,
    pub attention: AttentionMatrix,
    pub mmd: MmdMatrix,
    pub laplacian: Laplacian,
    pub kernel: KernelMatrix,
    /// Diagonal of `R`: 1 on source samples, 0 on target samples.
    pub indicator: DVector<f64>,
    /// `C × N`; target columns are zero.
    pub labels: LabelMatrix,
    pub pseudo_labels: Vec<usize>,
    pub trace: Vec<TraceRecord>,
}

impl AdaptationState {
    /// Initial state: `P = 0`, `F = I`, `B = I`.
    pub fn new(
        kernel: KernelMatrix,
        laplacian: Laplacian,
        mmd: MmdMatrix,
        source_labels: &[usize],
        class_count: usize,
        pseudo_labels: Vec<usize>,
    ) -> Result<Self> {
        let n = kernel.size();
        let ns = source_labels.len();
        if kernel.source_count != ns || laplacian.l.nrows() != n || mmd.combined.nrows() != n {
            return Err(GglsError::numeric(Module::Solver, "state components disagree on sample count"));
        }
        let labels = one_hot(source_labels, class_count, n, 0)?;
        let indicator = DVector::from_fn(n, |i, _| if i < ns { 1.0 } else { 0.0 });
        Ok(Self {
            projection: DMatrix::zeros(n, class_count),
            subgradient: DVector::from_element(n, 1.0),
            attention: AttentionMatrix::identity(n),
            mmd,
            laplacian,
            kernel,
            indicator,
            labels,
            pseudo_labels,
            trace: Vec::new(),
        })
    }

    pub fn size(&self) -> usize {
        self.kernel.size()
    }

    /// `K·B`, using the column sparsity of `B`.
    pub fn kernel_attention(&self) -> DMatrix<f64> {
        dense_times_sparse(&self.kernel.k, &self.attention.b)
    }

    /// `Y = PᵀKB`.
    pub fn embedded(&self) -> DMatrix<f64> {
        self.projection.transpose() * self.kernel_attention()
    }
}

fn dense_times_sparse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), b.ncols());
    for (j, bcol) in b.column_iter().enumerate() {
        let mut ocol = out.column_mut(j);
        for (i, &w) in bcol.iter().enumerate() {
            if w != 0.0 {
                ocol.axpy(w, &a.column(i), 1.0);
            }
        }
    }
    out
}

/// The objective split into its four terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub alignment: f64,
    pub label_fit: f64,
    pub row_sparsity: f64,
    pub complexity: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.alignment + self.label_fit + self.row_sparsity + self.complexity
    }
}

pub fn row_norms(p: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(p.nrows(), p.row_iter().map(|r| r.norm()))
}

/// Terms of the objective at projection `p`, with the rest of `state` fixed.
pub fn objective_terms(state: &AdaptationState, config: &GglsConfig, p: &DMatrix<f64>) -> ObjectiveTerms {
    let y = p.transpose() * state.kernel_attention();
    let smooth = &state.mmd.combined + &state.laplacian.l * config.beta;
    let alignment = mmd::embedded_trace(&y, &smooth);
    let h = state.labels.matrix();
    let mut label_fit = 0.0;
    for j in 0..state.size() {
        if state.indicator[j] != 0.0 {
            label_fit += (h.column(j) - y.column(j)).norm_squared();
        }
    }
    let kp = &state.kernel.k * p;
    ObjectiveTerms {
        alignment,
        label_fit: config.gamma * label_fit,
        row_sparsity: config.lambda1 * row_norms(p).sum(),
        complexity: config.lambda2 * p.component_mul(&kp).sum(),
    }
}

/// Objective value at the state's current projection.
pub fn objective(state: &AdaptationState, config: &GglsConfig) -> f64 {
    objective_terms(state, config, &state.projection).total()
}

/// The objective with `λ1‖P‖₂,₁` replaced by `λ1 tr(PᵀFP)`, the problem the
/// closed-form update solves exactly.
pub fn smoothed_objective(state: &AdaptationState, config: &GglsConfig, p: &DMatrix<f64>) -> f64 {
    let t = objective_terms(state, config, p);
    let weighted: f64 = p
        .row_iter()
        .zip(state.subgradient.iter())
        .map(|(r, &f)| f * r.norm_squared())
        .sum();
    t.alignment + t.label_fit + t.complexity + config.lambda1 * weighted
}

/// Closed-form minimizer of the smoothed objective for the current `F`, `B`, `M`.
///
/// With `λ1 > 0`, rows whose weight `F_ii` is 0 were eliminated by an earlier
/// step and stay at zero; the system is solved over the remaining rows.
pub fn update_projection(state: &AdaptationState, config: &GglsConfig) -> Result<DMatrix<f64>> {
    let n = state.size();
    let kb = state.kernel_attention();
    let mut u = &state.mmd.combined + &state.laplacian.l * config.beta;
    for i in 0..n {
        u[(i, i)] += config.gamma * state.indicator[i];
    }
    let mut system = &kb * u * kb.transpose() + &state.kernel.k * config.lambda2;
    for i in 0..n {
        system[(i, i)] += config.lambda1 * state.subgradient[i];
    }
    let system = manifold::symmetrize(system);

    let mut weighted_labels = state.labels.matrix().transpose();
    for (i, mut row) in weighted_labels.row_iter_mut().enumerate() {
        row *= config.gamma * state.indicator[i];
    }
    let rhs = kb * weighted_labels;

    let active: Vec<usize> = (0..n)
        .filter(|&i| config.lambda1 == 0.0 || state.subgradient[i] != 0.0)
        .collect();
    if active.len() == n {
        return solve_symmetric(system, &rhs);
    }
    let mut p = DMatrix::zeros(n, rhs.ncols());
    if active.is_empty() {
        return Ok(p);
    }
    let reduced = system.select_rows(&active).select_columns(&active);
    let solved = solve_symmetric(reduced, &rhs.select_rows(&active))?;
    for (r, &i) in active.iter().enumerate() {
        p.row_mut(i).copy_from(&solved.row(r));
    }
    Ok(p)
}

/// Cholesky with Jacobi scaling. The condition estimate is the squared ratio
/// of extreme pivots of the scaled factor; ill-conditioned or indefinite
/// systems get `ε·I` added with `ε = 1e-8·tr(S)/N`, falling back to LU.
fn solve_symmetric(system: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = system.nrows();
    if !system.iter().all(|v| v.is_finite()) {
        return Err(GglsError::numeric(Module::Solver, "projection system has non-finite entries"));
    }
    if let Some(x) = scaled_cholesky(&system, rhs, true) {
        return Ok(x);
    }
    let eps = JITTER_SCALE * system.trace() / n as f64;
    let mut jittered = system;
    if eps > 0.0 {
        for i in 0..n {
            jittered[(i, i)] += eps;
        }
    }
    if let Some(x) = scaled_cholesky(&jittered, rhs, false) {
        return Ok(x);
    }
    jittered
        .lu()
        .solve(rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| GglsError::SingularSystem {
            module: Module::Solver,
            message: format!("projection system of size {n} is singular after jitter {eps:e}"),
        })
}

fn scaled_cholesky(system: &DMatrix<f64>, rhs: &DMatrix<f64>, check_condition: bool) -> Option<DMatrix<f64>> {
    let n = system.nrows();
    let scale = DVector::from_fn(n, |i, _| {
        let d = system[(i, i)];
        if d > 0.0 {
            1.0 / d.sqrt()
        } else {
            1.0
        }
    });
    let scaled = DMatrix::from_fn(n, n, |i, j| system[(i, j)] * scale[i] * scale[j]);
    let chol = scaled.cholesky()?;
    if check_condition {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v.abs()), hi.max(v.abs())));
        if !(lo > 0.0) || (hi / lo).powi(2) > MAX_CONDITION {
            return None;
        }
    }
    let mut b = rhs.clone();
    for (i, mut row) in b.row_iter_mut().enumerate() {
        row *= scale[i];
    }
    let mut x = chol.solve(&b);
    for (i, mut row) in x.row_iter_mut().enumerate() {
        row *= scale[i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Diagonal of the ℓ2,1 reweighting matrix: `1 / (2‖pⁱ‖)`, or 0 for zero rows.
pub fn update_subgradient(p: &DMatrix<f64>) -> DVector<f64> {
    row_norms(p).map(|n| if n < ZERO_ROW { 0.0 } else { 1.0 / (2.0 * n) })
}

/// Trained model; everything the test path needs.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub config: GglsConfig,
    pub class_count: usize,
    pub projection: DMatrix<f64>,
    pub attention: AttentionMatrix,
    pub geodesic: GeodesicKernel,
    pub scaler: Option<FeatureScaler>,
    /// Manifold features of the source samples.
    pub manifold_source: DMatrix<f64>,
    /// Manifold features of all training samples, source first.
    pub manifold_all: DMatrix<f64>,
    pub kernel: ResolvedKernel,
    pub embedded_source: DMatrix<f64>,
    /// Final embedding of every training sample.
    pub embedded_all: DMatrix<f64>,
    pub source_labels: Vec<usize>,
    pub target_pseudo_labels: Vec<usize>,
    pub trace: Vec<TraceRecord>,
}

impl FittedModel {
    pub fn source_count(&self) -> usize {
        self.source_labels.len()
    }

    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

/// Fixed quantities computed once before the iterations.
pub struct Prepared {
    pub scaler: Option<FeatureScaler>,
    pub geodesic: GeodesicKernel,
    pub manifold: DMatrix<f64>,
    pub kernel: KernelMatrix,
    pub laplacian: Laplacian,
}

/// Normalization, manifold features, kernel, and the locality Laplacian.
pub fn prepare(dataset: &DomainDataset, config: &GglsConfig) -> Result<Prepared> {
    config.validate()?;
    let n = dataset.source_count() + dataset.target_count();
    if config.neighbor_count >= n {
        return Err(GglsError::config(
            Module::Solver,
            format!("neighbor count {} must be below the sample count {n}", config.neighbor_count),
        ));
    }
    let (data, scaler) = if config.normalize {
        let (d, s) = normalize_with_scaler(dataset);
        (d, Some(s))
    } else {
        (dataset.clone(), None)
    };
    let x = data.pooled_features();
    let geodesic = if config.ablation.no_manifold {
        GeodesicKernel::identity(data.dimension())
    } else {
        let ss = manifold::pca_subspace(data.source_features(), config.subspace_dim)?;
        let st = manifold::pca_subspace(data.target_features(), config.subspace_dim)?;
        manifold::geodesic_kernel(&ss, &st)?
    };
    let manifold = if config.ablation.no_manifold {
        x
    } else {
        manifold::manifold_transform(&geodesic, &x)?
    };
    let kernel = kernel::kernel_matrix(&manifold, &config.effective_kernel(), data.source_count())?;
    let laplacian = graph::laplacian(&graph::knn_cosine_graph(&manifold, config.neighbor_count)?)?;
    Ok(Prepared {
        scaler,
        geodesic,
        manifold,
        kernel,
        laplacian,
    })
}

fn count_changes(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn pseudo_accuracy(pred: &[usize], truth: Option<&[usize]>) -> Option<f64> {
    truth.map(|t| count_changes(pred, t) as f64).map(|wrong| 1.0 - wrong / pred.len() as f64)
}

/// Trains on a labeled source and unlabeled target. Target labels, if
/// present, are only used to report per-iteration accuracy.
pub fn fit(dataset: &DomainDataset, config: &GglsConfig) -> Result<FittedModel> {
    let prepared = prepare(dataset, config)?;
    let ns = dataset.source_count();
    let nt = dataset.target_count();
    let c = dataset.class_count();
    let z = &prepared.manifold;
    let z_source = z.columns(0, ns).into_owned();
    let z_target = z.columns(ns, nt).into_owned();
    let source_labels = dataset.source_labels().to_vec();
    let truth = dataset.target_labels();

    let pseudo = nearest_neighbor(&z_source, &source_labels, &z_target);
    let mmd0 = mmd::combine(mmd::mmd_m0(ns, nt), mmd::mmd_class_matrices(&source_labels, &pseudo, c), INITIAL_MU)?;
    let mut state = AdaptationState::new(
        prepared.kernel.clone(),
        prepared.laplacian.clone(),
        mmd0,
        &source_labels,
        c,
        pseudo,
    )?;

    let mut mu = INITIAL_MU;
    let mut previous_embedding: Option<DMatrix<f64>> = None;
    let mut previous_objective: Option<f64> = None;
    let mut embedded = DMatrix::zeros(c, ns + nt);
    for iteration in 1..=config.max_iterations {
        let m0 = mmd::mmd_m0(ns, nt);
        let m_class = mmd::mmd_class_matrices(&source_labels, &state.pseudo_labels, c);
        state.mmd = mmd::combine(m0, m_class, mu)?;
        let mut degenerate = false;
        if config.mu_order == MuUpdateOrder::BeforeProjection {
            if let Some(y) = &previous_embedding {
                let est = mmd::estimate_mu(y, &state.mmd.m0, &state.mmd.combined, mu);
                mu = est.mu;
                degenerate = est.degenerate;
                state.mmd.set_mu(mu)?;
            }
        }
        let recorded_mu = mu;

        state.projection = update_projection(&state, config)?;
        let objective_value = objective(&state, config);
        state.subgradient = update_subgradient(&state.projection);
        state.attention = if config.ablation.no_landmark {
            AttentionMatrix::identity(ns + nt)
        } else {
            graph::attention_matrix(&state.projection, &state.kernel, config.neighbor_count)?
        };
        embedded = state.embedded();

        if config.mu_order == MuUpdateOrder::AfterProjection {
            let est = mmd::estimate_mu(&embedded, &state.mmd.m0, &state.mmd.combined, mu);
            mu = est.mu;
            degenerate = est.degenerate;
        }

        let y_source = embedded.columns(0, ns).into_owned();
        let y_target = embedded.columns(ns, nt).into_owned();
        let next = nearest_neighbor(&y_source, &source_labels, &y_target);
        let changed = count_changes(&next, &state.pseudo_labels);
        state.pseudo_labels = next;
        state.trace.push(TraceRecord {
            iteration,
            objective: objective_value,
            mu: recorded_mu,
            accuracy: pseudo_accuracy(&state.pseudo_labels, truth),
            labels_changed: changed,
            mu_degenerate: degenerate,
        });
        previous_embedding = Some(embedded.clone());

        let converged = previous_objective.is_some_and(|prev| {
            (objective_value - prev).abs() <= OBJECTIVE_TOL * prev.abs().max(f64::MIN_POSITIVE)
        });
        previous_objective = Some(objective_value);
        if changed == 0 && converged {
            break;
        }
    }

    Ok(FittedModel {
        config: config.clone(),
        class_count: c,
        projection: state.projection,
        attention: state.attention,
        geodesic: prepared.geodesic,
        scaler: prepared.scaler,
        manifold_source: z_source,
        manifold_all: prepared.manifold,
        kernel: prepared.kernel.kernel,
        embedded_source: embedded.columns(0, ns).into_owned(),
        embedded_all: embedded,
        source_labels,
        target_pseudo_labels: state.pseudo_labels,
        trace: state.trace,
    })
}

/// Embeds new target samples with a trained model: `Y_t` is read from the
/// target columns of `PᵀK′B′`, where `K′` holds kernels between the training
/// samples and the joint set `[Z_s, Z_new]` and `B′` is rebuilt over that set.
pub fn embed_new_target(model: &FittedModel, new_target: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if new_target.nrows() != model.geodesic.dim() {
        return Err(GglsError::data(
            Module::Solver,
            format!(
                "new samples have {} features, model expects {}",
                new_target.nrows(),
                model.geodesic.dim()
            ),
        ));
    }
    let ns = model.source_count();
    let m = new_target.ncols();
    let x = match &model.scaler {
        Some(s) => s.transform(new_target),
        None => new_target.clone(),
    };
    let z_new = if model.config.ablation.no_manifold {
        x
    } else {
        manifold::manifold_transform(&model.geodesic, &x)?
    };
    let mut joint = DMatrix::zeros(z_new.nrows(), ns + m);
    joint.columns_mut(0, ns).copy_from(&model.manifold_source);
    joint.columns_mut(ns, m).copy_from(&z_new);
    let cross = kernel::kernel_cross(&model.manifold_all, &joint, model.kernel)?;
    let projected = model.projection.transpose() * cross;
    let embedded = if model.config.ablation.no_landmark {
        projected
    } else {
        let k = model.config.neighbor_count;
        if k >= ns + m {
            return Err(GglsError::config(
                Module::Solver,
                format!("neighbor count {k} must be below the joint sample count {}", ns + m),
            ));
        }
        let b = graph::normalize_attention(&graph::attention_from_projected(&projected, k), k);
        dense_times_sparse(&projected, &b.b)
    };
    Ok(embedded.columns(ns, m).into_owned())
}

/// Labels for new target samples by 1-NN against the stored source embedding.
pub fn predict(model: &FittedModel, new_target: &DMatrix<f64>) -> Result<Vec<usize>> {
    let y = embed_new_target(model, new_target)?;
    Ok(nearest_neighbor(&model.embedded_source, &model.source_labels, &y))
}
