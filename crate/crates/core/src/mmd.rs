//! Marginal and class-conditional MMD matrices and the balance factor `μ`.
//!
//! For an embedding `Y` (`C × N`, source columns first), `tr(Y M₀ Yᵀ)` is the
//! squared distance between the source and target embedding means and
//! `tr(Y M_c Yᵀ)` the same distance restricted to class `c`.

use nalgebra::DMatrix;

use crate::error::{GglsError, Module, Result};

/// Traces at or below this are treated as zero when estimating `μ`.
pub const DEGENERATE_TRACE: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct MmdMatrix {
    pub m0: DMatrix<f64>,
    pub m_class: Vec<DMatrix<f64>>,
    pub combined: DMatrix<f64>,
    pub mu: f64,
}

/// Marginal MMD matrix for `ns` source and `nt` target samples.
pub fn mmd_m0(ns: usize, nt: usize) -> DMatrix<f64> {
    let n = ns + nt;
    let (s, t) = (ns as f64, nt as f64);
    DMatrix::from_fn(n, n, |i, j| match (i < ns, j < ns) {
        (true, true) => 1.0 / (s * s),
        (false, false) => 1.0 / (t * t),
        _ => -1.0 / (s * t),
    })
}

/// Conditional MMD matrix for class `class_id`. Samples whose label differs
/// (including any sentinel) do not participate; a class missing from either
/// domain yields the zero matrix.
pub fn mmd_mc(source_labels: &[usize], target_labels: &[usize], class_id: usize) -> DMatrix<f64> {
    let ns = source_labels.len();
    let n = ns + target_labels.len();
    let src: Vec<usize> = (0..ns).filter(|&i| source_labels[i] == class_id).collect();
    let tgt: Vec<usize> = (0..target_labels.len())
        .filter(|&i| target_labels[i] == class_id)
        .map(|i| ns + i)
        .collect();
    let mut m = DMatrix::zeros(n, n);
    if src.is_empty() || tgt.is_empty() {
        return m;
    }
    let (s, t) = (src.len() as f64, tgt.len() as f64);
    for &i in &src {
        for &j in &src {
            m[(i, j)] = 1.0 / (s * s);
        }
        for &j in &tgt {
            m[(i, j)] = -1.0 / (s * t);
            m[(j, i)] = -1.0 / (s * t);
        }
    }
    for &i in &tgt {
        for &j in &tgt {
            m[(i, j)] = 1.0 / (t * t);
        }
    }
    m
}

/// Conditional matrices for every class `1..=class_count`.
pub fn mmd_class_matrices(source_labels: &[usize], target_labels: &[usize], class_count: usize) -> Vec<DMatrix<f64>> {
    (1..=class_count)
        .map(|c| mmd_mc(source_labels, target_labels, c))
        .collect()
}

/// `M = (1 − μ)·M₀ + μ·Σ_c M_c`.
pub fn combine(m0: DMatrix<f64>, m_class: Vec<DMatrix<f64>>, mu: f64) -> Result<MmdMatrix> {
    let mut m = MmdMatrix {
        combined: DMatrix::zeros(0, 0),
        m0,
        m_class,
        mu,
    };
    m.set_mu(mu)?;
    Ok(m)
}

impl MmdMatrix {
    /// Rebuilds the combination with a new balance factor.
    pub fn with_mu(self, mu: f64) -> Result<Self> {
        combine(self.m0, self.m_class, mu)
    }

    /// Recombines in place with a new balance factor.
    pub fn set_mu(&mut self, mu: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(GglsError::numeric(Module::Mmd, format!("balance factor {mu} outside [0, 1]")));
        }
        let mut combined = &self.m0 * (1.0 - mu);
        for mc in &self.m_class {
            combined += mc * mu;
        }
        self.combined = combined;
        self.mu = mu;
        Ok(())
    }
}

/// `tr(Y M Yᵀ)` for an embedding with samples as columns.
pub fn embedded_trace(embedded: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    (embedded * m).component_mul(embedded).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuEstimate {
    pub mu: f64,
    /// Set when the denominator trace vanished and the previous `μ` was kept.
    pub degenerate: bool,
}

/// `μ = 1 − tr(Y M₀ Yᵀ) / tr(Y M Yᵀ)`, clamped to `[0, 1]`.
pub fn estimate_mu(embedded: &DMatrix<f64>, m0: &DMatrix<f64>, combined: &DMatrix<f64>, previous_mu: f64) -> MuEstimate {
    let denom = embedded_trace(embedded, combined);
    if !(denom > DEGENERATE_TRACE) {
        return MuEstimate {
            mu: previous_mu,
            degenerate: true,
        };
    }
    let mu = 1.0 - embedded_trace(embedded, m0) / denom;
    MuEstimate {
        mu: mu.clamp(0.0, 1.0),
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn mean_gap_sq(y: &DMatrix<f64>, a: &[usize], b: &[usize]) -> f64 {
        let mut acc = 0.0;
        for r in 0..y.nrows() {
            let ma: f64 = a.iter().map(|&i| y[(r, i)]).sum::<f64>() / a.len() as f64;
            let mb: f64 = b.iter().map(|&i| y[(r, i)]).sum::<f64>() / b.len() as f64;
            acc += (ma - mb).powi(2);
        }
        acc
    }

    #[test]
    fn m0_definition() {
        assert_eq!(mmd_m0(1, 1), DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        let m = mmd_m0(2, 2);
        assert_eq!(m[(0, 1)], 0.25);
        assert_eq!(m[(2, 3)], 0.25);
        assert_eq!(m[(0, 3)], -0.25);
        for (ns, nt) in [(3, 7), (10, 1), (4, 4)] {
            for row in mmd_m0(ns, nt).row_iter() {
                assert!(row.sum().abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mc_single_pair_and_skip() {
        let m = mmd_mc(&[1, 2], &[2, 1], 1);
        let mut expected = DMatrix::zeros(4, 4);
        expected[(0, 0)] = 1.0;
        expected[(3, 3)] = 1.0;
        expected[(0, 3)] = -1.0;
        expected[(3, 0)] = -1.0;
        assert_eq!(m, expected);
        assert_eq!(mmd_mc(&[1, 2], &[2, 2], 1), DMatrix::zeros(4, 4));
    }

    #[test]
    fn traces_equal_mean_gaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let src = [1, 2, 3, 1, 2, 3];
        let tgt = [2, 2, 1, 3, 3, 1];
        let y = random(&mut rng, 4, 12);
        let all_s: Vec<usize> = (0..6).collect();
        let all_t: Vec<usize> = (6..12).collect();
        let t0 = embedded_trace(&y, &mmd_m0(6, 6));
        assert!((t0 - mean_gap_sq(&y, &all_s, &all_t)).abs() < 1e-10);
        for c in 1..=3 {
            let s: Vec<usize> = (0..6).filter(|&i| src[i] == c).collect();
            let t: Vec<usize> = (0..6).filter(|&i| tgt[i] == c).map(|i| i + 6).collect();
            let tc = embedded_trace(&y, &mmd_mc(&src, &tgt, c));
            assert!((tc - mean_gap_sq(&y, &s, &t)).abs() < 1e-10);
        }
    }

    #[test]
    fn combine_boundaries() {
        let m0 = mmd_m0(2, 2);
        let mcs = mmd_class_matrices(&[1, 2], &[1, 2], 2);
        let sum = &mcs[0] + &mcs[1];
        assert_eq!(combine(m0.clone(), mcs.clone(), 0.0).unwrap().combined, m0);
        assert_eq!(combine(m0.clone(), mcs.clone(), 1.0).unwrap().combined, sum);
        let half = combine(m0.clone(), mcs.clone(), 0.5).unwrap().combined;
        assert!((half - (&m0 + &sum) * 0.5).abs().max() < 1e-15);
        assert!(combine(m0, mcs, 1.5).is_err());
    }

    #[test]
    fn mu_from_traces() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let y = random(&mut rng, 2, 4);
        let m0 = mmd_m0(2, 2);
        // combined equal to m0: numerator equals denominator
        assert_eq!(estimate_mu(&y, &m0, &m0, 0.5).mu, 0.0);
        let doubled = &m0 * 2.0;
        assert!((estimate_mu(&y, &m0, &doubled, 0.5).mu - 0.5).abs() < 1e-15);
        let est = estimate_mu(&y, &m0, &DMatrix::zeros(4, 4), 0.3);
        assert!(est.degenerate);
        assert_eq!(est.mu, 0.3);
    }

    #[test]
    fn mu_matches_summed_traces() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let y = random(&mut rng, 3, 8);
        let m = combine(mmd_m0(4, 4), mmd_class_matrices(&[1, 2, 1, 2], &[2, 2, 1, 1], 2), 0.4).unwrap();
        let tr = |mat: &DMatrix<f64>| {
            let mut acc = 0.0;
            for c in 0..3 {
                for i in 0..8 {
                    for j in 0..8 {
                        acc += y[(c, i)] * mat[(i, j)] * y[(c, j)];
                    }
                }
            }
            acc
        };
        let expected = (1.0 - tr(&m.m0) / tr(&m.combined)).clamp(0.0, 1.0);
        let got = estimate_mu(&y, &m.m0, &m.combined, 0.5).mu;
        assert!((got - expected).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn traces_nonnegative_and_rows_sum_to_zero(seed in 0u64..1000, mu in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src: Vec<usize> = (0..7).map(|_| rng.random_range(1..=3)).collect();
            let tgt: Vec<usize> = (0..5).map(|_| rng.random_range(1..=3)).collect();
            let y = random(&mut rng, 3, 12);
            let m = combine(mmd_m0(7, 5), mmd_class_matrices(&src, &tgt, 3), mu).unwrap();
            proptest::prop_assert!(embedded_trace(&y, &m.m0) >= -1e-12);
            for mc in &m.m_class {
                proptest::prop_assert!(embedded_trace(&y, mc) >= -1e-12);
                proptest::prop_assert!((mc - mc.transpose()).abs().max() == 0.0);
            }
            for row in m.combined.row_iter() {
                proptest::prop_assert!(row.sum().abs() < 1e-10);
            }
        }
    }
}
