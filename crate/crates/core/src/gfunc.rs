//! The sub-linear monotone function `G(A) = max_{Σ ∈ Θ} tr(AΣ)` on
//! symmetric matrices.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-10;
/// Tolerance used by [`verify_g_laws`].
pub const G_LAW_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GFunction {
    dim: usize,
    theta: Vec<DMatrix<f64>>,
}

fn asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).abs().max()
}

pub(crate) fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    let gap = asymmetry(a);
    if gap > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(gap));
    }
    Ok(())
}

impl GFunction {
    pub fn new(theta: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = theta.first().ok_or(Error::EmptyAmbiguity)?;
        let dim = first.nrows();
        if dim == 0 {
            return Err(Error::InvalidArgument("zero-dimensional Theta".into()));
        }
        for s in &theta {
            if s.nrows() != dim || s.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: s.nrows().max(s.ncols()),
                });
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("non-finite entry in Theta".into()));
            }
            check_symmetric(s)?;
            let min_eig = s.clone().symmetric_eigenvalues().min();
            if min_eig < -PSD_TOL {
                return Err(Error::NotPsd(min_eig));
            }
        }
        Ok(Self { dim, theta })
    }

    /// Row-major `d×d` blocks.
    pub fn from_rows(dim: usize, blocks: &[Vec<f64>]) -> Result<Self> {
        let theta = blocks
            .iter()
            .map(|b| {
                if b.len() != dim * dim {
                    Err(Error::DimensionMismatch {
                        expected: dim * dim,
                        found: b.len(),
                    })
                } else {
                    Ok(DMatrix::from_row_slice(dim, dim, b))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(theta)
    }

    /// One-dimensional `Θ = {σ̲², σ̄²}`.
    pub fn from_interval(s: SigmaInterval) -> Self {
        Self {
            dim: 1,
            theta: vec![
                DMatrix::from_element(1, 1, s.lower),
                DMatrix::from_element(1, 1, s.upper),
            ],
        }
    }

    pub fn diagonal(diags: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            diags
                .iter()
                .map(|d| DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)))
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn theta(&self) -> &[DMatrix<f64>] {
        &self.theta
    }

    /// Value and attaining index (lowest on ties).
    pub fn eval(&self, a: &DMatrix<f64>) -> Result<(f64, usize)> {
        if a.nrows() != self.dim || a.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: a.nrows().max(a.ncols()),
            });
        }
        check_symmetric(a)?;
        Ok(self.eval_unchecked(a))
    }

    pub(crate) fn eval_unchecked(&self, a: &DMatrix<f64>) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, s) in self.theta.iter().enumerate() {
            let v = a.component_mul(s).sum();
            if v > best.0 {
                best = (v, i);
            }
        }
        best
    }

    /// `G(I)`, the largest trace in `Θ`.
    pub fn trace_scale(&self) -> f64 {
        self.theta
            .iter()
            .map(|s| s.trace())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max_Σ max_i Σ_ii`.
    pub fn max_diagonal(&self) -> f64 {
        self.theta
            .iter()
            .flat_map(|s| s.diagonal().iter().copied().collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }

    /// Adds `ε·I` to every member, making `G` uniformly elliptic.
    pub fn regularize(&self, eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "regularization must be nonnegative, got {eps}"
            )));
        }
        let id = DMatrix::<f64>::identity(self.dim, self.dim) * eps;
        Ok(Self {
            dim: self.dim,
            theta: self.theta.iter().map(|s| s + &id).collect(),
        })
    }

    /// `G / G(I)`; fails when `G(I) = 0`.
    pub fn normalized(&self) -> Result<Self> {
        let c = self.trace_scale();
        if !(c > 0.0) {
            return Err(Error::InvalidArgument("G(I) = 0 cannot be normalized".into()));
        }
        Ok(Self {
            dim: self.dim,
            theta: self.theta.iter().map(|s| s / c).collect(),
        })
    }

    /// Lower and upper variance of a one-dimensional `G`.
    pub fn interval(&self) -> Result<SigmaInterval> {
        if self.dim != 1 {
            return Err(Error::OneDimensionalOnly(self.dim));
        }
        let vals = self.theta.iter().map(|s| s[(0, 0)]);
        let lo = vals.clone().fold(f64::INFINITY, f64::min);
        let hi = vals.fold(f64::NEG_INFINITY, f64::max);
        SigmaInterval::new(lo.max(0.0), hi)
    }
}

/// Convenience wrapper returning only the value of `G(A)`.
pub fn g_eval(g: &GFunction, a: &DMatrix<f64>) -> Result<f64> {
    g.eval(a).map(|(v, _)| v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaInterval {
    pub lower: f64,
    pub upper: f64,
}

impl SigmaInterval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower >= 0.0 && upper >= lower && upper.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "variance interval must satisfy 0 <= lower <= upper, got ({lower}, {upper})"
            )));
        }
        Ok(Self { lower, upper })
    }
}

/// `G(α) = α⁺σ̄² − α⁻σ̲²`.
pub fn g_1d(s: SigmaInterval, alpha: f64) -> f64 {
    alpha.max(0.0) * s.upper - (-alpha).max(0.0) * s.lower
}

#[derive(Debug, Clone, PartialEq)]
pub struct GLawCheck {
    pub name: &'static str,
    pub worst: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GLawReport {
    pub trials: usize,
    pub checks: Vec<GLawCheck>,
}

impl GLawReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.violations == 0)
    }
}

fn random_symmetric(rng: &mut impl Rng, d: usize, scale: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-scale..scale));
    (&m + m.transpose()) * 0.5
}

/// Samples random symmetric pairs and checks sub-additivity, positive
/// homogeneity, monotonicity in the PSD order and, after normalizing to
/// `G(I) = 1`, the bound `|G(A) − G(Ā)| ≤ d·max|A − Ā|`.
pub fn verify_g_laws(g: &GFunction, trials: usize, seed: u64) -> Result<GLawReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let d = g.dim;
    let norm = g.normalized().ok();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = ["subadditivity", "homogeneity", "monotonicity", "lipschitz"];
    let mut worst = [0.0f64; 4];
    let mut violations = [0usize; 4];
    let mut record = |i: usize, excess: f64| {
        let excess = excess.max(0.0);
        worst[i] = worst[i].max(excess);
        if excess > G_LAW_TOL {
            violations[i] += 1;
        }
    };
    for _ in 0..trials {
        let a = random_symmetric(&mut rng, d, 2.0);
        let b = random_symmetric(&mut rng, d, 2.0);
        let ga = g.eval_unchecked(&a).0;
        let gb = g.eval_unchecked(&b).0;
        record(0, g.eval_unchecked(&(&a + &b)).0 - ga - gb);

        let lambda: f64 = rng.gen_range(0.0..5.0);
        record(1, (g.eval_unchecked(&(&a * lambda)).0 - lambda * ga).abs());

        let f = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let dominating = &a + &f * f.transpose();
        record(2, ga - g.eval_unchecked(&dominating).0);

        if let Some(n) = &norm {
            let gap = (n.eval_unchecked(&a).0 - n.eval_unchecked(&b).0).abs();
            let bound = d as f64 * (&a - &b).abs().max();
            record(3, gap - bound);
        }
    }
    Ok(GLawReport {
        trials,
        checks: (0..4)
            .map(|i| GLawCheck {
                name: names[i],
                worst: worst[i],
                violations: violations[i],
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band() -> GFunction {
        GFunction::from_interval(SigmaInterval::new(0.5, 1.0).unwrap())
    }

    fn scalar(a: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, a)
    }

    #[test]
    fn one_dimensional_values() {
        let g = band();
        assert_eq!(g.eval(&scalar(1.0)).unwrap(), (1.0, 1));
        assert_eq!(g.eval(&scalar(-1.0)).unwrap(), (-0.5, 0));
        let s = SigmaInterval::new(0.5, 1.0).unwrap();
        assert_eq!(g_1d(s, 2.0), 2.0);
        assert_eq!(g_1d(s, -2.0), -1.0);
        let classical = SigmaInterval::new(1.0, 1.0).unwrap();
        assert_eq!(g_1d(classical, -3.25), -3.25);
    }

    #[test]
    fn two_dimensional_tie_picks_lowest() {
        let g = GFunction::diagonal(&[vec![1.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]));
        assert_eq!(g.eval(&a).unwrap(), (0.0, 0));
    }

    #[test]
    fn validation() {
        assert!(matches!(
            GFunction::from_rows(2, &[vec![1.0, 0.5, 0.0, 1.0]]),
            Err(Error::NotSymmetric(_))
        ));
        assert!(matches!(
            GFunction::from_rows(2, &[vec![1.0, 2.0, 2.0, 1.0]]),
            Err(Error::NotPsd(_))
        ));
        assert!(GFunction::new(vec![]).is_err());
        let g = band();
        assert!(matches!(
            g.eval(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn regularize_adds_identity() {
        let g = GFunction::diagonal(&[vec![0.0, 1.0]])
            .unwrap()
            .regularize(0.25)
            .unwrap();
        assert_eq!(g.theta()[0][(0, 0)], 0.25);
        assert_eq!(g.theta()[0][(1, 1)], 1.25);
    }

    #[test]
    fn singleton_is_linear() {
        let g = GFunction::from_rows(2, &[vec![1.0, 0.3, 0.3, 0.5]]).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -2.0, 0.5]);
        let b = DMatrix::from_row_slice(2, 2, &[-0.7, 0.1, 0.1, 3.0]);
        let sum = g_eval(&g, &(&a + &b)).unwrap();
        let parts = g_eval(&g, &a).unwrap() + g_eval(&g, &b).unwrap();
        assert!((sum - parts).abs() < 1e-14);
    }

    #[test]
    fn laws_hold_on_random_pairs() {
        let g = GFunction::from_rows(2, &[vec![1.0, 0.3, 0.3, 0.5], vec![0.2, 0.0, 0.0, 0.9]]).unwrap();
        let report = verify_g_laws(&g, 1000, 7).unwrap();
        assert!(report.all_pass(), "{report:?}");
    }
}
