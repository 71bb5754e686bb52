//! Logarithmic norms (matrix measures) `μ(A) = lim_{h→0+} (‖I + hA‖ − 1)/h`
//! for the 1-, 2-, ∞- and `P`-weighted Euclidean norms.
//!
//! The weighted norm is `|x|_P = |Ux|_2` with `P = UᵀU` (Cholesky). Its
//! measure is the largest eigenvalue of the symmetric part of `U A U⁻¹`,
//! which is also the largest `λ` with `(AᵀP + PA) y = 2λ P y`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::TimePeriodicSystem;
use crate::quadrature::trapezoid;
use crate::region::{BoxRegion, GridSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LognormError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("weight matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("malformed matrix family: {0}")]
    Family(String),
}

/// Cholesky data of an SPD weight `P = UᵀU`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    p: DMatrix<f64>,
    upper: DMatrix<f64>,
    upper_inv: DMatrix<f64>,
}

impl WeightMatrix {
    pub fn new(p: DMatrix<f64>) -> Result<Self, LognormError> {
        if !p.is_square() {
            return Err(LognormError::NotSquare {
                rows: p.nrows(),
                cols: p.ncols(),
            });
        }
        let scale = p.amax().max(f64::MIN_POSITIVE);
        let asym = (&p - p.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(LognormError::NotSpd(format!("asymmetry {asym:e}")));
        }
        let chol = p
            .clone()
            .cholesky()
            .ok_or_else(|| LognormError::NotSpd("Cholesky factorization failed".into()))?;
        let upper = chol.l().transpose();
        let min_pivot = upper.diagonal().iter().copied().fold(f64::INFINITY, f64::min);
        if !(min_pivot > 0.0) {
            return Err(LognormError::NotSpd("singular weight".into()));
        }
        let upper_inv = upper
            .clone()
            .try_inverse()
            .ok_or_else(|| LognormError::NotSpd("singular factor".into()))?;
        Ok(Self { p, upper, upper_inv })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    fn transform(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        &self.upper * a * &self.upper_inv
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NormKind {
    One,
    Two,
    Inf,
    Weighted(WeightMatrix),
}

impl NormKind {
    pub fn weighted(p: DMatrix<f64>) -> Result<Self, LognormError> {
        WeightMatrix::new(p).map(Self::Weighted)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::One => "one",
            Self::Two => "two",
            Self::Inf => "inf",
            Self::Weighted(_) => "weighted_p",
        }
    }

    pub fn descriptor(&self) -> NormDescriptor {
        NormDescriptor {
            kind: self.label().to_string(),
            p: match self {
                Self::Weighted(w) => Some(w.p.row_iter().map(|r| r.iter().copied().collect()).collect()),
                _ => None,
            },
        }
    }
}

/// Serializable form of a [`NormKind`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormDescriptor {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p: Option<Vec<Vec<f64>>>,
}

fn require_square(a: &DMatrix<f64>) -> Result<(), LognormError> {
    if a.is_square() {
        Ok(())
    } else {
        Err(LognormError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        })
    }
}

fn largest_symmetric_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    if sym.nrows() == 1 {
        return sym[(0, 0)];
    }
    SymmetricEigen::try_new(sym, 1e-15, 10_000)
        .expect("symmetric eigensolver converges")
        .eigenvalues
        .max()
}

/// Logarithmic norm of `a`.
pub fn mu(a: &DMatrix<f64>, norm: &NormKind) -> Result<f64, LognormError> {
    require_square(a)?;
    let n = a.nrows();
    Ok(match norm {
        NormKind::Inf => (0..n)
            .map(|i| a[(i, i)] + (0..n).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max),
        NormKind::One => (0..n)
            .map(|j| a[(j, j)] + (0..n).filter(|&i| i != j).map(|i| a[(i, j)].abs()).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max),
        NormKind::Two => largest_symmetric_eigenvalue(a),
        NormKind::Weighted(w) => {
            if w.dim() != n {
                return Err(LognormError::Dimension {
                    expected: w.dim(),
                    got: n,
                });
            }
            largest_symmetric_eigenvalue(&w.transform(a))
        }
    })
}

/// Induced operator norm matching `norm`.
pub fn operator_norm(a: &DMatrix<f64>, norm: &NormKind) -> Result<f64, LognormError> {
    require_square(a)?;
    let n = a.nrows();
    Ok(match norm {
        NormKind::Inf => (0..n)
            .map(|i| (0..n).map(|j| a[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::One => (0..n)
            .map(|j| (0..n).map(|i| a[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::Two => spectral_norm(a),
        NormKind::Weighted(w) => {
            if w.dim() != n {
                return Err(LognormError::Dimension {
                    expected: w.dim(),
                    got: n,
                });
            }
            spectral_norm(&w.transform(a))
        }
    })
}

fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Vector norm matching `norm`.
pub fn vector_norm(x: &[f64], norm: &NormKind) -> f64 {
    match norm {
        NormKind::One => x.iter().map(|v| v.abs()).sum(),
        NormKind::Two => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        NormKind::Inf => x.iter().map(|v| v.abs()).fold(0.0, f64::max),
        NormKind::Weighted(w) => {
            let v = nalgebra::DVector::from_column_slice(x);
            (&w.upper * v).norm()
        }
    }
}

/// Samples of a continuous family `λ ↦ A(λ)` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFamilySample {
    lambdas: Vec<f64>,
    matrices: Vec<DMatrix<f64>>,
}

impl MatrixFamilySample {
    pub fn new(lambdas: Vec<f64>, matrices: Vec<DMatrix<f64>>) -> Result<Self, LognormError> {
        if lambdas.len() < 2 || lambdas.len() != matrices.len() {
            return Err(LognormError::Family(
                "need at least two samples and one matrix per lambda".into(),
            ));
        }
        if lambdas[0] != 0.0 || *lambdas.last().unwrap() != 1.0 {
            return Err(LognormError::Family("lambdas must run from 0 to 1".into()));
        }
        if lambdas.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LognormError::Family("lambdas must be increasing".into()));
        }
        let n = matrices[0].nrows();
        for m in &matrices {
            require_square(m)?;
            if m.nrows() != n {
                return Err(LognormError::Dimension {
                    expected: n,
                    got: m.nrows(),
                });
            }
        }
        Ok(Self { lambdas, matrices })
    }

    /// Samples `family` at `n + 1` uniform points.
    pub fn uniform<F: Fn(f64) -> DMatrix<f64>>(n: usize, family: F) -> Result<Self, LognormError> {
        let lambdas = crate::quadrature::linspace(0.0, 1.0, n.max(1));
        let matrices = lambdas.iter().map(|&l| family(l)).collect();
        Self::new(lambdas, matrices)
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    /// Entrywise trapezoid approximation of `∫₀¹ A(λ) dλ`.
    pub fn integral(&self) -> DMatrix<f64> {
        let n = self.matrices[0].nrows();
        DMatrix::from_fn(n, n, |i, j| {
            let ys: Vec<f64> = self.matrices.iter().map(|m| m[(i, j)]).collect();
            trapezoid(&self.lambdas, &ys)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegralBound {
    /// Measure of the integrated family.
    pub mu_int: f64,
    /// Largest measure over the samples.
    pub mu_max: f64,
}

impl IntegralBound {
    /// The integral of a family is never less contractive than its worst member.
    pub fn holds(&self, tol: f64) -> bool {
        self.mu_int <= self.mu_max + tol
    }
}

pub fn mu_of_integral(family: &MatrixFamilySample, norm: &NormKind) -> Result<IntegralBound, LognormError> {
    let mu_int = mu(&family.integral(), norm)?;
    let mut mu_max = f64::NEG_INFINITY;
    for m in &family.matrices {
        mu_max = mu_max.max(mu(m, norm)?);
    }
    Ok(IntegralBound { mu_int, mu_max })
}

/// Worst sample of a grid-checked bound `μ(J(t, z)) ≤ p(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub worst_t: f64,
    pub worst_z: Vec<f64>,
    pub mu_value: f64,
    pub bound_value: f64,
    /// `mu_value − bound_value`; positive means the bound is exceeded.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub holds: bool,
    pub worst: ViolationReport,
    pub samples: usize,
    pub grid: GridSpec,
    pub norm: NormDescriptor,
}

/// Checks `μ(∂f/∂z(t, z)) ≤ p(t) + slack` on a `(t, z)` grid over one period
/// and the box, reporting the sample with the largest margin.
///
/// Margins within a few ulps of the compared quantities count as satisfied.
pub fn check_mu_bound<P>(
    sys: &TimePeriodicSystem,
    region: &BoxRegion,
    norm: &NormKind,
    p_fn: P,
    grid: &GridSpec,
) -> Result<ConditionReport, LognormError>
where
    P: Fn(f64) -> f64 + Sync,
{
    if region.dim() != sys.dim() {
        return Err(LognormError::Dimension {
            expected: sys.dim(),
            got: region.dim(),
        });
    }
    if let NormKind::Weighted(w) = norm {
        if w.dim() != sys.dim() {
            return Err(LognormError::Dimension {
                expected: sys.dim(),
                got: w.dim(),
            });
        }
    }
    let times = grid.times(sys.period());
    let points = region.grid_points(grid.axis_samples);

    // (margin, roundoff allowance, t index, z index, mu, bound)
    type Sample = (f64, f64, usize, usize, f64, f64);
    let better = |a: Sample, b: Sample| -> Sample {
        let ea = a.0 - a.1;
        let eb = b.0 - b.1;
        if eb > ea || (eb == ea && (b.2, b.3) < (a.2, a.3)) {
            b
        } else {
            a
        }
    };
    let worst = times
        .par_iter()
        .enumerate()
        .map(|(i, &t)| -> Result<Sample, LognormError> {
            let bound = p_fn(t);
            let mut best: Option<Sample> = None;
            for (j, z) in points.iter().enumerate() {
                let jac = sys.jacobian(t, z);
                let m = mu(&jac, norm)?;
                let roundoff = 64.0 * f64::EPSILON * (m.abs() + bound.abs() + jac.amax());
                let s = (m - bound, roundoff, i, j, m, bound);
                best = Some(match best {
                    None => s,
                    Some(b) => better(b, s),
                });
            }
            Ok(best.expect("grid has at least one point"))
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .reduce(better)
        .expect("time grid is non-empty");

    let (margin, roundoff, i, j, mu_value, bound_value) = worst;
    Ok(ConditionReport {
        holds: margin <= grid.slack + roundoff,
        worst: ViolationReport {
            worst_t: times[i],
            worst_z: points[j].clone(),
            mu_value,
            bound_value,
            margin,
        },
        samples: times.len() * points.len(),
        grid: *grid,
        norm: norm.descriptor(),
    })
}

/// Weighted-norm form of the bound: `JᵀP + PJ ≤ 2 p(t) P` on the grid,
/// i.e. the largest generalized eigenvalue of `(JᵀP + PJ, 2P)` stays below `p(t)`.
pub fn check_p_matrix_condition<P>(
    sys: &TimePeriodicSystem,
    region: &BoxRegion,
    weight: DMatrix<f64>,
    p_fn: P,
    grid: &GridSpec,
) -> Result<ConditionReport, LognormError>
where
    P: Fn(f64) -> f64 + Sync,
{
    let norm = NormKind::weighted(weight)?;
    check_mu_bound(sys, region, &norm, p_fn, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        let n = rows.len();
        DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn spec_examples() {
        let neg_id = -DMatrix::<f64>::identity(2, 2);
        assert!((mu(&neg_id, &NormKind::Two).unwrap() + 1.0).abs() < 1e-14);
        let a = m(&[&[-2.0, 1.0], &[0.0, -3.0]]);
        assert_eq!(mu(&a, &NormKind::Inf).unwrap(), -1.0);
        // Column formula: max(−2 + 0, −3 + 1).
        assert_eq!(mu(&a, &NormKind::One).unwrap(), -2.0);
        let rot = m(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        assert!(mu(&rot, &NormKind::Two).unwrap().abs() < 1e-15);
    }

    #[test]
    fn weighted_identity_matches_two_norm() {
        let a = m(&[&[-1.0, 3.0], &[0.5, -2.0]]);
        let w = NormKind::weighted(DMatrix::identity(2, 2)).unwrap();
        let d = mu(&a, &w).unwrap() - mu(&a, &NormKind::Two).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn weighted_matches_generalized_eigenproblem() {
        // Brute force: maximize yᵀ(AᵀP + PA)y / (2 yᵀPy) over directions in the plane.
        let a = m(&[&[-1.0, 4.0], &[0.0, -2.0]]);
        let p = m(&[&[2.0, 0.5], &[0.5, 1.0]]);
        let q = a.transpose() * &p + &p * &a;
        let mut best = f64::NEG_INFINITY;
        for k in 0..200_000 {
            let th = PI * k as f64 / 200_000.0;
            let y = nalgebra::DVector::from_vec(vec![th.cos(), th.sin()]);
            let num = (y.transpose() * &q * &y)[(0, 0)];
            let den = 2.0 * (y.transpose() * &p * &y)[(0, 0)];
            best = best.max(num / den);
        }
        let w = NormKind::weighted(p).unwrap();
        assert!((mu(&a, &w).unwrap() - best).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_inputs() {
        let rect = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(mu(&rect, &NormKind::Inf), Err(LognormError::NotSquare { .. })));
        let indefinite = m(&[&[1.0, 0.0], &[0.0, -1.0]]);
        assert!(matches!(NormKind::weighted(indefinite), Err(LognormError::NotSpd(_))));
        let asym = m(&[&[1.0, 0.5], &[0.0, 1.0]]);
        assert!(NormKind::weighted(asym).is_err());
        let w = NormKind::weighted(DMatrix::identity(3, 3)).unwrap();
        assert!(matches!(
            mu(&DMatrix::identity(2, 2), &w),
            Err(LognormError::Dimension { .. })
        ));
    }

    #[test]
    fn integral_examples() {
        let a = m(&[&[-1.0, 2.0], &[0.3, -4.0]]);
        let fam = MatrixFamilySample::uniform(8, |_| a.clone()).unwrap();
        let r = mu_of_integral(&fam, &NormKind::Two).unwrap();
        let direct = mu(&a, &NormKind::Two).unwrap();
        assert!((r.mu_int - direct).abs() < 1e-12 && (r.mu_max - direct).abs() < 1e-12);

        let fam = MatrixFamilySample::uniform(16, |l| {
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0 - l, -2.0 + l]))
        })
        .unwrap();
        let r = mu_of_integral(&fam, &NormKind::Inf).unwrap();
        assert!((r.mu_int + 1.5).abs() < 1e-14);
        assert!((r.mu_max + 1.0).abs() < 1e-14);
        assert!(r.holds(0.0));

        let fam = MatrixFamilySample::uniform(16, |l| m(&[&[0.0, l], &[-l, 0.0]])).unwrap();
        let r = mu_of_integral(&fam, &NormKind::Two).unwrap();
        assert!(r.mu_int.abs() < 1e-15 && r.mu_max.abs() < 1e-15);
    }

    #[test]
    fn family_validation() {
        let i = DMatrix::<f64>::identity(2, 2);
        assert!(MatrixFamilySample::new(vec![0.0, 0.5], vec![i.clone(), i.clone()]).is_err());
        assert!(MatrixFamilySample::new(vec![0.0, 1.0], vec![i.clone()]).is_err());
        assert!(matches!(
            MatrixFamilySample::new(vec![0.0, 1.0], vec![i.clone(), DMatrix::identity(3, 3)]),
            Err(LognormError::Dimension { .. })
        ));
    }

    fn constant_jacobian(j: DMatrix<f64>) -> TimePeriodicSystem {
        let n = j.nrows();
        let jr = j.clone();
        TimePeriodicSystem::new(
            n,
            2.0 * PI,
            move |_, x, out| {
                let v = &jr * nalgebra::DVector::from_column_slice(x);
                out.copy_from_slice(v.as_slice());
            },
            move |_, _| j.clone(),
        )
        .unwrap()
    }

    #[test]
    fn p_matrix_condition_examples() {
        let grid = GridSpec::new(16, 4);
        let sys = constant_jacobian(-DMatrix::identity(2, 2));
        let r =
            check_p_matrix_condition(&sys, &BoxRegion::cube(2, 1.0), DMatrix::identity(2, 2), |_| -1.0, &grid).unwrap();
        assert!(r.holds);

        let sys = constant_jacobian(m(&[&[0.0, 2.0], &[0.0, 0.0]]));
        let r =
            check_p_matrix_condition(&sys, &BoxRegion::cube(2, 1.0), DMatrix::identity(2, 2), |_| 0.0, &grid).unwrap();
        assert!(!r.holds);
        assert!((r.worst.margin - 1.0).abs() < 1e-12);
        assert_eq!(r.samples, 16 * 16);

        let scalar = TimePeriodicSystem::scalar(2.0 * PI, |_, x| -x, |_, _| -1.0).unwrap();
        let r = check_mu_bound(&scalar, &BoxRegion::interval(2.0), &NormKind::Inf, |_| -1.0, &grid).unwrap();
        assert!(r.holds);
        let json = serde_json::to_value(&r.worst).unwrap();
        for key in ["worst_t", "worst_z", "mu_value", "bound_value", "margin"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
