//! Closed-form and semi-closed-form solvers for type-2 programs with at most one
//! trace constraint.

use crate::error::{QmpError, Result};
use crate::matrix::{self, hermitian_eig, pd_inv_sqrt, CMatrix, C64};
use crate::model::{QMFunction, QMPProblem};

pub const DEFAULT_TOL: f64 = 1e-8;

/// `min Tr(X^H A0 X) + 2 Re Tr(B0^H X) + c0  s.t.  Tr(X^H A1 X) <= P`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleConstraintInstance {
    pub a0: CMatrix,
    pub b0: CMatrix,
    pub c0: f64,
    pub a1: CMatrix,
    pub p: f64,
}

impl SingleConstraintInstance {
    /// `A0` may be singular; it must be positive semidefinite. `A1` must be
    /// positive definite and `P > 0`.
    pub fn new(a0: CMatrix, b0: CMatrix, c0: f64, a1: CMatrix, p: f64) -> Result<Self> {
        let n = b0.rows();
        if a0.shape() != (n, n) || a1.shape() != (n, n) {
            return Err(QmpError::Dimension(format!(
                "A0 {:?}, A1 {:?}, B0 {:?}",
                a0.shape(),
                a1.shape(),
                b0.shape()
            )));
        }
        if !(p > 0.0) {
            return Err(QmpError::Parameter(format!(
                "power budget must be positive, got {p}"
            )));
        }
        if !matrix::is_psd(&a0) {
            let min_eig = hermitian_eig(&a0.hermitian_part())?.min();
            return Err(QmpError::NotPsd { min_eig });
        }
        if !matrix::is_pd(&a1) {
            let min_eig = hermitian_eig(&a1.hermitian_part())?.min();
            return Err(QmpError::NotPd { min_eig });
        }
        Ok(Self { a0, b0, c0, a1, p })
    }

    /// Reads the instance out of a program already classified as single-trace.
    pub fn from_problem(p: &QMPProblem) -> Result<Self> {
        if p.inequalities.len() != 1 || !p.equalities.is_empty() {
            return Err(QmpError::Classification(
                "expected exactly one inequality".into(),
            ));
        }
        let g = &p.inequalities[0];
        if !p.objective.is_type2() || !g.is_type2() {
            return Err(QmpError::Classification(
                "expected identity weights D".into(),
            ));
        }
        if g.b.fro_norm() > 1e-14 * g.scale() {
            return Err(QmpError::Classification(
                "constraint has a linear term".into(),
            ));
        }
        Self::new(
            p.objective.a.clone(),
            p.objective.b.clone(),
            p.objective.c,
            g.a.clone(),
            -g.c,
        )
    }

    pub fn to_problem(&self) -> QMPProblem {
        let r = self.b0.cols();
        QMPProblem::new(
            QMFunction::type2(self.a0.clone(), self.b0.clone(), self.c0),
            vec![QMFunction::trace_budget(self.a1.clone(), r, self.p)],
            vec![],
        )
        .expect("instance shapes are consistent")
    }

    pub fn objective(&self, x: &CMatrix) -> f64 {
        QMFunction::type2(self.a0.clone(), self.b0.clone(), self.c0)
            .evaluate(x)
            .expect("shape")
    }

    pub fn power(&self, x: &CMatrix) -> f64 {
        x.adjoint_mul(&self.a1.matmul(x)).trace().re
    }

    fn scale(&self) -> f64 {
        1.0 + self.a0.fro_norm() + self.a1.fro_norm() + self.b0.fro_norm() + self.p
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KKTDiagnostics {
    pub mu: f64,
    /// `|(A0 + mu A1) X + B0|_F`.
    pub stationarity_residual: f64,
    /// `max(0, Tr(X^H A1 X) - P)`.
    pub primal_violation: f64,
    /// `|mu (Tr(X^H A1 X) - P)|`.
    pub complementarity: f64,
    pub power: f64,
}

/// One eigendecomposition of `A1^{-1/2} A0 A1^{-1/2}` shared by every evaluation of
/// `g(mu)` and `X(mu)`.
#[derive(Debug, Clone)]
pub struct MultiplierSearch {
    a1_inv_sqrt: CMatrix,
    eigvecs: CMatrix,
    lambda: Vec<f64>,
    /// Rows of `V^H A1^{-1/2} B0`.
    proj: CMatrix,
    weights: Vec<f64>,
    zero_lambda: Vec<bool>,
}

impl MultiplierSearch {
    pub fn new(inst: &SingleConstraintInstance) -> Result<Self> {
        let t = pd_inv_sqrt(&inst.a1)?;
        let k = t.matmul(&inst.a0).matmul(&t).hermitian_part();
        let eig = hermitian_eig(&k)?;
        let proj = eig.vectors.adjoint_mul(&t.matmul(&inst.b0));
        let weights: Vec<f64> = (0..proj.rows())
            .map(|i| (0..proj.cols()).map(|j| proj[(i, j)].norm_sqr()).sum())
            .collect();
        let lmax = eig.max().abs().max(f64::MIN_POSITIVE);
        let wsum: f64 = weights.iter().sum();
        let zero_lambda: Vec<bool> = eig.values.iter().map(|&l| l <= 1e-12 * lmax).collect();
        let lambda = eig
            .values
            .iter()
            .zip(&zero_lambda)
            .map(|(&l, &z)| if z { 0.0 } else { l })
            .collect();
        // components of B0 that the quadratic cannot see at mu = 0
        let weights = weights
            .iter()
            .zip(&zero_lambda)
            .map(|(&w, &z)| if z && w <= 1e-24 * wsum { 0.0 } else { w })
            .collect();
        Ok(Self {
            a1_inv_sqrt: t,
            eigvecs: eig.vectors,
            lambda,
            proj,
            weights,
            zero_lambda,
        })
    }

    /// `g(mu) = Σ_k w_k / (λ_k + mu)^2`; infinite when `mu = 0` meets a visible
    /// null direction.
    pub fn g(&self, mu: f64) -> f64 {
        self.lambda
            .iter()
            .zip(&self.weights)
            .map(|(&l, &w)| {
                if w == 0.0 {
                    0.0
                } else {
                    let d = l + mu;
                    if d <= 0.0 {
                        f64::INFINITY
                    } else {
                        w / (d * d)
                    }
                }
            })
            .sum()
    }

    /// `X(mu) = -(A0 + mu A1)^{-1} B0`, minimum-norm on the null space at `mu = 0`.
    pub fn x(&self, mu: f64) -> CMatrix {
        let (n, r) = self.proj.shape();
        let scaled = CMatrix::from_fn(n, r, |i, j| {
            let d = self.lambda[i] + mu;
            if d <= 0.0 || (self.zero_lambda[i] && mu == 0.0) {
                C64::new(0.0, 0.0)
            } else {
                self.proj[(i, j)] / d
            }
        });
        -&self.a1_inv_sqrt.matmul(&self.eigvecs.matmul(&scaled))
    }

    /// Bisection for `g(mu) = target` on a bracket with `g(lo) >= target >= g(hi)`.
    /// Runs until the bracket stops shrinking in floating point.
    pub fn bisect(&self, mut lo: f64, mut hi: f64, target: f64) -> f64 {
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let g = self.g(mid);
            if g == target {
                return mid;
            }
            if g > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // hi is always on the feasible side
        hi
    }

    /// Smallest doubling `2^k` (from 1) with `g < target`.
    pub fn upper_bracket(&self, target: f64) -> Result<f64> {
        let mut hi = 1.0;
        while self.g(hi) >= target {
            hi *= 2.0;
            if !hi.is_finite() || hi > 1e300 {
                return Err(QmpError::Numerical(
                    "could not bracket the multiplier".into(),
                ));
            }
        }
        Ok(hi)
    }
}

/// Power of the multiplier-parametrized candidate, `Tr(X(mu)^H A1 X(mu))`.
pub fn g_mu(inst: &SingleConstraintInstance, mu: f64) -> Result<f64> {
    if !(mu >= 0.0) {
        return Err(QmpError::Parameter(format!(
            "multiplier must be non-negative, got {mu}"
        )));
    }
    Ok(MultiplierSearch::new(inst)?.g(mu))
}

/// `X = -A0^{-1} B0` for positive definite `A0`.
pub fn solve_unconstrained(a0: &CMatrix, b0: &CMatrix) -> Result<CMatrix> {
    if a0.shape() != (b0.rows(), b0.rows()) {
        return Err(QmpError::Dimension(format!(
            "A0 {:?}, B0 {:?}",
            a0.shape(),
            b0.shape()
        )));
    }
    let eig = hermitian_eig(&a0.hermitian_part())?;
    if !(eig.min() > matrix::PD_TOL * a0.fro_norm()) {
        return Err(QmpError::NotPd { min_eig: eig.min() });
    }
    Ok(-&a0.solve(b0)?)
}

/// Weighted variant: any `X` with `A0 X W = -B0 W` is optimal; `-A0^{-1} B0`
/// satisfies it for every PSD `W`.
pub fn solve_weighted(a0: &CMatrix, b0: &CMatrix, w: &CMatrix) -> Result<CMatrix> {
    if w.shape() != (b0.cols(), b0.cols()) {
        return Err(QmpError::Dimension(format!(
            "W {:?}, B0 {:?}",
            w.shape(),
            b0.shape()
        )));
    }
    if !matrix::is_psd(w) {
        let min_eig = hermitian_eig(&w.hermitian_part())?.min();
        return Err(QmpError::NotPsd { min_eig });
    }
    solve_unconstrained(a0, b0)
}

/// Semi-closed form for the single trace constraint: `mu = 0` when the
/// unconstrained point is feasible, otherwise the root of `g(mu) = P`.
pub fn solve_single_constraint(
    inst: &SingleConstraintInstance,
    tol: f64,
) -> Result<(CMatrix, KKTDiagnostics)> {
    if !(tol > 0.0) {
        return Err(QmpError::Parameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let search = MultiplierSearch::new(inst)?;
    let mu = if search.g(0.0) <= inst.p {
        0.0
    } else {
        let hi = search.upper_bracket(inst.p)?;
        let lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
        search.bisect(lo, hi, inst.p)
    };
    let x = search.x(mu);
    let diag = kkt_diagnostics(inst, &x, mu);
    if mu > 0.0 && (search.g(mu) - inst.p).abs() > tol * inst.p.max(1.0) {
        return Err(QmpError::Numerical(format!(
            "bisection stalled: g(mu) = {}, P = {}",
            search.g(mu),
            inst.p
        )));
    }
    if diag.stationarity_residual > 1e-8 * inst.scale() * (1.0 + mu) * (1.0 + x.fro_norm()) {
        return Err(QmpError::Numerical(format!(
            "stationarity residual {:e} too large",
            diag.stationarity_residual
        )));
    }
    Ok((x, diag))
}

/// KKT residuals computed directly from the matrices.
pub fn kkt_diagnostics(inst: &SingleConstraintInstance, x: &CMatrix, mu: f64) -> KKTDiagnostics {
    let lhs = &(&inst.a0 + &inst.a1.scale(mu)).matmul(x) + &inst.b0;
    let power = inst.power(x);
    KKTDiagnostics {
        mu,
        stationarity_residual: lhs.fro_norm(),
        primal_violation: (power - inst.p).max(0.0),
        complementarity: (mu * (power - inst.p)).abs(),
        power,
    }
}
