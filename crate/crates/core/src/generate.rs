//! Seeded random instance generators shared by tests, the acceptance suite and the
//! CLI self-test.

use rand::Rng;

use crate::matrix::{CMatrix, C64};
use crate::model::{QMFunction, QMPProblem};

pub fn hermitian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    CMatrix::random_cn(n, n, rng).hermitian_part()
}

/// `C C^H + floor * I` with `C` square Gaussian.
pub fn pd<R: Rng + ?Sized>(n: usize, floor: f64, rng: &mut R) -> CMatrix {
    let c = CMatrix::random_cn(n, n, rng);
    let mut m = c.mul_adjoint(&c).hermitian_part();
    for i in 0..n {
        m[(i, i)] += C64::new(floor, 0.0);
    }
    m
}

/// PSD of the given rank.
pub fn psd_rank<R: Rng + ?Sized>(n: usize, rank: usize, rng: &mut R) -> CMatrix {
    let c = CMatrix::random_cn(n, rank, rng);
    c.mul_adjoint(&c).hermitian_part()
}

/// Random Hermitian with eigenvalues spread over both signs.
pub fn indefinite<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    let mut m = hermitian(n, rng);
    let shift = rng.random_range(-0.5..0.5);
    for i in 0..n {
        m[(i, i)] += C64::new(shift, 0.0);
    }
    m
}

/// Type-2 objective with `A0 = pd`, Gaussian `B0`, and a random constant.
pub fn type2_objective<R: Rng + ?Sized>(n: usize, r: usize, rng: &mut R) -> QMFunction {
    QMFunction::type2(
        pd(n, 0.2, rng),
        CMatrix::random_cn(n, r, rng),
        rng.random_range(-1.0..1.0),
    )
}

/// `Tr(X^H A1 X) - P <= 0` with `A1` positive definite.
pub fn power_constraint<R: Rng + ?Sized>(n: usize, r: usize, rng: &mut R) -> QMFunction {
    let p = rng.random_range(0.2..2.0);
    QMFunction::type2(pd(n, 0.3, rng), CMatrix::zeros(n, r), -p)
}

/// Single-trace-constraint instance where the constraint is active with
/// overwhelming probability (`B0` scaled up).
pub fn single_constraint_problem<R: Rng + ?Sized>(n: usize, r: usize, rng: &mut R) -> QMPProblem {
    let mut obj = type2_objective(n, r, rng);
    obj.b = obj.b.scale(3.0);
    QMPProblem::new(obj, vec![power_constraint(n, r, rng)], vec![]).expect("consistent shapes")
}

/// Convex type-1 instance: PD `A_l`, PD `D_l`, `c_i < 0` so `X = 0` is strictly
/// feasible.
pub fn convex_problem<R: Rng + ?Sized>(
    n: usize,
    r: usize,
    constraints: usize,
    type2: bool,
    rng: &mut R,
) -> QMPProblem {
    let d = |rng: &mut R| {
        if type2 {
            CMatrix::identity(r)
        } else {
            pd(r, 0.3, rng)
        }
    };
    let d0 = d(rng);
    let obj = QMFunction {
        a: pd(n, 0.2, rng),
        b: CMatrix::random_cn(n, r, rng).scale(2.0),
        c: rng.random_range(-1.0..1.0),
        d: d0,
    };
    let cons = (0..constraints)
        .map(|_| {
            let dl = d(rng);
            QMFunction {
                a: pd(n, 0.3, rng),
                b: CMatrix::random_cn(n, r, rng).scale(0.3),
                c: -rng.random_range(0.5..2.0),
                d: dl,
            }
        })
        .collect();
    QMPProblem::new(obj, cons, vec![]).expect("consistent shapes")
}

/// Possibly nonconvex type-2 instance: indefinite objective, PD-quadratic
/// inequality constraints with `X = 0` strictly feasible (bounded feasible set).
pub fn nonconvex_type2<R: Rng + ?Sized>(
    n: usize,
    r: usize,
    constraints: usize,
    rng: &mut R,
) -> QMPProblem {
    let obj = QMFunction::type2(
        indefinite(n, rng),
        CMatrix::random_cn(n, r, rng),
        rng.random_range(-1.0..1.0),
    );
    let cons = (0..constraints)
        .map(|_| {
            QMFunction::type2(
                pd(n, 0.3, rng),
                CMatrix::random_cn(n, r, rng).scale(0.2),
                -rng.random_range(0.5..2.0),
            )
        })
        .collect();
    QMPProblem::new(obj, cons, vec![]).expect("consistent shapes")
}

/// Scalar (`n = r = 1`) problem with real coefficients.
pub fn scalar_problem<R: Rng + ?Sized>(kind: ScalarKind, rng: &mut R) -> QMPProblem {
    let re = |v: f64| CMatrix::scalar(C64::new(v, 0.0));
    let f = |a: f64, b: f64, c: f64| QMFunction::type2(re(a), re(b), c);
    match kind {
        ScalarKind::Unconstrained => QMPProblem::new(
            f(
                rng.random_range(0.3..3.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.0..1.0),
            ),
            vec![],
            vec![],
        ),
        ScalarKind::Power => QMPProblem::new(
            f(
                rng.random_range(0.3..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.0..1.0),
            ),
            vec![f(
                rng.random_range(0.5..2.0),
                0.0,
                -rng.random_range(0.2..1.5),
            )],
            vec![],
        ),
        ScalarKind::Convex => QMPProblem::new(
            f(
                rng.random_range(0.3..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.0..1.0),
            ),
            vec![
                f(
                    rng.random_range(0.5..2.0),
                    rng.random_range(-0.5..0.5),
                    -rng.random_range(0.5..1.5),
                ),
                f(
                    rng.random_range(0.5..2.0),
                    rng.random_range(-0.5..0.5),
                    -rng.random_range(0.5..1.5),
                ),
            ],
            vec![],
        ),
        ScalarKind::Nonconvex => QMPProblem::new(
            f(
                -rng.random_range(0.3..2.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ),
            vec![f(
                rng.random_range(0.5..2.0),
                0.0,
                -rng.random_range(0.3..1.5),
            )],
            vec![],
        ),
        ScalarKind::Equality => {
            let t = rng.random_range(0.5..1.5);
            QMPProblem::new(
                f(1.0, -rng.random_range(0.5..3.0), rng.random_range(0.0..4.0)),
                vec![],
                vec![f(1.0, 0.0, -t * t)],
            )
        }
    }
    .expect("scalar shapes")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    Unconstrained,
    Power,
    Convex,
    Nonconvex,
    Equality,
}
