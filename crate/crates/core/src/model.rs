//! Quadratic matrix functions and programs.
//!
//! A QM function of `X ∈ C^{n×r}` is `Tr(D X^H A X) + 2 Re Tr(B^H X) + c` with `A`
//! and `D` Hermitian. A program minimizes one such function subject to `f_i(X) <= 0`
//! and `f_j(X) = 0`.

use std::fmt;

use crate::error::{QmpError, Result};
use crate::matrix::{self, kron, pd_inv_sqrt, psd_sqrt, CMatrix, C64, HERMITIAN_TOL, PD_TOL};

/// Tolerance for recognising `D = I`.
pub const TYPE2_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct QMFunction {
    pub a: CMatrix,
    pub b: CMatrix,
    pub c: f64,
    pub d: CMatrix,
}

impl QMFunction {
    /// Checks shapes only; Hermitian structure is reported by [`validate`].
    pub fn new(a: CMatrix, b: CMatrix, c: f64, d: CMatrix) -> Result<Self> {
        let f = Self { a, b, c, d };
        let (n, r) = f.b.shape();
        if f.a.shape() != (n, n) || f.d.shape() != (r, r) {
            return Err(QmpError::Dimension(format!(
                "A {:?}, B {:?}, D {:?} are inconsistent",
                f.a.shape(),
                f.b.shape(),
                f.d.shape()
            )));
        }
        Ok(f)
    }

    /// `Tr(X^H A X) + 2 Re Tr(B^H X) + c`.
    pub fn type2(a: CMatrix, b: CMatrix, c: f64) -> Self {
        let r = b.cols();
        Self {
            a,
            b,
            c,
            d: CMatrix::identity(r),
        }
    }

    /// `Tr(X^H A X) - budget`.
    pub fn trace_budget(a: CMatrix, r: usize, budget: f64) -> Self {
        let n = a.rows();
        Self::type2(a, CMatrix::zeros(n, r), -budget)
    }

    pub fn n(&self) -> usize {
        self.b.rows()
    }

    pub fn r(&self) -> usize {
        self.b.cols()
    }

    pub fn is_type2(&self) -> bool {
        self.d.shape() == (self.r(), self.r())
            && (&self.d - &CMatrix::identity(self.r())).fro_norm() <= TYPE2_TOL
    }

    /// Magnitude used to scale absolute tolerances.
    pub fn scale(&self) -> f64 {
        1.0 + self.a.fro_norm() * self.d.fro_norm() + self.b.fro_norm() + self.c.abs()
    }

    /// Value at `X`, with the imaginary residue of the assembled scalar.
    pub fn evaluate_complex(&self, x: &CMatrix) -> Result<C64> {
        if x.shape() != (self.n(), self.r()) {
            return Err(QmpError::Dimension(format!(
                "X is {:?}, function expects {}x{}",
                x.shape(),
                self.n(),
                self.r()
            )));
        }
        let ax = self.a.matmul(x);
        let quad = self.d.trace_of_product(&x.adjoint_mul(&ax));
        let lin = self.b.inner(x);
        Ok(quad + C64::new(2.0 * lin.re + self.c, 0.0))
    }

    pub fn evaluate(&self, x: &CMatrix) -> Result<f64> {
        Ok(self.evaluate_complex(x)?.re)
    }
}

/// Minimize `objective` subject to `inequalities <= 0` and `equalities = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QMPProblem {
    pub n: usize,
    pub r: usize,
    pub objective: QMFunction,
    pub inequalities: Vec<QMFunction>,
    pub equalities: Vec<QMFunction>,
}

impl QMPProblem {
    pub fn new(
        objective: QMFunction,
        inequalities: Vec<QMFunction>,
        equalities: Vec<QMFunction>,
    ) -> Result<Self> {
        let (n, r) = (objective.n(), objective.r());
        for f in std::iter::once(&objective)
            .chain(&inequalities)
            .chain(&equalities)
        {
            QMFunction::new(f.a.clone(), f.b.clone(), f.c, f.d.clone())?;
            if (f.n(), f.r()) != (n, r) {
                return Err(QmpError::Dimension(format!(
                    "member function is {}x{}, problem is {n}x{r}",
                    f.n(),
                    f.r()
                )));
            }
        }
        Ok(Self {
            n,
            r,
            objective,
            inequalities,
            equalities,
        })
    }

    pub fn unconstrained(objective: QMFunction) -> Self {
        let (n, r) = (objective.n(), objective.r());
        Self {
            n,
            r,
            objective,
            inequalities: vec![],
            equalities: vec![],
        }
    }

    pub fn constraint_count(&self) -> usize {
        self.inequalities.len() + self.equalities.len()
    }

    /// Objective followed by inequalities then equalities, with their labels.
    pub fn labelled(&self) -> Vec<(String, &QMFunction)> {
        let mut out = vec![("objective".to_string(), &self.objective)];
        out.extend(
            self.inequalities
                .iter()
                .enumerate()
                .map(|(i, f)| (format!("inequality[{i}]"), f)),
        );
        out.extend(
            self.equalities
                .iter()
                .enumerate()
                .map(|(j, f)| (format!("equality[{j}]"), f)),
        );
        out
    }

    pub fn functions(&self) -> impl Iterator<Item = &QMFunction> {
        std::iter::once(&self.objective)
            .chain(&self.inequalities)
            .chain(&self.equalities)
    }

    /// Largest constraint violation at `X`: `max(f_i^+, |f_j|)`.
    pub fn violation(&self, x: &CMatrix) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for f in &self.inequalities {
            worst = worst.max(f.evaluate(x)?.max(0.0));
        }
        for f in &self.equalities {
            worst = worst.max(f.evaluate(x)?.abs());
        }
        Ok(worst)
    }

    pub fn scale(&self) -> f64 {
        self.functions().map(QMFunction::scale).fold(1.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub function: String,
    pub property: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.function, self.property)
    }
}

/// Lists every shape and Hermitian-structure problem; empty means well formed.
pub fn validate(p: &QMPProblem) -> Vec<Violation> {
    let mut out = Vec::new();
    for (label, f) in p.labelled() {
        let mut push = |what: &str, prop: String| {
            out.push(Violation {
                function: format!("{label}.{what}"),
                property: prop,
            })
        };
        if f.a.shape() != (p.n, p.n) {
            push(
                "A",
                format!("shape {:?}, expected {}x{}", f.a.shape(), p.n, p.n),
            );
        } else if !f.a.is_hermitian(HERMITIAN_TOL) {
            push(
                "A",
                format!("not Hermitian (defect {:.3e})", f.a.hermitian_defect()),
            );
        }
        if f.b.shape() != (p.n, p.r) {
            push(
                "B",
                format!("shape {:?}, expected {}x{}", f.b.shape(), p.n, p.r),
            );
        }
        if f.d.shape() != (p.r, p.r) {
            push(
                "D",
                format!("shape {:?}, expected {}x{}", f.d.shape(), p.r, p.r),
            );
        } else if !f.d.is_hermitian(HERMITIAN_TOL) {
            push(
                "D",
                format!("not Hermitian (defect {:.3e})", f.d.hermitian_defect()),
            );
        }
        if !f.c.is_finite() {
            push("c", "not finite".into());
        }
        for (name, m) in [("A", &f.a), ("B", &f.b), ("D", &f.d)] {
            if !m.is_finite() {
                push(name, "has non-finite entries".into());
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassTag {
    Unconstrained,
    SingleTraceConstraint,
    Convex,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemClass {
    pub tag: ClassTag,
    pub type2: bool,
}

fn min_eig_rel(m: &CMatrix) -> Option<f64> {
    let e = matrix::hermitian_eig(&m.hermitian_part()).ok()?;
    Some(e.min() / m.fro_norm().max(f64::MIN_POSITIVE))
}

fn is_pd(m: &CMatrix) -> bool {
    m.fro_norm() > 0.0 && min_eig_rel(m).is_some_and(|x| x > PD_TOL)
}

fn is_psd(m: &CMatrix) -> bool {
    m.fro_norm() == 0.0 || min_eig_rel(m).is_some_and(|x| x >= -matrix::PSD_CLAMP)
}

/// The single-trace-constraint shape: one inequality `Tr(X^H A1 X) - P <= 0`,
/// `A1 ≻ 0`, `B1 = 0`, `P > 0`, no equalities, PSD objective quadratic.
fn is_single_trace(p: &QMPProblem) -> bool {
    if p.inequalities.len() != 1 || !p.equalities.is_empty() {
        return false;
    }
    let g = &p.inequalities[0];
    g.b.fro_norm() <= 1e-14 * g.scale() && g.c < 0.0 && is_pd(&g.a) && is_psd(&p.objective.a)
}

/// Picks the strongest solution regime the problem admits. Assumes
/// [`validate`] returned no violations.
pub fn classify(p: &QMPProblem) -> ProblemClass {
    let type2 = p.functions().all(QMFunction::is_type2);
    let tag = if type2 && p.constraint_count() == 0 && is_pd(&p.objective.a) {
        ClassTag::Unconstrained
    } else if type2 && is_single_trace(p) {
        ClassTag::SingleTraceConstraint
    } else if p.equalities.is_empty()
        && std::iter::once(&p.objective)
            .chain(&p.inequalities)
            .all(|f| is_psd(&f.a) && is_psd(&f.d))
    {
        ClassTag::Convex
    } else {
        ClassTag::General
    };
    ProblemClass { tag, type2 }
}

/// `Ω = [[D^T ⊗ A, vec(B)], [vec(B)^H, c]]`, so that
/// `f(X) = [vec X; 1]^H Ω [vec X; 1]`.
pub fn vectorize_omega(f: &QMFunction) -> CMatrix {
    let nr = f.n() * f.r();
    let mut omega = CMatrix::zeros(nr + 1, nr + 1);
    omega.set_block(0, 0, &kron(&f.d.transpose(), &f.a));
    let vb = matrix::vec(&f.b);
    omega.set_block(0, nr, &vb);
    omega.set_block(nr, 0, &vb.adjoint());
    omega[(nr, nr)] = C64::new(f.c, 0.0);
    omega.hermitian_part()
}

/// Lifted operators `M_l = [[A_l, B_l], [B_l^H, (c_l/r) I_r]]` of a type-2 program.
///
/// For `Z^H Z = I_r`, `Tr(M_l [Y;Z][Y;Z]^H) = f_l(Y Z^H)`. All right-hand sides are
/// zero; constants live inside `M_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogenizedProblem {
    pub n: usize,
    pub r: usize,
    pub objective: CMatrix,
    pub inequalities: Vec<CMatrix>,
    pub equalities: Vec<CMatrix>,
}

impl HomogenizedProblem {
    pub fn alpha(&self) -> f64 {
        0.0
    }
}

pub fn homogenize_function(f: &QMFunction) -> CMatrix {
    let (n, r) = (f.n(), f.r());
    let mut m = CMatrix::zeros(n + r, n + r);
    m.set_block(0, 0, &f.a);
    m.set_block(0, n, &f.b);
    m.set_block(n, 0, &f.b.adjoint());
    m.set_block(n, n, &CMatrix::identity(r).scale(f.c / r as f64));
    m.hermitian_part()
}

pub fn homogenize(p: &QMPProblem) -> Result<HomogenizedProblem> {
    if !classify(p).type2 {
        return Err(QmpError::Classification(
            "homogenization needs every D_l = I".into(),
        ));
    }
    Ok(HomogenizedProblem {
        n: p.n,
        r: p.r,
        objective: homogenize_function(&p.objective),
        inequalities: p.inequalities.iter().map(homogenize_function).collect(),
        equalities: p.equalities.iter().map(homogenize_function).collect(),
    })
}

/// Change of variable `X̃ = X W^{1/2}` and its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenMap {
    pub sqrt: CMatrix,
    pub inv_sqrt: CMatrix,
}

impl WhitenMap {
    pub fn forward(&self, x: &CMatrix) -> CMatrix {
        x.matmul(&self.sqrt)
    }

    pub fn back(&self, xt: &CMatrix) -> CMatrix {
        xt.matmul(&self.inv_sqrt)
    }
}

/// Rewrites a program whose functions all share `D_l = W` as a type-2 program in
/// `X̃ = X W^{1/2}`: `A_l` is kept and `B̃_l = B_l W^{-1/2}`.
pub fn whiten(p: &QMPProblem, w: &CMatrix) -> Result<(QMPProblem, WhitenMap)> {
    if w.shape() != (p.r, p.r) {
        return Err(QmpError::Dimension(format!(
            "W is {:?}, expected {}x{}",
            w.shape(),
            p.r,
            p.r
        )));
    }
    let tol = TYPE2_TOL * w.fro_norm().max(1.0);
    for (label, f) in p.labelled() {
        if (&f.d - w).fro_norm() > tol {
            return Err(QmpError::Precondition(format!(
                "{label}.D differs from the whitening matrix"
            )));
        }
    }
    let inv_sqrt = pd_inv_sqrt(w)?;
    let sqrt = psd_sqrt(w)?;
    let map_fn = |f: &QMFunction| QMFunction::type2(f.a.clone(), f.b.matmul(&inv_sqrt), f.c);
    let out = QMPProblem {
        n: p.n,
        r: p.r,
        objective: map_fn(&p.objective),
        inequalities: p.inequalities.iter().map(map_fn).collect(),
        equalities: p.equalities.iter().map(map_fn).collect(),
    };
    Ok((out, WhitenMap { sqrt, inv_sqrt }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn re(v: f64) -> CMatrix {
        CMatrix::scalar(C64::new(v, 0.0))
    }

    fn random_function(n: usize, r: usize, rng: &mut ChaCha8Rng) -> QMFunction {
        QMFunction {
            a: generate::hermitian(n, rng),
            b: CMatrix::random_cn(n, r, rng),
            c: 0.7,
            d: generate::hermitian(r, rng),
        }
    }

    fn random_unitary(r: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        matrix::hermitian_eig(&generate::hermitian(r, rng))
            .unwrap()
            .vectors
    }

    #[test]
    fn evaluate_small_cases() {
        let f = QMFunction::type2(CMatrix::identity(2), CMatrix::zeros(2, 2), 0.0);
        assert_eq!(f.evaluate(&CMatrix::identity(2)).unwrap(), 2.0);
        let g = QMFunction::type2(re(1.0), re(-1.0), 1.0);
        assert_eq!(g.evaluate(&re(1.0)).unwrap(), 0.0);
        assert!(matches!(
            f.evaluate(&CMatrix::zeros(3, 2)),
            Err(QmpError::Dimension(_))
        ));
    }

    #[test]
    fn evaluate_is_real_and_matches_omega_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let (n, r) = (rng.random_range(1..5), rng.random_range(1..5));
            let f = random_function(n, r, &mut rng);
            let omega = vectorize_omega(&f);
            assert!(omega.is_hermitian(1e-14));
            for _ in 0..50 {
                let x = CMatrix::random_cn(n, r, &mut rng);
                let v = f.evaluate_complex(&x).unwrap();
                assert!(v.im.abs() <= 1e-10 * f.scale() * (1.0 + x.fro_norm_sqr()));
                let mut z = matrix::vec(&x).as_slice().to_vec();
                z.push(C64::new(1.0, 0.0));
                let z = CMatrix::column(&z);
                let q = z.adjoint_mul(&omega.matmul(&z))[(0, 0)];
                assert!((q.re - v.re).abs() <= 1e-9 * f.scale() * (1.0 + x.fro_norm_sqr()));
            }
        }
    }

    use rand::Rng;

    #[test]
    fn omega_small_cases() {
        let f = QMFunction::type2(re(1.0), re(0.0), 5.0);
        assert_eq!(
            vectorize_omega(&f),
            CMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, 5.0]])
        );
        let f = QMFunction::type2(re(2.0), re(3.0), 1.0);
        assert_eq!(
            vectorize_omega(&f),
            CMatrix::from_real_rows(&[&[2.0, 3.0], &[3.0, 1.0]])
        );
    }

    #[test]
    fn validate_reports_each_defect() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = generate::single_constraint_problem(3, 2, &mut rng);
        assert!(validate(&p).is_empty());

        let mut bad = p.clone();
        bad.objective.a[(0, 1)] += C64::new(1e-3, 0.0);
        let v = validate(&bad);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].function, "objective.A");

        let mut bad = p.clone();
        bad.inequalities[0].b = CMatrix::zeros(3, 3);
        let v = validate(&bad);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].function, "inequality[0].B");
    }

    #[test]
    fn classification() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let unc = QMPProblem::unconstrained(generate::type2_objective(3, 2, &mut rng));
        assert_eq!(
            classify(&unc),
            ProblemClass {
                tag: ClassTag::Unconstrained,
                type2: true
            }
        );

        let single = generate::single_constraint_problem(3, 2, &mut rng);
        assert_eq!(classify(&single).tag, ClassTag::SingleTraceConstraint);

        let eq = QMPProblem::new(
            generate::type2_objective(2, 2, &mut rng),
            vec![],
            vec![generate::power_constraint(2, 2, &mut rng)],
        )
        .unwrap();
        assert_eq!(classify(&eq).tag, ClassTag::General);

        let convex = generate::convex_problem(2, 3, 2, false, &mut rng);
        assert_eq!(
            classify(&convex),
            ProblemClass {
                tag: ClassTag::Convex,
                type2: false
            }
        );

        let nonconvex = generate::nonconvex_type2(3, 2, 1, &mut rng);
        let c = classify(&nonconvex);
        assert!(c.type2);
        assert_eq!(c.tag, ClassTag::General);
    }

    #[test]
    fn classification_is_stable_under_tiny_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let p = generate::single_constraint_problem(3, 2, &mut rng);
            let mut q = p.clone();
            for f in std::iter::once(&mut q.objective).chain(q.inequalities.iter_mut()) {
                let noise = generate::hermitian(3, &mut rng).scale(1e-13);
                f.a += &noise;
            }
            assert_eq!(classify(&p), classify(&q));
            assert_eq!(classify(&p), classify(&p));
        }
    }

    #[test]
    fn homogenization_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let (n, r) = (rng.random_range(1..5), rng.random_range(1..4));
            let f = QMFunction::type2(
                generate::hermitian(n, &mut rng),
                CMatrix::random_cn(n, r, &mut rng),
                -0.4,
            );
            let m = homogenize_function(&f);
            assert!(m.is_hermitian(1e-14));
            assert_eq!(
                m.submatrix(n, n, r, r),
                CMatrix::identity(r).scale(f.c / r as f64)
            );
            for _ in 0..10 {
                let y = CMatrix::random_cn(n, r, &mut rng);
                let z = random_unitary(r, &mut rng);
                let yz = CMatrix::vstack(&[&y, &z]).unwrap();
                let lifted = m.trace_of_product(&yz.mul_adjoint(&yz)).re;
                let direct = f.evaluate(&y.mul_adjoint(&z)).unwrap();
                assert!((lifted - direct).abs() <= 1e-9 * f.scale() * (1.0 + y.fro_norm_sqr()));
                // Z = I reduces to f(Y)
                let yi = CMatrix::vstack(&[&y, &CMatrix::identity(r)]).unwrap();
                let lifted = m.trace_of_product(&yi.mul_adjoint(&yi)).re;
                assert!(
                    (lifted - f.evaluate(&y).unwrap()).abs()
                        <= 1e-9 * f.scale() * (1.0 + y.fro_norm_sqr())
                );
            }
        }
    }

    #[test]
    fn homogenize_block_diagonal_when_no_linear_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = generate::pd(3, 0.1, &mut rng);
        let f = QMFunction::type2(a.clone(), CMatrix::zeros(3, 2), 0.0);
        let m = homogenize_function(&f);
        assert_eq!(m.submatrix(0, 3, 3, 2).fro_norm(), 0.0);
        let y = CMatrix::random_cn(3, 2, &mut rng);
        let z = random_unitary(2, &mut rng);
        let yz = CMatrix::vstack(&[&y, &z]).unwrap();
        let lifted = m.trace_of_product(&yz.mul_adjoint(&yz)).re;
        assert!((lifted - y.adjoint_mul(&a.matmul(&y)).trace().re).abs() < 1e-10);
    }

    #[test]
    fn homogenize_rejects_type1() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = generate::convex_problem(2, 2, 1, false, &mut rng);
        assert!(matches!(homogenize(&p), Err(QmpError::Classification(_))));
    }

    #[test]
    fn whiten_identity_and_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = generate::single_constraint_problem(3, 2, &mut rng);
        let (q, map) = whiten(&p, &CMatrix::identity(2)).unwrap();
        assert_eq!(q, p);
        assert_eq!(map.sqrt, CMatrix::identity(2));

        let (a, b, c) = (1.5, -0.8, 0.3);
        let f = QMFunction {
            a: re(a),
            b: re(b),
            c,
            d: re(4.0),
        };
        let p = QMPProblem::unconstrained(f.clone());
        let (q, map) = whiten(&p, &re(4.0)).unwrap();
        assert!((q.objective.b[(0, 0)].re - b / 2.0).abs() < 1e-15);
        assert_eq!(q.objective.a, re(a));
        let x = re(0.37);
        let xt = map.forward(&x);
        assert!((xt[(0, 0)].re - 0.74).abs() < 1e-15);
        assert!((q.objective.evaluate(&xt).unwrap() - f.evaluate(&x).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn whiten_round_trip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let w = generate::pd(3, 0.5, &mut rng);
        let mk = |rng: &mut ChaCha8Rng| QMFunction {
            a: generate::hermitian(2, rng),
            b: CMatrix::random_cn(2, 3, rng),
            c: 0.1,
            d: w.clone(),
        };
        let p = QMPProblem::new(mk(&mut rng), vec![mk(&mut rng)], vec![]).unwrap();
        let (q, map) = whiten(&p, &w).unwrap();
        assert!(classify(&q).type2);
        for _ in 0..20 {
            let xt = CMatrix::random_cn(2, 3, &mut rng);
            let x = map.back(&xt);
            for (f, g) in p.functions().zip(q.functions()) {
                let lhs = f.evaluate(&x).unwrap();
                let rhs = g.evaluate(&xt).unwrap();
                assert!((lhs - rhs).abs() <= 1e-9 * f.scale() * (1.0 + xt.fro_norm_sqr()));
            }
        }
        let other = generate::pd(3, 0.5, &mut rng);
        assert!(matches!(whiten(&p, &other), Err(QmpError::Precondition(_))));
        let mut sing = p.clone();
        let z = CMatrix::zeros(3, 3);
        for f in std::iter::once(&mut sing.objective).chain(sing.inequalities.iter_mut()) {
            f.d = z.clone();
        }
        assert!(matches!(whiten(&sing, &z), Err(QmpError::NotPd { .. })));
    }
}
