//! Dense primal-dual interior-point solver for real block-diagonal semidefinite
//! programs in standard form:
//!
//! ```text
//! primal:  min <C, Z>    s.t. <A_i, Z> = b_i  (or <= b_i),  Z ⪰ 0
//! dual:    max b^T y     s.t. S = C - Σ y_i A_i ⪰ 0          (y_i <= 0 for <= rows)
//! ```
//!
//! Inequality rows get a nonnegative slack appended as its own 1x1 block. The
//! search direction is the HKM (`X dS S^{-1}` symmetrized) direction with a
//! Mehrotra predictor-corrector, from an infeasible central start.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{QmpError, Result};
use crate::matrix::{self, CMatrix};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;
const STEP_FRACTION: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Eq,
    Le,
}

/// One linear row `Σ_blocks <A^k, Z^k> (= or <=) b`. Blocks the row does not touch
/// are omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeConstraint {
    pub terms: Vec<(usize, DMatrix<f64>)>,
    pub b: f64,
    pub sense: Sense,
}

impl ConeConstraint {
    pub fn single(a: DMatrix<f64>, b: f64, sense: Sense) -> Self {
        Self {
            terms: vec![(0, a)],
            b,
            sense,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeProgram {
    /// Block sizes; the matrix variable is block-diagonal.
    pub blocks: Vec<usize>,
    /// Cost, one symmetric matrix per block.
    pub c: Vec<DMatrix<f64>>,
    pub constraints: Vec<ConeConstraint>,
}

impl ConeProgram {
    /// Single `m x m` block.
    pub fn dense(c: DMatrix<f64>, constraints: Vec<(DMatrix<f64>, f64, Sense)>) -> Self {
        let m = c.nrows();
        Self {
            blocks: vec![m],
            c: vec![c],
            constraints: constraints
                .into_iter()
                .map(|(a, b, s)| ConeConstraint::single(a, b, s))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.constraints.is_empty() {
            return Err(QmpError::Validation(
                "cone program needs at least one constraint".into(),
            ));
        }
        if self.c.len() != self.blocks.len() {
            return Err(QmpError::Dimension(
                "one cost block per variable block".into(),
            ));
        }
        let check = |what: &str, k: usize, m: &DMatrix<f64>| -> Result<()> {
            let n = self.blocks[k];
            if m.nrows() != n || m.ncols() != n {
                return Err(QmpError::Dimension(format!(
                    "{what} block {k} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            let defect = (m - m.transpose()).norm();
            if defect > 1e-10 * m.norm().max(1.0) {
                return Err(QmpError::Validation(format!(
                    "{what} block {k} is not symmetric"
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(QmpError::Validation(format!(
                    "{what} block {k} has non-finite entries"
                )));
            }
            Ok(())
        };
        for (k, c) in self.c.iter().enumerate() {
            check("C", k, c)?;
        }
        for (i, row) in self.constraints.iter().enumerate() {
            if !row.b.is_finite() {
                return Err(QmpError::Validation(format!("b[{i}] is not finite")));
            }
            for (k, a) in &row.terms {
                if *k >= self.blocks.len() {
                    return Err(QmpError::Dimension(format!(
                        "constraint {i} references block {k}"
                    )));
                }
                check(&format!("A[{i}]"), *k, a)?;
            }
        }
        Ok(())
    }

    /// Scales every cost block by `s`.
    pub fn scale_cost(&self, s: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.c {
            *c *= s;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub trace: bool,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub alpha_primal: f64,
    pub alpha_dual: f64,
}

impl fmt::Display for IterRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} pres={:.3e} dres={:.3e} gap={:.3e} pobj={:.10e} dobj={:.10e} ap={:.4} ad={:.4}",
            self.iter,
            self.primal_residual,
            self.dual_residual,
            self.gap,
            self.primal_objective,
            self.dual_objective,
            self.alpha_primal,
            self.alpha_dual
        )
    }
}

#[derive(Debug, Clone)]
pub struct ConeSolution {
    pub status: ConeStatus,
    /// Primal blocks (user blocks only).
    pub z: Vec<DMatrix<f64>>,
    /// Dual slack blocks (user blocks only).
    pub s: Vec<DMatrix<f64>>,
    pub y: Vec<f64>,
    /// Primal objective `<C, Z>`.
    pub objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    /// Norm ratio of the primal-infeasibility certificate when `Infeasible`.
    pub certificate: Option<f64>,
    pub trace: Vec<IterRecord>,
}

impl ConeSolution {
    pub fn trace_lines(&self) -> String {
        self.trace.iter().map(|r| format!("{r}\n")).collect()
    }
}

type Blocks = Vec<DMatrix<f64>>;

/// Internal program with slack blocks appended and rows as equalities.
struct Std {
    blocks: Vec<usize>,
    c: Blocks,
    rows: Vec<Vec<(usize, DMatrix<f64>)>>,
    b: DVector<f64>,
}

impl Std {
    fn from_program(p: &ConeProgram) -> Self {
        let mut blocks = p.blocks.clone();
        let mut c = p.c.clone();
        let mut rows = Vec::with_capacity(p.constraints.len());
        for row in &p.constraints {
            let mut terms = row.terms.clone();
            if row.sense == Sense::Le {
                let k = blocks.len();
                blocks.push(1);
                c.push(DMatrix::zeros(1, 1));
                terms.push((k, DMatrix::from_element(1, 1, 1.0)));
            }
            rows.push(terms);
        }
        let b = DVector::from_iterator(p.constraints.len(), p.constraints.iter().map(|r| r.b));
        Self { blocks, c, rows, b }
    }

    fn apply(&self, x: &Blocks) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows
                .iter()
                .map(|terms| terms.iter().map(|(k, a)| a.dot(&x[*k])).sum::<f64>()),
        )
    }

    fn adjoint(&self, y: &DVector<f64>) -> Blocks {
        let mut out: Blocks = self.blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for (i, terms) in self.rows.iter().enumerate() {
            if y[i] == 0.0 {
                continue;
            }
            for (k, a) in terms {
                out[*k] += a * y[i];
            }
        }
        out
    }

    fn dim(&self) -> usize {
        self.blocks.iter().sum()
    }
}

fn dot(a: &Blocks, b: &Blocks) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn norm(a: &Blocks) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn identity_blocks(blocks: &[usize], scale: f64) -> Blocks {
    blocks
        .iter()
        .map(|&n| DMatrix::identity(n, n) * scale)
        .collect()
}

fn inverse_pd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Cholesky::new(m.clone())
        .map(|c| c.inverse())
        .ok_or_else(|| QmpError::Numerical("iterate lost positive definiteness".into()))
}

/// Largest `alpha` keeping `X + alpha dX ⪰ 0` (infinite if every direction is PSD).
fn max_step(x: &Blocks, dx: &Blocks) -> Result<f64> {
    let mut alpha = f64::INFINITY;
    for (xb, db) in x.iter().zip(dx) {
        let lam = if xb.nrows() == 1 {
            db[(0, 0)] / xb[(0, 0)]
        } else {
            let chol = Cholesky::new(xb.clone())
                .ok_or_else(|| QmpError::Numerical("iterate lost positive definiteness".into()))?;
            let l = chol.l();
            let t = l
                .solve_lower_triangular(db)
                .ok_or_else(|| QmpError::Numerical("triangular solve failed".into()))?;
            let w = l
                .solve_lower_triangular(&t.transpose())
                .ok_or_else(|| QmpError::Numerical("triangular solve failed".into()))?;
            let w = sym(w);
            w.symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min)
        };
        if lam < 0.0 {
            alpha = alpha.min(-1.0 / lam);
        }
    }
    Ok(alpha)
}

struct Direction {
    dx: Blocks,
    dy: DVector<f64>,
    ds: Blocks,
}

struct Newton<'a> {
    prob: &'a Std,
    x: &'a Blocks,
    sinv: Blocks,
    schur: SchurFactor,
    rp: DVector<f64>,
    rd: Blocks,
}

enum SchurFactor {
    Chol(Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl SchurFactor {
    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            SchurFactor::Chol(c) => Some(c.solve(rhs)),
            SchurFactor::Lu(lu) => lu.solve(rhs),
        }
    }
}

impl<'a> Newton<'a> {
    fn new(prob: &'a Std, x: &'a Blocks, s: &Blocks, y: &DVector<f64>) -> Result<Self> {
        let sinv: Blocks = s.iter().map(inverse_pd).collect::<Result<_>>()?;
        let m = prob.rows.len();
        // column j of the Schur matrix: <A_i, X A_j S^{-1}>
        let mut schur = DMatrix::zeros(m, m);
        let mut block_rows: Vec<Vec<(usize, &DMatrix<f64>)>> = vec![Vec::new(); prob.blocks.len()];
        for (i, terms) in prob.rows.iter().enumerate() {
            for (k, a) in terms {
                block_rows[*k].push((i, a));
            }
        }
        for (k, rows) in block_rows.iter().enumerate() {
            let xk = &x[k];
            let sk = &sinv[k];
            for &(j, aj) in rows {
                let t = xk * aj * sk;
                for &(i, ai) in rows {
                    if i <= j {
                        schur[(i, j)] += ai.dot(&t);
                    }
                }
            }
        }
        for j in 0..m {
            for i in 0..j {
                schur[(j, i)] = schur[(i, j)];
            }
        }
        let factor = match Cholesky::new(schur.clone()) {
            Some(c) => SchurFactor::Chol(c),
            None => {
                let reg = 1e-14 * schur.diagonal().amax().max(1.0);
                let mut shifted = schur.clone();
                for i in 0..m {
                    shifted[(i, i)] += reg;
                }
                match Cholesky::new(shifted) {
                    Some(c) => SchurFactor::Chol(c),
                    None => SchurFactor::Lu(schur.lu()),
                }
            }
        };

        let rp = &prob.b - prob.apply(x);
        let aty = prob.adjoint(y);
        let rd: Blocks = prob
            .c
            .iter()
            .zip(s)
            .zip(&aty)
            .map(|((c, s), a)| c - s - a)
            .collect();
        Ok(Self {
            prob,
            x,
            sinv,
            schur: factor,
            rp,
            rd,
        })
    }

    /// Solves with complementarity target `X + dX + X dS S^{-1} = g` where `g` is
    /// `sigma mu S^{-1} - X - correction`.
    fn direction(&self, g: &Blocks) -> Result<Direction> {
        let xrs: Blocks = self
            .x
            .iter()
            .zip(&self.rd)
            .zip(&self.sinv)
            .map(|((x, r), s)| x * r * s)
            .collect();
        let a_g = self.prob.apply(g);
        let a_xrs = self.prob.apply(&xrs);
        let rhs = &self.rp - a_g + a_xrs;
        let mut dy = self.solve_schur(&rhs)?;
        let mut dir = self.assemble(g, &dy);
        // refine against the exact primal row equations A(dX) = rp
        for _ in 0..2 {
            let res = &self.rp - self.prob.apply(&dir.dx);
            if res.norm() <= 1e-14 * (1.0 + self.rp.norm()) {
                break;
            }
            dy += self.solve_schur(&res)?;
            dir = self.assemble(g, &dy);
        }
        Ok(dir)
    }

    fn solve_schur(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let v = self
            .schur
            .solve(rhs)
            .ok_or_else(|| QmpError::Numerical("Schur complement system is singular".into()))?;
        if v.iter().all(|t| t.is_finite()) {
            Ok(v)
        } else {
            Err(QmpError::Numerical(
                "Schur complement solve produced non-finite values".into(),
            ))
        }
    }

    fn assemble(&self, g: &Blocks, dy: &DVector<f64>) -> Direction {
        let atdy = self.prob.adjoint(dy);
        let ds: Blocks = self.rd.iter().zip(&atdy).map(|(r, a)| sym(r - a)).collect();
        let dx: Blocks = g
            .iter()
            .zip(self.x)
            .zip(&ds)
            .zip(&self.sinv)
            .map(|(((g, x), d), s)| sym(g - x * d * s))
            .collect();
        Direction {
            dx,
            dy: dy.clone(),
            ds,
        }
    }
}

struct Best {
    score: f64,
    x: Blocks,
    s: Blocks,
    y: DVector<f64>,
    pres: f64,
    dres: f64,
    gap: f64,
}

/// Mehrotra predictor-corrector step with its primal and dual step lengths.
fn interior_step(
    prob: &Std,
    x: &Blocks,
    s: &Blocks,
    y: &DVector<f64>,
    mu: f64,
    dim: f64,
) -> Result<(Direction, f64, f64)> {
    let newton = Newton::new(prob, x, s, y)?;

    let g_aff: Blocks = x.iter().map(|xb| -xb.clone()).collect();
    let aff = newton.direction(&g_aff)?;
    let ap = (STEP_FRACTION * max_step(x, &aff.dx)?).min(1.0);
    let ad = (STEP_FRACTION * max_step(s, &aff.ds)?).min(1.0);
    let x_aff: Blocks = x.iter().zip(&aff.dx).map(|(a, d)| a + d * ap).collect();
    let s_aff: Blocks = s.iter().zip(&aff.ds).map(|(a, d)| a + d * ad).collect();
    let mu_aff = dot(&x_aff, &s_aff) / dim;
    let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

    let g: Blocks = (0..x.len())
        .map(|k| &newton.sinv[k] * (sigma * mu) - &x[k] - &aff.dx[k] * &aff.ds[k] * &newton.sinv[k])
        .collect();
    let dir = newton.direction(&g)?;
    let ap = (STEP_FRACTION * max_step(x, &dir.dx)?).min(1.0);
    let ad = (STEP_FRACTION * max_step(s, &dir.ds)?).min(1.0);
    Ok((dir, ap, ad))
}

/// Solves a cone program. Always returns the final iterate; `status` says whether
/// it met the tolerances.
pub fn solve_sdp(p: &ConeProgram, settings: &SdpSettings) -> Result<ConeSolution> {
    p.validate()?;
    if !(settings.tol > 0.0) {
        return Err(QmpError::Parameter(format!(
            "tolerance must be positive, got {}",
            settings.tol
        )));
    }
    let mut prob = Std::from_program(p);
    // normalised cost keeps the iterates identical under positive rescaling of C
    let cost_scale = match norm(&prob.c) {
        v if v > 0.0 => v,
        _ => 1.0,
    };
    for c in &mut prob.c {
        *c /= cost_scale;
    }
    let nuser = p.blocks.len();
    let dim = prob.dim() as f64;

    let bmax = prob.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tau = 1.0 + bmax;
    let cmax = prob.c.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    let amax = prob
        .rows
        .iter()
        .flat_map(|t| t.iter().map(|(_, a)| a.norm()))
        .fold(0.0f64, f64::max);
    let tau_d = 1.0 + cmax.max(amax);
    let mut x = identity_blocks(&prob.blocks, tau);
    let mut s = identity_blocks(&prob.blocks, tau_d);
    let mut y = DVector::zeros(prob.rows.len());

    let bnorm = prob.b.norm();
    let cnorm = norm(&prob.c);
    let mut trace = Vec::new();
    let mut status = ConeStatus::MaxIter;
    let mut certificate = None;
    let mut iterations = 0;
    let (mut pres, mut dres, mut gap);
    let (mut alpha_p, mut alpha_d) = (0.0, 0.0);
    let mut best: Option<Best> = None;

    loop {
        let rp = &prob.b - prob.apply(&x);
        let aty = prob.adjoint(&y);
        let rd: Blocks = prob
            .c
            .iter()
            .zip(&s)
            .zip(&aty)
            .map(|((c, s), a)| c - s - a)
            .collect();
        let pobj = dot(&prob.c, &x);
        let dobj = prob.b.dot(&y);
        let xs = dot(&x, &s);
        pres = rp.norm() / (1.0 + bnorm);
        dres = norm(&rd) / (1.0 + cnorm);
        gap = (pobj - dobj).abs().max(xs) / (1.0 + pobj.abs() + dobj.abs());
        let rec = IterRecord {
            iter: iterations,
            primal_residual: pres,
            dual_residual: dres,
            gap,
            primal_objective: pobj * cost_scale,
            dual_objective: dobj * cost_scale,
            alpha_primal: alpha_p,
            alpha_dual: alpha_d,
        };
        if settings.trace {
            trace.push(rec);
        }
        if pres <= settings.tol && dres <= settings.tol && gap <= settings.tol {
            status = ConeStatus::Optimal;
            break;
        }
        // primal infeasibility: y with -A^T y ⪰ 0 and b^T y > 0 dominates C
        if dobj > 0.0 && dres <= 1e-3 {
            let ratio = (cnorm + norm(&rd)) / dobj;
            if ratio < 1e-8 {
                status = ConeStatus::Infeasible;
                certificate = Some(ratio);
                break;
            }
        }
        let score = pres.max(dres).max(gap);
        if best.as_ref().is_none_or(|b: &Best| score < b.score) {
            best = Some(Best {
                score,
                x: x.clone(),
                s: s.clone(),
                y: y.clone(),
                pres,
                dres,
                gap,
            });
        }
        if iterations >= settings.max_iter {
            break;
        }
        iterations += 1;

        let mu = xs / dim;
        // a numerical breakdown near the boundary ends the run at the best iterate
        let Ok((dir, ap, ad)) = interior_step(&prob, &x, &s, &y, mu, dim) else {
            break;
        };
        if ap < 1e-12 && ad < 1e-12 {
            break;
        }
        alpha_p = ap;
        alpha_d = ad;
        for k in 0..x.len() {
            x[k] = sym(&x[k] + &dir.dx[k] * alpha_p);
            s[k] = sym(&s[k] + &dir.ds[k] * alpha_d);
        }
        y += &dir.dy * alpha_d;
    }
    if status == ConeStatus::MaxIter {
        if let Some(b) = best {
            (x, s, y, pres, dres, gap) = (b.x, b.s, b.y, b.pres, b.dres, b.gap);
        }
    }

    let objective = dot(&prob.c, &x) * cost_scale;
    let dual_objective = prob.b.dot(&y) * cost_scale;
    Ok(ConeSolution {
        status,
        z: x.into_iter().take(nuser).collect(),
        s: s.into_iter().take(nuser).map(|m| m * cost_scale).collect(),
        y: y.iter().map(|v| v * cost_scale).collect(),
        objective,
        dual_objective,
        primal_residual: pres,
        dual_residual: dres,
        gap,
        iterations,
        certificate,
        trace,
    })
}

/// A semidefinite program over one Hermitian matrix variable.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianProgram {
    pub objective: CMatrix,
    pub constraints: Vec<(CMatrix, f64, Sense)>,
}

/// Maps a real solution back to the Hermitian variable.
///
/// For Hermitian `M` with real embedding `M_r`, `Tr(M_r Z_r) = 2 Tr(M Z)`, so every
/// data matrix is embedded and halved; objective values and right-hand sides are
/// unchanged by the transformation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexMapping {
    pub n: usize,
    pub trace_factor: f64,
}

impl ComplexMapping {
    pub fn recover(&self, sol: &ConeSolution) -> Result<CMatrix> {
        matrix::real_sym_to_hermitian(&sol.z[0])
    }
}

pub fn complexify(p: &HermitianProgram) -> Result<(ConeProgram, ComplexMapping)> {
    let n = p.objective.rows();
    let embed = |m: &CMatrix| -> Result<DMatrix<f64>> {
        if m.shape() != (n, n) {
            return Err(QmpError::Dimension(format!(
                "expected {n}x{n}, got {:?}",
                m.shape()
            )));
        }
        Ok(matrix::hermitian_to_real_sym(m)? * 0.5)
    };
    let c = embed(&p.objective)?;
    let rows = p
        .constraints
        .iter()
        .map(|(a, b, sense)| Ok((embed(a)?, *b, *sense)))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        ConeProgram::dense(c, rows),
        ComplexMapping {
            n,
            trace_factor: 2.0,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate;
    use crate::matrix::{hermitian_eig, C64};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(m: usize, i: usize, j: usize) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(m, m);
        a[(i, j)] = 0.5;
        a[(j, i)] += 0.5;
        a
    }

    fn settings() -> SdpSettings {
        SdpSettings {
            trace: true,
            ..SdpSettings::default()
        }
    }

    #[test]
    fn trace_minimisation_with_pinned_corner() {
        let p = ConeProgram::dense(DMatrix::identity(2, 2), vec![(e(2, 0, 0), 1.0, Sense::Eq)]);
        let sol = solve_sdp(&p, &settings()).unwrap();
        assert_eq!(sol.status, ConeStatus::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-7);
        let want = e(2, 0, 0);
        assert!((&sol.z[0] - want).norm() < 1e-6);
    }

    #[test]
    fn spectrahedron_gives_min_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in [2, 3, 5] {
            let g = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
            let c = sym(g);
            let lam = c
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            let p = ConeProgram::dense(c, vec![(DMatrix::identity(m, m), 1.0, Sense::Eq)]);
            let sol = solve_sdp(&p, &settings()).unwrap();
            assert_eq!(sol.status, ConeStatus::Optimal);
            assert!(
                (sol.objective - lam).abs() < 1e-7,
                "m={m}: {} vs {lam}",
                sol.objective
            );
        }
    }

    /// Plants a strictly complementary pair: Z* = U diag(z,0) U^T, S* = U diag(0,s) U^T.
    fn planted(seed: u64, m: usize, rank: usize, rows: usize) -> (ConeProgram, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0))
            .qr()
            .q();
        let zd: Vec<f64> = (0..m)
            .map(|k| {
                if k < rank {
                    rng.random_range(0.5..2.0)
                } else {
                    0.0
                }
            })
            .collect();
        let sd: Vec<f64> = (0..m)
            .map(|k| {
                if k < rank {
                    0.0
                } else {
                    rng.random_range(0.5..2.0)
                }
            })
            .collect();
        let zstar = &q * DMatrix::from_diagonal(&DVector::from_vec(zd)) * q.transpose();
        let sstar = &q * DMatrix::from_diagonal(&DVector::from_vec(sd)) * q.transpose();
        let ystar: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<DMatrix<f64>> = (0..rows)
            .map(|_| sym(DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0))))
            .collect();
        let mut c = sstar.clone();
        for (ai, yi) in a.iter().zip(&ystar) {
            c += ai * *yi;
        }
        let obj = c.dot(&zstar);
        let cons = a.into_iter().map(|ai| {
            let b = ai.dot(&zstar);
            (ai, b, Sense::Eq)
        });
        (ConeProgram::dense(c, cons.collect()), obj)
    }

    #[test]
    fn recovers_planted_objective() {
        for seed in 0..10 {
            let (p, obj) = planted(seed, 6, 2, 8);
            let sol = solve_sdp(&p, &settings()).unwrap();
            assert_eq!(
                sol.status,
                ConeStatus::Optimal,
                "seed {seed}\n{}",
                sol.trace_lines()
            );
            assert!(
                (sol.objective - obj).abs() <= 1e-6 * obj.abs().max(1.0),
                "seed {seed}"
            );
            // weak duality and PSD of the returned primal
            assert!(sol.objective >= sol.dual_objective - 1e-8 * (1.0 + obj.abs()));
            let lmin = sol.z[0]
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            assert!(lmin >= -1e-7 * sol.z[0].norm());
        }
    }

    #[test]
    fn weak_duality_along_trace() {
        for seed in 10..20 {
            let (p, obj) = planted(seed, 5, 2, 7);
            let sol = solve_sdp(&p, &settings()).unwrap();
            let scale = 1.0 + obj.abs();
            for rec in &sol.trace {
                assert!(
                    rec.primal_objective >= rec.dual_objective - 1e-8 * scale,
                    "seed {seed}: {rec}"
                );
            }
        }
    }

    #[test]
    fn cost_scaling_leaves_argmin() {
        let (p, _) = planted(3, 5, 2, 6);
        let a = solve_sdp(&p, &settings()).unwrap();
        let b = solve_sdp(&p.scale_cost(7.5), &settings()).unwrap();
        assert!((&a.z[0] - &b.z[0]).norm() <= 1e-6 * a.z[0].norm().max(1.0));
        assert!((b.objective - 7.5 * a.objective).abs() <= 1e-6 * b.objective.abs().max(1.0));
    }

    #[test]
    fn deterministic() {
        let (p, _) = planted(4, 4, 1, 5);
        let a = solve_sdp(&p, &settings()).unwrap();
        let b = solve_sdp(&p, &settings()).unwrap();
        assert_eq!(a.z, b.z);
        assert_eq!(a.y, b.y);
        assert_eq!(a.trace_lines(), b.trace_lines());
    }

    #[test]
    fn inequality_rows_use_slacks() {
        // min -Z11 s.t. Z11 <= 2, Tr Z = 3  => objective -2
        let p = ConeProgram::dense(
            -e(2, 0, 0),
            vec![
                (e(2, 0, 0), 2.0, Sense::Le),
                (DMatrix::identity(2, 2), 3.0, Sense::Eq),
            ],
        );
        let sol = solve_sdp(&p, &settings()).unwrap();
        assert_eq!(sol.status, ConeStatus::Optimal);
        assert!((sol.objective + 2.0).abs() < 1e-7);
        assert!(sol.y[0] <= 1e-9);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // Tr Z = -1 with Z ⪰ 0 is impossible
        let p = ConeProgram::dense(
            DMatrix::identity(2, 2),
            vec![(DMatrix::identity(2, 2), -1.0, Sense::Eq)],
        );
        let sol = solve_sdp(&p, &settings()).unwrap();
        assert_eq!(sol.status, ConeStatus::Infeasible);
        assert!(sol.certificate.unwrap() < 1e-8);
    }

    #[test]
    fn hits_iteration_cap() {
        let (p, _) = planted(5, 5, 2, 6);
        let sol = solve_sdp(
            &p,
            &SdpSettings {
                max_iter: 2,
                ..SdpSettings::default()
            },
        )
        .unwrap();
        assert_eq!(sol.status, ConeStatus::MaxIter);
        assert_eq!(sol.iterations, 2);
    }

    #[test]
    fn rejects_invalid_programs() {
        let p = ConeProgram::dense(DMatrix::identity(2, 2), vec![]);
        assert!(solve_sdp(&p, &settings()).is_err());
        let mut bad = DMatrix::identity(2, 2);
        bad[(0, 1)] = 1.0;
        let p = ConeProgram::dense(bad, vec![(DMatrix::identity(2, 2), 1.0, Sense::Eq)]);
        assert!(matches!(
            solve_sdp(&p, &settings()),
            Err(QmpError::Validation(_))
        ));
        let p = ConeProgram::dense(
            DMatrix::identity(2, 2),
            vec![(DMatrix::identity(3, 3), 1.0, Sense::Eq)],
        );
        assert!(matches!(
            solve_sdp(&p, &settings()),
            Err(QmpError::Dimension(_))
        ));
    }

    #[test]
    fn multi_block_program() {
        // two independent spectrahedra; objective is the sum of minimum eigenvalues
        let c1 = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let c2 = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.5, 0.0, -1.0, 0.0, 0.5, 0.0, 2.0]);
        let want: f64 = [&c1, &c2]
            .iter()
            .map(|c| {
                c.symmetric_eigenvalues()
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        let p = ConeProgram {
            blocks: vec![2, 3],
            c: vec![c1, c2],
            constraints: vec![
                ConeConstraint {
                    terms: vec![(0, DMatrix::identity(2, 2))],
                    b: 1.0,
                    sense: Sense::Eq,
                },
                ConeConstraint {
                    terms: vec![(1, DMatrix::identity(3, 3))],
                    b: 1.0,
                    sense: Sense::Eq,
                },
            ],
        };
        let sol = solve_sdp(&p, &settings()).unwrap();
        assert_eq!(sol.status, ConeStatus::Optimal);
        assert!((sol.objective - want).abs() < 1e-7);
    }

    #[test]
    fn complexify_real_data_duplicates() {
        let c = CMatrix::from_real_rows(&[&[2.0, 1.0], &[1.0, 3.0]]);
        let hp = HermitianProgram {
            objective: c.clone(),
            constraints: vec![(CMatrix::identity(2), 1.0, Sense::Eq)],
        };
        let (cp, map) = complexify(&hp).unwrap();
        assert_eq!(map.trace_factor, 2.0);
        assert_eq!(cp.blocks, vec![4]);
        let sol = solve_sdp(&cp, &settings()).unwrap();
        let z = map.recover(&sol).unwrap();
        let real = solve_sdp(
            &ConeProgram::dense(
                DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]),
                vec![(DMatrix::identity(2, 2), 1.0, Sense::Eq)],
            ),
            &settings(),
        )
        .unwrap();
        assert!((sol.objective - real.objective).abs() < 1e-7);
        assert!((&z - &CMatrix::from_real(&real.z[0])).fro_norm() < 1e-5);
    }

    #[test]
    fn complexify_scalar() {
        let hp = HermitianProgram {
            objective: CMatrix::scalar(C64::new(3.0, 0.0)),
            constraints: vec![(CMatrix::scalar(C64::new(1.0, 0.0)), 2.0, Sense::Eq)],
        };
        let (cp, map) = complexify(&hp).unwrap();
        let sol = solve_sdp(&cp, &settings()).unwrap();
        assert!((sol.objective - 6.0).abs() < 1e-7);
        assert!((map.recover(&sol).unwrap()[(0, 0)].re - 2.0).abs() < 1e-7);
    }

    #[test]
    fn complexify_round_trip_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..5 {
            let n = 3;
            let c = generate::hermitian(n, &mut rng);
            let a = generate::pd(n, 0.5, &mut rng);
            let hp = HermitianProgram {
                objective: c.clone(),
                constraints: vec![(a.clone(), 1.0, Sense::Eq)],
            };
            let (cp, map) = complexify(&hp).unwrap();
            let sol = solve_sdp(&cp, &settings()).unwrap();
            assert_eq!(sol.status, ConeStatus::Optimal);
            let z = map.recover(&sol).unwrap();
            let direct = c.trace_of_product(&z);
            assert!(direct.im.abs() < 1e-12);
            assert!((direct.re - sol.objective).abs() < 1e-8 * (1.0 + direct.re.abs()));
            // generalized eigenvalue check: min Tr(CZ) s.t. Tr(AZ) = 1 is λ_min(A^{-1/2} C A^{-1/2})
            let t = matrix::pd_inv_sqrt(&a).unwrap();
            let lam = hermitian_eig(&t.matmul(&c).matmul(&t).hermitian_part())
                .unwrap()
                .min();
            assert!((sol.objective - lam).abs() < 1e-6);
        }
        let bad = HermitianProgram {
            objective: CMatrix::from_real_rows(&[&[0.0, 1.0], &[0.0, 0.0]]),
            constraints: vec![(CMatrix::identity(2), 1.0, Sense::Eq)],
        };
        assert!(matches!(complexify(&bad), Err(QmpError::Validation(_))));
    }
}
