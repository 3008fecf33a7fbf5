//! Solver façade: classifies a problem, compiles it to a closed form or a cone
//! program, and maps the cone solution back to a matrix `X`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::closed::{self, SingleConstraintInstance};
use crate::conic::{
    self, ConeConstraint, ConeProgram, ConeSolution, ConeStatus, HermitianProgram, IterRecord,
    SdpSettings, Sense,
};
use crate::error::{QmpError, Result};
use crate::matrix::{self, hermitian_eig, CMatrix, C64};
use crate::model::{self, classify, ClassTag, QMFunction, QMPProblem};
use crate::polish::kkt_polish;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolvePath {
    ClosedForm,
    Bisection,
    ConvexSdp,
    ConvexSocp,
    SdrGeneral,
    HomogenizedT2,
}

impl SolvePath {
    pub const ALL: [SolvePath; 6] = [
        SolvePath::ClosedForm,
        SolvePath::Bisection,
        SolvePath::ConvexSdp,
        SolvePath::ConvexSocp,
        SolvePath::SdrGeneral,
        SolvePath::HomogenizedT2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolvePath::ClosedForm => "CLOSED_FORM",
            SolvePath::Bisection => "BISECTION",
            SolvePath::ConvexSdp => "CONVEX_SDP",
            SolvePath::ConvexSocp => "CONVEX_SOCP",
            SolvePath::SdrGeneral => "SDR_GENERAL",
            SolvePath::HomogenizedT2 => "HOMOGENIZED_T2",
        }
    }
}

impl fmt::Display for SolvePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolvePath {
    type Err = QmpError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| QmpError::Parameter(format!("unknown solve path '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvexMethod {
    Schur,
    Socp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    /// Interior-point and bisection tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub convex: ConvexMethod,
    /// Forces a path instead of dispatching on the problem class.
    pub path: Option<SolvePath>,
    /// Relative constraint violation accepted after recovery.
    pub feasibility_tol: f64,
    pub trace: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: conic::DEFAULT_MAX_ITER,
            convex: ConvexMethod::Schur,
            path: None,
            feasibility_tol: 1e-6,
            trace: false,
        }
    }
}

impl Settings {
    pub fn with_path(path: SolvePath) -> Self {
        Self {
            path: Some(path),
            ..Self::default()
        }
    }

    fn sdp(&self) -> SdpSettings {
        SdpSettings {
            tol: self.tol,
            max_iter: self.max_iter,
            trace: self.trace,
        }
    }
}

/// Summary of the interior-point run behind a relaxation path.
#[derive(Debug, Clone)]
pub struct ConeReport {
    pub status: ConeStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub trace: Vec<IterRecord>,
}

impl From<&ConeSolution> for ConeReport {
    fn from(s: &ConeSolution) -> Self {
        Self {
            status: s.status,
            iterations: s.iterations,
            primal_residual: s.primal_residual,
            dual_residual: s.dual_residual,
            gap: s.gap,
            trace: s.trace.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QMPSolution {
    pub x: CMatrix,
    /// `evaluate(objective, x)`.
    pub objective: f64,
    pub path: SolvePath,
    /// Optimal value of the relaxation or convex reformulation, when one was solved.
    pub lower_bound: Option<f64>,
    pub feasibility_violation: f64,
    pub recovery_rank_gap: f64,
    pub cone: Option<ConeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub path: SolvePath,
    pub objective: f64,
    pub lower_bound: Option<f64>,
    pub recovery_rank_gap: f64,
    pub feasibility_violation: f64,
    pub iterations: Option<usize>,
    pub primal_residual: Option<f64>,
    pub dual_residual: Option<f64>,
    pub gap: Option<f64>,
}

impl QMPSolution {
    pub fn diagnostic(&self) -> Diagnostic {
        Diagnostic {
            path: self.path,
            objective: self.objective,
            lower_bound: self.lower_bound,
            recovery_rank_gap: self.recovery_rank_gap,
            feasibility_violation: self.feasibility_violation,
            iterations: self.cone.as_ref().map(|c| c.iterations),
            primal_residual: self.cone.as_ref().map(|c| c.primal_residual),
            dual_residual: self.cone.as_ref().map(|c| c.dual_residual),
            gap: self.cone.as_ref().map(|c| c.gap),
        }
    }

    pub fn diagnostic_json(&self) -> String {
        serde_json::to_string(&self.diagnostic()).expect("diagnostic serializes")
    }
}

/// Path chosen by dispatch when no override is given.
pub fn default_path(p: &QMPProblem, convex: ConvexMethod) -> SolvePath {
    let class = classify(p);
    match class.tag {
        ClassTag::Unconstrained => SolvePath::ClosedForm,
        ClassTag::SingleTraceConstraint => SolvePath::Bisection,
        ClassTag::Convex => match convex {
            ConvexMethod::Schur => SolvePath::ConvexSdp,
            ConvexMethod::Socp => SolvePath::ConvexSocp,
        },
        ClassTag::General if class.type2 => SolvePath::HomogenizedT2,
        ClassTag::General => SolvePath::SdrGeneral,
    }
}

/// Every path whose preconditions `p` meets.
pub fn applicable_paths(p: &QMPProblem) -> Vec<SolvePath> {
    let mut out = Vec::new();
    let f = &p.objective;
    if p.constraint_count() == 0 && matrix::is_pd(&f.a) && (f.is_type2() || matrix::is_pd(&f.d)) {
        out.push(SolvePath::ClosedForm);
    }
    if SingleConstraintInstance::from_problem(p).is_ok() {
        out.push(SolvePath::Bisection);
    }
    let convex_part = || std::iter::once(&p.objective).chain(&p.inequalities);
    if p.equalities.is_empty()
        && convex_part().all(|f| matrix::is_psd(&f.a) && matrix::is_psd(&f.d))
    {
        out.push(SolvePath::ConvexSdp);
        if convex_part().all(|f| matrix::is_pd(&f.a) && matrix::is_pd(&f.d)) {
            out.push(SolvePath::ConvexSocp);
        }
    }
    out.push(SolvePath::SdrGeneral);
    if p.functions().all(QMFunction::is_type2) {
        out.push(SolvePath::HomogenizedT2);
    }
    out
}

pub fn solve(p: &QMPProblem, settings: &Settings) -> Result<QMPSolution> {
    let issues = model::validate(p);
    if !issues.is_empty() {
        let text: Vec<String> = issues.iter().map(ToString::to_string).collect();
        return Err(QmpError::Validation(text.join("; ")));
    }
    if !(settings.tol > 0.0) {
        return Err(QmpError::Parameter(format!(
            "tolerance must be positive, got {}",
            settings.tol
        )));
    }
    let path = settings
        .path
        .unwrap_or_else(|| default_path(p, settings.convex));
    match path {
        SolvePath::ClosedForm => {
            let x = solve_closed_form(p)?;
            finish(p, x, path, None, 0.0, None, settings)
        }
        SolvePath::Bisection => {
            let inst = SingleConstraintInstance::from_problem(p)?;
            let (x, _) = closed::solve_single_constraint(&inst, settings.tol)?;
            finish(p, x, path, None, 0.0, None, settings)
        }
        SolvePath::ConvexSdp => {
            let (cp, map) = build_convex_schur(p)?;
            let sol = run_cone(&cp, settings)?;
            let bound = map.bound(&sol);
            let x = choose(p, vec![map.recover(&sol)?], None, settings)
                .map_err(|e| with_bound(e, bound))?;
            finish(p, x, path, Some(bound), 0.0, Some((&sol).into()), settings)
        }
        SolvePath::ConvexSocp => {
            let (cp, map) = build_convex_socp(p)?;
            let sol = run_cone(&cp, settings)?;
            let bound = map.bound(&sol);
            let x = choose(p, vec![map.recover(&sol)?], None, settings)
                .map_err(|e| with_bound(e, bound))?;
            finish(p, x, path, Some(bound), 0.0, Some((&sol).into()), settings)
        }
        SolvePath::SdrGeneral => {
            let hp = build_sdr(p);
            let (cp, cmap) = conic::complexify(&hp)?;
            let sol = run_cone(&cp, settings)?;
            let z = cmap.recover(&sol)?;
            let bound = sol.dual_objective;
            let (x, gap) = match recover_rank1(&z, p.n, p.r) {
                Ok(v) => v,
                Err(_) => {
                    return Err(QmpError::Recovery {
                        bound,
                        violation: f64::INFINITY,
                    })
                }
            };
            let x = choose(p, vec![x], Some(row_multipliers(p, &sol)), settings)
                .map_err(|e| with_bound(e, bound))?;
            finish(p, x, path, Some(bound), gap, Some((&sol).into()), settings)
        }
        SolvePath::HomogenizedT2 => solve_homogenized_t2(p, settings),
    }
}

fn finish(
    p: &QMPProblem,
    x: CMatrix,
    path: SolvePath,
    lower_bound: Option<f64>,
    recovery_rank_gap: f64,
    cone: Option<ConeReport>,
    settings: &Settings,
) -> Result<QMPSolution> {
    let objective = p.objective.evaluate(&x)?;
    let violation = p.violation(&x)?;
    if violation > settings.feasibility_tol * p.scale() {
        return Err(QmpError::Recovery {
            bound: lower_bound.unwrap_or(objective),
            violation,
        });
    }
    Ok(QMPSolution {
        x,
        objective,
        path,
        lower_bound,
        feasibility_violation: violation,
        recovery_rank_gap,
        cone,
    })
}

fn with_bound(e: QmpError, bound: f64) -> QmpError {
    match e {
        QmpError::Recovery { violation, .. } => QmpError::Recovery { bound, violation },
        other => other,
    }
}

fn run_cone(cp: &ConeProgram, settings: &Settings) -> Result<ConeSolution> {
    let sol = conic::solve_sdp(cp, &settings.sdp())?;
    match sol.status {
        ConeStatus::Optimal => Ok(sol),
        ConeStatus::Infeasible => Err(QmpError::Infeasible {
            certificate: sol.certificate.unwrap_or(0.0),
        }),
        ConeStatus::MaxIter => {
            let worst = sol.primal_residual.max(sol.dual_residual).max(sol.gap);
            if worst <= 1e3 * settings.tol {
                Ok(sol)
            } else {
                Err(QmpError::Numerical(format!(
                    "interior-point method stopped after {} iterations with residual {worst:e}",
                    sol.iterations
                )))
            }
        }
    }
}

/// Stationary point `A0 X D0 + B0 = 0` of an unconstrained problem.
fn solve_closed_form(p: &QMPProblem) -> Result<CMatrix> {
    if p.constraint_count() != 0 {
        return Err(QmpError::Classification(
            "closed form needs an unconstrained problem".into(),
        ));
    }
    let f = &p.objective;
    if f.is_type2() {
        closed::solve_unconstrained(&f.a, &f.b)
    } else {
        let d_inv = matrix::pd_inverse(&f.d)?;
        closed::solve_unconstrained(&f.a, &f.b.matmul(&d_inv))
    }
}

/// Lifted relaxation over `Z = [vec X; 1][vec X; 1]^H` with the corner pinned to 1.
pub fn build_sdr(p: &QMPProblem) -> HermitianProgram {
    let nr = p.n * p.r;
    let mut corner = CMatrix::zeros(nr + 1, nr + 1);
    corner[(nr, nr)] = C64::new(1.0, 0.0);
    let mut constraints: Vec<(CMatrix, f64, Sense)> = p
        .inequalities
        .iter()
        .map(|f| (model::vectorize_omega(f), 0.0, Sense::Le))
        .collect();
    constraints.extend(
        p.equalities
            .iter()
            .map(|f| (model::vectorize_omega(f), 0.0, Sense::Eq)),
    );
    constraints.push((corner, 1.0, Sense::Eq));
    HermitianProgram {
        objective: model::vectorize_omega(&p.objective),
        constraints,
    }
}

/// Rank-one extraction from a lifted matrix. Returns `X` and `λ2/λ1`.
///
/// Ties in the leading eigenvalue are broken by taking the unit vector of the
/// leading eigenspace with the largest last entry.
pub fn recover_rank1(z: &CMatrix, n: usize, r: usize) -> Result<(CMatrix, f64)> {
    let dim = n * r + 1;
    if z.shape() != (dim, dim) {
        return Err(QmpError::Dimension(format!(
            "lifted matrix is {:?}, expected {dim}x{dim}",
            z.shape()
        )));
    }
    let corner = z[(dim - 1, dim - 1)];
    if (corner.re - 1.0).abs() > 1e-6 || corner.im.abs() > 1e-6 {
        return Err(QmpError::Precondition(format!(
            "corner entry is {corner}, expected 1"
        )));
    }
    let eig = hermitian_eig(&z.hermitian_part())?;
    let top = eig.values[0];
    let tie = 1e-8 * top.abs().max(f64::MIN_POSITIVE);
    let tied: Vec<usize> = (0..dim).filter(|&k| top - eig.values[k] <= tie).collect();
    // projection of the last basis vector onto the tied eigenspace
    let mut v = CMatrix::zeros(dim, 1);
    for &k in &tied {
        let col = eig.vectors.col(k);
        let w = col[(dim - 1, 0)].conj();
        v += &col.scale_c(w);
    }
    let norm = v.fro_norm();
    let v = if norm > 0.0 {
        v.scale(1.0 / norm)
    } else {
        eig.vectors.col(0)
    };
    let last = v[(dim - 1, 0)];
    if last.norm() < 1e-8 {
        return Err(QmpError::Recovery {
            bound: f64::NAN,
            violation: f64::INFINITY,
        });
    }
    let scaled = v.scale_c(C64::new(1.0, 0.0) / last);
    let head = CMatrix::from_fn(dim - 1, 1, |i, _| scaled[(i, 0)]);
    let x = matrix::unvec(&head, n, r)?;
    let second = eig.values.get(tied.len()).copied().unwrap_or(0.0);
    let gap = if tied.len() > 1 {
        1.0
    } else if top > 0.0 {
        (second / top).max(0.0)
    } else {
        0.0
    };
    Ok((x, gap))
}

/// Real form of `vec(A^{1/2} X D^{1/2})` as a map on the embedded `vec X`, plus
/// the embedded `vec B`.
fn real_quadratic_factor(f: &QMFunction) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let a_half = matrix::psd_sqrt(&f.a).map_err(|_| {
        QmpError::Classification("quadratic term A is not positive semidefinite".into())
    })?;
    let d_half = matrix::psd_sqrt(&f.d)
        .map_err(|_| QmpError::Classification("weight D is not positive semidefinite".into()))?;
    let lift = matrix::kron(&d_half.transpose(), &a_half);
    let b = matrix::real_embed_vector(matrix::vec(&f.b).as_slice());
    Ok((matrix::complex_to_real_block(&lift), DVector::from_vec(b)))
}

/// Maps a dual-form cone solution (free variables `[embedded vec X; t]`) back.
#[derive(Debug, Clone)]
pub struct VariableMap {
    pub n: usize,
    pub r: usize,
    /// Value added to the squared epigraph (SOCP) or to `t` (Schur) to get the bound.
    pub constant: f64,
    pub squared: bool,
}

impl VariableMap {
    pub fn recover(&self, sol: &ConeSolution) -> Result<CMatrix> {
        let nr = self.n * self.r;
        let v = matrix::complex_from_embedded(&sol.y[..2 * nr])?;
        matrix::unvec(&CMatrix::column(&v), self.n, self.r)
    }

    pub fn epigraph(&self, sol: &ConeSolution) -> f64 {
        sol.y[sol.y.len() - 1]
    }

    /// Lower bound from the primal side of the cone pair (`-<C, Z> <= t`).
    pub fn bound(&self, sol: &ConeSolution) -> f64 {
        let t = -sol.objective;
        if self.squared {
            t.max(0.0).powi(2) + self.constant
        } else {
            t + self.constant
        }
    }
}

/// Assembles `max -t s.t. LMI_k(x, t) ⪰ 0` from per-block affine pieces
/// `F0_k + Σ_j y_j F_jk`.
fn dual_form(blocks: Vec<(DMatrix<f64>, Vec<DMatrix<f64>>)>, vars: usize) -> ConeProgram {
    let sizes = blocks.iter().map(|(f0, _)| f0.nrows()).collect();
    let c = blocks.iter().map(|(f0, _)| f0.clone()).collect();
    let constraints = (0..vars)
        .map(|j| {
            let terms = blocks
                .iter()
                .enumerate()
                .filter(|(_, (_, fj))| fj[j].iter().any(|v| *v != 0.0))
                .map(|(k, (_, fj))| (k, -&fj[j]))
                .collect();
            let b = if j + 1 == vars { -1.0 } else { 0.0 };
            ConeConstraint {
                terms,
                b,
                sense: Sense::Eq,
            }
        })
        .collect();
    ConeProgram {
        blocks: sizes,
        c,
        constraints,
    }
}

fn check_convex(p: &QMPProblem) -> Result<()> {
    if !p.equalities.is_empty() {
        return Err(QmpError::Classification(
            "convex reformulations do not accept equality constraints".into(),
        ));
    }
    Ok(())
}

/// Schur-complement LMI per function:
/// `[[I, L x], [(L x)^T, -2 b^T x - c (+ t)]] ⪰ 0`.
pub fn build_convex_schur(p: &QMPProblem) -> Result<(ConeProgram, VariableMap)> {
    check_convex(p)?;
    let nx = 2 * p.n * p.r;
    let vars = nx + 1;
    let mut blocks = Vec::new();
    for (idx, f) in std::iter::once(&p.objective)
        .chain(&p.inequalities)
        .enumerate()
    {
        let (lift, b) = real_quadratic_factor(f)?;
        let k = lift.nrows();
        let size = k + 1;
        let mut f0 = DMatrix::zeros(size, size);
        f0.view_mut((0, 0), (k, k)).fill_with_identity();
        f0[(k, k)] = -f.c;
        let mut fj = vec![DMatrix::zeros(size, size); vars];
        for j in 0..nx {
            let m = &mut fj[j];
            for i in 0..k {
                m[(i, k)] = lift[(i, j)];
                m[(k, i)] = lift[(i, j)];
            }
            m[(k, k)] = -2.0 * b[j];
        }
        if idx == 0 {
            fj[nx][(k, k)] = 1.0;
        }
        blocks.push((f0, fj));
    }
    Ok((
        dual_form(blocks, vars),
        VariableMap {
            n: p.n,
            r: p.r,
            constant: 0.0,
            squared: false,
        },
    ))
}

/// Completed-square second-order cone form, embedded as arrow matrices
/// `[[s I, w], [w^T, s]] ⪰ 0`.
pub fn build_convex_socp(p: &QMPProblem) -> Result<(ConeProgram, VariableMap)> {
    check_convex(p)?;
    let nx = 2 * p.n * p.r;
    let vars = nx + 1;
    let mut blocks = Vec::new();
    let mut constant = 0.0;
    for (idx, f) in std::iter::once(&p.objective)
        .chain(&p.inequalities)
        .enumerate()
    {
        if !matrix::is_pd(&f.a) || !matrix::is_pd(&f.d) {
            return Err(QmpError::Precondition(format!(
                "second-order cone form needs positive definite A and D (function {idx})"
            )));
        }
        let a_inv = matrix::pd_inverse(&f.a)?;
        let d_inv = matrix::pd_inverse(&f.d)?;
        let a_inv_half = matrix::pd_inv_sqrt(&f.a)?;
        let d_inv_half = matrix::pd_inv_sqrt(&f.d)?;
        let shift = a_inv_half.matmul(&f.b).matmul(&d_inv_half);
        let completed = a_inv
            .matmul(&f.b)
            .matmul(&d_inv)
            .matmul(&f.b.adjoint())
            .trace()
            .re
            - f.c;
        let (lift, _) = real_quadratic_factor(f)?;
        let g = matrix::real_embed_vector(matrix::vec(&shift).as_slice());
        let k = lift.nrows();
        let size = k + 1;
        let mut f0 = DMatrix::zeros(size, size);
        for i in 0..k {
            f0[(i, k)] = g[i];
            f0[(k, i)] = g[i];
        }
        let mut fj = vec![DMatrix::zeros(size, size); vars];
        if idx == 0 {
            constant = -completed;
            fj[nx].fill_with_identity();
        } else {
            if completed < 0.0 {
                return Err(QmpError::Infeasible {
                    certificate: completed,
                });
            }
            let radius = completed.sqrt();
            for i in 0..size {
                f0[(i, i)] = radius;
            }
        }
        for j in 0..nx {
            let m = &mut fj[j];
            for i in 0..k {
                m[(i, k)] = lift[(i, j)];
                m[(k, i)] = lift[(i, j)];
            }
        }
        blocks.push((f0, fj));
    }
    Ok((
        dual_form(blocks, vars),
        VariableMap {
            n: p.n,
            r: p.r,
            constant,
            squared: true,
        },
    ))
}

/// Relaxation over `U = [Y; Z][Y; Z]^H` with the lower-right `r x r` block fixed
/// to the identity.
pub fn build_homogenized(p: &QMPProblem) -> Result<HermitianProgram> {
    let h = model::homogenize(p)?;
    let (n, r) = (h.n, h.r);
    let dim = n + r;
    let mut constraints: Vec<(CMatrix, f64, Sense)> = h
        .inequalities
        .into_iter()
        .map(|m| (m, 0.0, Sense::Le))
        .collect();
    constraints.extend(h.equalities.into_iter().map(|m| (m, 0.0, Sense::Eq)));
    for a in 0..r {
        for b in a..r {
            let (i, j) = (n + a, n + b);
            if a == b {
                let mut e = CMatrix::zeros(dim, dim);
                e[(i, i)] = C64::new(1.0, 0.0);
                constraints.push((e, 1.0, Sense::Eq));
            } else {
                let mut re = CMatrix::zeros(dim, dim);
                re[(i, j)] = C64::new(0.5, 0.0);
                re[(j, i)] = C64::new(0.5, 0.0);
                constraints.push((re, 0.0, Sense::Eq));
                let mut im = CMatrix::zeros(dim, dim);
                im[(i, j)] = C64::new(0.0, 0.5);
                im[(j, i)] = C64::new(0.0, -0.5);
                constraints.push((im, 0.0, Sense::Eq));
            }
        }
    }
    Ok(HermitianProgram {
        objective: h.objective,
        constraints,
    })
}

pub fn solve_homogenized_t2(p: &QMPProblem, settings: &Settings) -> Result<QMPSolution> {
    let hp = build_homogenized(p)?;
    let (cp, cmap) = conic::complexify(&hp)?;
    let sol = run_cone(&cp, settings)?;
    let u = cmap.recover(&sol)?;
    let bound = sol.dual_objective;
    let eig = hermitian_eig(&u.hermitian_part())?;
    let rank_gap = if eig.values[0] > 0.0 {
        (eig.values.get(p.r).copied().unwrap_or(0.0) / eig.values[0]).max(0.0)
    } else {
        0.0
    };

    let mut candidates = vec![u.submatrix(0, p.n, p.n, p.r)];
    if let Some(x) = factor_recovery(&u, &eig, p.n, p.r) {
        candidates.push(x);
    }
    let mut extra = Vec::new();
    for x in &candidates {
        if let Some(s) = power_scaling(p, x)? {
            if s < 1.0 {
                extra.push(x.scale(s));
            }
        }
    }
    candidates.extend(extra);
    let x = choose(p, candidates, Some(row_multipliers(p, &sol)), settings)
        .map_err(|e| with_bound(e, bound))?;
    finish(
        p,
        x,
        SolvePath::HomogenizedT2,
        Some(bound),
        rank_gap,
        Some((&sol).into()),
        settings,
    )
}

/// Picks the recovered point: every candidate is refined by [`kkt_polish`], and
/// the lowest objective wins among points that are feasible to rounding, falling
/// back to points within the feasibility tolerance.
fn choose(
    p: &QMPProblem,
    mut candidates: Vec<CMatrix>,
    multipliers: Option<Vec<f64>>,
    settings: &Settings,
) -> Result<CMatrix> {
    let tol = settings.feasibility_tol * p.scale();
    let strict = 1e-9 * p.scale();
    if let Some(mu) = &multipliers {
        if let Some(x) = lagrangian_stationary_point(p, mu) {
            candidates.push(x);
        }
    }
    let polished: Vec<CMatrix> = candidates
        .iter()
        .filter_map(|x| kkt_polish(p, x, multipliers.as_deref()))
        .map(|o| o.x)
        .collect();
    candidates.extend(polished);

    let mut strict_best: Option<(f64, CMatrix)> = None;
    let mut loose_best: Option<(f64, CMatrix)> = None;
    let mut least_violation = f64::INFINITY;
    for x in candidates {
        let v = p.violation(&x)?;
        least_violation = least_violation.min(v);
        let slot = if v <= strict {
            &mut strict_best
        } else if v <= tol {
            &mut loose_best
        } else {
            continue;
        };
        let obj = p.objective.evaluate(&x)?;
        if slot.as_ref().is_none_or(|(o, _)| obj < *o) {
            *slot = Some((obj, x));
        }
    }
    strict_best
        .or(loose_best)
        .map(|(_, x)| x)
        .ok_or(QmpError::Recovery {
            bound: f64::NAN,
            violation: least_violation,
        })
}

/// Multipliers of the leading constraint rows (inequalities, then equalities).
fn row_multipliers(p: &QMPProblem, sol: &ConeSolution) -> Vec<f64> {
    sol.y[..p.constraint_count()].iter().map(|y| -y).collect()
}

/// Solves `Σ_l w_l A_l X D_l = -Σ_l w_l B_l` with `w_0 = 1` and the remaining
/// weights given by the constraint multipliers.
fn lagrangian_stationary_point(p: &QMPProblem, multipliers: &[f64]) -> Option<CMatrix> {
    let weights = std::iter::once(1.0).chain(multipliers.iter().copied());
    let nr = p.n * p.r;
    let mut hess = CMatrix::zeros(nr, nr);
    let mut lin = CMatrix::zeros(p.n, p.r);
    for (w, f) in weights.zip(p.functions()) {
        if w == 0.0 {
            continue;
        }
        hess += &matrix::kron(&f.d.transpose(), &f.a).scale(w);
        lin += &f.b.scale(w);
    }
    let v = hess.solve(&matrix::vec(&lin)).ok()?;
    let x = matrix::unvec(&v.scale(-1.0), p.n, p.r).ok()?;
    x.is_finite().then_some(x)
}

/// Leading-`r` factor `U ≈ F F^H`, `F = [Y; Z]`, with `Z` replaced by its unitary
/// polar factor.
fn factor_recovery(u: &CMatrix, eig: &matrix::HermitianEig, n: usize, r: usize) -> Option<CMatrix> {
    let f = CMatrix::from_fn(n + r, r, |i, k| {
        eig.vectors[(i, k)] * eig.values[k].max(0.0).sqrt()
    });
    let y = f.submatrix(0, 0, n, r);
    let z = f.submatrix(n, 0, r, r);
    let gram = z.adjoint_mul(&z).hermitian_part();
    let inv_half = matrix::pd_inv_sqrt(&gram).ok()?;
    let q = z.matmul(&inv_half);
    let x = y.matmul(&q.adjoint());
    (x.is_finite() && u.is_finite()).then_some(x)
}

/// Largest `s ∈ (0, 1]` with `s X` feasible, for problems whose constraints are
/// all inequalities without a linear term.
fn power_scaling(p: &QMPProblem, x: &CMatrix) -> Result<Option<f64>> {
    if !p.equalities.is_empty() || p.inequalities.iter().any(|f| f.b.max_abs() > 0.0) {
        return Ok(None);
    }
    let mut s: f64 = 1.0;
    for f in &p.inequalities {
        let quad = f.evaluate(x)? - f.c;
        if quad > 0.0 {
            if f.c > 0.0 {
                return Ok(None);
            }
            s = s.min((-f.c / quad).sqrt());
        } else if f.c > 0.0 {
            return Ok(None);
        }
    }
    Ok((s > 0.0).then_some(s))
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

    #[test]
    fn path_names_round_trip() {
        for p in SolvePath::ALL {
            assert_eq!(p.name().parse::<SolvePath>().unwrap(), p);
        }
        assert_eq!(
            "homogenized-t2".parse::<SolvePath>().unwrap(),
            SolvePath::HomogenizedT2
        );
        assert!("fastest".parse::<SolvePath>().is_err());
    }

    #[test]
    fn equality_constrained_scalar() {
        // (x - 2)^2 subject to x^2 = 1
        let obj = QMFunction::type2(re(1.0), re(-2.0), 4.0);
        let eq = QMFunction::type2(re(1.0), re(0.0), -1.0);
        let p = QMPProblem::new(obj, vec![], vec![eq]).unwrap();
        for path in [SolvePath::SdrGeneral, SolvePath::HomogenizedT2] {
            let s = solve(&p, &Settings::with_path(path)).unwrap();
            assert!(
                (s.x[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-5,
                "{path}: {:?}",
                s.x
            );
            assert!((s.objective - 1.0).abs() < 1e-6);
        }
        assert_eq!(
            default_path(&p, ConvexMethod::Schur),
            SolvePath::HomogenizedT2
        );
    }

    #[test]
    fn dispatch_follows_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let unc = QMPProblem::unconstrained(generate::type2_objective(3, 2, &mut rng));
        let s = solve(&unc, &Settings::default()).unwrap();
        assert_eq!(s.path, SolvePath::ClosedForm);
        let x = closed::solve_unconstrained(&unc.objective.a, &unc.objective.b).unwrap();
        assert_eq!(s.x, x);
        let single = generate::single_constraint_problem(3, 2, &mut rng);
        assert_eq!(
            solve(&single, &Settings::default()).unwrap().path,
            SolvePath::Bisection
        );
        let convex = generate::convex_problem(2, 2, 2, false, &mut rng);
        assert_eq!(
            solve(&convex, &Settings::default()).unwrap().path,
            SolvePath::ConvexSdp
        );
        let socp = Settings {
            convex: ConvexMethod::Socp,
            ..Settings::default()
        };
        assert_eq!(solve(&convex, &socp).unwrap().path, SolvePath::ConvexSocp);
    }

    #[test]
    fn rank1_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = CMatrix::random_cn(3, 2, &mut rng);
        let z = CMatrix::vstack(&[&matrix::vec(&x), &re(1.0)]).unwrap();
        let lifted = z.mul_adjoint(&z);
        let (got, gap) = recover_rank1(&lifted, 3, 2).unwrap();
        assert!((&got - &x).max_abs() < 1e-9);
        assert!(gap < 1e-12);
    }

    #[test]
    fn rank1_tie_prefers_last_entry() {
        let (x, gap) = recover_rank1(&CMatrix::identity(2), 1, 1).unwrap();
        assert_eq!(x[(0, 0)], C64::new(0.0, 0.0));
        assert_eq!(gap, 1.0);
    }

    #[test]
    fn rank1_near_planted() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = CMatrix::random_cn(2, 2, &mut rng);
        let z = CMatrix::vstack(&[&matrix::vec(&x), &re(1.0)]).unwrap();
        let mut noise = generate::hermitian(5, &mut rng).scale(1e-6);
        noise[(4, 4)] = C64::new(0.0, 0.0);
        let lifted = &z.mul_adjoint(&z) + &noise;
        let (got, _) = recover_rank1(&lifted, 2, 2).unwrap();
        assert!((&got - &x).max_abs() < 1e-4);
    }

    #[test]
    fn rank1_rejects_bad_corner() {
        let z = CMatrix::from_real_diag(&[1.0, 2.0]);
        assert!(matches!(
            recover_rank1(&z, 1, 1),
            Err(QmpError::Precondition(_))
        ));
        // leading eigenvector (1, 0) has no last entry to normalise by
        let z = CMatrix::from_real_rows(&[&[4.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(
            recover_rank1(&z, 1, 1),
            Err(QmpError::Recovery { .. })
        ));
    }

    #[test]
    fn sdr_bound_is_exact_for_unconstrained_scalar() {
        let obj = QMFunction::type2(re(2.0), re(-3.0), 1.0);
        let p = QMPProblem::unconstrained(obj);
        let s = solve(&p, &Settings::with_path(SolvePath::SdrGeneral)).unwrap();
        // minimum of 2x^2 - 6x + 1 is at 1.5 with value -3.5
        assert!((s.lower_bound.unwrap() + 3.5).abs() < 1e-7);
        assert!((s.x[(0, 0)] - C64::new(1.5, 0.0)).norm() < 1e-7);
        assert!(s.lower_bound.unwrap() <= s.objective + 1e-8);
    }

    #[test]
    fn convex_reformulations_match_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..3 {
            let p = QMPProblem::unconstrained(generate::type2_objective(3, 2, &mut rng));
            let exact = solve(&p, &Settings::default()).unwrap().objective;
            for path in [
                SolvePath::ConvexSdp,
                SolvePath::ConvexSocp,
                SolvePath::HomogenizedT2,
            ] {
                let s = solve(&p, &Settings::with_path(path)).unwrap();
                assert!(
                    (s.objective - exact).abs() <= 1e-6 * exact.abs().max(1.0),
                    "{path}"
                );
                assert!(
                    (s.lower_bound.unwrap() - exact).abs() <= 1e-6 * exact.abs().max(1.0),
                    "{path}"
                );
            }
        }
    }

    #[test]
    fn socp_without_linear_terms() {
        // Tr(X^H X) with one constraint Tr(X^H A X) <= 2 and B = 0: optimum 0 at X = 0
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = generate::pd(2, 0.5, &mut rng);
        let obj = QMFunction::type2(CMatrix::identity(2), CMatrix::zeros(2, 1), 0.0);
        let con = QMFunction::type2(a, CMatrix::zeros(2, 1), -2.0);
        let p = QMPProblem::new(obj, vec![con], vec![]).unwrap();
        let s = solve(&p, &Settings::with_path(SolvePath::ConvexSocp)).unwrap();
        assert!(s.x.max_abs() < 1e-5);
    }

    #[test]
    fn socp_rejects_impossible_constraint() {
        let obj = QMFunction::type2(re(1.0), re(0.0), 0.0);
        let con = QMFunction::type2(re(1.0), re(0.0), 1.0);
        let p = QMPProblem::new(obj, vec![con], vec![]).unwrap();
        assert!(matches!(
            build_convex_socp(&p),
            Err(QmpError::Infeasible { .. })
        ));
        let semi = QMFunction::type2(
            CMatrix::from_real_diag(&[1.0, 0.0]),
            CMatrix::zeros(2, 1),
            0.0,
        );
        let p = QMPProblem::unconstrained(semi);
        assert!(matches!(
            build_convex_socp(&p),
            Err(QmpError::Precondition(_))
        ));
    }

    #[test]
    fn schur_rejects_indefinite_data() {
        let obj = QMFunction::type2(re(-1.0), re(0.0), 0.0);
        let p = QMPProblem::unconstrained(obj);
        assert!(matches!(
            build_convex_schur(&p),
            Err(QmpError::Classification(_))
        ));
    }

    #[test]
    fn schur_with_zero_feasible_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let p = generate::convex_problem(2, 2, 2, false, &mut rng);
        let s = solve(&p, &Settings::with_path(SolvePath::ConvexSdp)).unwrap();
        assert!(s.objective <= p.objective.c + 1e-9);
        assert!(s.feasibility_violation <= 1e-6 * p.scale());
        assert!(s.lower_bound.unwrap() <= s.objective + 1e-8 * p.scale());
    }

    #[test]
    fn diagnostic_record_is_json() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p = generate::single_constraint_problem(2, 1, &mut rng);
        let s = solve(&p, &Settings::with_path(SolvePath::HomogenizedT2)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s.diagnostic_json()).unwrap();
        assert_eq!(v["path"], "HOMOGENIZED_T2");
        assert!(v["iterations"].as_u64().unwrap() > 0);
    }

    #[test]
    fn rejects_invalid_problem() {
        let mut bad = QMFunction::type2(re(1.0), re(0.0), 0.0);
        bad.a = CMatrix::from_rows(&[vec![C64::new(1.0, 1.0)]]);
        let p = QMPProblem::unconstrained(bad);
        assert!(matches!(
            solve(&p, &Settings::default()),
            Err(QmpError::Validation(_))
        ));
    }
}
