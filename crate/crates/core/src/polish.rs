//! Active-set Newton refinement of an approximate KKT point.
//!
//! Interior-point solutions of lifted relaxations are accurate in objective
//! value but only to roughly the square root of the tolerance in the point
//! itself. Starting from such a point, Newton's method on
//!
//! ```text
//! A_0 X D_0 + B_0 + Σ_a μ_a (A_a X D_a + B_a) = 0,    f_a(X) = 0  (a active)
//! ```
//!
//! converges quadratically to the nearby KKT point.

use nalgebra::{DMatrix, DVector};

use crate::matrix::{self, CMatrix};
use crate::model::{QMFunction, QMPProblem};

const MAX_NEWTON: usize = 30;
const MAX_ROUNDS: usize = 8;

#[derive(Debug, Clone)]
pub struct Polished {
    pub x: CMatrix,
    /// Multipliers for inequalities then equalities; zero for inactive rows.
    pub multipliers: Vec<f64>,
    pub newton_steps: usize,
}

fn gradient(f: &QMFunction, x: &CMatrix) -> CMatrix {
    &f.a.matmul(x).matmul(&f.d) + &f.b
}

fn embed(m: &CMatrix) -> DVector<f64> {
    DVector::from_vec(matrix::real_embed_vector(matrix::vec(m).as_slice()))
}

/// Refines `x0`. The starting active set is the inequalities that are nearly
/// tight at `x0`. `guess` holds starting multipliers (inequalities then
/// equalities); without it they come from least squares.
pub fn kkt_polish(p: &QMPProblem, x0: &CMatrix, guess: Option<&[f64]>) -> Option<Polished> {
    let m_in = p.inequalities.len();
    let count = p.constraint_count();
    let cons: Vec<&QMFunction> = p.inequalities.iter().chain(&p.equalities).collect();
    let scale = p.scale();
    let mu_scale = guess
        .map(|g| g.iter().fold(0.0f64, |a, v| a.max(v.abs())))
        .unwrap_or(0.0);

    let mut active: Vec<bool> = (0..count)
        .map(|i| {
            if i >= m_in {
                return true;
            }
            cons[i].evaluate(x0).is_ok_and(|v| v >= -1e-4 * scale)
        })
        .collect();

    let mut x = x0.clone();
    let mut total_steps = 0;
    for _ in 0..MAX_ROUNDS {
        let idx: Vec<usize> = (0..count).filter(|&i| active[i]).collect();
        let start_mu: Vec<f64> = match guess {
            Some(g) => idx
                .iter()
                .map(|&i| if i < m_in { g[i].max(0.0) } else { g[i] })
                .collect(),
            None => least_squares_multipliers(p, &cons, &idx, &x)?,
        };
        let (xn, mu, steps) = newton(p, &cons, &idx, x0, start_mu)?;
        total_steps += steps;
        x = xn;

        // drop the most negative inequality multiplier
        let worst = idx
            .iter()
            .zip(&mu)
            .filter(|(i, _)| **i < m_in)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, v)| (*i, *v));
        if let Some((i, v)) = worst {
            if v < -1e-9 * (1.0 + mu_scale) {
                active[i] = false;
                continue;
            }
        }
        // add the most violated inactive inequality
        let mut violated = None;
        let mut worst_val = 1e-12 * scale;
        for i in 0..m_in {
            if !active[i] {
                let v = cons[i].evaluate(&x).ok()?;
                if v > worst_val {
                    worst_val = v;
                    violated = Some(i);
                }
            }
        }
        if let Some(i) = violated {
            active[i] = true;
            continue;
        }
        let mut multipliers = vec![0.0; count];
        for (i, v) in idx.iter().zip(mu) {
            multipliers[*i] = v;
        }
        return Some(Polished {
            x,
            multipliers,
            newton_steps: total_steps,
        });
    }
    None
}

fn least_squares_multipliers(
    p: &QMPProblem,
    cons: &[&QMFunction],
    idx: &[usize],
    x: &CMatrix,
) -> Option<Vec<f64>> {
    if idx.is_empty() {
        return Some(vec![]);
    }
    let g0 = embed(&gradient(&p.objective, x));
    let cols: Vec<DVector<f64>> = idx.iter().map(|&i| embed(&gradient(cons[i], x))).collect();
    let a = DMatrix::from_columns(&cols);
    let ata = a.transpose() * &a;
    let rhs = -(a.transpose() * g0);
    ata.lu().solve(&rhs).map(|v| v.iter().copied().collect())
}

fn newton(
    p: &QMPProblem,
    cons: &[&QMFunction],
    idx: &[usize],
    x0: &CMatrix,
    mut mu: Vec<f64>,
) -> Option<(CMatrix, Vec<f64>, usize)> {
    let (n, r) = (p.n, p.r);
    let nx = 2 * n * r;
    let k = idx.len();
    let tol = 1e-13 * p.scale();
    let mut x = x0.clone();
    let mut last = f64::INFINITY;
    for step in 0..MAX_NEWTON {
        let mut hess = matrix::kron(&p.objective.d.transpose(), &p.objective.a);
        let mut stat = gradient(&p.objective, &x);
        let grads: Vec<CMatrix> = idx.iter().map(|&i| gradient(cons[i], &x)).collect();
        for (a, &i) in idx.iter().enumerate() {
            hess += &matrix::kron(&cons[i].d.transpose(), &cons[i].a).scale(mu[a]);
            stat += &grads[a].scale(mu[a]);
        }
        let values: Vec<f64> = idx
            .iter()
            .map(|&i| cons[i].evaluate(&x))
            .collect::<crate::error::Result<_>>()
            .ok()?;
        let residual = stat.fro_norm() + values.iter().map(|v| v.abs()).sum::<f64>();
        if residual <= tol * (1.0 + x.fro_norm()) || (step > 3 && residual >= last) {
            return (residual <= 1e-9 * p.scale() * (1.0 + x.fro_norm())).then_some((x, mu, step));
        }
        last = residual;

        let mut jac = DMatrix::zeros(nx + k, nx + k);
        jac.view_mut((0, 0), (nx, nx))
            .copy_from(&matrix::complex_to_real_block(&hess));
        let mut rhs = DVector::zeros(nx + k);
        rhs.rows_mut(0, nx).copy_from(&(-embed(&stat)));
        for a in 0..k {
            let g = embed(&grads[a]);
            jac.view_mut((0, nx + a), (nx, 1)).copy_from(&g);
            jac.view_mut((nx + a, 0), (1, nx)).copy_from(&g.transpose());
            rhs[nx + a] = -0.5 * values[a];
        }
        let delta = jac.lu().solve(&rhs)?;
        if delta.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let dv = matrix::complex_from_embedded(delta.rows(0, nx).as_slice()).ok()?;
        let dx = matrix::unvec(&CMatrix::column(&dv), n, r).ok()?;
        x += &dx;
        for a in 0..k {
            mu[a] += delta[nx + a];
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed::{self, SingleConstraintInstance};
    use crate::generate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_single_constraint_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let p = generate::single_constraint_problem(3, 2, &mut rng);
            let inst = SingleConstraintInstance::from_problem(&p).unwrap();
            let (exact, diag) = closed::solve_single_constraint(&inst, 1e-12).unwrap();
            let noise = CMatrix::random_cn(3, 2, &mut rng).scale(1e-3);
            let start = &exact + &noise;
            let out = kkt_polish(&p, &start, None).unwrap();
            assert!(
                (&out.x - &exact).max_abs() < 1e-9,
                "{:e}",
                (&out.x - &exact).max_abs()
            );
            assert!((out.multipliers[0] - diag.mu).abs() < 1e-7 * (1.0 + diag.mu));
        }
    }

    #[test]
    fn unconstrained_is_one_newton_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = QMPProblem::unconstrained(generate::type2_objective(3, 2, &mut rng));
        let exact = closed::solve_unconstrained(&p.objective.a, &p.objective.b).unwrap();
        let out = kkt_polish(&p, &CMatrix::zeros(3, 2), None).unwrap();
        assert!((&out.x - &exact).max_abs() < 1e-10);
        assert!(out.newton_steps <= 2);
    }

    #[test]
    fn drops_constraints_with_wrong_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = generate::single_constraint_problem(2, 1, &mut rng);
        // a loose budget makes the constraint inactive at the optimum
        p.inequalities[0].c = -1e6;
        let exact = closed::solve_unconstrained(&p.objective.a, &p.objective.b).unwrap();
        let out = kkt_polish(&p, &exact, Some(&[1.0])).unwrap();
        assert!((&out.x - &exact).max_abs() < 1e-10);
        assert_eq!(out.multipliers[0], 0.0);
    }
}
