//! Brute-force grid searches for scalar instances, used to check the solvers.

use crate::error::{QmpError, Result};
use crate::matrix::C64;
use crate::model::{QMFunction, QMPProblem};
use crate::relay::ScalarChain;

/// Finest grid spacing reached by [`scalar_qmp`].
pub const QMP_RESOLUTION: f64 = 1e-4;
const COARSE_CELLS: usize = 400;
const SEEDS: usize = 8;
const REFINE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptimum {
    pub x: C64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy)]
struct Scalar {
    quad: f64,
    lin: C64,
    c: f64,
}

impl Scalar {
    fn from(f: &QMFunction) -> Self {
        Self {
            quad: (f.a[(0, 0)] * f.d[(0, 0)]).re,
            lin: f.b[(0, 0)],
            c: f.c,
        }
    }

    fn at(&self, x: C64) -> f64 {
        self.quad * x.norm_sqr() + 2.0 * (self.lin.conj() * x).re + self.c
    }

    /// Radius outside which the function is positive, when it is coercive.
    fn radius(&self) -> Option<f64> {
        (self.quad > 0.0).then(|| {
            let b = self.lin.norm();
            (b + (b * b + self.quad * self.c.abs()).sqrt()) / self.quad
        })
    }
}

struct Scalars {
    objective: Scalar,
    inequalities: Vec<Scalar>,
    equality: Option<Scalar>,
}

impl Scalars {
    fn feasible(&self, x: C64, slack: f64) -> bool {
        self.inequalities.iter().all(|g| g.at(x) <= slack)
    }
}

/// Minimizes an `n = r = 1` problem by grid search. With one equality it walks
/// the constraint curve in polar angle at [`QMP_RESOLUTION`]. Otherwise it
/// takes the best of a square grid, refined around the best coarse points down
/// to that resolution, and the same curve walk along each inequality boundary.
/// Returns `None` when no grid point is feasible.
pub fn scalar_qmp(p: &QMPProblem) -> Result<Option<GridOptimum>> {
    if p.n != 1 || p.r != 1 {
        return Err(QmpError::Dimension(format!(
            "grid search needs a scalar problem, got {}x{}",
            p.n, p.r
        )));
    }
    if p.equalities.len() > 1 {
        return Err(QmpError::Parameter(
            "grid search supports at most one equality".into(),
        ));
    }
    let s = Scalars {
        objective: Scalar::from(&p.objective),
        inequalities: p.inequalities.iter().map(Scalar::from).collect(),
        equality: p.equalities.first().map(Scalar::from),
    };
    match s.equality {
        Some(eq) => Ok(on_curve(&s, eq)),
        None => {
            let boundaries = s.inequalities.iter().filter_map(|g| on_curve(&s, *g));
            Ok(on_plane(&s)?
                .into_iter()
                .chain(boundaries)
                .min_by(|a, b| a.value.total_cmp(&b.value)))
        }
    }
}

fn on_curve(s: &Scalars, eq: Scalar) -> Option<GridOptimum> {
    let steps = (2.0 * std::f64::consts::PI / QMP_RESOLUTION).ceil() as usize;
    let mut best: Option<GridOptimum> = None;
    for t in 0..steps {
        let dir = C64::from_polar(1.0, t as f64 * QMP_RESOLUTION);
        // quad rho^2 + 2 rho Re(conj(b) dir) + c = 0
        let lin = (eq.lin.conj() * dir).re;
        let roots: Vec<f64> = if eq.quad.abs() < 1e-14 {
            if lin.abs() < 1e-14 {
                vec![]
            } else {
                vec![-eq.c / (2.0 * lin)]
            }
        } else {
            let disc = lin * lin - eq.quad * eq.c;
            if disc < 0.0 {
                vec![]
            } else {
                vec![
                    (-lin - disc.sqrt()) / eq.quad,
                    (-lin + disc.sqrt()) / eq.quad,
                ]
            }
        };
        for rho in roots.into_iter().filter(|r| *r >= 0.0) {
            let x = dir * rho;
            if s.feasible(x, 1e-10) {
                let value = s.objective.at(x);
                if best.is_none_or(|b| value < b.value) {
                    best = Some(GridOptimum { x, value });
                }
            }
        }
    }
    best
}

fn on_plane(s: &Scalars) -> Result<Option<GridOptimum>> {
    let bounded = s
        .inequalities
        .iter()
        .filter_map(Scalar::radius)
        .fold(f64::INFINITY, f64::min);
    let radius = if bounded.is_finite() {
        bounded
    } else if s.objective.quad > 0.0 {
        2.0 * s.objective.lin.norm() / s.objective.quad + 1.0
    } else {
        return Err(QmpError::Parameter(
            "grid search needs a bounded region".into(),
        ));
    };
    let h = 2.0 * radius / COARSE_CELLS as f64;
    let mut coarse: Vec<GridOptimum> = Vec::new();
    for a in 0..=COARSE_CELLS {
        for b in 0..=COARSE_CELLS {
            let x = C64::new(-radius + a as f64 * h, -radius + b as f64 * h);
            if s.feasible(x, 0.0) {
                coarse.push(GridOptimum {
                    x,
                    value: s.objective.at(x),
                });
            }
        }
    }
    coarse.sort_by(|a, b| a.value.total_cmp(&b.value));
    let mut seeds: Vec<GridOptimum> = Vec::new();
    for c in coarse {
        if seeds.len() == SEEDS {
            break;
        }
        if seeds.iter().all(|s| (s.x - c.x).norm() > 3.0 * h) {
            seeds.push(c);
        }
    }
    Ok(seeds
        .into_iter()
        .map(|seed| refine(s, seed, h))
        .min_by(|a, b| a.value.total_cmp(&b.value)))
}

fn refine(s: &Scalars, mut best: GridOptimum, mut h: f64) -> GridOptimum {
    let half = 2 * REFINE as i64;
    while h > QMP_RESOLUTION {
        let centre = best.x;
        let fine = (h / REFINE).max(QMP_RESOLUTION);
        for a in -half..=half {
            for b in -half..=half {
                let x = centre + C64::new(a as f64 * fine, b as f64 * fine);
                if s.feasible(x, 0.0) {
                    let value = s.objective.at(x);
                    if value < best.value {
                        best = GridOptimum { x, value };
                    }
                }
            }
        }
        h = fine;
    }
    best
}

/// Grid optimum of the scalar chain over source gain, relay gain and equalizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainOptimum {
    pub source: f64,
    pub relay: f64,
    pub equalizer: f64,
    pub mse: f64,
}

/// Minimizes the scalar chain MSE over nonnegative magnitudes: a dense grid
/// of `points` per axis followed by two zoomed passes around the best point.
/// Phases only enter the cross term, which aligned phases make as negative as
/// possible.
pub fn scalar_chain(chain: &ScalarChain, points: usize) -> ChainOptimum {
    let (h1, h2) = (chain.source_relay.abs(), chain.relay_destination.abs());
    let sig = chain.signal;
    let mse = |p: f64, f: f64, g: f64| {
        let rx = h1 * h1 * p * p * sig + chain.relay_noise;
        g * g * (h2 * h2 * f * f * rx + chain.destination_noise) - 2.0 * g * h2 * f * h1 * p * sig
            + sig
    };
    let p_max = (chain.source_power / sig).sqrt();
    let f_max = |p: f64| (chain.relay_power / (h1 * h1 * p * p * sig + chain.relay_noise)).sqrt();
    // the optimal equalizer never exceeds sqrt(sig / noise) by Cauchy-Schwarz
    let g_max = (sig / chain.destination_noise).sqrt();

    let mut lo = [0.0, 0.0, 0.0];
    let mut hi = [1.0, 1.0, 1.0];
    let mut best = ChainOptimum {
        source: 0.0,
        relay: 0.0,
        equalizer: 0.0,
        mse: sig,
    };
    let mut best_u = [0.0; 3];
    for _ in 0..3 {
        let step: Vec<f64> = (0..3).map(|d| (hi[d] - lo[d]) / points as f64).collect();
        for a in 0..=points {
            let up = lo[0] + a as f64 * step[0];
            let p = up * p_max;
            let fm = f_max(p);
            for b in 0..=points {
                let uf = lo[1] + b as f64 * step[1];
                let f = uf * fm;
                for c in 0..=points {
                    let ug = lo[2] + c as f64 * step[2];
                    let g = ug * g_max;
                    let v = mse(p, f, g);
                    if v < best.mse {
                        best = ChainOptimum {
                            source: p,
                            relay: f,
                            equalizer: g,
                            mse: v,
                        };
                        best_u = [up, uf, ug];
                    }
                }
            }
        }
        for d in 0..3 {
            lo[d] = (best_u[d] - 2.0 * step[d]).max(0.0);
            hi[d] = (best_u[d] + 2.0 * step[d]).min(1.0);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::CMatrix;

    fn scalar(a: f64, b: f64, c: f64) -> QMFunction {
        QMFunction::type2(
            CMatrix::scalar(C64::new(a, 0.0)),
            CMatrix::scalar(C64::new(b, 0.0)),
            c,
        )
    }

    #[test]
    fn finds_budget_boundary() {
        // min |x|^2 - 2 Re x subject to |x|^2 <= 0.25 has X = 0.5
        let p = QMPProblem::new(
            scalar(1.0, -1.0, 0.0),
            vec![scalar(1.0, 0.0, -0.25)],
            vec![],
        )
        .unwrap();
        let opt = scalar_qmp(&p).unwrap().unwrap();
        assert!((opt.x - C64::new(0.5, 0.0)).norm() < 2e-4);
        assert!((opt.value + 0.75).abs() < 1e-6);
    }

    #[test]
    fn walks_equality_curve() {
        let p =
            QMPProblem::new(scalar(1.0, -1.0, 0.0), vec![], vec![scalar(1.0, 0.0, -4.0)]).unwrap();
        let opt = scalar_qmp(&p).unwrap().unwrap();
        assert!(opt.value.abs() < 1e-6);
    }

    #[test]
    fn concave_objective_needs_a_bound() {
        let p = QMPProblem::unconstrained(scalar(-1.0, 0.0, 0.0));
        assert!(scalar_qmp(&p).is_err());
    }

    #[test]
    fn chain_grid_matches_full_power_formula() {
        let chain = ScalarChain {
            source_relay: 1.0,
            relay_destination: 1.0,
            signal: 1.0,
            relay_noise: 0.1,
            destination_noise: 0.1,
            source_power: 1.0,
            relay_power: 1.0,
        };
        let opt = scalar_chain(&chain, 60);
        let f2 = 1.0 / 1.1;
        let expect = 1.0 - f2 / (f2 * 1.1 + 0.1);
        assert!((opt.mse - expect).abs() < 1e-5, "{} vs {expect}", opt.mse);
    }
}
