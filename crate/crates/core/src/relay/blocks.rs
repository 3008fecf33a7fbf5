//! Total MSE as a QM function of one block with all other blocks frozen.
//!
//! Every builder satisfies `evaluate(objective, block value) + constant ==
//! total_mse(net, state)`.

use super::network::{RelayNetwork, TransceiverState};
use super::signal::{self, effective_channel, source_covariance, total_mse_unchecked};
use crate::error::{QmpError, Result};
use crate::matrix::{self, CMatrix};
use crate::model::{self, QMFunction, QMPProblem, WhitenMap};

#[derive(Debug, Clone)]
pub struct EqualizerBlock {
    /// Unconstrained problem in `X = G_k^H`.
    pub problem: QMPProblem,
    /// MSE of the other destinations.
    pub constant: f64,
}

impl EqualizerBlock {
    pub fn variable(&self, g: &CMatrix) -> CMatrix {
        g.adjoint()
    }

    pub fn equalizer(&self, x: &CMatrix) -> CMatrix {
        x.adjoint()
    }
}

pub fn qm_for_equalizer(
    net: &RelayNetwork,
    state: &TransceiverState,
    k: usize,
) -> Result<EqualizerBlock> {
    state.check(net)?;
    check_index("destination", k, net.destinations.len())?;
    let ry = signal::received_covariance(net, state, k);
    let c = signal::cross_covariance(net, state, k);
    let objective = QMFunction::type2(ry, -&c, net.signal_energy(k));
    let others: f64 = (0..net.destinations.len())
        .filter(|&m| m != k)
        .map(|m| signal::destination_mse(net, state, m))
        .sum();
    Ok(EqualizerBlock {
        problem: QMPProblem::unconstrained(objective),
        constant: others,
    })
}

#[derive(Debug, Clone)]
pub struct RelayBlock {
    /// Problem in `F_j` with right weight `R_x,j` on every function.
    pub original: QMPProblem,
    /// Whitened problem in `F_j R_x,j^{1/2}`.
    pub problem: QMPProblem,
    pub map: WhitenMap,
    pub constant: f64,
}

impl RelayBlock {
    pub fn variable(&self, f: &CMatrix) -> CMatrix {
        f.matmul(&self.map.sqrt)
    }

    pub fn relay(&self, x: &CMatrix) -> CMatrix {
        x.matmul(&self.map.inv_sqrt)
    }
}

pub fn qm_for_relay(net: &RelayNetwork, state: &TransceiverState, j: usize) -> Result<RelayBlock> {
    state.check(net)?;
    check_index("relay", j, net.relays.len())?;
    let relay = &net.relays[j];
    let rx = signal::relay_input_covariance(net, state, j)?;
    let (nt, nr) = (relay.transmit, relay.receive);
    let q: Vec<CMatrix> = (0..net.sources.len())
        .map(|i| source_covariance(net, state, i))
        .collect();

    let mut a = CMatrix::zeros(nt, nt);
    let mut b = CMatrix::zeros(nt, nr);
    for (k, g) in state.equalizers.iter().enumerate() {
        let gh = g.matmul(&net.h_rd[j][k]);
        a += &gh.adjoint_mul(&gh);
        // E{(G_k r_k - d_k) x_j^H}, r_k being everything at k not passing through F_j
        let mut w = CMatrix::zeros(g.rows(), nr);
        for i in 0..net.sources.len() {
            let hsr = &net.h_sr[i][j];
            let e = effective_channel(net, state, i, k, Some(j));
            w += &g.matmul(&e).matmul(&q[i]).mul_adjoint(hsr);
        }
        for i in net.senders(k) {
            let p = &state.precoders[i][k];
            let block = net.sources[i].covariances[k]
                .mul_adjoint(p)
                .mul_adjoint(&net.h_sr[i][j]);
            let off = net.stream_offset(i, k);
            let cur = w.submatrix(off, 0, block.rows(), nr);
            w.set_block(off, 0, &(&cur - &block));
        }
        b += &gh.adjoint_mul(&w);
    }
    let mut frozen = state.clone();
    frozen.relays[j] = CMatrix::zeros(nt, nr);
    let c = total_mse_unchecked(net, &frozen);

    let objective = QMFunction::new(a, b, c, rx.clone())?;
    let budget = QMFunction::new(
        CMatrix::identity(nt),
        CMatrix::zeros(nt, nr),
        -relay.power,
        rx.clone(),
    )?;
    let original = QMPProblem::new(objective, vec![budget], vec![])?;
    let (problem, map) = model::whiten(&original, &rx)?;
    Ok(RelayBlock {
        original,
        problem,
        map,
        constant: 0.0,
    })
}

/// One column group of the stacked source variable.
#[derive(Debug, Clone)]
pub struct StreamGroup {
    pub destination: usize,
    pub column: usize,
    pub sqrt: CMatrix,
    pub pinv_sqrt: CMatrix,
}

#[derive(Debug, Clone)]
pub struct SourceBlock {
    /// Problem in `X_i = [P_ik R_s,ik^{1/2}]_k` over destinations with streams.
    pub problem: QMPProblem,
    pub groups: Vec<StreamGroup>,
    pub constant: f64,
}

impl SourceBlock {
    pub fn variable(&self, precoders: &[CMatrix]) -> CMatrix {
        let blocks: Vec<CMatrix> = self
            .groups
            .iter()
            .map(|g| precoders[g.destination].matmul(&g.sqrt))
            .collect();
        let refs: Vec<&CMatrix> = blocks.iter().collect();
        CMatrix::hstack(&refs).expect("groups share the antenna count")
    }

    /// Writes the precoders encoded by `x` into `precoders`.
    pub fn precoders(&self, x: &CMatrix, precoders: &mut [CMatrix]) {
        for g in &self.groups {
            let d = g.sqrt.rows();
            precoders[g.destination] = x.submatrix(0, g.column, x.rows(), d).matmul(&g.pinv_sqrt);
        }
    }
}

pub fn qm_for_source(
    net: &RelayNetwork,
    state: &TransceiverState,
    i: usize,
) -> Result<SourceBlock> {
    state.check(net)?;
    check_index("source", i, net.sources.len())?;
    let src = &net.sources[i];
    let n = src.antennas;
    let targets = net.targets(i);

    let mut a = CMatrix::zeros(n, n);
    for (k, g) in state.equalizers.iter().enumerate() {
        let ge = g.matmul(&effective_channel(net, state, i, k, None));
        a += &ge.adjoint_mul(&ge);
    }
    let mut groups = Vec::with_capacity(targets.len());
    let mut b_blocks = Vec::with_capacity(targets.len());
    let mut column = 0;
    for &k in &targets {
        let (sqrt, pinv_sqrt) = matrix::psd_sqrt_pair(&src.covariances[k])?;
        let d = sqrt.rows();
        let g = &state.equalizers[k];
        let rows = g.submatrix(net.stream_offset(i, k), 0, d, g.cols());
        let e = effective_channel(net, state, i, k, None);
        b_blocks.push(-&e.adjoint_mul(&rows.adjoint()).matmul(&sqrt));
        groups.push(StreamGroup {
            destination: k,
            column,
            sqrt,
            pinv_sqrt,
        });
        column += d;
    }
    let refs: Vec<&CMatrix> = b_blocks.iter().collect();
    let b = CMatrix::hstack(&refs)?;
    let mut frozen = state.clone();
    for p in &mut frozen.precoders[i] {
        *p = CMatrix::zeros(p.rows(), p.cols());
    }
    let c = total_mse_unchecked(net, &frozen);
    let objective = QMFunction::type2(a, b, c);
    let budget = QMFunction::trace_budget(CMatrix::identity(n), column, src.power);
    let problem = QMPProblem::new(objective, vec![budget], vec![])?;
    Ok(SourceBlock {
        problem,
        groups,
        constant: 0.0,
    })
}

/// Adds each relay's power budget, which depends on source `i` through the
/// relay input covariance, as a constraint of the source block. Constraint
/// `1 + j` belongs to relay `j`.
pub fn with_relay_budgets(
    net: &RelayNetwork,
    state: &TransceiverState,
    i: usize,
    block: &SourceBlock,
) -> Result<QMPProblem> {
    let mut problem = block.problem.clone();
    let r = problem.r;
    let mut frozen = state.clone();
    for p in &mut frozen.precoders[i] {
        *p = CMatrix::zeros(p.rows(), p.cols());
    }
    for (j, relay) in net.relays.iter().enumerate() {
        let fh = state.relays[j].matmul(&net.h_sr[i][j]);
        let rest = signal::relay_power(net, &frozen, j);
        let a = fh.adjoint_mul(&fh);
        problem.inequalities.push(QMFunction::type2(
            a,
            CMatrix::zeros(problem.n, r),
            rest - relay.power,
        ));
    }
    Ok(problem)
}

fn check_index(kind: &str, idx: usize, len: usize) -> Result<()> {
    if idx >= len {
        return Err(QmpError::Dimension(format!(
            "{kind} index {idx} out of range ({len})"
        )));
    }
    Ok(())
}
