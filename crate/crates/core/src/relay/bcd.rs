//! Block-coordinate descent over equalizers, relays and source precoders.

use std::collections::VecDeque;
use std::fmt;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{self, SourceBlock};
use super::network::{RelayNetwork, TransceiverState};
use super::signal::{self, total_mse_unchecked};
use crate::error::{QmpError, Result};
use crate::matrix::{self, CMatrix, C64};
use crate::model::QMPProblem;
use crate::solver::{self, Settings, SolvePath};

/// Absolute slack allowed on the descent property.
pub const DESCENT_SLACK: f64 = 1e-9;
/// Relative slack on power budgets.
pub const BUDGET_SLACK: f64 = 1e-6;
const INIT_FRACTION: f64 = 0.5;
const ANDERSON_DEPTH: usize = 5;
const EXTRAPOLATION_BASE: f64 = 0.5;
const EXTRAPOLATION_STEPS: i32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Equalizer(usize),
    Relay(usize),
    Source(usize),
    /// Joint step along the previous sweep's direction.
    Extrapolation,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::Equalizer(k) => write!(f, "G{k}"),
            Block::Relay(j) => write!(f, "F{j}"),
            Block::Source(i) => write!(f, "P{i}"),
            Block::Extrapolation => f.write_str("X"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub sweep: usize,
    pub block: Block,
    pub mse: f64,
    /// Smallest relative slack `1 - used/budget` over all power budgets.
    pub margin_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTrace {
    pub initial_mse: f64,
    pub records: Vec<TraceRecord>,
}

impl ConvergenceTrace {
    pub const HEADER: &'static str = "sweep,block,mse,margin_min";

    pub fn final_mse(&self) -> f64 {
        self.records.last().map_or(self.initial_mse, |r| r.mse)
    }

    /// Largest MSE increase between consecutive records, starting from the
    /// initial value.
    pub fn max_increase(&self) -> f64 {
        let mut prev = self.initial_mse;
        let mut worst = f64::NEG_INFINITY;
        for r in &self.records {
            worst = worst.max(r.mse - prev);
            prev = r.mse;
        }
        worst
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.max_increase() <= slack
    }

    /// MSE at the end of each completed sweep.
    pub fn sweep_values(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for (idx, r) in self.records.iter().enumerate() {
            if self.records.get(idx + 1).is_none_or(|n| n.sweep != r.sweep) {
                out.push(r.mse);
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{:.15e},{:.6e}",
                r.sweep, r.block, r.mse, r.margin_min
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitPolicy {
    /// Identity-like precoders and relays at half of each budget.
    ScaledIdentity,
    /// Seeded Gaussian directions at half of each budget.
    Random(u64),
}

/// How a source update treats the relay budgets that depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceUpdate {
    /// Keeps every relay budget satisfied, so each update is a descent step.
    Coupled,
    /// Enforces only the source budget; relays are brought back within budget
    /// by their next update, which may raise the MSE.
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignSettings {
    pub max_sweeps: usize,
    pub rel_tol: f64,
    pub init: InitPolicy,
    pub source_update: SourceUpdate,
    /// Tries a joint extrapolation step after every sweep.
    pub extrapolate: bool,
    pub solver: Settings,
}

impl Default for DesignSettings {
    fn default() -> Self {
        Self {
            max_sweeps: 500,
            rel_tol: 1e-8,
            init: InitPolicy::ScaledIdentity,
            source_update: SourceUpdate::Coupled,
            extrapolate: true,
            solver: Settings::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Design {
    pub state: TransceiverState,
    pub trace: ConvergenceTrace,
    pub sweeps: usize,
    pub converged: bool,
}

fn identity_like(rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |r, c| {
        if r == c {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

pub fn initial_state(net: &RelayNetwork, policy: InitPolicy) -> Result<TransceiverState> {
    net.validate()?;
    let mut rng = match policy {
        InitPolicy::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        InitPolicy::ScaledIdentity => None,
    };
    let mut shape = |rows: usize, cols: usize| match rng.as_mut() {
        Some(r) => CMatrix::random_cn(rows, cols, r),
        None => identity_like(rows, cols),
    };
    let mut st = TransceiverState::zeros(net);
    for (i, src) in net.sources.iter().enumerate() {
        for k in net.targets(i) {
            st.precoders[i][k] = shape(src.antennas, src.streams(k));
        }
        let used = signal::source_power(net, &st, i);
        if used > 0.0 {
            let s = (INIT_FRACTION * src.power / used).sqrt();
            for p in &mut st.precoders[i] {
                *p = p.scale(s);
            }
        }
    }
    for (j, relay) in net.relays.iter().enumerate() {
        st.relays[j] = shape(relay.transmit, relay.receive);
        let used = signal::relay_power(net, &st, j);
        if used > 0.0 {
            st.relays[j] = st.relays[j].scale((INIT_FRACTION * relay.power / used).sqrt());
        }
    }
    Ok(st)
}

pub fn source_margin(net: &RelayNetwork, state: &TransceiverState, i: usize) -> f64 {
    1.0 - signal::source_power(net, state, i) / net.sources[i].power
}

pub fn relay_margin(net: &RelayNetwork, state: &TransceiverState, j: usize) -> f64 {
    1.0 - signal::relay_power(net, state, j) / net.relays[j].power
}

pub fn margin_min(net: &RelayNetwork, state: &TransceiverState) -> f64 {
    let s = (0..net.sources.len()).map(|i| source_margin(net, state, i));
    let r = (0..net.relays.len()).map(|j| relay_margin(net, state, j));
    s.chain(r).fold(f64::INFINITY, f64::min)
}

fn relays_feasible(net: &RelayNetwork, state: &TransceiverState) -> bool {
    (0..net.relays.len()).all(|j| relay_margin(net, state, j) >= -BUDGET_SLACK)
}

/// Runs one G -> F -> P sweep in place, appending a record per update. On a
/// solver failure the records up to that point are kept and the error returned.
pub fn bcd_sweep(
    net: &RelayNetwork,
    state: &mut TransceiverState,
    sweep: usize,
    settings: &DesignSettings,
    records: &mut Vec<TraceRecord>,
) -> Result<()> {
    state.check(net)?;
    for k in 0..net.destinations.len() {
        let blk = blocks::qm_for_equalizer(net, state, k)?;
        let sol = solver::solve(&blk.problem, &settings.solver)?;
        let mut next = state.clone();
        next.equalizers[k] = blk.equalizer(&sol.x);
        commit(net, state, next, sweep, Block::Equalizer(k), true, records);
    }
    let mut prices = vec![0.0; net.relays.len()];
    for j in 0..net.relays.len() {
        let feasible_before = relay_margin(net, state, j) >= -BUDGET_SLACK;
        let blk = blocks::qm_for_relay(net, state, j)?;
        let sol = solver::solve(&blk.problem, &settings.solver)?;
        prices[j] = budget_multiplier(&blk.problem, &sol.x);
        let mut next = state.clone();
        next.relays[j] = blk.relay(&sol.x);
        commit(
            net,
            state,
            next,
            sweep,
            Block::Relay(j),
            feasible_before,
            records,
        );
    }
    for i in 0..net.sources.len() {
        let blk = blocks::qm_for_source(net, state, i)?;
        let sol = solver::solve(&blk.problem, &settings.solver)?;
        let mut next = state.clone();
        blk.precoders(&sol.x, &mut next.precoders[i]);
        if settings.source_update == SourceUpdate::Coupled && !relays_feasible(net, &next) {
            next = coupled_source_update(net, state, i, &blk, next, &prices, &settings.solver);
        }
        commit(net, state, next, sweep, Block::Source(i), true, records);
    }
    Ok(())
}

/// Picks the best relay-feasible candidate among: the relaxed update with
/// overloaded relays scaled back onto their budgets, the same after pricing
/// the relay budgets into the objective, and the source block solved with
/// the relay budgets as constraints. Keeps the current state when none of
/// them improves on it.
fn coupled_source_update(
    net: &RelayNetwork,
    state: &TransceiverState,
    i: usize,
    blk: &SourceBlock,
    relaxed: TransceiverState,
    prices: &[f64],
    settings: &Settings,
) -> TransceiverState {
    let mut best = state.clone();
    let mut best_mse = total_mse_unchecked(net, state);

    let mut rescaled = relaxed;
    rescale_relays(net, &mut rescaled);
    let mut candidates = vec![rescaled];
    if let Ok(problem) = blocks::with_relay_budgets(net, state, i, blk) {
        let mut priced = blk.problem.clone();
        for (c, price) in problem.inequalities[1..].iter().zip(prices) {
            priced.objective.a += &c.a.scale(*price);
        }
        if let Ok(sol) = solver::solve(&priced, settings) {
            let mut next = state.clone();
            blk.precoders(&sol.x, &mut next.precoders[i]);
            rescale_relays(net, &mut next);
            candidates.push(next);
        }
        let homogenized = Settings {
            path: Some(SolvePath::HomogenizedT2),
            ..*settings
        };
        if let Ok(sol) = solver::solve(&problem, &homogenized) {
            let mut next = state.clone();
            blk.precoders(&sol.x, &mut next.precoders[i]);
            candidates.push(next);
        }
    }
    for c in candidates {
        let mse = total_mse_unchecked(net, &c);
        if mse < best_mse && relays_feasible(net, &c) && source_margin(net, &c, i) >= -BUDGET_SLACK
        {
            best_mse = mse;
            best = c;
        }
    }
    best
}

fn rescale_relays(net: &RelayNetwork, state: &mut TransceiverState) {
    for j in 0..net.relays.len() {
        let used = signal::relay_power(net, state, j);
        if used > net.relays[j].power {
            state.relays[j] = state.relays[j].scale((net.relays[j].power / used).sqrt());
        }
    }
}

/// Multiplier of the budget of a type-2 single-constraint block with
/// identity weight, read off the stationarity condition.
fn budget_multiplier(p: &QMPProblem, x: &CMatrix) -> f64 {
    let norm = x.fro_norm_sqr();
    if norm == 0.0 {
        return 0.0;
    }
    let g = &p.objective.a.matmul(x) + &p.objective.b;
    (-g.inner_re(x) / norm).max(0.0)
}

/// Accepts `next` unless it raises the MSE from a feasible starting point,
/// which only happens through round-off in the block solve.
fn commit(
    net: &RelayNetwork,
    state: &mut TransceiverState,
    next: TransceiverState,
    sweep: usize,
    block: Block,
    guard: bool,
    records: &mut Vec<TraceRecord>,
) {
    let before = total_mse_unchecked(net, state);
    let after = total_mse_unchecked(net, &next);
    if !guard || after <= before {
        *state = next;
    }
    records.push(TraceRecord {
        sweep,
        block,
        mse: total_mse_unchecked(net, state),
        margin_min: margin_min(net, state),
    });
}

/// Flattens precoders and whitened relays `F_j R_x,j^{1/2}` into one real vector.
fn pack(net: &RelayNetwork, state: &TransceiverState) -> Result<DVector<f64>> {
    let whitened = whitened_relays(net, state)?;
    let mats: Vec<&CMatrix> = state.precoders.iter().flatten().chain(&whitened).collect();
    let len = mats.iter().map(|m| 2 * m.rows() * m.cols()).sum();
    Ok(DVector::from_iterator(
        len,
        mats.iter()
            .flat_map(|m| m.iter())
            .flat_map(|z| [z.re, z.im]),
    ))
}

fn whitened_relays(net: &RelayNetwork, state: &TransceiverState) -> Result<Vec<CMatrix>> {
    (0..net.relays.len())
        .map(|j| {
            Ok(
                state.relays[j].matmul(&matrix::psd_sqrt(&signal::relay_input_covariance(
                    net, state, j,
                )?)?),
            )
        })
        .collect()
}

/// Replaces each relay by the one with the same whitened matrix under the
/// current precoders.
fn restore_relays(
    net: &RelayNetwork,
    state: &mut TransceiverState,
    whitened: &[CMatrix],
) -> Result<()> {
    for (j, w) in whitened.iter().enumerate() {
        state.relays[j] = w.matmul(&matrix::pd_inv_sqrt(&signal::relay_input_covariance(
            net, state, j,
        )?)?);
    }
    Ok(())
}

fn unpack(
    net: &RelayNetwork,
    template: &TransceiverState,
    v: &DVector<f64>,
) -> Result<TransceiverState> {
    let mut out = template.clone();
    let mut pos = 0;
    let mut fill = |m: &mut CMatrix| {
        *m = CMatrix::from_fn(m.rows(), m.cols(), |_, _| {
            let z = C64::new(v[pos], v[pos + 1]);
            pos += 2;
            z
        });
    };
    for m in out.precoders.iter_mut().flatten() {
        fill(m);
    }
    let mut whitened = out.relays.clone();
    for m in &mut whitened {
        fill(m);
    }
    restore_relays(net, &mut out, &whitened)?;
    Ok(out)
}

/// Anderson mixing of past sweeps, viewing one sweep as a fixed-point map on
/// the precoders and relays.
#[derive(Debug, Clone, Default)]
struct Anderson {
    inputs: VecDeque<DVector<f64>>,
    outputs: VecDeque<DVector<f64>>,
}

impl Anderson {
    fn push(&mut self, input: DVector<f64>, output: DVector<f64>) {
        if self.inputs.len() > ANDERSON_DEPTH {
            self.inputs.pop_front();
            self.outputs.pop_front();
        }
        self.inputs.push_back(input);
        self.outputs.push_back(output);
    }

    fn clear(&mut self) {
        self.inputs.clear();
        self.outputs.clear();
    }

    fn mix(&self) -> Option<DVector<f64>> {
        let m = self.inputs.len();
        if m < 2 {
            return None;
        }
        let res: Vec<DVector<f64>> = (0..m).map(|t| &self.outputs[t] - &self.inputs[t]).collect();
        let last = &res[m - 1];
        let df = DMatrix::from_columns(&(1..m).map(|t| &res[t] - &res[t - 1]).collect::<Vec<_>>());
        let dg = DMatrix::from_columns(
            &(1..m)
                .map(|t| &self.outputs[t] - &self.outputs[t - 1])
                .collect::<Vec<_>>(),
        );
        let gamma = df
            .svd(true, true)
            .solve(last, 1e-12 * last.norm().max(f64::MIN_POSITIVE))
            .ok()?;
        let mixed = &self.outputs[m - 1] - dg * gamma;
        mixed.iter().all(|v| v.is_finite()).then_some(mixed)
    }
}

/// Tries joint moves of all precoders and relays after a sweep from `start`
/// to `state`: multiples of the sweep's change on a geometric grid and the
/// Anderson mixture. Each candidate is scaled onto the budgets and gets fresh
/// equalizers; the best replaces `state` if it lowers the MSE.
fn accelerate(
    net: &RelayNetwork,
    start: &TransceiverState,
    state: &mut TransceiverState,
    anderson: Option<DVector<f64>>,
    settings: &Settings,
) -> Result<bool> {
    let mut candidates = Vec::with_capacity(EXTRAPOLATION_STEPS as usize + 1);
    let (from, to) = (pack(net, start)?, pack(net, state)?);
    for e in 0..EXTRAPOLATION_STEPS {
        let step = EXTRAPOLATION_BASE * 2f64.powi(e);
        candidates.push(unpack(net, state, &(&to + (&to - &from) * step))?);
    }
    if let Some(v) = anderson {
        candidates.push(unpack(net, state, &v)?);
    }
    let mut best: Option<(f64, TransceiverState)> = None;
    let current = total_mse_unchecked(net, state);
    for mut next in candidates {
        fit_budgets(net, &mut next);
        for k in 0..net.destinations.len() {
            let blk = blocks::qm_for_equalizer(net, &next, k)?;
            next.equalizers[k] = blk.equalizer(&solver::solve(&blk.problem, settings)?.x);
        }
        let feasible = relays_feasible(net, &next)
            && (0..net.sources.len()).all(|i| source_margin(net, &next, i) >= -BUDGET_SLACK);
        let mse = total_mse_unchecked(net, &next);
        if feasible && mse < best.as_ref().map_or(current, |b| b.0) {
            best = Some((mse, next));
        }
    }
    match best {
        Some((_, next)) => {
            *state = next;
            Ok(true)
        }
        None => Ok(false),
    }
}

/// Scales overloaded sources, then overloaded relays, onto their budgets.
fn fit_budgets(net: &RelayNetwork, state: &mut TransceiverState) {
    for (i, src) in net.sources.iter().enumerate() {
        let used = signal::source_power(net, state, i);
        if used > src.power {
            let s = (src.power / used).sqrt();
            for p in &mut state.precoders[i] {
                *p = p.scale(s);
            }
        }
    }
    rescale_relays(net, state);
}

pub fn run_design(net: &RelayNetwork, settings: &DesignSettings) -> Result<Design> {
    if settings.max_sweeps == 0 || !(settings.rel_tol > 0.0) {
        return Err(QmpError::Parameter(
            "need at least one sweep and a positive tolerance".into(),
        ));
    }
    let state = initial_state(net, settings.init)?;
    run_design_from(net, state, settings)
}

pub fn run_design_from(
    net: &RelayNetwork,
    mut state: TransceiverState,
    settings: &DesignSettings,
) -> Result<Design> {
    net.validate()?;
    state.check(net)?;
    let initial_mse = total_mse_unchecked(net, &state);
    let mut records = Vec::new();
    let mut prev = initial_mse;
    let mut converged = false;
    let mut sweeps = 0;
    let mut anderson = Anderson::default();
    while sweeps < settings.max_sweeps {
        sweeps += 1;
        let start = state.clone();
        bcd_sweep(net, &mut state, sweeps, settings, &mut records)?;
        if settings.extrapolate {
            anderson.push(pack(net, &start)?, pack(net, &state)?);
            let accepted = accelerate(net, &start, &mut state, anderson.mix(), &settings.solver)?;
            if !accepted {
                anderson.clear();
            }
            records.push(TraceRecord {
                sweep: sweeps,
                block: Block::Extrapolation,
                mse: total_mse_unchecked(net, &state),
                margin_min: margin_min(net, &state),
            });
        }
        let cur = total_mse_unchecked(net, &state);
        let change = (prev - cur).abs() / prev.abs().max(f64::MIN_POSITIVE);
        prev = cur;
        if change < settings.rel_tol {
            converged = true;
            break;
        }
    }
    if !relays_feasible(net, &state) {
        // closing relay and equalizer pass for the decoupled variant
        let closing = sweeps + 1;
        for j in 0..net.relays.len() {
            let blk = blocks::qm_for_relay(net, &state, j)?;
            let sol = solver::solve(&blk.problem, &settings.solver)?;
            let mut next = state.clone();
            next.relays[j] = blk.relay(&sol.x);
            commit(
                net,
                &mut state,
                next,
                closing,
                Block::Relay(j),
                false,
                &mut records,
            );
        }
        for k in 0..net.destinations.len() {
            let blk = blocks::qm_for_equalizer(net, &state, k)?;
            let sol = solver::solve(&blk.problem, &settings.solver)?;
            let mut next = state.clone();
            next.equalizers[k] = blk.equalizer(&sol.x);
            commit(
                net,
                &mut state,
                next,
                closing,
                Block::Equalizer(k),
                true,
                &mut records,
            );
        }
    }
    Ok(Design {
        state,
        trace: ConvergenceTrace {
            initial_mse,
            records,
        },
        sweeps,
        converged,
    })
}
