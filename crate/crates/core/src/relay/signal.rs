//! Second-order statistics of the relay signal model and a sample-based check.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{RelayNetwork, TransceiverState};
use crate::error::Result;
use crate::matrix::{self, CMatrix};

/// Transmit covariance `Σ_k P_ik R_s,ik P_ik^H` of source `i`.
pub fn source_covariance(net: &RelayNetwork, state: &TransceiverState, i: usize) -> CMatrix {
    let s = &net.sources[i];
    let mut q = CMatrix::zeros(s.antennas, s.antennas);
    for k in net.targets(i) {
        let p = &state.precoders[i][k];
        q += &p.matmul(&s.covariances[k]).mul_adjoint(p);
    }
    q
}

pub fn source_power(net: &RelayNetwork, state: &TransceiverState, i: usize) -> f64 {
    source_covariance(net, state, i).trace().re
}

pub fn relay_input_covariance(
    net: &RelayNetwork,
    state: &TransceiverState,
    j: usize,
) -> Result<CMatrix> {
    state.check(net)?;
    Ok(relay_input_unchecked(net, state, j))
}

fn relay_input_unchecked(net: &RelayNetwork, state: &TransceiverState, j: usize) -> CMatrix {
    let mut r = net.relays[j].noise.clone();
    for i in 0..net.sources.len() {
        let h = &net.h_sr[i][j];
        r += &h.matmul(&source_covariance(net, state, i)).mul_adjoint(h);
    }
    r
}

pub fn relay_power(net: &RelayNetwork, state: &TransceiverState, j: usize) -> f64 {
    let f = &state.relays[j];
    f.matmul(&relay_input_unchecked(net, state, j))
        .mul_adjoint(f)
        .trace()
        .re
}

/// End-to-end channel from source `i` to destination `k`, optionally leaving
/// relay `skip` out.
pub fn effective_channel(
    net: &RelayNetwork,
    state: &TransceiverState,
    i: usize,
    k: usize,
    skip: Option<usize>,
) -> CMatrix {
    let mut e = net.h_sd[i][k].clone();
    for j in 0..net.relays.len() {
        if Some(j) != skip {
            e += &net.h_rd[j][k]
                .matmul(&state.relays[j])
                .matmul(&net.h_sr[i][j]);
        }
    }
    e
}

/// Covariance of the received vector at destination `k`.
pub fn received_covariance(net: &RelayNetwork, state: &TransceiverState, k: usize) -> CMatrix {
    let mut r = net.destinations[k].noise.clone();
    for i in 0..net.sources.len() {
        let e = effective_channel(net, state, i, k, None);
        r += &e.matmul(&source_covariance(net, state, i)).mul_adjoint(&e);
    }
    for (j, relay) in net.relays.iter().enumerate() {
        let hf = net.h_rd[j][k].matmul(&state.relays[j]);
        r += &hf.matmul(&relay.noise).mul_adjoint(&hf);
    }
    r
}

/// `E{y_k d_k^H}` where `d_k` stacks the streams intended for `k`.
pub fn cross_covariance(net: &RelayNetwork, state: &TransceiverState, k: usize) -> CMatrix {
    let mut c = CMatrix::zeros(net.destinations[k].antennas, net.stream_total(k));
    for i in net.senders(k) {
        let e = effective_channel(net, state, i, k, None);
        let block = e
            .matmul(&state.precoders[i][k])
            .matmul(&net.sources[i].covariances[k]);
        c.set_block(0, net.stream_offset(i, k), &block);
    }
    c
}

/// Mean-square error at destination `k` for the current equalizer.
pub fn destination_mse(net: &RelayNetwork, state: &TransceiverState, k: usize) -> f64 {
    let g = &state.equalizers[k];
    let ry = received_covariance(net, state, k);
    let c = cross_covariance(net, state, k);
    g.matmul(&ry).mul_adjoint(g).trace().re - 2.0 * g.matmul(&c).trace().re + net.signal_energy(k)
}

pub fn total_mse(net: &RelayNetwork, state: &TransceiverState) -> Result<f64> {
    state.check(net)?;
    Ok(total_mse_unchecked(net, state))
}

pub(crate) fn total_mse_unchecked(net: &RelayNetwork, state: &TransceiverState) -> f64 {
    (0..net.destinations.len())
        .map(|k| destination_mse(net, state, k))
        .sum()
}

#[derive(Debug, Clone)]
pub struct SampleEstimate {
    pub samples: usize,
    pub mse: f64,
    pub relay_covariances: Vec<CMatrix>,
}

fn draw(factor: &CMatrix, rng: &mut ChaCha8Rng) -> CMatrix {
    factor.matmul(&CMatrix::random_cn(factor.cols(), 1, rng))
}

/// Simulates the network with Gaussian signals and noises and returns the
/// sample mean-square error and sample relay input covariances.
pub fn simulate(
    net: &RelayNetwork,
    state: &TransceiverState,
    samples: usize,
    seed: u64,
) -> Result<SampleEstimate> {
    state.check(net)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ns, nr, nd) = (net.sources.len(), net.relays.len(), net.destinations.len());

    // per source: stacked streams over destinations and the matching precoder
    let mut stream_factor = Vec::with_capacity(ns);
    let mut stacked_precoder = Vec::with_capacity(ns);
    for i in 0..ns {
        let blocks: Vec<CMatrix> = net.sources[i]
            .covariances
            .iter()
            .map(matrix::psd_factor)
            .collect::<Result<_>>()?;
        let rows: usize = blocks.iter().map(|b| b.rows()).sum();
        let cols: usize = blocks.iter().map(|b| b.cols()).sum();
        let mut l = CMatrix::zeros(rows, cols);
        let (mut r0, mut c0) = (0, 0);
        for b in &blocks {
            l.set_block(r0, c0, b);
            r0 += b.rows();
            c0 += b.cols();
        }
        stream_factor.push(l);
        let ps: Vec<&CMatrix> = state.precoders[i].iter().collect();
        stacked_precoder.push(CMatrix::hstack(&ps)?);
    }
    let relay_noise: Vec<CMatrix> = net
        .relays
        .iter()
        .map(|r| matrix::psd_factor(&r.noise))
        .collect::<Result<_>>()?;
    let dest_noise: Vec<CMatrix> = net
        .destinations
        .iter()
        .map(|d| matrix::psd_factor(&d.noise))
        .collect::<Result<_>>()?;
    let to_relay: Vec<Vec<CMatrix>> = (0..ns)
        .map(|i| {
            (0..nr)
                .map(|j| net.h_sr[i][j].matmul(&stacked_precoder[i]))
                .collect()
        })
        .collect();
    let direct: Vec<Vec<CMatrix>> = (0..ns)
        .map(|i| {
            (0..nd)
                .map(|k| net.h_sd[i][k].matmul(&stacked_precoder[i]))
                .collect()
        })
        .collect();
    let forward: Vec<Vec<CMatrix>> = (0..nr)
        .map(|j| {
            (0..nd)
                .map(|k| net.h_rd[j][k].matmul(&state.relays[j]))
                .collect()
        })
        .collect();

    let mut sum_err = 0.0;
    let mut sum_cov: Vec<CMatrix> = net
        .relays
        .iter()
        .map(|r| CMatrix::zeros(r.receive, r.receive))
        .collect();
    for _ in 0..samples {
        let s: Vec<CMatrix> = stream_factor.iter().map(|l| draw(l, &mut rng)).collect();
        let x: Vec<CMatrix> = (0..nr)
            .map(|j| {
                let mut x = draw(&relay_noise[j], &mut rng);
                for i in 0..ns {
                    x += &to_relay[i][j].matmul(&s[i]);
                }
                x
            })
            .collect();
        for j in 0..nr {
            sum_cov[j] += &x[j].mul_adjoint(&x[j]);
        }
        for k in 0..nd {
            let mut y = draw(&dest_noise[k], &mut rng);
            for j in 0..nr {
                y += &forward[j][k].matmul(&x[j]);
            }
            for i in 0..ns {
                y += &direct[i][k].matmul(&s[i]);
            }
            let mut err = state.equalizers[k].matmul(&y);
            for i in net.senders(k) {
                let start: usize = (0..k).map(|m| net.sources[i].streams(m)).sum();
                let off = net.stream_offset(i, k);
                for t in 0..net.sources[i].streams(k) {
                    err[(off + t, 0)] -= s[i][(start + t, 0)];
                }
            }
            sum_err += err.fro_norm_sqr();
        }
    }
    let inv = 1.0 / samples.max(1) as f64;
    Ok(SampleEstimate {
        samples,
        mse: sum_err * inv,
        relay_covariances: sum_cov.iter().map(|c| c.scale(inv)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::C64;
    use crate::relay::network::{
        generate_network, NetworkDims, Preset, ScalarChain, ScenarioConfig,
    };

    pub(crate) fn scalar_chain(h1: f64, h2: f64, sig: f64, n1: f64, n2: f64) -> RelayNetwork {
        let chain = ScalarChain {
            source_relay: h1,
            relay_destination: h2,
            signal: sig,
            relay_noise: n1,
            destination_noise: n2,
            source_power: 1.0,
            relay_power: 1.0,
        };
        chain.network()
    }

    fn random_state(net: &RelayNetwork, seed: u64) -> TransceiverState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = TransceiverState::zeros(net);
        for row in &mut st.precoders {
            for p in row {
                *p = CMatrix::random_cn(p.rows(), p.cols(), &mut rng).scale(0.5);
            }
        }
        for f in &mut st.relays {
            *f = CMatrix::random_cn(f.rows(), f.cols(), &mut rng).scale(0.5);
        }
        for g in &mut st.equalizers {
            *g = CMatrix::random_cn(g.rows(), g.cols(), &mut rng).scale(0.5);
        }
        st
    }

    #[test]
    fn zero_precoders_leave_noise() {
        let net = generate_network(
            &ScenarioConfig::new(Preset::Relay, NetworkDims::default()),
            1,
        )
        .unwrap();
        let st = TransceiverState::zeros(&net);
        assert_eq!(
            relay_input_covariance(&net, &st, 1).unwrap(),
            net.relays[1].noise
        );
    }

    #[test]
    fn scalar_relay_input() {
        let net = scalar_chain(0.7, 1.0, 2.0, 0.3, 0.1);
        let mut st = TransceiverState::zeros(&net);
        st.precoders[0][0] = CMatrix::scalar(C64::new(0.4, 0.3));
        let r = relay_input_covariance(&net, &st, 0).unwrap();
        let expect = 0.49 * 0.25 * 2.0 + 0.3;
        assert!((r[(0, 0)].re - expect).abs() < 1e-14);
    }

    #[test]
    fn zero_equalizer_costs_signal_energy() {
        let net = generate_network(
            &ScenarioConfig::new(Preset::Relay, NetworkDims::default()),
            2,
        )
        .unwrap();
        let mut st = random_state(&net, 3);
        for g in &mut st.equalizers {
            *g = CMatrix::zeros(g.rows(), g.cols());
        }
        let energy: f64 = (0..2).map(|k| net.signal_energy(k)).sum();
        assert!((total_mse(&net, &st).unwrap() - energy).abs() < 1e-12);
    }

    #[test]
    fn scalar_chain_wiener_value() {
        let (h1, h2, sig, n1, n2) = (0.8, 1.3, 1.5, 0.2, 0.1);
        let net = scalar_chain(h1, h2, sig, n1, n2);
        let (p, f) = (0.6, 0.9);
        let heff = h2 * f * h1 * p;
        let v = h2 * h2 * f * f * n1 + n2;
        let g = heff * sig / (heff * heff * sig + v);
        let mut st = TransceiverState::zeros(&net);
        st.precoders[0][0] = CMatrix::scalar(C64::new(p, 0.0));
        st.relays[0] = CMatrix::scalar(C64::new(f, 0.0));
        st.equalizers[0] = CMatrix::scalar(C64::new(g, 0.0));
        let expect = sig * v / (heff * heff * sig + v);
        assert!((total_mse(&net, &st).unwrap() - expect).abs() < 1e-13);
    }

    #[test]
    fn sample_estimate_tracks_analytic_values() {
        let net = generate_network(
            &ScenarioConfig::new(Preset::Relay, NetworkDims::default()),
            5,
        )
        .unwrap();
        let st = random_state(&net, 6);
        let est = simulate(&net, &st, 50_000, 7).unwrap();
        let mse = total_mse(&net, &st).unwrap();
        assert!((est.mse - mse).abs() < 0.05 * mse);
        for j in 0..2 {
            let r = relay_input_covariance(&net, &st, j).unwrap();
            assert!((&est.relay_covariances[j] - &r).fro_norm() < 0.05 * r.fro_norm());
        }
    }
}
