//! Network description, transceiver state and scenario generation.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QmpError, Result};
use crate::fixture::MatrixFixture;
use crate::matrix::{self, CMatrix, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub antennas: usize,
    pub power: f64,
    /// Signal covariance toward each destination; a `0 x 0` matrix means no streams.
    pub covariances: Vec<CMatrix>,
}

impl Source {
    pub fn streams(&self, k: usize) -> usize {
        self.covariances[k].rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relay {
    pub receive: usize,
    pub transmit: usize,
    pub power: f64,
    pub noise: CMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Destination {
    pub antennas: usize,
    pub noise: CMatrix,
}

/// Dual-hop amplify-and-forward network with optional direct links.
///
/// Channel layout: `h_sr[i][j]` is source `i` to relay `j`, `h_rd[j][k]` is relay
/// `j` to destination `k`, `h_sd[i][k]` is the direct link (zero when absent).
#[derive(Debug, Clone, PartialEq)]
pub struct RelayNetwork {
    pub sources: Vec<Source>,
    pub relays: Vec<Relay>,
    pub destinations: Vec<Destination>,
    pub h_sr: Vec<Vec<CMatrix>>,
    pub h_rd: Vec<Vec<CMatrix>>,
    pub h_sd: Vec<Vec<CMatrix>>,
}

/// Single-antenna source, relay and destination with real link gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarChain {
    pub source_relay: f64,
    pub relay_destination: f64,
    pub signal: f64,
    pub relay_noise: f64,
    pub destination_noise: f64,
    pub source_power: f64,
    pub relay_power: f64,
}

impl ScalarChain {
    pub fn network(&self) -> RelayNetwork {
        let s = |v: f64| CMatrix::scalar(C64::new(v, 0.0));
        RelayNetwork {
            sources: vec![Source {
                antennas: 1,
                power: self.source_power,
                covariances: vec![s(self.signal)],
            }],
            relays: vec![Relay {
                receive: 1,
                transmit: 1,
                power: self.relay_power,
                noise: s(self.relay_noise),
            }],
            destinations: vec![Destination {
                antennas: 1,
                noise: s(self.destination_noise),
            }],
            h_sr: vec![vec![s(self.source_relay)]],
            h_rd: vec![vec![s(self.relay_destination)]],
            h_sd: vec![vec![s(0.0)]],
        }
    }
}

fn check_shape(label: &str, m: &CMatrix, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(QmpError::Dimension(format!(
            "{label} is {:?}, expected {rows}x{cols}",
            m.shape()
        )));
    }
    if !m.is_finite() {
        return Err(QmpError::Validation(format!(
            "{label} has non-finite entries"
        )));
    }
    Ok(())
}

fn check_covariance(label: &str, m: &CMatrix, n: usize, definite: bool) -> Result<()> {
    check_shape(label, m, n, n)?;
    if n == 0 {
        return Ok(());
    }
    if !m.is_hermitian(1e-10) {
        return Err(QmpError::Validation(format!("{label} is not Hermitian")));
    }
    let ok = if definite {
        matrix::is_pd(m)
    } else {
        matrix::is_psd(m)
    };
    if !ok {
        let kind = if definite {
            "positive definite"
        } else {
            "positive semidefinite"
        };
        return Err(QmpError::Validation(format!("{label} is not {kind}")));
    }
    Ok(())
}

impl RelayNetwork {
    pub fn validate(&self) -> Result<()> {
        let (ns, nr, nd) = (
            self.sources.len(),
            self.relays.len(),
            self.destinations.len(),
        );
        if ns == 0 || nd == 0 {
            return Err(QmpError::Validation(
                "network needs at least one source and one destination".into(),
            ));
        }
        if self.h_sr.len() != ns || self.h_sd.len() != ns || self.h_rd.len() != nr {
            return Err(QmpError::Dimension(
                "channel set does not match node counts".into(),
            ));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if !(s.power > 0.0 && s.power.is_finite()) {
                return Err(QmpError::Validation(format!(
                    "source {i} power budget must be positive"
                )));
            }
            if s.covariances.len() != nd {
                return Err(QmpError::Dimension(format!(
                    "source {i} needs one covariance per destination"
                )));
            }
            for (k, r) in s.covariances.iter().enumerate() {
                check_covariance(&format!("R_s[{i}][{k}]"), r, r.rows(), false)?;
            }
            if self.h_sr[i].len() != nr || self.h_sd[i].len() != nd {
                return Err(QmpError::Dimension(format!(
                    "channel rows for source {i} have the wrong length"
                )));
            }
        }
        for (j, r) in self.relays.iter().enumerate() {
            if !(r.power > 0.0 && r.power.is_finite()) {
                return Err(QmpError::Validation(format!(
                    "relay {j} power budget must be positive"
                )));
            }
            check_covariance(&format!("R_n1[{j}]"), &r.noise, r.receive, true)?;
            if self.h_rd[j].len() != nd {
                return Err(QmpError::Dimension(format!(
                    "channel row for relay {j} has the wrong length"
                )));
            }
        }
        for (k, d) in self.destinations.iter().enumerate() {
            check_covariance(&format!("R_n2[{k}]"), &d.noise, d.antennas, true)?;
        }
        for (i, s) in self.sources.iter().enumerate() {
            for (j, r) in self.relays.iter().enumerate() {
                check_shape(
                    &format!("H_sr[{i}][{j}]"),
                    &self.h_sr[i][j],
                    r.receive,
                    s.antennas,
                )?;
            }
            for (k, d) in self.destinations.iter().enumerate() {
                check_shape(
                    &format!("H_sd[{i}][{k}]"),
                    &self.h_sd[i][k],
                    d.antennas,
                    s.antennas,
                )?;
            }
        }
        for (j, r) in self.relays.iter().enumerate() {
            for (k, d) in self.destinations.iter().enumerate() {
                check_shape(
                    &format!("H_rd[{j}][{k}]"),
                    &self.h_rd[j][k],
                    d.antennas,
                    r.transmit,
                )?;
            }
        }
        if (0..nd).any(|k| self.stream_total(k) == 0) {
            return Err(QmpError::Validation(
                "every destination must receive at least one stream".into(),
            ));
        }
        Ok(())
    }

    /// Sources with streams toward destination `k`, in stacking order.
    pub fn senders(&self, k: usize) -> Vec<usize> {
        (0..self.sources.len())
            .filter(|&i| self.sources[i].streams(k) > 0)
            .collect()
    }

    /// Row offset of source `i` inside the desired stack of destination `k`.
    pub fn stream_offset(&self, i: usize, k: usize) -> usize {
        (0..i).map(|l| self.sources[l].streams(k)).sum()
    }

    pub fn stream_total(&self, k: usize) -> usize {
        self.sources.iter().map(|s| s.streams(k)).sum()
    }

    /// Destinations that source `i` serves.
    pub fn targets(&self, i: usize) -> Vec<usize> {
        (0..self.destinations.len())
            .filter(|&k| self.sources[i].streams(k) > 0)
            .collect()
    }

    /// Desired-signal energy at destination `k`.
    pub fn signal_energy(&self, k: usize) -> f64 {
        self.sources
            .iter()
            .map(|s| s.covariances[k].trace().re)
            .sum()
    }
}

/// Precoders `P[i][k]`, relay matrices `F[j]` and equalizers `G[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransceiverState {
    pub precoders: Vec<Vec<CMatrix>>,
    pub relays: Vec<CMatrix>,
    pub equalizers: Vec<CMatrix>,
}

impl TransceiverState {
    pub fn zeros(net: &RelayNetwork) -> Self {
        let precoders = net
            .sources
            .iter()
            .map(|s| {
                s.covariances
                    .iter()
                    .map(|r| CMatrix::zeros(s.antennas, r.rows()))
                    .collect()
            })
            .collect();
        let relays = net
            .relays
            .iter()
            .map(|r| CMatrix::zeros(r.transmit, r.receive))
            .collect();
        let equalizers = (0..net.destinations.len())
            .map(|k| CMatrix::zeros(net.stream_total(k), net.destinations[k].antennas))
            .collect();
        Self {
            precoders,
            relays,
            equalizers,
        }
    }

    pub fn check(&self, net: &RelayNetwork) -> Result<()> {
        let shape = Self::zeros(net);
        let ok = self.precoders.len() == shape.precoders.len()
            && self.relays.len() == shape.relays.len()
            && self.equalizers.len() == shape.equalizers.len()
            && self.precoders.iter().zip(&shape.precoders).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape())
            })
            && self
                .relays
                .iter()
                .zip(&shape.relays)
                .all(|(a, b)| a.shape() == b.shape())
            && self
                .equalizers
                .iter()
                .zip(&shape.equalizers)
                .all(|(a, b)| a.shape() == b.shape());
        if ok {
            Ok(())
        } else {
            Err(QmpError::Dimension(
                "transceiver state does not match the network".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    Relay,
    Uplink,
    Downlink,
    Multicell,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Relay => "RELAY",
            Preset::Uplink => "UPLINK",
            Preset::Downlink => "DOWNLINK",
            Preset::Multicell => "MULTICELL",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = QmpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RELAY" => Ok(Preset::Relay),
            "UPLINK" => Ok(Preset::Uplink),
            "DOWNLINK" => Ok(Preset::Downlink),
            "MULTICELL" => Ok(Preset::Multicell),
            _ => Err(QmpError::Parse(format!("unknown preset '{s}'"))),
        }
    }
}

/// Node counts and per-node sizes. Presets ignore counts that do not apply
/// (UPLINK has one destination and no relays, DOWNLINK one source, MULTICELL
/// one source, relay and destination per cell with `sources` cells).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkDims {
    pub sources: usize,
    pub relays: usize,
    pub destinations: usize,
    pub antennas: usize,
    pub streams: usize,
}

impl Default for NetworkDims {
    fn default() -> Self {
        Self {
            sources: 2,
            relays: 2,
            destinations: 2,
            antennas: 2,
            streams: 1,
        }
    }
}

impl FromStr for NetworkDims {
    type Err = QmpError;

    /// `sources,relays,destinations,antennas,streams`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|e| QmpError::Parse(format!("dims '{s}': {e}")))
            })
            .collect::<Result<_>>()?;
        match parts[..] {
            [sources, relays, destinations, antennas, streams] => Ok(Self {
                sources,
                relays,
                destinations,
                antennas,
                streams,
            }),
            _ => Err(QmpError::Parse(format!(
                "dims '{s}' must have five comma-separated counts"
            ))),
        }
    }
}

impl fmt::Display for NetworkDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{}",
            self.sources, self.relays, self.destinations, self.antennas, self.streams
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub preset: Preset,
    pub dims: NetworkDims,
    pub noise_variance: f64,
    pub source_power: f64,
    pub relay_power: f64,
}

impl ScenarioConfig {
    pub fn new(preset: Preset, dims: NetworkDims) -> Self {
        Self {
            preset,
            dims,
            noise_variance: 0.1,
            source_power: 1.0,
            relay_power: 1.0,
        }
    }
}

fn cn_or_zero(rows: usize, cols: usize, linked: bool, rng: &mut ChaCha8Rng) -> CMatrix {
    if linked {
        CMatrix::random_cn(rows, cols, rng)
    } else {
        CMatrix::zeros(rows, cols)
    }
}

pub fn generate_network(cfg: &ScenarioConfig, seed: u64) -> Result<RelayNetwork> {
    let d = cfg.dims;
    if d.antennas == 0 || d.streams == 0 {
        return Err(QmpError::Parameter(
            "antennas and streams must be positive".into(),
        ));
    }
    if d.streams > d.antennas {
        return Err(QmpError::Parameter("streams cannot exceed antennas".into()));
    }
    if !(cfg.noise_variance > 0.0 && cfg.source_power > 0.0 && cfg.relay_power > 0.0) {
        return Err(QmpError::Parameter(
            "noise variance and power budgets must be positive".into(),
        ));
    }
    let (ns, nr, nd) = match cfg.preset {
        Preset::Relay => (d.sources, d.relays, d.destinations),
        Preset::Uplink => (d.sources, 0, 1),
        Preset::Downlink => (1, 0, d.destinations),
        Preset::Multicell => (d.sources, d.sources, d.sources),
    };
    if ns == 0 || nd == 0 || (cfg.preset == Preset::Relay && nr == 0) {
        return Err(QmpError::Parameter(format!(
            "{} needs positive node counts",
            cfg.preset
        )));
    }
    let serves = |i: usize, k: usize| match cfg.preset {
        Preset::Relay => i % nd == k,
        Preset::Uplink | Preset::Downlink => true,
        Preset::Multicell => i == k,
    };
    let neighbour = |a: usize, b: usize| a == b || (a + 1) % ns == b;
    let a = d.antennas;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let sources = (0..ns)
        .map(|i| Source {
            antennas: a,
            power: cfg.source_power,
            covariances: (0..nd)
                .map(|k| {
                    if serves(i, k) {
                        CMatrix::identity(d.streams)
                    } else {
                        CMatrix::zeros(0, 0)
                    }
                })
                .collect(),
        })
        .collect();
    let noise = CMatrix::identity(a).scale(cfg.noise_variance);
    let relays = (0..nr)
        .map(|_| Relay {
            receive: a,
            transmit: a,
            power: cfg.relay_power,
            noise: noise.clone(),
        })
        .collect();
    let destinations = (0..nd)
        .map(|_| Destination {
            antennas: a,
            noise: noise.clone(),
        })
        .collect();

    let multicell = cfg.preset == Preset::Multicell;
    let h_sr = (0..ns)
        .map(|i| {
            (0..nr)
                .map(|j| cn_or_zero(a, a, !multicell || neighbour(i, j), &mut rng))
                .collect()
        })
        .collect();
    let h_rd = (0..nr)
        .map(|j| {
            (0..nd)
                .map(|k| cn_or_zero(a, a, !multicell || neighbour(j, k), &mut rng))
                .collect()
        })
        .collect();
    let direct = nr == 0;
    let h_sd = (0..ns)
        .map(|_| {
            (0..nd)
                .map(|_| cn_or_zero(a, a, direct, &mut rng))
                .collect()
        })
        .collect();

    let net = RelayNetwork {
        sources,
        relays,
        destinations,
        h_sr,
        h_rd,
        h_sd,
    };
    net.validate()?;
    Ok(net)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceFixture {
    pub antennas: usize,
    pub power: f64,
    pub covariances: Vec<MatrixFixture>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelayFixture {
    pub receive: usize,
    pub transmit: usize,
    pub power: f64,
    pub noise: MatrixFixture,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DestinationFixture {
    pub antennas: usize,
    pub noise: MatrixFixture,
}

/// Serialized network; `h_sd` may be omitted when there are no direct links.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFixture {
    pub sources: Vec<SourceFixture>,
    pub relays: Vec<RelayFixture>,
    pub destinations: Vec<DestinationFixture>,
    pub h_sr: Vec<Vec<MatrixFixture>>,
    pub h_rd: Vec<Vec<MatrixFixture>>,
    #[serde(default)]
    pub h_sd: Vec<Vec<MatrixFixture>>,
}

fn grid_to_fixture(g: &[Vec<CMatrix>]) -> Vec<Vec<MatrixFixture>> {
    g.iter()
        .map(|row| row.iter().map(MatrixFixture::from).collect())
        .collect()
}

fn grid_from_fixture(g: &[Vec<MatrixFixture>]) -> Result<Vec<Vec<CMatrix>>> {
    g.iter()
        .map(|row| row.iter().map(CMatrix::try_from).collect())
        .collect()
}

impl From<&RelayNetwork> for NetworkFixture {
    fn from(net: &RelayNetwork) -> Self {
        Self {
            sources: net
                .sources
                .iter()
                .map(|s| SourceFixture {
                    antennas: s.antennas,
                    power: s.power,
                    covariances: s.covariances.iter().map(MatrixFixture::from).collect(),
                })
                .collect(),
            relays: net
                .relays
                .iter()
                .map(|r| RelayFixture {
                    receive: r.receive,
                    transmit: r.transmit,
                    power: r.power,
                    noise: MatrixFixture::from(&r.noise),
                })
                .collect(),
            destinations: net
                .destinations
                .iter()
                .map(|d| DestinationFixture {
                    antennas: d.antennas,
                    noise: MatrixFixture::from(&d.noise),
                })
                .collect(),
            h_sr: grid_to_fixture(&net.h_sr),
            h_rd: grid_to_fixture(&net.h_rd),
            h_sd: grid_to_fixture(&net.h_sd),
        }
    }
}

impl TryFrom<&NetworkFixture> for RelayNetwork {
    type Error = QmpError;

    fn try_from(f: &NetworkFixture) -> Result<Self> {
        let sources: Vec<Source> = f
            .sources
            .iter()
            .map(|s| {
                Ok(Source {
                    antennas: s.antennas,
                    power: s.power,
                    covariances: s
                        .covariances
                        .iter()
                        .map(CMatrix::try_from)
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<_>>()?;
        let relays = f
            .relays
            .iter()
            .map(|r| {
                Ok(Relay {
                    receive: r.receive,
                    transmit: r.transmit,
                    power: r.power,
                    noise: (&r.noise).try_into()?,
                })
            })
            .collect::<Result<_>>()?;
        let destinations: Vec<Destination> = f
            .destinations
            .iter()
            .map(|d| {
                Ok(Destination {
                    antennas: d.antennas,
                    noise: (&d.noise).try_into()?,
                })
            })
            .collect::<Result<_>>()?;
        let h_sd = if f.h_sd.is_empty() {
            sources
                .iter()
                .map(|s| {
                    destinations
                        .iter()
                        .map(|d| CMatrix::zeros(d.antennas, s.antennas))
                        .collect()
                })
                .collect()
        } else {
            grid_from_fixture(&f.h_sd)?
        };
        let net = RelayNetwork {
            sources,
            relays,
            destinations,
            h_sr: grid_from_fixture(&f.h_sr)?,
            h_rd: grid_from_fixture(&f.h_rd)?,
            h_sd,
        };
        net.validate()?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = ScenarioConfig::new(Preset::Relay, NetworkDims::default());
        assert_eq!(
            generate_network(&cfg, 9).unwrap(),
            generate_network(&cfg, 9).unwrap()
        );
        assert_ne!(
            generate_network(&cfg, 9).unwrap(),
            generate_network(&cfg, 10).unwrap()
        );
    }

    #[test]
    fn uplink_has_no_relay_stage() {
        let cfg = ScenarioConfig::new(
            Preset::Uplink,
            NetworkDims {
                sources: 3,
                ..NetworkDims::default()
            },
        );
        let net = generate_network(&cfg, 1).unwrap();
        assert_eq!(net.destinations.len(), 1);
        assert!(net.relays.is_empty());
        assert_eq!(net.senders(0), vec![0, 1, 2]);
        assert!(net.h_sd[0][0].fro_norm() > 0.0);
    }

    #[test]
    fn multicell_zero_blocks() {
        let cfg = ScenarioConfig::new(
            Preset::Multicell,
            NetworkDims {
                sources: 3,
                ..NetworkDims::default()
            },
        );
        let net = generate_network(&cfg, 2).unwrap();
        assert_eq!(net.h_sr[0][2].fro_norm(), 0.0);
        assert!(net.h_sr[0][1].fro_norm() > 0.0);
        assert_eq!(net.targets(1), vec![1]);
    }

    #[test]
    fn entry_variance_is_unit() {
        let dims = NetworkDims {
            sources: 80,
            relays: 80,
            destinations: 1,
            antennas: 4,
            streams: 1,
        };
        let net = generate_network(&ScenarioConfig::new(Preset::Relay, dims), 3).unwrap();
        let entries: Vec<f64> = net
            .h_sr
            .iter()
            .flatten()
            .flat_map(|m| m.iter().map(|z| z.norm_sqr()))
            .collect();
        assert!(entries.len() >= 100_000);
        let mean = entries.iter().sum::<f64>() / entries.len() as f64;
        assert!((0.99..=1.01).contains(&mean), "{mean}");
    }

    #[test]
    fn fixture_round_trip() {
        let net = generate_network(
            &ScenarioConfig::new(Preset::Relay, NetworkDims::default()),
            4,
        )
        .unwrap();
        let json = serde_json::to_string(&NetworkFixture::from(&net)).unwrap();
        let back: NetworkFixture = serde_json::from_str(&json).unwrap();
        assert_eq!(RelayNetwork::try_from(&back).unwrap(), net);
    }

    #[test]
    fn rejects_bad_dims() {
        assert!("2,2,2".parse::<NetworkDims>().is_err());
        let dims = NetworkDims {
            streams: 3,
            ..NetworkDims::default()
        };
        assert!(generate_network(&ScenarioConfig::new(Preset::Relay, dims), 0).is_err());
    }
}
