use qmp::fixture;
use qmp::relay::bcd::{margin_min, BUDGET_SLACK, DESCENT_SLACK};
use qmp::relay::network::NetworkFixture;
use qmp::relay::{
    generate_network, run_design, simulate, total_mse, DesignSettings, InitPolicy, NetworkDims,
    Preset, RelayNetwork, ScenarioConfig,
};

fn config(preset: Preset, antennas: usize, streams: usize) -> ScenarioConfig {
    let dims = NetworkDims {
        antennas,
        streams,
        ..NetworkDims::default()
    };
    ScenarioConfig::new(preset, dims)
}

#[test]
fn network_fixture_survives_a_file_round_trip() {
    let net = generate_network(&config(Preset::Multicell, 2, 1), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    fixture::write_json(&path, &NetworkFixture::from(&net)).unwrap();
    let back: NetworkFixture = fixture::read_json(&path).unwrap();
    assert_eq!(RelayNetwork::try_from(&back).unwrap(), net);
}

#[test]
fn multi_stream_designs_descend_within_budget() {
    for preset in [Preset::Relay, Preset::Multicell, Preset::Downlink] {
        let net = generate_network(&config(preset, 3, 2), 7).unwrap();
        let settings = DesignSettings {
            max_sweeps: 40,
            ..DesignSettings::default()
        };
        let d = run_design(&net, &settings).unwrap();
        assert!(d.trace.is_monotone(DESCENT_SLACK), "{preset}");
        assert!(margin_min(&net, &d.state) >= -BUDGET_SLACK, "{preset}");
        assert!((total_mse(&net, &d.state).unwrap() - d.trace.final_mse()).abs() < 1e-12);
    }
}

#[test]
fn random_starts_descend() {
    let net = generate_network(&config(Preset::Relay, 2, 1), 12).unwrap();
    let finals: Vec<f64> = (0..3)
        .map(|s| {
            let settings = DesignSettings {
                init: InitPolicy::Random(s),
                ..DesignSettings::default()
            };
            let d = run_design(&net, &settings).unwrap();
            assert!(d.trace.is_monotone(DESCENT_SLACK));
            d.trace.final_mse()
        })
        .collect();
    let initial = run_design(
        &net,
        &DesignSettings {
            max_sweeps: 1,
            ..DesignSettings::default()
        },
    )
    .unwrap()
    .trace
    .initial_mse;
    assert!(finals.iter().all(|f| *f < initial));
}

#[test]
fn designed_state_matches_simulation() {
    let net = generate_network(&config(Preset::Uplink, 2, 1), 3).unwrap();
    let d = run_design(&net, &DesignSettings::default()).unwrap();
    let est = simulate(&net, &d.state, 200_000, 5).unwrap();
    let analytic = d.trace.final_mse();
    assert!(
        (est.mse - analytic).abs() / analytic < 0.03,
        "{} vs {analytic}",
        est.mse
    );
}
