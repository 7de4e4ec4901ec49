use addrscope::analysis::{AnalysisConfig, Analyzer, Identity};
use addrscope::monitor::{EventKind, EventSink, MonitorEvent};
use addrscope::sim::{
    evaluate, ground_truth, relay_allowed, run, useless_addresses, ChurnConfig, LinkKind, Role, SimConfig, SimSinks,
    Simulation, DAY_MS, SIM_EPOCH_MS,
};
use proptest::prelude::*;

struct Captured {
    monitors: Vec<Vec<MonitorEvent>>,
    validation: Vec<MonitorEvent>,
    outcome: addrscope::sim::SimOutcome,
}

fn capture(config: &SimConfig) -> Captured {
    let mut monitors: Vec<Vec<MonitorEvent>> = vec![Vec::new(); config.monitors];
    let mut validation = Vec::new();
    let sinks = SimSinks {
        monitors: monitors.iter_mut().map(|m| Box::new(m) as Box<dyn EventSink + '_>).collect(),
        validation: config.validation_peer.then(|| Box::new(&mut validation) as Box<dyn EventSink + '_>),
    };
    let outcome = run(config, sinks).unwrap();
    Captured { monitors, validation, outcome }
}

fn small(seed: u64, churn: bool) -> SimConfig {
    SimConfig {
        n_reachable: 15,
        n_unreachable_useful: 30,
        n_unreachable_useless: 10,
        duration_days: 2,
        seed,
        monitors: 2,
        validation_peer: true,
        churn: if churn { ChurnConfig::calibrated() } else { ChurnConfig::default() },
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn run_invariants(seed in any::<u64>(), churn in any::<bool>()) {
        let config = small(seed, churn);
        let c = capture(&config);
        let s = &c.outcome.stats;
        prop_assert_eq!(s.stale_deliveries, 0);
        prop_assert_eq!(s.block_relay_addr, 0);
        prop_assert_eq!(s.conservation_violations, 0);
        prop_assert_eq!(s.max_unreachable_inbound, 0);
        prop_assert!(s.monitor_deliveries > 0);
        if !churn {
            prop_assert_eq!(s.peers_created as usize, c.outcome.peers.len() + 1);
            prop_assert!(c.outcome.peers.iter().all(|p| p.leave_ms.is_none()));
        }

        let end = SIM_EPOCH_MS + i64::from(config.duration_days) * DAY_MS;
        for log in c.monitors.iter().chain([&c.validation]) {
            prop_assert!(log.windows(2).all(|w| w[0].ts_ms <= w[1].ts_ms));
            prop_assert!(log.iter().all(|e| (SIM_EPOCH_MS..end).contains(&e.ts_ms)));
        }
        // Every monitor ADDR arrives on a session that completed its handshake.
        for log in &c.monitors {
            let mut versioned = std::collections::HashSet::new();
            for e in log {
                match e.kind {
                    EventKind::VersionReceived { .. } => { versioned.insert(e.session); }
                    EventKind::AddrReceived { .. } => prop_assert!(versioned.contains(&e.session)),
                    _ => {}
                }
            }
        }
        // The validation peer only sees peers, never the monitors.
        let reachable: std::collections::HashSet<_> =
            c.outcome.peers.iter().filter(|p| p.reachable).map(|p| p.address).collect();
        let known: std::collections::HashSet<_> = c.outcome.peers.iter().map(|p| p.address).collect();
        prop_assert!(c.validation.iter().all(|e| known.contains(&e.remote.address)));
        // Monitors reach every reachable peer plus the validation peer, which
        // is not part of the ground truth.
        let contacted: std::collections::HashSet<_> = c.monitors[0].iter()
            .filter(|e| e.kind == EventKind::ConnectOpened).map(|e| e.remote.address).collect();
        prop_assert!(reachable.is_subset(&contacted));
        prop_assert_eq!(contacted.difference(&reachable).count(), 1);

        let mut analyzer = Analyzer::new(AnalysisConfig::default());
        for e in &c.monitors[0] {
            analyzer.push(e);
        }
        let analysis = analyzer.finish();
        let useless = useless_addresses(&c.outcome.peers, Identity::AddressOnly);
        for d in &analysis.days {
            prop_assert!(d.u.is_disjoint(&useless));
            prop_assert!(d.a.is_disjoint(&useless));
        }
        let truth = ground_truth(&c.outcome.peers, config.duration_days, Identity::AddressOnly);
        let rows = evaluate(&analysis, &truth, &c.outcome.peers, c.outcome.tracked.as_ref(), Identity::AddressOnly);
        prop_assert_eq!(rows.len(), config.duration_days as usize);
        prop_assert!(rows.iter().all(|r| r.detected_useless == 0));
    }

    #[test]
    fn relay_rule_is_monotone_in_age(age in 0i64..1_000_000, extra in 0i64..1_000_000, lat in 1i64..1000) {
        let cutoff = 600_000;
        if relay_allowed(true, age + extra, lat, cutoff) {
            prop_assert!(relay_allowed(true, age, lat, cutoff));
        }
        prop_assert_eq!(relay_allowed(true, age, lat, cutoff), age + lat <= cutoff);
        prop_assert!(!relay_allowed(false, age, lat, cutoff));
    }

    #[test]
    fn topology_respects_degrees(seed in any::<u64>(), n_reachable in 10usize..40, n_unr in 0usize..80) {
        let config = SimConfig { n_reachable, n_unreachable_useful: n_unr, duration_days: 1, seed, ..Default::default() };
        let sinks = SimSinks { monitors: vec![Box::new(addrscope::monitor::NullSink)], validation: None };
        let sim = Simulation::new(&config, sinks).unwrap();
        let edges = sim.edges();
        for id in 0..sim.node_count() as u32 {
            let out: Vec<_> = edges.iter().filter(|e| e.0 == id).collect();
            match sim.role(id) {
                Role::Reachable | Role::Unreachable => {
                    let full = out.iter().filter(|e| e.2 == LinkKind::FullRelay).count();
                    let block = out.iter().filter(|e| e.2 == LinkKind::BlockRelay).count();
                    prop_assert_eq!(full, config.full_relay_out);
                    prop_assert_eq!(block, config.block_relay_out);
                    prop_assert!(out.iter().all(|e| e.1 != id));
                    prop_assert!(out.iter().all(|e| sim.role(e.1) == Role::Reachable));
                }
                Role::Validation => prop_assert!(out.is_empty()),
                Role::Monitor(_) => {}
            }
            if sim.role(id) == Role::Unreachable {
                prop_assert_eq!(sim.inbound_degree(id), 0);
            }
            prop_assert!(sim.inbound_degree(id) as usize <= config.max_connections);
        }
    }
}

#[test]
fn same_seed_same_run_other_seed_differs() {
    let a = capture(&small(21, true));
    let b = capture(&small(21, true));
    let c = capture(&small(22, true));
    assert_eq!(a.monitors, b.monitors);
    assert_eq!(a.validation, b.validation);
    assert_eq!(a.outcome.peers, b.outcome.peers);
    assert_eq!(a.outcome.stats, b.outcome.stats);
    assert_ne!(a.monitors, c.monitors);
}

#[test]
fn churn_replaces_peers_but_not_the_tracked_one() {
    let config = SimConfig { duration_days: 3, ..small(4, true) };
    let c = capture(&config);
    let initial = config.n_reachable + config.n_unreachable_useful + config.n_unreachable_useless + 1;
    assert!(c.outcome.peers.len() > initial);
    assert!(c.outcome.peers.iter().filter(|p| p.reachable).all(|p| p.leave_ms.is_none()));
    let tracked = c.outcome.tracked.unwrap();
    let rec = c.outcome.peers.iter().find(|p| p.address == tracked.address).unwrap();
    assert!(rec.useful && !rec.reachable && rec.leave_ms.is_none());
    assert_eq!(tracked.emissions.len(), 3);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = SimConfig { monitors: 0, ..SimConfig::default() };
    assert!(run(&bad, SimSinks { monitors: Vec::new(), validation: None }).is_err());
    let tight = SimConfig { n_reachable: 12, max_connections: 10, duration_days: 1, ..SimConfig::default() };
    let sinks = SimSinks { monitors: vec![Box::new(addrscope::monitor::NullSink)], validation: None };
    assert!(Simulation::new(&tight, sinks).is_err());
}
