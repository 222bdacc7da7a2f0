mod common;

use std::time::Duration;

use vtl_core::channel::PsrCurve;
use vtl_core::metrics::{compare_receivers, compute_metrics};
use vtl_core::nodes::ScanGate;
use vtl_core::scenario::load_scenario;
use vtl_core::sim::run;
use vtl_core::trace::Trace;

#[test]
fn metrics_from_written_csv_equal_in_memory_metrics() {
    let file = load_scenario(&common::scenario_dir().join("quinta-del-rei-approach.toml")).unwrap();
    let trace = run(&file.scenario).unwrap();
    let reread = Trace::read_csv(trace.to_csv_string().as_bytes()).unwrap();
    assert_eq!(reread, trace);
    assert_eq!(compute_metrics(&reread), compute_metrics(&trace));
}

#[test]
fn report_counts_are_consistent() {
    let s = common::relayed(Duration::from_secs(8), PsrCurve::default(), 3);
    let r = compute_metrics(&run(&s).unwrap());
    for n in &r.nodes {
        assert!((0.0..=1.0).contains(&n.psr()));
        if n.rx_ok > 0 {
            assert_eq!(n.update_intervals_us.len() as u64, n.rx_ok - 1);
        }
    }
    let links: u64 = r.links.iter().map(|l| l.addressed).sum();
    let nodes: u64 = r.nodes.iter().map(|n| n.addressed()).sum();
    assert_eq!(links, nodes);
}

#[test]
fn identical_receivers_compare_near_one() {
    let mut s = common::static_link(
        30.0,
        Duration::from_secs(30),
        PsrCurve::default(),
        ScanGate::continuous(),
        4,
    );
    let mut twin = s.receivers[0].clone();
    twin.config.node_id = vtl_core::NodeId(20);
    s.receivers.push(twin);
    let r = compute_metrics(&run(&s).unwrap());
    let c = compare_receivers(&r, common::RX, vtl_core::NodeId(20)).unwrap();
    assert!((c.count_ratio.unwrap() - 1.0).abs() < 0.02);
}

#[test]
fn shipped_scenarios_load() {
    for name in ["avenida-europa-sweep", "quinta-del-rei-approach", "static-10m"] {
        let path = common::scenario_dir().join(format!("{name}.toml"));
        load_scenario(&path).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
