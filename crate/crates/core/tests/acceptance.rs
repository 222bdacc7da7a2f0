//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vtl_core::channel::psr_at;
use vtl_core::intersection::{build_standard_intersection, standard_phase_table, validate_phase_table, MovementId};
use vtl_core::metrics::{compare_receivers, compute_metrics};
use vtl_core::nodes::{NodeEventKind, NodeId, NodeInput, Retransmitter, RetransmitterConfig};
use vtl_core::protocol::{
    crc16, decode_frame, effective_throughput, encode_frame, tag_frame, tx_time, FrameParams, LinkTimingParams,
    PAYLOAD_LEN, PAYLOAD_OFFSET,
};
use vtl_core::scenario::load_scenario;
use vtl_core::sim::{run, sweep};
use vtl_core::{NodeMetrics, SimTime};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scenario(name: &str) -> vtl_core::ScenarioFile {
    load_scenario(&common::scenario_dir().join(format!("{name}.toml"))).expect("shipped scenario loads")
}

fn c1_tx_time() -> Outcome {
    let t = tx_time(13, &LinkTimingParams::default());
    ensure(t == 104.0, || format!("tx_time = {t}"))?;
    Ok(format!("tx_time(13 B, 1 Mb/s) = {t} us"))
}

fn c2_throughput() -> Outcome {
    let thr = effective_throughput(24, 104.0, &LinkTimingParams::default());
    ensure((thr - 24.0 / 484.0).abs() < 1e-12, || {
        format!("throughput {thr} != 24/484")
    })?;
    let rel = (thr - 0.050).abs() / 0.050;
    ensure(rel <= 0.01, || format!("{thr} is {:.2}% from 0.050", rel * 100.0))?;
    Ok(format!("{thr:.6} b/us, {:.2}% from 0.050", rel * 100.0))
}

fn c3_phase_table() -> Outcome {
    let text = std::fs::read_to_string(common::fixture("table1.txt")).map_err(|e| e.to_string())?;
    let mut rows = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty());
    let header: Vec<MovementId> = rows
        .next()
        .ok_or("empty fixture")?
        .split_whitespace()
        .skip(1)
        .map(|c| c.parse().unwrap())
        .collect();
    let table = standard_phase_table();
    let mut cells = 0;
    for row in rows {
        let cols: Vec<&str> = row.split_whitespace().collect();
        let state: u8 = cols[0].parse().map_err(|_| format!("bad row `{row}`"))?;
        let phase = table
            .iter()
            .find(|p| p.state_id == state)
            .ok_or(format!("state {state} missing"))?;
        for (m, code) in header.iter().zip(&cols[1..]) {
            let got = phase.color(*m).map(|c| c.code().to_string()).unwrap_or_default();
            ensure(got == *code, || format!("state {state} movement {m}: {got} != {code}"))?;
            cells += 1;
        }
    }
    ensure(cells == 13 * 16, || format!("{cells} cells compared"))?;

    let (_, matrix) = build_standard_intersection();
    let report = validate_phase_table(&table, &matrix).map_err(|e| e.to_string())?;
    ensure(report.is_clean(), || format!("{:?}", report.findings))?;
    let mut pairs = 0;
    for phase in &table {
        let active: Vec<MovementId> = phase.active().collect();
        for a in &active {
            for b in &active {
                if a < b {
                    pairs += 1;
                    ensure(!matrix.is_conflict(*a, *b), || {
                        format!("state {}: {a} vs {b}", phase.state_id)
                    })?;
                }
            }
        }
    }
    Ok(format!(
        "{cells}/208 cells match, 0 conflicts over {pairs} co-active pairs"
    ))
}

fn c4_crc() -> Outcome {
    let mut detected = 0;
    for state in 1..=13u8 {
        let frame = encode_frame(state, &FrameParams::default()).map_err(|e| e.to_string())?;
        for bit in 0..PAYLOAD_LEN * 8 {
            let mut bad = frame.clone();
            bad[PAYLOAD_OFFSET + bit / 8] ^= 0x80 >> (bit % 8);
            ensure(decode_frame(&bad).is_err(), || {
                format!("state {state} bit {bit} undetected")
            })?;
            detected += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0C0);
    for i in 0..1000 {
        let len = rng.random_range(0..=64);
        let data: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        let (a, b) = (crc16(&data), common::crc_oracle(&data));
        ensure(a == b, || format!("string {i}: {a:#06x} != {b:#06x}"))?;
    }
    Ok(format!("{detected}/312 flips detected, 1000/1000 oracle agreements"))
}

fn c5_baseline() -> Outcome {
    let file = scenario("static-10m");
    let trace = run(&file.scenario).map_err(|e| e.to_string())?;
    let r = compute_metrics(&trace);
    let mut total = 0;
    for rx in &file.scenario.receivers {
        let n = r.node(rx.config.node_id).ok_or("receiver silent")?;
        ensure(!n.update_intervals_us.is_empty(), || "no intervals".into())?;
        for &g in &n.update_intervals_us {
            ensure((45_000..=55_000).contains(&g), || format!("interval {g} us"))?;
        }
        total += n.update_intervals_us.len();
    }
    Ok(format!("{total} intervals, all within [45, 55] ms"))
}

fn c6_sweep() -> Outcome {
    let file = scenario("avenida-europa-sweep");
    let spec = file.sweep.ok_or("no sweep section")?;
    let expected: Vec<f64> = (0..=7).map(|i| f64::from(i) * 20.0).collect();
    ensure(spec.parameter == "distance" && spec.values == expected, || {
        "unexpected sweep spec".into()
    })?;
    ensure(file.scenario.duration == Duration::from_secs(20), || {
        "duration is not 20 s".into()
    })?;
    let rx = file.scenario.receivers[0].config.node_id;
    let runs = sweep(&file.scenario, &spec.parameter, &spec.values).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (d, trace) in &runs {
        let r = compute_metrics(trace);
        let n = r.node(rx).cloned().unwrap_or(NodeMetrics::default());
        let want = psr_at(&file.scenario.channel, *d).map_err(|e| e.to_string())?;
        let err = (n.psr() - want).abs();
        worst = worst.max(err);
        ensure(err <= 0.03, || format!("d={d}: measured {:.4} vs {:.4}", n.psr(), want))?;
        if *d <= 60.0 {
            let mean = n.interval_stats().map_or(f64::INFINITY, |s| s.mean_ms);
            ensure(n.psr() >= 0.8 && mean < 100.0, || {
                format!("d={d}: psr {:.4}, mean update {mean:.1} ms", n.psr())
            })?;
        }
    }
    Ok(format!("{} distances, max |psr - psr_at| = {worst:.4}", runs.len()))
}

fn c7_asymmetry() -> Outcome {
    let file = scenario("quinta-del-rei-approach");
    let s = &file.scenario;
    let dedicated = s
        .receivers
        .iter()
        .find(|r| r.config.scan.duty_cycle() == 1.0)
        .ok_or("no dedicated receiver")?;
    let phone = s
        .receivers
        .iter()
        .find(|r| r.config.scan.duty_cycle() < 1.0)
        .ok_or("no duty-cycled receiver")?;
    let r = compute_metrics(&run(s).map_err(|e| e.to_string())?);
    let c = compare_receivers(&r, dedicated.config.node_id, phone.config.node_id).map_err(|e| e.to_string())?;
    let ratio = c.count_ratio.ok_or("duty-cycled receiver got nothing")?;
    let mean = r
        .node(phone.config.node_id)
        .and_then(NodeMetrics::interval_stats)
        .ok_or("no intervals")?
        .mean_ms;
    ensure((2.5..=4.5).contains(&ratio), || format!("count ratio {ratio:.3}"))?;
    ensure(mean > 100.0, || format!("duty-cycled mean update {mean:.1} ms"))?;
    Ok(format!("count ratio {ratio:.3}, duty-cycled mean update {mean:.1} ms"))
}

fn c8_determinism() -> Outcome {
    let approach = scenario("quinta-del-rei-approach").scenario;
    let a = run(&approach).map_err(|e| e.to_string())?.to_csv_string();
    let b = run(&approach).map_err(|e| e.to_string())?.to_csv_string();
    ensure(a == b, || "approach traces differ".into())?;

    let file = scenario("avenida-europa-sweep");
    let values = file.sweep.ok_or("no sweep")?.values;
    let mut reversed = values.clone();
    reversed.reverse();
    let fwd: BTreeMap<u64, String> = sweep(&file.scenario, "distance", &values)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(v, t)| (v.to_bits(), t.to_csv_string()))
        .collect();
    let rev: BTreeMap<u64, String> = sweep(&file.scenario, "distance", &reversed)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(v, t)| (v.to_bits(), t.to_csv_string()))
        .collect();
    ensure(fwd == rev, || "sweep depends on value order".into())?;
    Ok(format!(
        "{} bytes identical over two runs; {} sweep traces order-independent",
        a.len(),
        fwd.len()
    ))
}

fn c9_relay_fuzz() -> Outcome {
    const CTRL: NodeId = NodeId(1);
    const TAG: u8 = 0x5C;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5AFE);
    let period_us: u64 = 200_000;
    let start_us: u64 = 7_300;
    let mut cfg = RetransmitterConfig::new(NodeId(2), TAG, CTRL);
    cfg.controller_period = Duration::from_micros(period_us);
    cfg.advertising_interval = Duration::from_millis(10);
    cfg.adv_delay_max = Duration::from_millis(3);
    cfg.seed = 17;
    let mut relay = Retransmitter::new(cfg, SimTime::from_micros(start_us)).map_err(|e| e.to_string())?;

    // model: last controller state accepted during each period's observe half
    let mut heard: BTreeMap<u64, u8> = BTreeMap::new();
    let slot = |t: u64| -> Option<(u64, bool)> {
        (t >= start_us).then(|| ((t - start_us) / period_us, (t - start_us) % period_us < period_us / 2))
    };

    let mut now = 0u64;
    let mut emitted = 0;
    for i in 0..10_000 {
        now += rng.random_range(0..=15_000);
        if rng.random_range(0..4) == 0 {
            // land exactly on a slot boundary now and then
            if let Some((k, _)) = slot(now) {
                now = start_us + k * period_us + period_us / 2 * rng.random_range(1..=2);
            }
        }
        let t = SimTime::from_micros(now);
        let out = if rng.random_range(0..3) == 0 {
            relay.retransmitter_step(NodeInput::Wake, t)
        } else {
            let state: u8 = rng.random_range(0..=15);
            let mut bytes = encode_frame(state.clamp(1, 13), &FrameParams::default()).unwrap();
            let mut valid = (1..=13).contains(&state);
            if !valid {
                bytes[PAYLOAD_OFFSET] = state;
                let crc = crc16(&bytes[PAYLOAD_OFFSET..PAYLOAD_OFFSET + 1]);
                bytes[PAYLOAD_OFFSET + 1..PAYLOAD_OFFSET + 3].copy_from_slice(&crc.to_be_bytes());
            }
            match rng.random_range(0..6) {
                0 => {
                    let bit = rng.random_range(0..PAYLOAD_LEN * 8);
                    bytes[PAYLOAD_OFFSET + bit / 8] ^= 0x80 >> (bit % 8);
                    valid = false;
                }
                1 => {
                    bytes = tag_frame(&bytes, rng.random()).unwrap();
                    valid = false;
                }
                2 => {
                    bytes.truncate(rng.random_range(0..13));
                    valid = false;
                }
                _ => {}
            }
            let source = if rng.random_range(0..4) == 0 {
                NodeId(rng.random_range(3..9))
            } else {
                CTRL
            };
            let out = relay.retransmitter_step(NodeInput::Frame { source, bytes: &bytes }, t);
            if valid && source == CTRL {
                if let Some((k, true)) = slot(now) {
                    heard.insert(k, state);
                }
            }
            out
        };
        for ev in out.events {
            let NodeEventKind::Transmit(tx) = ev.kind else { continue };
            emitted += 1;
            let at = tx.at.as_micros();
            let (k, observing) = slot(at).ok_or(format!("event {i}: transmission before start"))?;
            ensure(!observing, || {
                format!("event {i}: transmission at {at} us during observe slot")
            })?;
            let expected = heard.get(&k).copied();
            ensure(expected == Some(tx.state_id), || {
                format!(
                    "event {i}: relayed state {} in period {k}, controller sent {expected:?}",
                    tx.state_id
                )
            })?;
            let decoded = decode_frame(&tx.frame).map_err(|e| format!("event {i}: {e}"))?;
            ensure(decoded.tag == Some(TAG) && tx.tag == Some(TAG), || {
                format!("event {i}: untagged frame")
            })?;
            ensure(decoded.state_id == tx.state_id, || {
                format!("event {i}: payload disagrees")
            })?;
        }
    }
    ensure(emitted > 0, || "relay never transmitted".into())?;
    Ok(format!(
        "10000 inputs, {emitted} relayed frames, all tagged and heard this period"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("frame airtime", c1_tx_time),
        ("effective throughput", c2_throughput),
        ("phase table fidelity", c3_phase_table),
        ("CRC integrity", c4_crc),
        ("baseline update time", c5_baseline),
        ("PSR-distance sweep", c6_sweep),
        ("receiver asymmetry", c7_asymmetry),
        ("determinism", c8_determinism),
        ("relay safety fuzz", c9_relay_fuzz),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS  criterion {}: {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {}: {name}: {why}", i + 1);
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
