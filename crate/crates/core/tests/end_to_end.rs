use sha2::{Digest, Sha256};

use cscr_core::experiment::{parse_config, run_sweep, SweepParam, SweepSpec};
use cscr_core::sim::{collect, overlay_violations, simulate, Outcome};
use cscr_core::{Protocol, SimConfig};

fn small() -> SimConfig {
    SimConfig {
        num_sus: 15,
        num_flows: 4,
        sim_duration: 3.0,
        rng_seed: 7,
        ..SimConfig::default()
    }
}

#[test]
fn trace_hash_is_sha256_of_the_recorded_lines() {
    let raw = simulate(&small(), Protocol::Cscr, true).unwrap();
    let lines = raw.trace.as_ref().unwrap();
    assert_eq!(lines.len() as u64, raw.events);
    let mut h = Sha256::new();
    for l in lines {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    let hex: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(hex, raw.trace_hash);
    // Recording the trace does not change the run.
    assert_eq!(simulate(&small(), Protocol::Cscr, false).unwrap().trace_hash, raw.trace_hash);
}

#[test]
fn every_protocol_conserves_and_respects_pus() {
    for p in Protocol::ALL {
        let raw = simulate(&small(), p, false).unwrap();
        let m = collect(&raw);
        assert_eq!(m.generated, m.delivered + m.dropped + m.in_flight, "{p}");
        assert!(overlay_violations(&raw).is_empty(), "{p}");
        let delivered_bits: u64 = raw.flows.iter().map(|f| f.delivered_bits).sum();
        let expected = delivered_bits as f64 / raw.sim_duration;
        assert!((m.goodput_bps - expected).abs() <= 1e-9 * expected.max(1.0));
        assert!(raw.attempts.iter().all(|a| a.end >= a.start));
    }
}

#[test]
fn launch_never_forms_groups_and_undercover_does() {
    let launch = simulate(&small(), Protocol::Launch, false).unwrap();
    assert!(launch.attempts.iter().all(|a| a.group.len() == 1 && a.nulled_pus.is_empty()));
    let under = simulate(&small(), Protocol::Undercover, false).unwrap();
    assert!(under.attempts.iter().any(|a| a.group.len() > 1));
}

#[test]
fn delivered_attempts_match_deliveries_at_destinations() {
    let raw = simulate(&small(), Protocol::Cscr, false).unwrap();
    let ok = raw
        .attempts
        .iter()
        .filter(|a| a.outcome == Outcome::Delivered)
        .filter(|a| raw.state.flows[a.flow.index()].destination == a.receiver)
        .count();
    assert_eq!(ok, raw.deliveries.len());
}

#[test]
fn config_text_round_trip_through_sweep() {
    let cfg = parse_config("num_sus = 12\nnum_flows = 3 # few\nsim_duration = 1.5\n").unwrap();
    assert_eq!(cfg.num_sus, 12);
    let spec = SweepSpec::new(&cfg, Some(SweepParam::NumChannels), vec![Protocol::Cscr], 2);
    let rows = run_sweep(&cfg, &spec).unwrap();
    assert_eq!(rows.len(), SweepParam::NumChannels.default_values().len());
    let json = serde_json::to_string(&rows).unwrap();
    let back: Vec<cscr_core::experiment::SweepRow> = serde_json::from_str(&json).unwrap();
    assert_eq!(back, rows);
}
