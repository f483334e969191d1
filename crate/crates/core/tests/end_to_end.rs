mod common;

use mpsim::pipeline::{run_with_log, Machine};
use mpsim::trace_model::{capture_branch_oracle, TraceRecord};
use mpsim::{compute_ipc, run, MachineConfig, PolicyKind};

use common::{interpret, trace};

fn assert_equivalent(t: &[TraceRecord], cfg: &MachineConfig) {
    let want = interpret(t);
    let (stats, log) = run_with_log(t, &capture_branch_oracle(t), cfg).unwrap();
    assert_eq!(stats.committed_instructions, t.len() as u64);
    assert_eq!(log.records.len(), t.len());
    for (i, c) in log.records.iter().enumerate() {
        assert_eq!(c.seq, i as u64);
        let got: Vec<Option<u64>> = c.sources.iter().map(|s| s.map(|p| p.seq)).collect();
        assert_eq!(got, want.sources[i], "{} seq {i}", cfg.policy);
    }
    let fin: Vec<Option<u64>> = log.final_map.iter().map(|s| s.map(|p| p.seq)).collect();
    assert_eq!(fin, want.final_writers);
}

#[test]
fn equivalent_on_constrained_machines() {
    let t = trace(42, 4_000, 0.6);
    let shapes = [
        MachineConfig { fetch_width: 8, ..MachineConfig::default() },
        MachineConfig { phys_tags: 40, ..MachineConfig::default() },
        MachineConfig { window_size: 24, issue_width: 4, ..MachineConfig::default() },
        MachineConfig { max_branch_levels: 2, frontend_depth: 3, ..MachineConfig::default() },
        MachineConfig { commit_width: 2, writeback_width: 3, ..MachineConfig::default() },
    ];
    for shape in shapes {
        for p in PolicyKind::ALL {
            assert_equivalent(&t, &MachineConfig { policy: p, ..shape.clone() });
        }
    }
}

#[test]
fn equivalent_on_branch_heavy_trace() {
    let t = mpsim::trace_model::generate_synthetic_trace(&mpsim::TraceSpec {
        instruction_count: 5_000,
        branch_fraction: 0.6,
        hard_branch_fraction: 0.9,
        static_branch_count: 8,
        seed: 9,
        ..mpsim::TraceSpec::default()
    })
    .unwrap();
    for p in PolicyKind::ALL {
        assert_equivalent(&t, &MachineConfig::with_policy(p));
    }
}

#[test]
fn measurement_window() {
    let t = trace(5, 20_000, 0.3);
    let o = capture_branch_oracle(&t);
    let full = run(&t, &o, &MachineConfig::with_policy(PolicyKind::DynamicDee)).unwrap();
    let cfg = MachineConfig {
        warmup_instructions: 5_000,
        measure_instructions: Some(10_000),
        ..MachineConfig::with_policy(PolicyKind::DynamicDee)
    };
    let part = run(&t, &o, &cfg).unwrap();
    assert_eq!(part.committed_instructions, 10_000);
    assert_eq!(part.warmup_instructions, 5_000);
    assert!(part.cycles < full.cycles);
    assert!(part.cond_branches < full.cond_branches);
    assert!(compute_ipc(&part).unwrap() > 0.0);
}

#[test]
fn stepping_matches_batch_run() {
    let t = trace(8, 3_000, 0.5);
    let o = capture_branch_oracle(&t);
    let cfg = MachineConfig::with_policy(PolicyKind::SelectiveDee);
    let mut m: Machine<'_, f64> = Machine::new(&t, &o, cfg.clone()).unwrap();
    while !m.is_done() {
        m.step_cycle().unwrap();
    }
    assert_eq!(m.finish().unwrap().0, run(&t, &o, &cfg).unwrap());
}

#[test]
fn perfect_dominates_on_hard_traces() {
    for seed in 20..23 {
        let t = trace(seed, 10_000, 0.7);
        let o = capture_branch_oracle(&t);
        let ipc = |p| compute_ipc(&run(&t, &o, &MachineConfig::with_policy(p)).unwrap()).unwrap();
        let best = ipc(PolicyKind::PerfectSingle);
        for p in &PolicyKind::ALL[1..] {
            assert!(ipc(*p) <= best, "seed {seed} {p}");
        }
    }
}
