mod common;

use common::{checked_run, scalar_double, scalar_single, ulps};
use proptest::prelude::*;
use warpdiv_core::cost::{predict_total, ArchProfile, CostError};
use warpdiv_core::isa::{format_program, parse_program, Opcode, Reg};
use warpdiv_core::kernels::{bound_pattern, KernelId, ACCUMULATOR, POST_LOOP_SLOT};
use warpdiv_core::warp::TraceRecord;
use warpdiv_core::{LaunchConfig, RunResult, WARP_SIZE};

fn pattern_run(kernel: KernelId, n: u32) -> RunResult {
    let launch = kernel
        .launch(&bound_pattern(n).unwrap().bounds, ArchProfile::kepler())
        .with_trace(true);
    checked_run(&kernel.program(), &launch)
}

#[test]
fn single_loop_without_divergence() {
    let r = pattern_run(KernelId::SingleLoop, 0);
    assert_eq!(r.events.div_pushes, 0);
    assert_eq!(r.events.sync_pushes, 1);
    assert_eq!(r.events.pops(), 1);

    // the back edge is reached 32 times and taken uniformly by all lanes 31 times
    let p = KernelId::SingleLoop.program();
    let latch = p.label("latch").unwrap();
    let body = p.label("body").unwrap();
    let trace = r.trace.as_ref().unwrap();
    let at_latch: Vec<&TraceRecord> = trace.iter().filter(|t| t.pc == latch).collect();
    assert_eq!(at_latch.len(), 32);
    let taken = at_latch
        .iter()
        .filter(|t| trace[t.ordinal as usize + 1].pc == body)
        .count();
    assert_eq!(taken, 31);
    assert!(at_latch.iter().all(|t| t.active_mask == warpdiv_core::LaneMask::ALL));
}

#[test]
fn single_loop_div_pushes_track_n() {
    for n in [0, 7, 31] {
        assert_eq!(pattern_run(KernelId::SingleLoop, n).events.div_pushes, n as u64);
    }
}

#[test]
fn double_loop_push_examples() {
    let r0 = pattern_run(KernelId::DoubleLoop, 0);
    assert_eq!(r0.events.total_pushes(), 33);
    assert_eq!(r0.events.div_pushes, 0);
    assert_eq!(pattern_run(KernelId::DoubleLoop, 31).events.total_pushes(), 560);
    for n in [1, 15, 31] {
        assert_eq!(pattern_run(KernelId::DoubleLoop, n).max_depth, n as usize + 2);
    }
}

#[test]
fn accumulators_match_scalar_reference_for_patterns() {
    for n in 0..32 {
        let bounds = bound_pattern(n).unwrap().bounds;
        let s = pattern_run(KernelId::SingleLoop, n);
        let d = pattern_run(KernelId::DoubleLoop, n);
        for t in 0..WARP_SIZE {
            let m = bounds[t] as i32;
            let (count, acc) = scalar_single(m);
            assert!(ulps(s.register_f32(ACCUMULATOR, t), acc) as u64 <= count);
            let (ic, oc, acc) = scalar_double(m, m);
            assert!(ulps(d.register_f32(ACCUMULATOR, t), acc) as u64 <= ic + oc);
        }
    }
}

#[test]
fn inner_sync_tokens_never_outlive_their_outer_iteration() {
    let p = KernelId::DoubleLoop.program();
    let inner_ssy = p.label("inner_ssy").unwrap();
    let outer_latch = p.label("outer_latch").unwrap();
    for n in [0, 5, 14, 23, 31] {
        let r = pattern_run(KernelId::DoubleLoop, n);
        // replay: depth at which each inner SYNC sits
        let mut outstanding: Vec<usize> = Vec::new();
        for t in r.trace.as_ref().unwrap() {
            if t.pc == outer_latch {
                assert!(outstanding.is_empty(), "n={n}: inner SYNC alive at outer back edge");
            }
            if t.pc == inner_ssy {
                outstanding.push(t.depth);
            }
            while outstanding.last().is_some_and(|&d| t.depth < d) {
                outstanding.pop();
            }
        }
    }
}

#[test]
fn instrumented_kernel_records_every_iteration() {
    for n in 0..32 {
        let r = pattern_run(KernelId::SingleLoopInstrumented, n);
        let t0 = &r.slots[0];
        assert_eq!(t0.iter().filter(|(s, _)| *s != POST_LOOP_SLOT).count(), 32);
        assert_eq!(t0.iter().filter(|(s, _)| *s == POST_LOOP_SLOT).count(), 1);
        assert_eq!(t0.last().unwrap().0, POST_LOOP_SLOT);
    }
}

#[test]
fn instrumentation_adds_no_control_flow() {
    let plain = pattern_run(KernelId::SingleLoop, 0);
    let inst = pattern_run(KernelId::SingleLoopInstrumented, 0);
    assert_eq!(plain.events, inst.events);
    assert_eq!(plain.max_depth, inst.max_depth);
    for n in [3, 17, 31] {
        assert_eq!(
            pattern_run(KernelId::SingleLoop, n).events,
            pattern_run(KernelId::SingleLoopInstrumented, n).events
        );
    }
}

#[test]
fn spill_extra_cost_splits_between_branch_and_unwind() {
    // with spills the in-loop stamps pick up the store cost, the unwind the load cost
    let k = ArchProfile::kepler();
    let r15 = pattern_run(KernelId::SingleLoopInstrumented, 15);
    let r16 = pattern_run(KernelId::SingleLoopInstrumented, 16);
    let span = |r: &RunResult| r.slot(0, 32).unwrap() - r.slot(0, 1).unwrap();
    let unwind = |r: &RunResult| r.slot(0, POST_LOOP_SLOT).unwrap() - r.slot(0, 32).unwrap();
    assert_eq!(span(&r16) - span(&r15), k.spill_store_cost as u32);
    assert_eq!(unwind(&r16) - unwind(&r15), (k.div_cost + k.spill_load_cost) as u32);
}

#[test]
fn predict_total_examples() {
    let k = ArchProfile::kepler();
    let single = |n| predict_total(KernelId::SingleLoop, &k, &pattern_run(KernelId::SingleLoop, n)).unwrap();
    assert_eq!(single(10), 2052);
    assert_eq!(single(0), 1732);
    let double = predict_total(KernelId::DoubleLoop, &k, &pattern_run(KernelId::DoubleLoop, 5)).unwrap();
    assert_eq!(double, 61824);

    let err = predict_total(
        KernelId::SingleLoop,
        &ArchProfile::maxwell(),
        &pattern_run(KernelId::SingleLoop, 0),
    )
    .unwrap_err();
    assert!(matches!(err, CostError::NoBaseCycles { .. }));
}

#[test]
fn no_spill_when_depth_stays_within_capacity() {
    for n in 0..=15 {
        let r = pattern_run(KernelId::SingleLoop, n);
        assert!(r.max_depth <= 16);
        assert_eq!(r.events.spill_stores + r.events.spill_loads, 0);
    }
    for n in 0..=14 {
        let r = pattern_run(KernelId::DoubleLoop, n);
        assert_eq!(r.events.spill_stores + r.events.spill_loads, 0);
    }
}

#[test]
fn timeline_cycles_decompose_into_issue_and_events() {
    let k = ArchProfile::kepler();
    for kernel in KernelId::ALL {
        for n in [0, 9, 20, 31] {
            let r = pattern_run(kernel, n);
            let expected = k.issue_cost * (r.executed_instructions - r.events.div_pops)
                + warpdiv_core::charge(&r.events, &k);
            assert_eq!(r.cycles, expected, "{kernel} n={n}");
        }
    }
}

#[test]
fn kernel_programs_round_trip_through_text() {
    for kernel in KernelId::ALL {
        let p = kernel.program();
        let text = format_program(&p);
        assert_eq!(parse_program(&text).unwrap(), p, "{kernel}");
    }
    let text = format_program(&KernelId::SingleLoop.program());
    assert!(text.contains("SSY done"));
    assert!(text.contains("@P0 BRA body"));
    assert!(text.contains("NOP.S"));
}

#[test]
fn parsed_listing_behaves_like_the_built_kernel() {
    let listing = "\
        S2R R6, SR_CLOCKLO
        MOV R4, RZ
        ISETP.LT.AND P0, PT, R5, 0x1, PT;
        SSY done;
    @P0 BRA sync;
        NOP;
        NOP;
body:   IADD R4, R4, 0x1;
        FADD32I R0, R0, 1.3332999944686889648;
        ISETP.LT.AND P0, PT, R4, R5, PT;
    @P0 BRA body;
sync:   NOP.S;
done:   S2R R7, SR_CLOCKHI;
        EXIT
";
    let parsed = parse_program(listing).unwrap();
    let built = KernelId::SingleLoop.program();
    assert_eq!(parsed.instructions(), built.instructions());

    let launch = KernelId::SingleLoop.launch(&bound_pattern(19).unwrap().bounds, ArchProfile::kepler());
    let a = checked_run(&parsed, &launch);
    let b = checked_run(&built, &launch);
    assert_eq!(a.events, b.events);
    assert_eq!(a.cycles, b.cycles);
    assert_eq!(a.registers, b.registers);
}

#[test]
fn carrier_other_than_nop_executes_with_restored_mask() {
    // IADD.S runs once per pop, under each popped mask
    let p = parse_program(
        "ISETP.LT P0, R1, 0x10
         SSY done
         @P0 BRA skip
         NOP
skip:    IADD.S R2, R2, 0x1
done:    EXIT",
    )
    .unwrap();
    let lanes: [i32; WARP_SIZE] = std::array::from_fn(|t| t as i32);
    let r = checked_run(&p, &LaunchConfig::new(ArchProfile::kepler()).with_register(Reg::R(1), lanes));
    assert_eq!(r.events.div_pushes, 1);
    // first pop restores the not-taken lanes (t >= 16), the second the full mask
    for t in 0..WARP_SIZE {
        let expected = if t >= 16 { 2 } else { 1 };
        assert_eq!(r.register(Reg::R(2), t), expected, "lane {t}");
    }
    assert!(matches!(p.instructions()[4].opcode, Opcode::Iadd { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_bounds_reconverge(bounds in proptest::array::uniform32(0u32..=32), mask in 1u32..) {
        for kernel in KernelId::ALL {
            let launch = kernel
                .launch(&bounds, ArchProfile::kepler())
                .with_active_mask(warpdiv_core::LaneMask(mask));
            let r = checked_run(&kernel.program(), &launch);
            prop_assert_eq!(r.events.total_pushes(), r.events.pops());
            let body = kernel.program().label("body").or(kernel.program().label("inner")).unwrap() + 1;
            for t in 0..WARP_SIZE {
                let active = mask & (1 << t) != 0;
                let want = match (kernel, active) {
                    (_, false) => 0,
                    (KernelId::DoubleLoop, true) => scalar_double(bounds[t] as i32, bounds[t] as i32).0,
                    (_, true) => scalar_single(bounds[t] as i32).0,
                };
                prop_assert_eq!(r.lane_exec_counts[body][t], want);
            }
        }
    }
}
