mod common;

use common::OccupancyTracker;
use proptest::prelude::*;
use warpdiv_core::cost::{EventKind, SyncStack};
use warpdiv_core::warp::{Token, WarpState};
use warpdiv_core::{parse_program, ArchProfile, LaneMask, LaunchConfig};

fn token(i: usize) -> Token {
    Token::div(LaneMask(i as u32 + 1), i)
}

/// Replays a push/pop script against the stack, a plain Vec, and the
/// count-only tracker.
fn replay(script: &[bool], capacity: usize, chunk: usize) -> Result<(), String> {
    let mut stack = SyncStack::new(Some(capacity), chunk);
    let mut lifo: Vec<Token> = Vec::new();
    let mut tracker = OccupancyTracker::new(capacity, chunk);
    let (mut stores, mut loads) = (0u64, 0u64);
    for (step, &is_push) in script.iter().enumerate() {
        if is_push {
            let t = token(step);
            if stack.push(t) == Some(EventKind::SpillStore) {
                stores += 1;
            }
            lifo.push(t);
            tracker.push();
        } else {
            let Some(expected) = lifo.pop() else { continue };
            let (got, ev) = stack.pop().ok_or("stack empty early")?;
            if ev == Some(EventKind::SpillLoad) {
                loads += 1;
            }
            if got != expected {
                return Err(format!("step {step}: popped {got}, expected {expected}"));
            }
            tracker.pop();
        }
        if stack.on_chip_len() > capacity {
            return Err(format!("step {step}: on-chip {} > {capacity}", stack.on_chip_len()));
        }
        if stack.spilled_len() % chunk != 0 {
            return Err(format!("step {step}: spilled {} not a chunk multiple", stack.spilled_len()));
        }
        if (stack.on_chip_len(), stack.spilled_len()) != (tracker.on_chip, tracker.spilled) {
            return Err(format!("step {step}: occupancy disagrees with tracker"));
        }
        if stack.depth() != lifo.len() {
            return Err(format!("step {step}: depth"));
        }
    }
    if (stores, loads) != (tracker.stores, tracker.loads) {
        return Err("event counts disagree with tracker".into());
    }
    Ok(())
}

#[test]
fn exhaustive_short_scripts_match_tracker() {
    for (capacity, chunk) in [(4, 2), (5, 2), (3, 3), (4, 1)] {
        for len in 0..=14u32 {
            for bits in 0u32..(1 << len) {
                let script: Vec<bool> = (0..len).map(|i| bits & (1 << i) != 0).collect();
                if let Err(e) = replay(&script, capacity, chunk) {
                    panic!("capacity {capacity} chunk {chunk} script {script:?}: {e}");
                }
            }
        }
    }
}

#[test]
fn monotone_pushes_up_to_25_at_default_capacity() {
    for len in 0..=25 {
        let script = vec![true; len];
        replay(&script, 16, 4).unwrap();
    }
}

#[test]
fn spill_chunk_leaves_room_for_four_pushes() {
    let mut s = SyncStack::new(Some(16), 4);
    let mut events = Vec::new();
    for i in 0..25 {
        events.push(s.push(token(i)));
    }
    // pushes 17 and 21 spill; 18..=20 and 22..=24 fit in the freed room
    let spilled_at: Vec<usize> = events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_some())
        .map(|(i, _)| i + 1)
        .collect();
    assert_eq!(spilled_at, vec![17, 21, 25]);
}

#[test]
fn reload_restores_a_full_chunk() {
    let mut s = SyncStack::new(Some(16), 4);
    for i in 0..17 {
        s.push(token(i));
    }
    for _ in 0..13 {
        assert_eq!(s.pop().unwrap().1, None);
    }
    assert_eq!((s.on_chip_len(), s.spilled_len()), (0, 4));
    let (t, ev) = s.pop().unwrap();
    assert_eq!(ev, Some(EventKind::SpillLoad));
    assert_eq!(t, token(3));
    assert_eq!((s.on_chip_len(), s.spilled_len()), (3, 0));
}

proptest! {
    #[test]
    fn random_scripts_match_tracker(script in proptest::collection::vec(any::<bool>(), 0..200)) {
        prop_assert!(replay(&script, 16, 4).is_ok());
        prop_assert!(replay(&script, 6, 4).is_ok());
    }

    #[test]
    fn divergence_partitions_the_active_mask(active in any::<u32>(), predicate in any::<u32>()) {
        let p = parse_program("NOP\nEXIT").unwrap();
        let mut s = WarpState::new(&p, &LaunchConfig::new(ArchProfile::kepler())).unwrap();
        s.active_mask = LaneMask(active);
        s.pc = 7;
        let mut sink = Vec::new();
        s.exec_predicated_branch(2, LaneMask(predicate), &mut sink);
        let taken = active & predicate;
        if taken == 0 {
            prop_assert_eq!(s.pc, 8);
            prop_assert_eq!(s.active_mask, LaneMask(active));
            prop_assert!(sink.is_empty());
        } else if taken == active {
            prop_assert_eq!(s.pc, 2);
            prop_assert_eq!(s.active_mask, LaneMask(active));
            prop_assert!(sink.is_empty());
        } else {
            let top = *s.stack.top().unwrap();
            prop_assert_eq!(top.pc, 8);
            prop_assert_eq!(top.mask | s.active_mask, LaneMask(active));
            prop_assert!((top.mask & s.active_mask).is_empty());
            prop_assert!(!top.mask.is_empty());
        }
    }
}
