mod common;

use autogan::data_io::{load_checkpoint, save_checkpoint};
use autogan::search::{run_iterations, run_search, Event, EventKind, NoObserver, SearchConfig, SearchData, SearchState};
use common::reference::interpret;
use common::{tiny_config, Recorder, RiggedEvaluator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_config(rng: &mut ChaCha8Rng) -> SearchConfig {
    let num_cells = rng.random_range(1..=3);
    let u_stage = rng.random_range(1..=3);
    let num_candidates = rng.random_range(1..=4);
    let mut cfg = SearchConfig {
        num_cells,
        u_stage,
        total_iters: num_cells * u_stage,
        shared_epochs_per_iter: rng.random_range(1..=2),
        ctrl_steps_per_iter: rng.random_range(0..=3),
        num_candidates,
        top_k: rng.random_range(1..=num_candidates),
        window_len: rng.random_range(2..=6),
        reset_enabled: rng.random_bool(0.8),
        ..tiny_config()
    };
    match rng.random_range(0..4) {
        0 => cfg.reset_threshold = 0.0,
        1 => cfg.reset_threshold = f64::INFINITY,
        2 => {
            cfg.reset_threshold = 1e-3;
            cfg.collapse_after_steps = rng.random_range(1..=6);
        }
        _ => cfg.reset_threshold = 0.05,
    }
    cfg
}

#[test]
fn event_trace_matches_reference_interpreter() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut resets, mut quiet) = (0, 0);
    for case in 0..20 {
        let cfg = random_config(&mut rng);
        cfg.validate().unwrap();
        let data = SearchData::load(&cfg, case).unwrap();
        let mut rec = Recorder::default();
        let state = run_search(&cfg, &data, &RiggedEvaluator::new(None), ChaCha8Rng::seed_from_u64(case), &mut rec).unwrap();
        let expected = interpret(&cfg, &rec.losses_by_iter(cfg.total_iters));
        let kinds: Vec<EventKind> = state.events.iter().map(Event::kind).collect();
        assert_eq!(kinds, expected.events, "case {case}: {cfg:?}");
        let steps: Vec<usize> = state
            .events
            .iter()
            .filter_map(|e| if let Event::TrainShared { steps, .. } = e { Some(*steps) } else { None })
            .collect();
        assert_eq!(steps, expected.steps, "case {case}");
        assert_eq!(rec.events, state.events);
        let n = kinds.iter().filter(|k| matches!(k, EventKind::Reset { .. })).count();
        resets += n;
        quiet += usize::from(n == 0);
    }
    assert!(resets > 0 && quiet > 0, "the random configs should cover both outcomes ({resets} resets, {quiet} quiet runs)");
}

#[test]
fn growth_happens_only_on_schedule() {
    let cfg = SearchConfig { total_iters: 6, u_stage: 2, num_cells: 3, ..tiny_config() };
    let data = SearchData::load(&cfg, 0).unwrap();
    let state = run_search(&cfg, &data, &RiggedEvaluator::new(None), ChaCha8Rng::seed_from_u64(0), &mut NoObserver).unwrap();
    let grows: Vec<usize> = state.events.iter().filter(|e| matches!(e, Event::Grow { .. })).map(Event::iter).collect();
    assert_eq!(grows, vec![2, 4]);
    assert_eq!(state.stage, 2);
    assert_eq!(state.supernet.num_cells(), 3);
    assert_eq!(state.beam.stages.len(), 3);
}

#[test]
fn beam_rewards_never_increase_within_a_stage() {
    let cfg = SearchConfig { num_candidates: 6, top_k: 4, ..tiny_config() };
    let data = SearchData::load(&cfg, 1).unwrap();
    let state = run_search(&cfg, &data, &RiggedEvaluator::new(None), ChaCha8Rng::seed_from_u64(1), &mut NoObserver).unwrap();
    for stage in &state.beam.stages {
        assert_eq!(stage.len(), 4);
        assert!(stage.windows(2).all(|w| w[0].reward >= w[1].reward));
    }
    for (s, stage) in state.beam.stages.iter().enumerate() {
        assert!(stage.iter().all(|e| e.genotype.num_cells() == s + 1));
        if s > 0 {
            let parents: Vec<_> = state.beam.stages[s - 1].iter().map(|e| &e.genotype).collect();
            assert!(stage.iter().all(|e| parents.contains(&&e.genotype.prefix(s))));
        }
    }
}

#[test]
fn reset_reinitializes_networks_but_not_the_controller() {
    let cfg = tiny_config();
    let mut state = SearchState::new(cfg, ChaCha8Rng::seed_from_u64(3)).unwrap();
    let theta = state.controller.params().checksum();
    let omega = state.supernet.params().checksum();
    let disc = state.disc.params().checksum();
    state.window_g.push(1.0);
    state.reset_networks().unwrap();
    assert_eq!(state.controller.params().checksum(), theta);
    assert_ne!(state.supernet.params().checksum(), omega);
    assert_ne!(state.disc.params().checksum(), disc);
    assert!(state.window_g.is_empty());
}

#[test]
fn always_firing_reset_keeps_theta_when_the_controller_is_idle() {
    // No controller steps and a single stage: θ may only change if a reset
    // touched it.
    let cfg = SearchConfig {
        num_cells: 1,
        u_stage: 4,
        total_iters: 4,
        ctrl_steps_per_iter: 0,
        reset_threshold: f64::INFINITY,
        ..tiny_config()
    };
    let data = SearchData::load(&cfg, 4).unwrap();
    let mut rec = Recorder::default();
    let state = run_search(&cfg, &data, &RiggedEvaluator::new(None), ChaCha8Rng::seed_from_u64(4), &mut rec).unwrap();
    let resets = state.events.iter().filter(|e| matches!(e, Event::Reset { .. })).count();
    assert_eq!(resets, 4);
    let theta: Vec<&String> = rec.controller_checksums.iter().map(|(_, c)| c).collect();
    assert!(theta.windows(2).all(|w| w[0] == w[1]));
    let omega: Vec<&String> = rec.supernet_checksums.iter().map(|(_, c)| c).collect();
    assert!(omega.windows(2).all(|w| w[0] != w[1]));
    // Each phase stops as soon as both windows fill.
    for e in &state.events {
        if let Event::TrainShared { steps, reset_flag, .. } = e {
            assert!(reset_flag);
            assert_eq!(*steps, cfg.window_len);
        }
    }
}

#[test]
fn zero_threshold_never_resets() {
    let cfg = SearchConfig { reset_threshold: 0.0, collapse_after_steps: 2, ..tiny_config() };
    let data = SearchData::load(&cfg, 5).unwrap();
    let state = run_search(&cfg, &data, &RiggedEvaluator::new(None), ChaCha8Rng::seed_from_u64(5), &mut NoObserver).unwrap();
    assert!(!state.events.iter().any(|e| matches!(e, Event::Reset { .. })));
}

#[test]
fn same_seed_same_run() {
    let cfg = tiny_config();
    let data = SearchData::load(&cfg, 6).unwrap();
    let ev = RiggedEvaluator::new(None);
    let a = run_search(&cfg, &data, &ev, ChaCha8Rng::seed_from_u64(6), &mut NoObserver).unwrap();
    let b = run_search(&cfg, &data, &ev, ChaCha8Rng::seed_from_u64(6), &mut NoObserver).unwrap();
    assert_eq!(a.events, b.events);
    assert_eq!(a.beam, b.beam);
    assert_eq!(a.supernet.params().checksum(), b.supernet.params().checksum());
    assert_eq!(a.controller.params().checksum(), b.controller.params().checksum());
}

#[test]
fn resumed_search_reproduces_the_uninterrupted_log() {
    let cfg = SearchConfig { reset_threshold: 0.05, ..tiny_config() };
    let data = SearchData::load(&cfg, 7).unwrap();
    let ev = RiggedEvaluator::new(None);
    let full = run_search(&cfg, &data, &ev, ChaCha8Rng::seed_from_u64(7), &mut NoObserver).unwrap();
    for stop in [1, 2, 3, 5] {
        let mut partial = SearchState::new(cfg.clone(), ChaCha8Rng::seed_from_u64(7)).unwrap();
        run_iterations(&mut partial, &data, &ev, &mut NoObserver, Some(stop)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&partial.to_checkpoint().unwrap(), dir.path()).unwrap();
        let mut resumed = SearchState::from_checkpoint(cfg.clone(), &load_checkpoint(dir.path()).unwrap()).unwrap();
        run_iterations(&mut resumed, &data, &ev, &mut NoObserver, None).unwrap();
        assert_eq!(resumed.events, full.events, "resumed after {stop} iterations");
        assert_eq!(resumed.beam, full.beam);
        assert_eq!(resumed.supernet.params().checksum(), full.supernet.params().checksum());
    }
}

#[test]
fn resume_under_a_different_config_is_refused() {
    let cfg = tiny_config();
    let state = SearchState::new(cfg.clone(), ChaCha8Rng::seed_from_u64(8)).unwrap();
    let ck = state.to_checkpoint().unwrap();
    let other = SearchConfig { g_lr: 1e-3, ..cfg };
    assert!(matches!(SearchState::from_checkpoint(other, &ck), Err(autogan::Error::Corruption(_))));
}
