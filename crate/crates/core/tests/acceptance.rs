//! One PASS/FAIL line per acceptance criterion. Lines go straight to the
//! process stdout so they show up even when the harness captures output.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use autogan::controller::Controller;
use autogan::data_io::{load_checkpoint, save_checkpoint};
use autogan::genotype::{decode, encode, enumerate_cell, random_genotype, search_space_size, Genotype, TokenSpec};
use autogan::metrics::{frechet_distance, inception_score, matrix_sqrt_psd, symmetric_eigen, GaussianStats, Matrix};
use autogan::networks::{
    extract_child, forward_child, gan_train_step, generator_param_names, grow, sample_latent, DiscMode, Discriminator,
    GanStepOptions, NetConfig, Supernet,
};
use autogan::rl::{reinforce_update, BaselineState};
use autogan::run::{RunContext, EVENTS_FILE};
use autogan::search::{
    derive_final, random_search_baseline, run_iterations, run_search, BaselineMode, Budget, Event, EventKind, Evaluator,
    NoObserver, SearchConfig, SearchData, SearchState, StudyReport, StudyRow, SurrogateEvaluator,
};
use autogan::tensor::{spectral_power_iteration, Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn report(id: usize, name: &str, pass: bool, detail: &str) {
    let line = format!("{} criterion {id:>2} ({name}): {detail}", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
    assert!(pass, "{line}");
}

#[test]
fn criterion_01_gradient_suite() {
    let start = Instant::now();
    let mut worst = ("", 0.0f64);
    for seed in 0..3 {
        for (name, err) in common::gradcheck::suite(seed) {
            if err > worst.1 {
                worst = (name, err);
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst.1 < 1e-3 && elapsed < Duration::from_secs(60);
    report(1, "gradient suite", pass, &format!("worst relative error {:.2e} ({}) in {:.1?}, limit 1e-3 / 60 s", worst.1, worst.0, elapsed));
}

fn brute_force_genotypes(n: usize) -> BTreeSet<Vec<usize>> {
    let mut all = BTreeSet::from([Vec::new()]);
    for s in 0..n {
        let mut next = BTreeSet::new();
        for prefix in &all {
            for gene in enumerate_cell(s) {
                let mut t = prefix.clone();
                t.extend(encode(&gene));
                next.insert(t);
            }
        }
        all = next;
    }
    all
}

#[test]
fn criterion_02_genotype_suite() {
    let mut failures = Vec::new();
    for s in 0..3 {
        let spec = TokenSpec::for_cell(s);
        for gene in enumerate_cell(s) {
            let tokens = encode(&gene);
            if tokens.len() != spec.slot_count() || decode(&tokens, s).ok().as_ref() != Some(&gene) {
                failures.push(format!("cell {s} gene {tokens:?}"));
            }
        }
    }
    // 2·3·3·2 categorical choices per cell and 2^s skip patterns for cell s.
    let formula: u128 = (0..3u32).map(|s| 36 * 2u128.pow(s)).product();
    let size = search_space_size(3);
    if size != 373_248 || size != formula {
        failures.push(format!("search_space_size(3) = {size}, formula {formula}"));
    }
    for n in 1..=2 {
        let brute = brute_force_genotypes(n);
        if brute.len() as u128 != search_space_size(n) {
            failures.push(format!("n = {n}: enumerated {} vs {}", brute.len(), search_space_size(n)));
        }
        for tokens in &brute {
            let mut cells = Vec::new();
            let mut at = 0;
            for s in 0..n {
                let len = TokenSpec::for_cell(s).slot_count();
                cells.push(decode(&tokens[at..at + len], s).unwrap());
                at += len;
            }
            if !Genotype::new(cells, 4, 8, 16).validate().is_empty() {
                failures.push(format!("enumerated genotype {tokens:?} fails validation"));
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("cells 0-2 round trip, |S(3)| = {size}, enumeration agrees for n <= 2")
    } else {
        failures.join("; ")
    };
    report(2, "genotype suite", failures.is_empty(), &detail);
}

#[test]
fn criterion_03_metric_oracles() {
    let (is_uniform, _) = inception_score(&Tensor::full(&[50, 10], 0.1), 10).unwrap();
    let onehot = Tensor::from_fn(&[100, 10], |i| if i % 10 == (i / 10) % 10 { 1.0 } else { 0.0 });
    let (is_onehot, _) = inception_score(&onehot, 10).unwrap();
    // Diagonal Gaussians: ‖μ₁−μ₂‖² + Σ(√a − √b)².
    let (m1, m2) = (vec![1.0, 2.0, -0.5], vec![0.0, 0.5, 0.5]);
    let (d1, d2) = ([4.0, 1.0, 0.25], [1.0, 9.0, 0.25]);
    let diag = |d: &[f64]| (0..3).flat_map(|i| (0..3).map(move |j| if i == j { d[i] } else { 0.0 })).collect::<Vec<f64>>();
    let a = GaussianStats { mean: m1.clone(), cov: diag(&d1) };
    let b = GaussianStats { mean: m2.clone(), cov: diag(&d2) };
    let closed: f64 = m1.iter().zip(&m2).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
        + d1.iter().zip(&d2).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum::<f64>();
    let fid_diag_err = (frechet_distance(&a, &b).unwrap() - closed).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let feats = Tensor::randn(&[400, 64], 1.0, &mut rng);
    let stats = GaussianStats::from_features(&feats).unwrap();
    let fid_self = frechet_distance(&stats, &stats).unwrap();
    let m = Matrix::new(64, stats.cov.clone()).unwrap();
    let s = matrix_sqrt_psd(&m).unwrap();
    let recon = s.matmul(&s);
    let sqrt_err = recon.data.iter().zip(&m.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / m.max_abs();
    let pass = is_uniform == 1.0 && (is_onehot - 10.0).abs() < 1e-12 && fid_diag_err < 1e-6 && fid_self < 1e-6 && sqrt_err < 1e-4;
    report(
        3,
        "metric oracles",
        pass,
        &format!(
            "IS uniform {is_uniform}, IS one-hot {is_onehot}, diagonal FID error {fid_diag_err:.1e}, FID(a,a) {fid_self:.1e}, sqrt residual {sqrt_err:.1e}"
        ),
    );
}

fn net_config() -> NetConfig {
    NetConfig { max_cells: 3, base_resolution: 4, channels: 8, disc_channels: 8, z_dim: 16, image_channels: 3 }
}

#[test]
fn criterion_04_supernet_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = net_config();
    let net = Supernet::build(cfg.clone(), 3, &mut rng).unwrap();
    let z = sample_latent(3, cfg.z_dim, &mut rng);
    let mut worst = 0.0f32;
    for _ in 0..100 {
        let g = random_genotype(3, 4, 8, 16, &mut rng);
        let child = extract_child(&net, &g).unwrap();
        worst = worst.max(child.forward(&z).unwrap().max_abs_diff(&forward_child(&net, &g, &z).unwrap()));
    }

    let mut small = Supernet::build(cfg.clone(), 1, &mut rng).unwrap();
    let mut disc = Discriminator::build(cfg.clone(), 1, &mut rng).unwrap();
    let before = small.params().clone();
    let disc_before = disc.params().clone();
    grow(&mut small, &mut disc, &mut rng).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let preserved = before.iter().all(|(n, p)| bits(&small.params().value(n).unwrap()) == bits(&p.value))
        && disc_before.iter().all(|(n, p)| bits(&disc.params().value(n).unwrap()) == bits(&p.value));

    let mut masked = true;
    let mut d3 = Discriminator::build(cfg.clone(), 3, &mut rng).unwrap();
    let mut net3 = net.clone();
    let opts = GanStepOptions { g_batch: 4, g_lr: 1e-3, d_lr: 1e-3 };
    for _ in 0..5 {
        let g = random_genotype(3, 4, 8, 16, &mut rng);
        let slice = generator_param_names(&g).unwrap();
        let real = Tensor::uniform(&[4, 3, 32, 32], -1.0, 1.0, &mut rng);
        let prev = net3.params().clone();
        gan_train_step(&mut net3, &mut d3, &g, &real, &mut rng, &opts).unwrap();
        for (name, p) in net3.params().iter() {
            if !slice.contains(name) && p.value != prev.get(name).unwrap().value {
                masked = false;
            }
        }
    }
    let pass = worst <= 1e-6 && preserved && masked;
    report(
        4,
        "supernet contracts",
        pass,
        &format!("child parity max diff {worst:.1e} over 100 genotypes, grow preserves weights: {preserved}, update confined to slice: {masked}"),
    );
}

fn top_singular_value(t: &Tensor) -> f64 {
    let rows = t.dim(0);
    let cols = t.numel() / rows;
    let d = t.data();
    let mut gram = vec![0.0f64; rows * rows];
    for i in 0..rows {
        for j in 0..rows {
            gram[i * rows + j] = (0..cols).map(|k| f64::from(d[i * cols + k]) * f64::from(d[j * cols + k])).sum();
        }
    }
    let (vals, _) = symmetric_eigen(&Matrix::new(rows, gram).unwrap());
    vals.iter().copied().fold(0.0, f64::max).sqrt()
}

#[test]
fn criterion_05_spectral_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sigma_range = (f64::MAX, f64::MIN);
    for shape in [[16usize, 27], [8, 72], [32, 16]] {
        let w = Tensor::randn(&shape, 0.7, &mut rng);
        let u0: Vec<f32> = vec![1.0 / (shape[0] as f32).sqrt(); shape[0]];
        let est = spectral_power_iteration(&w, &u0, 100).unwrap();
        let s = top_singular_value(&est.normalized);
        sigma_range = (sigma_range.0.min(s), sigma_range.1.max(s));
    }
    let mut disc = Discriminator::build(net_config(), 2, &mut rng).unwrap();
    disc.converge_spectral(100).unwrap();
    for name in disc.normalized_weights() {
        let w = disc.params().value(&name).unwrap().clone();
        let est = spectral_power_iteration(&w, &disc.u_vectors()[&name], 0).unwrap();
        let s = top_singular_value(&est.normalized);
        sigma_range = (sigma_range.0.min(s), sigma_range.1.max(s));
    }

    // Linear case: x · (cW / σ(cW))ᵀ does not depend on c.
    let w = Tensor::randn(&[6, 10], 1.0, &mut rng);
    let x = Tensor::randn(&[5, 10], 1.0, &mut rng);
    let u0 = vec![1.0 / 6f32.sqrt(); 6];
    let score = |w: &Tensor| {
        let est = spectral_power_iteration(w, &u0, 100).unwrap();
        let mut g = Graph::new();
        let wv = g.input(w.clone());
        let sn = g.spectral_normalize(wv, &est.u, &est.v).unwrap();
        let xv = g.input(x.clone());
        let out = g.linear(xv, sn, None).unwrap();
        g.value(out).clone()
    };
    let base = score(&w);
    let linear_diff = [0.1f32, 3.0, 50.0].iter().map(|&c| score(&w.scale(c)).max_abs_diff(&base)).fold(0.0, f32::max);

    let images = Tensor::uniform(&[4, 3, 16, 16], -1.0, 1.0, &mut rng);
    let before = disc.forward(&images, DiscMode::Eval).unwrap();
    for name in disc.normalized_weights() {
        disc.scale_weight(&name, 4.0).unwrap();
    }
    let disc_diff = disc.forward(&images, DiscMode::Eval).unwrap().max_abs_diff(&before);

    let pass = sigma_range.0 >= 0.99 && sigma_range.1 <= 1.01 && linear_diff < 1e-3 && disc_diff < 1e-3;
    report(
        5,
        "spectral normalization",
        pass,
        &format!(
            "normalized sigma in [{:.5}, {:.5}], linear score change {linear_diff:.1e}, discriminator score change {disc_diff:.1e}",
            sigma_range.0, sigma_range.1
        ),
    );
}

#[test]
fn criterion_06_trace_equivalence() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut mismatches = Vec::new();
    let mut resets = 0;
    for case in 0..20u64 {
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
            ..common::tiny_config()
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
        let data = SearchData::load(&cfg, case).unwrap();
        let mut rec = common::Recorder::default();
        let state = run_search(&cfg, &data, &common::RiggedEvaluator::new(None), ChaCha8Rng::seed_from_u64(case), &mut rec).unwrap();
        let expected = common::reference::interpret(&cfg, &rec.losses_by_iter(cfg.total_iters));
        let kinds: Vec<EventKind> = state.events.iter().map(Event::kind).collect();
        let steps: Vec<usize> =
            state.events.iter().filter_map(|e| if let Event::TrainShared { steps, .. } = e { Some(*steps) } else { None }).collect();
        if kinds != expected.events || steps != expected.steps {
            mismatches.push(case);
        }
        resets += kinds.iter().filter(|k| matches!(k, EventKind::Reset { .. })).count();
    }

    let cfg = common::tiny_config();
    let mut state = SearchState::new(cfg, ChaCha8Rng::seed_from_u64(6)).unwrap();
    let theta = state.controller.params().checksum();
    let omega = state.supernet.params().checksum();
    state.reset_networks().unwrap();
    let theta_kept = state.controller.params().checksum() == theta;
    let omega_changed = state.supernet.params().checksum() != omega;

    let pass = mismatches.is_empty() && resets > 0 && theta_kept && omega_changed;
    report(
        6,
        "search-loop trace equivalence",
        pass,
        &format!(
            "{} of 20 configs match the reference ({resets} resets exercised), reset keeps theta: {theta_kept}, reset changes omega: {omega_changed}",
            20 - mismatches.len()
        ),
    );
}

#[test]
fn criterion_07_policy_improvement() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ctrl = Controller::new(0, 16, &mut rng).unwrap();
    let mut baseline = BaselineState::new(0.9);
    for _ in 0..500 {
        let t = ctrl.sample(None, &mut rng).unwrap();
        let reward = t.tokens.iter().filter(|&&x| x == 0).count() as f32 / t.tokens.len() as f32;
        reinforce_update(&mut ctrl, &t, reward, &mut baseline, 1e-4, 2e-2).unwrap();
    }
    let zeros = vec![0; ctrl.head_count()];
    let p: Vec<f32> = ctrl.slot_distributions(&zeros, None).unwrap().iter().map(|d| d[0]).collect();
    let elapsed = start.elapsed();
    let min_p = p.iter().copied().fold(1.0, f32::min);
    let pass = min_p > 0.9 && elapsed < Duration::from_secs(30);
    report(7, "policy improvement", pass, &format!("min per-slot P(token 0) = {min_p:.4} after 500 steps in {elapsed:.1?}, need > 0.9 within 30 s"));
}

struct DeskSeed {
    seed: u64,
    search_time: Duration,
    derived_is: f64,
    random_median: f64,
    spearman: f64,
}

/// The desk profile end to end for seeds 1..=5: search, derivation, ten
/// budget-matched random retrainings, and the proxy-vs-real table built from
/// the twelve from-scratch retrainings that already exist (the ten random
/// genotypes plus the two best-ranked derived candidates).
fn desk_results() -> &'static [DeskSeed] {
    static RESULTS: OnceLock<Vec<DeskSeed>> = OnceLock::new();
    RESULTS.get_or_init(|| {
        (1..=5)
            .map(|seed| {
                let cfg = SearchConfig::default();
                let data = SearchData::load(&cfg, seed).unwrap();
                let ev = SurrogateEvaluator::train(&cfg, &data, seed).unwrap();
                let start = Instant::now();
                let state = run_search(&cfg, &data, &ev, ChaCha8Rng::seed_from_u64(seed), &mut NoObserver).unwrap();
                let search_time = start.elapsed();
                let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
                let (_, derived) = derive_final(&state, &data, &ev, &mut rng).unwrap();
                let budget = Budget { candidates: 10, train_steps: cfg.retrain_generator_steps, wall_clock: None };
                let (_, random) = random_search_baseline(BaselineMode::EarlyStop, &budget, &cfg, &data, &ev, &mut rng).unwrap();
                let mut rows: Vec<StudyRow> = random
                    .rows
                    .iter()
                    .map(|r| StudyRow { tokens: r.tokens.clone(), proxy: ev.proxy(&state.supernet, &r.genotype).unwrap().reward, real: r.score })
                    .collect();
                rows.extend(derived.retrained.iter().take(2).map(|e| StudyRow {
                    tokens: e.tokens.clone(),
                    proxy: e.proxy_reward.unwrap(),
                    real: e.report.is_mean,
                }));
                let study = StudyReport::from_rows(rows).unwrap();
                let r = DeskSeed {
                    seed,
                    search_time,
                    derived_is: derived.best_entry().report.is_mean,
                    random_median: random.median_score(),
                    spearman: study.spearman,
                };
                let mut out = std::io::stdout().lock();
                let _ = writeln!(
                    out,
                    "  desk seed {seed}: search {:.1?}, derived IS {:.3}, random median {:.3}, spearman {:.3}",
                    r.search_time, r.derived_is, r.random_median, r.spearman
                );
                r
            })
            .collect()
    })
}

#[test]
fn criterion_08_desk_search_beats_random() {
    let results = desk_results();
    let wins = results.iter().filter(|r| r.derived_is > r.random_median).count();
    let slowest = results.iter().map(|r| r.search_time).max().unwrap();
    let pass = wins >= 4 && slowest < Duration::from_secs(30 * 60);
    let per_seed: Vec<String> =
        results.iter().map(|r| format!("s{} {:.3}/{:.3}", r.seed, r.derived_is, r.random_median)).collect();
    report(
        8,
        "desk search vs random",
        pass,
        &format!("derived beats random median in {wins}/5 seeds [{}], slowest search {slowest:.1?}", per_seed.join(", ")),
    );
}

#[test]
fn criterion_09_proxy_validity() {
    let results = desk_results();
    let positive = results.iter().filter(|r| r.spearman > 0.3).count();
    let per_seed: Vec<String> = results.iter().map(|r| format!("s{} {:.3}", r.seed, r.spearman)).collect();
    report(9, "proxy validity", positive >= 4, &format!("spearman > 0.3 in {positive}/5 seeds [{}]", per_seed.join(", ")));
}

#[test]
fn criterion_10_reset_efficiency() {
    let base = SearchConfig { collapse_after_steps: 40, ..SearchConfig::default() };
    let seed = 10;
    let data = SearchData::load(&base, seed).unwrap();
    let ev = SurrogateEvaluator::train(&base, &data, seed).unwrap();
    let run = |reset_enabled: bool| {
        let cfg = SearchConfig { reset_enabled, ..base.clone() };
        run_search(&cfg, &data, &ev, ChaCha8Rng::seed_from_u64(seed), &mut NoObserver).unwrap()
    };
    let with = run(true);
    let without = run(false);
    let final_reward = |s: &SearchState| {
        let last = s.beam.last().unwrap();
        last.iter().map(|e| e.reward).sum::<f64>() / last.len() as f64
    };
    let (rw, ro) = (final_reward(&with), final_reward(&without));
    let rel = (rw - ro).abs() / rw.abs().max(ro.abs());
    let resets = with.events.iter().filter(|e| matches!(e, Event::Reset { .. })).count();
    let pass = with.total_shared_steps < without.total_shared_steps && rel < 0.1 && with.iter == without.iter;
    report(
        10,
        "dynamic-reset efficiency",
        pass,
        &format!(
            "{} vs {} shared steps over {} iterations ({resets} resets), final beam reward {rw:.3} vs {ro:.3} ({:.1}% apart)",
            with.total_shared_steps,
            without.total_shared_steps,
            with.iter,
            100.0 * rel
        ),
    );
}

#[test]
fn criterion_11_persistence() {
    let cfg = SearchConfig { scorer_required_accuracy: 0.0, train_size: 64, reset_threshold: 0.05, ..common::tiny_config() };
    let tmp = tempfile::tempdir().unwrap();

    // Bitwise checkpoint round trip of a trained state.
    let data = SearchData::load(&cfg, 11).unwrap();
    let ev = SurrogateEvaluator::train(&cfg, &data, 11).unwrap();
    let mut state = SearchState::new(cfg.clone(), ChaCha8Rng::seed_from_u64(11)).unwrap();
    run_iterations(&mut state, &data, &ev, &mut NoObserver, Some(3)).unwrap();
    let ck = state.to_checkpoint().unwrap();
    save_checkpoint(&ck, &tmp.path().join("ck")).unwrap();
    let back = load_checkpoint(&tmp.path().join("ck")).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let bitwise = back.tensors.len() == ck.tensors.len()
        && ck.tensors.iter().all(|(k, t)| back.tensors.get(k).is_some_and(|u| u.shape() == t.shape() && bits(u) == bits(t)))
        && back.meta == ck.meta
        && back.rngs == ck.rngs;

    // Uninterrupted run versus a run stopped after two iterations and resumed
    // from its run directory, compared on the written event logs.
    let full_dir = tmp.path().join("full");
    let ctx = RunContext::create(&full_dir, cfg.clone(), 12).unwrap();
    let mut s = ctx.fresh_state().unwrap();
    let mut obs = ctx.observer(None).unwrap();
    run_iterations(&mut s, &ctx.data, &ctx.evaluator, &mut obs, None).unwrap();
    drop(obs);

    let part_dir = tmp.path().join("part");
    let ctx = RunContext::create(&part_dir, cfg.clone(), 12).unwrap();
    let mut s = ctx.fresh_state().unwrap();
    let mut obs = ctx.observer(None).unwrap();
    run_iterations(&mut s, &ctx.data, &ctx.evaluator, &mut obs, Some(2)).unwrap();
    drop((obs, s, ctx));
    let ctx = RunContext::open(&part_dir).unwrap();
    let mut s = ctx.load_state().unwrap();
    let mut obs = ctx.observer(Some(&s)).unwrap();
    run_iterations(&mut s, &ctx.data, &ctx.evaluator, &mut obs, None).unwrap();
    drop(obs);

    let full_log = std::fs::read_to_string(full_dir.join(EVENTS_FILE)).unwrap();
    let resumed_log = std::fs::read_to_string(part_dir.join(EVENTS_FILE)).unwrap();
    let same_log = !full_log.is_empty() && full_log == resumed_log;
    report(
        11,
        "persistence",
        bitwise && same_log,
        &format!("checkpoint round trip bitwise: {bitwise}, resumed event log identical ({} events): {same_log}", full_log.lines().count()),
    );
}
