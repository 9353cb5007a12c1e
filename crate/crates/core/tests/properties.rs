use autogan::controller::Controller;
use autogan::data_io::{load_checkpoint, pixel_byte, save_checkpoint, Checkpoint};
use autogan::genotype::{decode, encode, random_genotype, to_layer_plan, Genotype, TokenSpec};
use autogan::metrics::{inception_score, spearman_rank_correlation};
use autogan::search::{top_k_indices, LossWindow, SearchConfig};
use autogan::tensor::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn genotype(seed: u64, cells: usize) -> Genotype {
    random_genotype(cells, 4, 8, 16, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_genotypes_are_valid_and_round_trip(seed in any::<u64>(), cells in 1usize..=5) {
        let g = genotype(seed, cells);
        prop_assert!(g.validate().is_empty());
        for cell in &g.cells {
            prop_assert_eq!(&decode(&encode(cell), cell.cell_index).unwrap(), cell);
            prop_assert_eq!(encode(cell).len(), TokenSpec::for_cell(cell.cell_index).slot_count());
        }
        prop_assert_eq!(&Genotype::from_text(&g.to_text(), 1, 1, 1).unwrap(), &g);
        let plan = to_layer_plan(&g).unwrap();
        prop_assert_eq!(plan.output_resolution, 4 << cells);
    }

    #[test]
    fn out_of_vocab_tokens_never_decode(cell in 0usize..4, slot_pick in any::<prop::sample::Index>(), extra in 0usize..5) {
        let spec = TokenSpec::for_cell(cell);
        let mut tokens = vec![0; spec.slot_count()];
        let slot = slot_pick.index(tokens.len());
        tokens[slot] = spec.vocab(slot) + extra;
        prop_assert!(decode(&tokens, cell).is_err());
    }

    #[test]
    fn window_std_matches_naive_population_std(values in prop::collection::vec(-100f32..100.0, 0..40), cap in 2usize..20) {
        let w = LossWindow::from_values(cap, &values);
        prop_assert!(w.len() <= cap);
        if values.len() < cap {
            prop_assert!(w.std().is_none());
        } else {
            let tail: Vec<f64> = values[values.len() - cap..].iter().map(|&v| f64::from(v)).collect();
            let mean = tail.iter().sum::<f64>() / cap as f64;
            let naive = (tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cap as f64).sqrt();
            let s = w.std().unwrap();
            prop_assert!(s >= 0.0);
            prop_assert!((s - naive).abs() <= 1e-9 * (1.0 + naive));
        }
    }

    #[test]
    fn top_k_picks_a_descending_dominant_subset(rewards in prop::collection::vec(-5f64..5.0, 1..30), k_pick in any::<prop::sample::Index>()) {
        let k = 1 + k_pick.index(rewards.len());
        let idx = top_k_indices(&rewards, k).unwrap();
        prop_assert_eq!(idx.len(), k);
        prop_assert!(idx.windows(2).all(|w| rewards[w[0]] >= rewards[w[1]]));
        let worst_kept = rewards[*idx.last().unwrap()];
        for (i, &r) in rewards.iter().enumerate() {
            if !idx.contains(&i) {
                prop_assert!(r <= worst_kept);
            }
        }
    }

    #[test]
    fn spearman_is_bounded(pairs in prop::collection::vec((-10f64..10.0, -10f64..10.0), 3..30)) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Ok(r) = spearman_rank_correlation(&x, &y) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        }
    }

    #[test]
    fn inception_score_lies_between_one_and_class_count(seed in any::<u64>(), classes in 2usize..8) {
        let n = 40;
        let logits = Tensor::randn(&[n, classes], 3.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut probs = Vec::with_capacity(n * classes);
        for row in logits.data().chunks_exact(classes) {
            let z: f32 = row.iter().map(|l| l.exp()).sum();
            probs.extend(row.iter().map(|l| l.exp() / z));
        }
        let (is, _) = inception_score(&Tensor::new(vec![n, classes], probs).unwrap(), 10).unwrap();
        prop_assert!(is >= 1.0 - 1e-9 && is <= classes as f64 + 1e-9);
    }

    #[test]
    fn pixel_bytes_are_monotone(a in -1f32..=1.0, b in -1f32..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(pixel_byte(lo) <= pixel_byte(hi));
    }

    #[test]
    fn controller_traces_are_well_formed(seed in any::<u64>(), stage in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ctrl = Controller::new(stage, 8, &mut rng).unwrap();
        let beam: Option<Vec<f32>> = (stage > 0).then(|| vec![0.1; 8]);
        let t = ctrl.sample(beam.as_deref(), &mut rng).unwrap();
        let spec = TokenSpec::for_cell(stage);
        prop_assert_eq!(t.tokens.len(), spec.slot_count());
        for (slot, (&lp, &h)) in t.log_probs.iter().zip(&t.entropies).enumerate() {
            prop_assert!(lp <= 0.0);
            prop_assert!(h >= -1e-6 && h <= (spec.vocab(slot) as f32).ln() + 1e-5);
        }
        for dist in ctrl.slot_distributions(&t.tokens, beam.as_deref()).unwrap() {
            prop_assert!(dist.iter().all(|&p| p > 0.0));
            prop_assert!((dist.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        let scored = ctrl.log_prob_and_entropy(&t.tokens, beam.as_deref()).unwrap();
        prop_assert!((scored.total_log_prob - t.total_log_prob()).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoints_round_trip_bitwise(
        tensors in prop::collection::btree_map("[a-z]{1,6}(/[a-z]{1,4})?", prop::collection::vec(any::<u32>(), 0..50), 1..6),
        meta in prop::collection::btree_map("[a-z_]{1,8}", "[ -~]{0,20}", 0..4),
    ) {
        let mut ck = Checkpoint::new("cafe");
        for (name, bits) in &tensors {
            let data: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
            ck.tensors.insert(name.clone(), Tensor::new(vec![data.len()], data).unwrap());
        }
        for (k, v) in &meta {
            ck.meta.insert(k.clone(), v.trim().to_string());
        }
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_checkpoint(&ck, dir.path()).unwrap();
        prop_assert_eq!(manifest.entries.len(), tensors.len());
        let back = load_checkpoint(dir.path()).unwrap();
        prop_assert_eq!(back.tensors.len(), ck.tensors.len());
        for (name, t) in &ck.tensors {
            let u = &back.tensors[name];
            prop_assert_eq!(u.shape(), t.shape());
            let a: Vec<u32> = t.data().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = u.data().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
        prop_assert_eq!(&back.meta, &ck.meta);
    }

    #[test]
    fn config_text_round_trips(iters_per in 1usize..5, cells in 1usize..4, lr in 1e-6f32..1e-1, threshold in 0f64..1.0) {
        let cfg = SearchConfig { u_stage: iters_per, total_iters: iters_per * cells, num_cells: cells, g_lr: lr, reset_threshold: threshold, ..SearchConfig::default() };
        cfg.validate().unwrap();
        let back = autogan::data_io::parse_config(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
