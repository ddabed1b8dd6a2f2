mod common;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Array4};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use omnilogic_core::dot;
use omnilogic_core::evaluation::extract_answer;
use omnilogic_core::factory::{generate, GenerationSpec};
use omnilogic_core::features::{pool, read_features, write_features, FeatureMatrix};
use omnilogic_core::instance::{InteractionType, Modality};
use omnilogic_core::logic::{close, Atom, KnowledgeBase, Polarity};
use omnilogic_core::probe::{class_weights, group_folds, Standardizer};
use omnilogic_core::prompt::{build, sample_modality_order, PromptMode};
use omnilogic_core::render::{parse_text, render_graph, render_text, RenderSettings};
use omnilogic_core::{Category, VocabularyConfig};

fn kb(seed: u64) -> KnowledgeBase {
    common::random_kb(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn vocab_atom() -> impl Strategy<Value = Atom> {
    let v = VocabularyConfig::default();
    let subjects: Vec<(String, Category)> = v
        .persons
        .iter()
        .map(|s| (s.clone(), Category::Person))
        .chain(v.animals.iter().map(|s| (s.clone(), Category::Animal)))
        .chain(v.fruits.iter().map(|s| (s.clone(), Category::Fruit)))
        .collect();
    (proptest::sample::select(subjects), proptest::sample::select(v.attributes))
        .prop_map(|((s, c), a)| Atom::new(s, a, c))
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn closure_is_idempotent_and_extensive(seed in any::<u64>()) {
        let base = kb(seed);
        let closed = close(&base).unwrap();
        prop_assert!(base.facts.is_subset(&closed));
        let again = close(&KnowledgeBase::new(closed.iter().cloned(), base.rules.clone())).unwrap();
        prop_assert_eq!(again, closed);
    }

    #[test]
    fn closure_matches_naive_scan(seed in any::<u64>()) {
        let base = kb(seed);
        prop_assert_eq!(close(&base).unwrap(), common::naive_closure(&base));
    }

    #[test]
    fn positive_closure_is_monotone(seed in any::<u64>(), extra in vocab_atom()) {
        let mut base = kb(seed);
        for r in &mut base.rules {
            r.antecedents.retain(|l| l.polarity == Polarity::Positive);
        }
        base.rules.retain(|r| !r.antecedents.is_empty());
        let small = close(&base).unwrap();
        let mut bigger = base.clone();
        bigger.facts.insert(extra);
        prop_assert!(small.is_subset(&close(&bigger).unwrap()));
    }

    #[test]
    fn text_round_trips(atom in vocab_atom()) {
        let v = VocabularyConfig::default();
        let sentence = render_text(&atom);
        prop_assert_eq!(parse_text(&sentence, &v), Some(atom.clone()));
        prop_assert_eq!(parse_text(&format!("{sentence}."), &v), Some(atom));
    }

    #[test]
    fn graphs_are_well_formed_and_order_free(facts in proptest::collection::vec(vocab_atom(), 1..8), seed in any::<u64>()) {
        let settings = RenderSettings::default();
        let doc = render_graph(&facts, &settings).unwrap();
        let g = dot::parse(&doc).unwrap();
        prop_assert!(g.directed);
        let edges: BTreeSet<(String, String)> = g.edges.iter().map(|(a, b, _)| (a.clone(), b.clone())).collect();
        let want: BTreeSet<(String, String)> = facts.iter().map(|f| (capitalize(&f.subject), f.attribute.clone())).collect();
        prop_assert_eq!(edges, want);
        prop_assert!(g.edges.iter().all(|(_, _, a)| a.get("label").map(String::as_str) == Some("is")));

        let mut shuffled = facts.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(render_graph(&shuffled, &settings).unwrap(), doc);
    }

    #[test]
    fn pooling_is_linear(
        dims in (1usize..4, 1usize..4, 1usize..4, 1usize..5),
        a in 0.0f32..3.0,
        b in 0.0f32..3.0,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array4::from_shape_fn(dims, |_| rng.random::<f32>());
        let y = Array4::from_shape_fn(dims, |_| rng.random::<f32>());
        let combo = &x * a + &y * b;
        let lhs = pool(combo.view()).unwrap();
        let rhs = pool(x.view()).unwrap() * f64::from(a) + pool(y.view()).unwrap() * f64::from(b);
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            prop_assert!((l - r).abs() <= 1e-5 * (1.0 + r.abs()), "{l} vs {r}");
        }
        let c = pool(Array4::from_elem(dims, 0.25f32).view()).unwrap();
        prop_assert!(c.iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn feature_files_round_trip(
        shape in (1usize..5, 1usize..5),
        rows in 1usize..12,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = BTreeMap::from([
            ("modality".to_string(), vec!["text".to_string(), "vision".to_string(), "audio".to_string()]),
            ("outcome".to_string(), vec!["wrong".to_string(), "right".to_string()]),
        ]);
        let mut m = FeatureMatrix::new(shape.0, shape.1, tables.clone());
        for i in 0..rows {
            let x = Array2::from_shape_fn(shape, |_| f64::from(rng.random::<f32>()));
            let labels = BTreeMap::from([
                ("modality".to_string(), tables["modality"][rng.random_range(0..3)].clone()),
                ("outcome".to_string(), tables["outcome"][rng.random_range(0..2)].clone()),
            ]);
            m.push(&x, &format!("g{}", i / 2), &labels).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.feat");
        write_features(&path, &m).unwrap();
        prop_assert_eq!(read_features(&path).unwrap(), m);
    }

    #[test]
    fn standardized_training_columns_have_unit_moments(
        rows in 2usize..40,
        cols in 1usize..6,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((rows, cols), |(_, j)| if j == 0 { 7.0 } else { rng.random::<f64>() * 10.0 - 3.0 });
        let z = Standardizer::fit(x.view()).transform(x.view());
        for j in 0..cols {
            let col = z.column(j);
            let mean = col.sum() / rows as f64;
            let var = col.mapv(|v| (v - mean) * (v - mean)).sum() / rows as f64;
            prop_assert!(mean.abs() < 1e-9);
            if j == 0 {
                prop_assert!(col.iter().all(|&v| v == 0.0));
            } else {
                prop_assert!((var - 1.0).abs() < 1e-9, "column {j} variance {var}");
            }
        }
    }

    #[test]
    fn folds_keep_groups_together(
        sizes in proptest::collection::vec(1usize..5, 5..40),
        k in 2usize..6,
        seed in any::<u64>(),
    ) {
        let groups: Vec<String> = sizes.iter().enumerate().flat_map(|(g, &n)| std::iter::repeat_n(format!("g{g}"), n)).collect();
        let folds = group_folds(&groups, k, seed).unwrap();
        let mut fold_of = BTreeMap::new();
        for (g, f) in groups.iter().zip(&folds) {
            prop_assert!(*f < k);
            prop_assert_eq!(*fold_of.entry(g).or_insert(*f), *f);
        }
        let used: BTreeSet<usize> = folds.iter().copied().collect();
        prop_assert_eq!(used.len(), k);
        prop_assert_eq!(group_folds(&groups, k, seed).unwrap(), folds);
    }

    #[test]
    fn balanced_weights_sum_to_n(labels in proptest::collection::vec(0usize..4, 1..60)) {
        let w = class_weights(&labels, 4, true);
        let total: f64 = w.iter().sum();
        prop_assert!((total - labels.len() as f64).abs() < 1e-9);
        let present: BTreeSet<usize> = labels.iter().copied().collect();
        let k = present.len() as f64;
        for c in present {
            let mass: f64 = labels.iter().zip(&w).filter(|(l, _)| **l == c).map(|(_, w)| w).sum();
            prop_assert!((mass - total / k).abs() < 1e-9, "class {c} carries {mass}");
        }
    }

    #[test]
    fn modality_order_is_a_permutation(seed in any::<u64>()) {
        let order = sample_modality_order(seed);
        let set: BTreeSet<Modality> = order.iter().copied().collect();
        prop_assert_eq!(set.len(), 3);
        prop_assert_eq!(sample_modality_order(seed), order);
    }

    #[test]
    fn appended_answer_line_wins(prefix in "[a-z .,\n]{0,80}", idx in 0usize..4) {
        let letter = ['A', 'B', 'C', 'D'][idx];
        prop_assert_eq!(extract_answer(&format!("{prefix}\nAnswer: {letter}")), Some(letter));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn prompts_are_deterministic(seed in 0u64..500, order_seed in any::<u64>(), t in 0usize..6) {
        let inst = generate(&GenerationSpec::new(InteractionType::ALL[t]), seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let r = common::render_all(std::slice::from_ref(&inst), dir.path()).remove(0);
        let a = build(&r, &inst, PromptMode::Reasoning, order_seed, None).unwrap();
        let b = build(&r, &inst, PromptMode::Reasoning, order_seed, None).unwrap();
        prop_assert_eq!(a.hash(), b.hash());
        prop_assert_eq!(a.modality_order, sample_modality_order(order_seed));
        prop_assert!(a.transcript().contains("Rules are as follows:"));
    }
}
