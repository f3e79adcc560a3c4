use corpusscope::autonet::{
    conv1d_forward, global_max_pool, max_pool_backward, softmax, LayerParams, Tensor2,
};
use corpusscope::corpus::{tokenize, Corpus, Utterance};
use corpusscope::diagnostics::{overlap_curve, ConfidenceHistogram, OverlapMode};
use corpusscope::embedding::{parse_embedding_text, EmbeddingTable, OovPolicy};
use corpusscope::evalharness::{make_fold_plan, Prediction};
use corpusscope::synthlab::{generate, SynthConfig, IMPROVISED, SCRIPTED};
use proptest::prelude::*;

fn corpus_from(seqs: &[Vec<u8>], labels: &[u8]) -> Corpus {
    let utts = seqs
        .iter()
        .zip(labels.iter().cycle())
        .enumerate()
        .map(|(i, (s, l))| {
            let text: Vec<String> = s.iter().map(|t| format!("t{t}")).collect();
            Utterance::new(format!("u{i}"), text.join(" "), format!("l{l}")).unwrap()
        })
        .collect();
    Corpus::new("p", utts).unwrap()
}

fn seqs() -> impl Strategy<Value = Vec<Vec<u8>>> {
    prop::collection::vec(prop::collection::vec(0u8..6, 1..9), 2..25)
}

fn tensor(rows: usize, cols: usize) -> impl Strategy<Value = Tensor2> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| Tensor2::from_vec(rows, cols, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn class_histogram_sums_to_size(s in seqs(), labels in prop::collection::vec(0u8..4, 1..5)) {
        let c = corpus_from(&s, &labels);
        prop_assert_eq!(c.class_histogram().values().sum::<usize>(), c.len());
        prop_assert!(c.labels().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn tokenize_is_idempotent(text in "[a-zA-Z' .,!?]{0,40}") {
        let once = tokenize(&text);
        prop_assert_eq!(tokenize(&once.join(" ")), once.clone());
        prop_assert!(once.iter().all(|t| !t.is_empty() && !t.starts_with('\'')));
    }

    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-500.0f64..500.0, 1..12)) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn conv_is_linear_in_its_input(
        (x, y, w) in (1usize..5, 1usize..4).prop_flat_map(|(dim, filters)| {
            (tensor(7, dim), tensor(7, dim), tensor(filters, 3 * dim))
        }),
        a in -2.0f64..2.0,
    ) {
        let filters = w.rows();
        let params = LayerParams::new(w, Tensor2::zeros(1, filters));
        let mixed = Tensor2::from_vec(
            7,
            x.cols(),
            x.values().iter().zip(y.values()).map(|(p, q)| a * p + q).collect(),
        ).unwrap();
        let fx = conv1d_forward(&x, 3, 1, filters, &params).unwrap();
        let fy = conv1d_forward(&y, 3, 1, filters, &params).unwrap();
        let fm = conv1d_forward(&mixed, 3, 1, filters, &params).unwrap();
        for i in 0..fm.values().len() {
            let expect = a * fx.values()[i] + fy.values()[i];
            prop_assert!((fm.values()[i] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn max_pool_backward_preserves_gradient_mass(
        t in (1usize..8, 1usize..6).prop_flat_map(|(r, c)| tensor(r, c)),
        seed in any::<u64>(),
    ) {
        let pooled = global_max_pool(&t).unwrap();
        let grad: Vec<f64> = (0..t.cols()).map(|f| ((seed >> (f % 60)) & 7) as f64 - 3.5).collect();
        let back = max_pool_backward(&pooled, &grad);
        for (f, &g) in grad.iter().enumerate() {
            let column: f64 = (0..t.rows()).map(|r| back.get(r, f)).sum();
            prop_assert_eq!(column, g);
            prop_assert_eq!(t.get(pooled.argmax[f], f), pooled.values[f]);
        }
    }

    #[test]
    fn overlap_ignores_corpus_order(s in seqs(), rotate in 0usize..25) {
        let c = corpus_from(&s, &[0]);
        let mut r = s.clone();
        let k = rotate % r.len();
        r.rotate_left(k);
        r.reverse();
        let c2 = corpus_from(&r, &[0]);
        for mode in [OverlapMode::Contiguous, OverlapMode::Bag] {
            prop_assert_eq!(
                overlap_curve(&c, 1, 9, mode).unwrap(),
                overlap_curve(&c2, 1, 9, mode).unwrap()
            );
        }
    }

    #[test]
    fn contiguous_overlap_is_monotone_on_fixed_length(
        s in prop::collection::vec(prop::collection::vec(0u8..4, 6), 2..20)
    ) {
        let curve = overlap_curve(&corpus_from(&s, &[0]), 1, 6, OverlapMode::Contiguous).unwrap();
        for w in curve.points.windows(2) {
            prop_assert_eq!(w[0].considered, w[1].considered);
            prop_assert!(w[0].overlapping >= w[1].overlapping);
        }
    }

    #[test]
    fn fold_plans_partition(n in 3usize..200, k in 2usize..12, seed in any::<u64>(), stratified in any::<bool>()) {
        prop_assume!(n >= k);
        let c = corpus_from(&vec![vec![0u8]; n], &[0, 1, 2]);
        let plan = make_fold_plan(&c, k, seed, stratified).unwrap();
        let sizes = plan.fold_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for fold in 0..k {
            let mut all = plan.test_indices(fold);
            all.extend(plan.validation_indices(fold));
            all.extend(plan.train_indices(fold));
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn histogram_accounts_for_every_prediction(
        rows in prop::collection::vec((prop::collection::vec(0.0f64..1.0, 4), 0usize..4), 1..60),
        width in prop::sample::select(vec![0.05, 0.1, 0.125, 0.2, 0.25, 0.5, 1.0]),
    ) {
        let preds: Vec<Prediction> = rows
            .into_iter()
            .map(|(raw, target)| {
                let s: f64 = raw.iter().sum::<f64>() + 1e-9;
                Prediction { id: "p".into(), target, probs: raw.iter().map(|v| (v + 1e-9 / 4.0) / s).collect() }
            })
            .collect();
        let h = ConfidenceHistogram::from_predictions(&preds, width).unwrap();
        prop_assert_eq!(h.total(), preds.len());
        for b in h.brackets.iter().filter(|b| b.lo >= 0.5) {
            // a strict majority forces the argmax; 0.5 exactly can tie
            let strict = preds.iter().all(|p| p.target_prob() != 0.5);
            prop_assert!(b.incorrect == 0 || !strict);
        }
    }

    #[test]
    fn synthetic_labels_are_balanced_and_tags_partition(
        per_label in 5usize..40,
        rate in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let cfg = SynthConfig {
            n_utterances: per_label * 4,
            vocab_size: 200,
            template_count: 8,
            duplication_rate: rate,
            seed,
            ..SynthConfig::default()
        };
        let c = generate(&cfg).unwrap();
        prop_assert!(c.class_histogram().values().all(|&v| v == per_label));
        let scripted = c.utterances().iter().filter(|u| u.has_tag(SCRIPTED)).count();
        let improvised = c.utterances().iter().filter(|u| u.has_tag(IMPROVISED)).count();
        prop_assert_eq!(scripted + improvised, c.len());
        prop_assert!(c.utterances().iter().all(|u| u.has_tag(SCRIPTED) != u.has_tag(IMPROVISED)));
        prop_assert_eq!(scripted, cfg.scripted_count());
    }

    #[test]
    fn embedding_text_round_trips_bit_exactly(
        values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 6)
    ) {
        let t = EmbeddingTable::from_entries(
            3,
            [("a".to_string(), values[..3].to_vec()), ("b".to_string(), values[3..].to_vec())],
            OovPolicy::Zeros,
        ).unwrap();
        let back = parse_embedding_text(&t.to_text()).unwrap();
        prop_assert_eq!(back.checksum(), t.checksum());
        for (x, y) in back.matrix().values().iter().zip(t.matrix().values()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
