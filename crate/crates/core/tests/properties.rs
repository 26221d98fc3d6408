use std::collections::BTreeSet;

use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skillmux_core::corpus::{dedup_by_id, truncate_chars};
use skillmux_core::dense::{
    normalized, random_unit, AnnConfig, EmbeddingProvider, HashingEmbedder, TextKind, VectorIndex,
};
use skillmux_core::eval::{fc_at_10, hit_at_1, mrr_at_10, recall_at_k};
use skillmux_core::forge::{jaccard, trigrams, ShingleMode};
use skillmux_core::latency::percentile;
use skillmux_core::objectives::{
    checks, info_nce, listwise_ce, pointwise_bce, ListwiseScores, SimilarityMatrix, Temperature,
};
use skillmux_core::rerank::{parse_judge_reply, promote};
use skillmux_core::sparse::{tokenize, Bm25Index, Bm25Params};
use skillmux_core::{Ranking, ScoredHit, Skill};

fn ranking_of(ids: &[usize]) -> Ranking {
    Ranking::new(ids.iter().map(|i| ScoredHit::new(format!("s{i}"), 0.0)).collect())
}

fn tau() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.05), Just(1.0), 0.05f64..2.0]
}

proptest! {
    #[test]
    fn metrics_are_bounded_and_monotone(
        perm in Just((0..60usize).collect::<Vec<_>>()).prop_shuffle(),
        depth in 0usize..60,
        gt in proptest::collection::btree_set(0usize..60, 1..6),
    ) {
        let r = ranking_of(&perm[..depth]);
        let gt: BTreeSet<String> = gt.iter().map(|i| format!("s{i}")).collect();
        let (r10, r20, r50) = (recall_at_k(&r, &gt, 10), recall_at_k(&r, &gt, 20), recall_at_k(&r, &gt, 50));
        prop_assert!(r10 <= r20 && r20 <= r50 && r50 <= 1.0);
        let mrr = mrr_at_10(&r, &gt);
        prop_assert!((0.0..=1.0).contains(&mrr));
        prop_assert!(f64::from(hit_at_1(&r, &gt)) <= mrr);
        prop_assert_eq!(fc_at_10(&r, &gt) == 1, r10 == 1.0);
    }

    #[test]
    fn info_nce_is_shift_invariant_with_zero_row_gradients(
        b in 1usize..6,
        seed in any::<u64>(),
        shift in -3.0f64..3.0,
        t in tau(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..b * b).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let t = Temperature::new(t).unwrap();
        let (loss, grad) = info_nce(&SimilarityMatrix::new(data.clone()).unwrap(), t);
        let f = checks::info_nce_fn(b, t);
        prop_assert!(loss >= 0.0);
        for row in grad.chunks(b) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
        let shifted: Vec<f64> = data.iter().map(|x| x + shift).collect();
        let (loss2, _) = f(&shifted);
        prop_assert!((loss - loss2).abs() < 1e-9 * (1.0 + loss.abs()));
    }

    #[test]
    fn listwise_gradient_is_softmax_minus_onehot(scores in vec(-5.0f64..5.0, 1..25), pick in any::<prop::sample::Index>(), t in tau()) {
        let positive = pick.index(scores.len());
        let (loss, grad) = listwise_ce(&ListwiseScores::new(scores.clone(), positive).unwrap(), Temperature::new(t).unwrap());
        prop_assert!(loss >= 0.0);
        prop_assert!(grad.iter().sum::<f64>().abs() < 1e-9);
        prop_assert!(grad[positive] <= 0.0);
        for (j, g) in grad.iter().enumerate() {
            if j != positive {
                prop_assert!(*g >= 0.0);
            }
        }
    }

    #[test]
    fn bce_gradient_sign_follows_label(scores in vec(-8.0f64..8.0, 1..20), seed in any::<u64>()) {
        let labels: Vec<f64> = scores.iter().enumerate().map(|(i, _)| f64::from(u8::from((seed >> (i % 64)) & 1 == 1))).collect();
        let (loss, grad) = pointwise_bce(&scores, &labels).unwrap();
        prop_assert!(loss >= 0.0 && loss.is_finite());
        for (g, y) in grad.iter().zip(&labels) {
            let ok = if *y == 1.0 { *g <= 0.0 } else { *g >= 0.0 };
            prop_assert!(ok);
        }
    }

    #[test]
    fn percentile_is_a_sample_and_monotone(samples in vec(0.0f64..1e4, 1..60), p in 0.0f64..100.0, q in 0.0f64..100.0) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let (a, b) = (percentile(&samples, lo), percentile(&samples, hi));
        prop_assert!(samples.contains(&a) && samples.contains(&b));
        prop_assert!(a <= b);
    }

    #[test]
    fn tokens_are_lowercased_runs(text in "\\PC{0,80}") {
        for t in tokenize(&text) {
            prop_assert!(!t.is_empty());
            prop_assert_eq!(t.to_lowercase(), t.clone());
            prop_assert!(!t.chars().any(|c| c.is_whitespace() || c.is_ascii_punctuation()));
        }
    }

    #[test]
    fn bm25_search_agrees_with_score_all(
        docs in vec("[a-e]( [a-e]){0,8}", 1..15),
        query in "[a-f]( [a-f]){0,3}",
        k in 1usize..20,
    ) {
        let ids: Vec<String> = (0..docs.len()).map(|i| format!("d{i}")).collect();
        let ix = Bm25Index::from_documents(ids, &docs, Bm25Params::default()).unwrap();
        let scores = ix.score_all(&query);
        let hits = ix.search(&query, k);
        let positive = scores.iter().filter(|s| **s > 0.0).count();
        prop_assert_eq!(hits.len(), positive.min(k));
        for w in hits.hits.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
        for h in &hits.hits {
            let row: usize = h.skill_id[1..].parse().unwrap();
            prop_assert_eq!(h.score, scores[row]);
        }
    }

    #[test]
    fn exact_search_is_sorted_and_complete(seed in any::<u64>(), n in 1usize..80, dim in 1usize..12, k in 1usize..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors: Vec<Vec<f32>> = (0..n).map(|_| random_unit(&mut rng, dim)).collect();
        let ix = VectorIndex::from_vectors((0..n).map(|i| format!("v{i}")).collect(), vectors).unwrap();
        let q = random_unit(&mut rng, dim);
        let r = ix.search_exact(&q, k).unwrap();
        prop_assert_eq!(r.len(), k.min(n));
        for w in r.hits.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
        let distinct: BTreeSet<&str> = r.ids().collect();
        prop_assert_eq!(distinct.len(), r.len());
    }

    #[test]
    fn normalized_has_unit_norm(v in vec(-100.0f32..100.0, 1..64)) {
        match normalized(&v) {
            Some(u) => {
                let n: f64 = u.iter().map(|x| f64::from(*x) * f64::from(*x)).sum();
                prop_assert!((n - 1.0).abs() < 1e-5);
            }
            None => prop_assert!(v.iter().all(|x| *x == 0.0)),
        }
    }

    #[test]
    fn hashing_embedder_is_deterministic_unit(texts in vec("[a-z ]{1,40}", 1..6)) {
        let e = HashingEmbedder::new(32);
        let a = e.embed(&texts, TextKind::Document).unwrap();
        let b = e.embed(&texts, TextKind::Query).unwrap();
        prop_assert_eq!(&a, &b);
        for v in &a {
            let n: f32 = v.iter().map(|x| x * x).sum();
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn truncation_is_a_char_prefix(text in "\\PC{0,50}", max in 0usize..60) {
        let t = truncate_chars(&text, max);
        prop_assert!(text.starts_with(t));
        prop_assert_eq!(t.chars().count(), text.chars().count().min(max));
    }

    #[test]
    fn dedup_keeps_first_occurrence(raw in vec((0u8..10, "[a-z]{1,5}"), 0..30)) {
        let skills: Vec<Skill> = raw.iter().map(|(id, body)| Skill::new(format!("k{id}"), "n", "d", body.as_str(), "c")).collect();
        let (kept, removed) = dedup_by_id(skills.clone());
        let ids: BTreeSet<&str> = kept.iter().map(|s| s.id.as_str()).collect();
        prop_assert_eq!(ids.len(), kept.len());
        prop_assert_eq!(kept.len() + removed, skills.len());
        for s in &kept {
            let first = skills.iter().find(|x| x.id == s.id).unwrap();
            prop_assert_eq!(&first.body, &s.body);
        }
    }

    #[test]
    fn jaccard_is_symmetric_and_bounded(a in "[a-c]( [a-c]){0,10}", b in "[a-c]( [a-c]){0,10}") {
        let (x, y) = (trigrams(&a, ShingleMode::Word), trigrams(&b, ShingleMode::Word));
        let j = jaccard(&x, &y);
        prop_assert_eq!(j, jaccard(&y, &x));
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(jaccard(&x, &x), if x.is_empty() { 0.0 } else { 1.0 });
    }

    #[test]
    fn promote_is_a_permutation(n in 1usize..30, pick in any::<prop::sample::Index>()) {
        let r = ranking_of(&(0..n).collect::<Vec<_>>());
        let i = pick.index(n);
        let p = promote(&r, i);
        prop_assert_eq!(p.top().unwrap().skill_id.clone(), format!("s{i}"));
        let mut a: Vec<&str> = r.ids().collect();
        let mut b: Vec<&str> = p.ids().collect();
        let rest: Vec<&str> = b[1..].to_vec();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        let expected: Vec<String> = (0..n).filter(|j| *j != i).map(|j| format!("s{j}")).collect();
        prop_assert_eq!(rest, expected.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn judge_parse_never_returns_out_of_range(reply in "\\PC{0,30}", n in 1usize..40) {
        if let Ok(i) = parse_judge_reply(&reply, n) {
            prop_assert!((1..=n).contains(&i));
        }
    }
}

#[test]
fn ann_search_returns_ranked_subset() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 400;
    let vectors: Vec<Vec<f32>> = (0..n).map(|_| random_unit(&mut rng, 24)).collect();
    let ix = VectorIndex::from_vectors((0..n).map(|i| format!("v{i}")).collect(), vectors)
        .unwrap()
        .with_ann(&AnnConfig::default());
    let stats = ix.ann_stats().expect("ann built");
    assert!(stats.calibration_recall >= 0.95, "{stats:?}");
    let mut total = 0.0;
    for _ in 0..50 {
        let q = random_unit(&mut rng, 24);
        let approx = ix.search(&q, 20).unwrap();
        let exact = ix.search_exact(&q, 20).unwrap();
        assert!(approx.hits.windows(2).all(|w| w[0].score >= w[1].score));
        let truth: BTreeSet<&str> = exact.ids().collect();
        total += approx.ids().filter(|id| truth.contains(id)).count() as f64 / 20.0;
    }
    assert!(total / 50.0 >= 0.9, "held-out recall {}", total / 50.0);
}
