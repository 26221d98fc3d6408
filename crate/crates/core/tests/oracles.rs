//! Values computed outside this crate (30-digit arithmetic or by hand) and frozen.

#![allow(clippy::excessive_precision)]

use std::collections::BTreeSet;

use skillmux_core::eval::{fc_at_10, hit_at_1, mrr_at_10, recall_at_k, DecompositionCounts};
use skillmux_core::forge::trigram_jaccard;
use skillmux_core::latency::percentile;
use skillmux_core::objectives::{info_nce, listwise_ce, pointwise_bce, ListwiseScores, SimilarityMatrix, Temperature};
use skillmux_core::sparse::{Bm25Index, Bm25Params};
use skillmux_core::{Ranking, ScoredHit};

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b}");
}

#[test]
fn info_nce_three_by_three() {
    let sim = SimilarityMatrix::from_rows(&[vec![0.9, 0.2, -0.1], vec![0.3, 0.8, 0.4], vec![-0.2, 0.5, 0.7]]).unwrap();
    let (loss, grad) = info_nce(&sim, Temperature::new(0.05).unwrap());
    close(loss, 0.00617718883710546369507341159789, 1e-14);
    let want = [
        -0.00000555726118569673055062985887,
        0.00000554352017300150919647389479544,
        0.0000000137410126952213541559674349,
        0.000302550968081037976038077446229,
        -0.0025381170440176056074313736246,
        0.00223556607593656763139329617773,
        0.0000000997069993841493536928904330,
        0.119908064620592799149405356745,
        -0.119908164327592183298759049634,
    ];
    for (g, w) in grad.iter().zip(want) {
        close(*g, w, 1e-14);
    }
}

#[test]
fn listwise_four_candidates() {
    let s = ListwiseScores::new(vec![1.5, -0.5, 0.25, 2.0], 2).unwrap();
    let (loss, grad) = listwise_ce(&s, Temperature::new(1.0).unwrap());
    close(loss, 2.37186039530645790901229518486, 1e-14);
    let want = [
        0.325673349513261095318,
        0.0440750949989935504943,
        -0.906693023154925439400,
        0.536944578642670793588,
    ];
    for (g, w) in grad.iter().zip(want) {
        close(*g, w, 1e-14);
    }
}

#[test]
fn bce_three_logits() {
    let (loss, _) = pointwise_bce(&[2.0, -1.0, 0.5], &[1.0, 0.0, 0.0]).unwrap();
    close(loss, 0.471422227580434003788573218802, 1e-14);
}

#[test]
fn bm25_idf_and_lengths() {
    let docs = [
        "the cat sat on the mat",
        "the dog sat on the log",
        "cats and dogs are pets",
    ];
    let ix = Bm25Index::from_documents(vec!["a".into(), "b".into(), "c".into()], &docs, Bm25Params::default()).unwrap();
    // ln(1 + (3 - 2 + 0.5) / (2 + 0.5)) = ln 1.6
    close(ix.idf("the"), 1.6f64.ln(), 1e-15);
    // ln(1 + 2.5 / 1.5) = ln(8/3)
    close(ix.idf("pets"), (8.0f64 / 3.0).ln(), 1e-15);
    assert_eq!(ix.doc_lengths(), &[6, 6, 5]);
    close(ix.avg_doc_length(), 17.0 / 3.0, 1e-15);
    assert_eq!(ix.document_frequency("sat"), 2);
    assert_eq!(ix.document_frequency("cat"), 1);
}

#[test]
fn metrics_by_hand() {
    let r = Ranking::new(
        ["x", "y", "g1", "z", "w"]
            .iter()
            .map(|id| ScoredHit::new(*id, 0.0))
            .collect(),
    );
    let gt: BTreeSet<String> = ["g1".to_string(), "g2".to_string()].into();
    assert_eq!(hit_at_1(&r, &gt), 0);
    close(mrr_at_10(&r, &gt), 1.0 / 3.0, 0.0);
    close(recall_at_k(&r, &gt, 10), 0.5, 0.0);
    assert_eq!(fc_at_10(&r, &gt), 0);
    let one: BTreeSet<String> = ["x".to_string()].into();
    assert_eq!(
        (hit_at_1(&r, &one), mrr_at_10(&r, &one), fc_at_10(&r, &one)),
        (1, 1.0, 1)
    );
}

#[test]
fn trigram_jaccard_by_hand() {
    // {a b c, b c d} vs {a b c, b c e}: 1 shared of 3
    close(trigram_jaccard("a b c d", "A B C E"), 1.0 / 3.0, 0.0);
    close(trigram_jaccard("one two", "one two"), 1.0, 0.0);
    close(trigram_jaccard("", ""), 0.0, 0.0);
}

#[test]
fn nearest_rank_percentiles() {
    let s = [12.0, 3.0, 7.0, 1.0, 9.0];
    // ranks ceil(0.5 * 5) = 3 and ceil(0.95 * 5) = 5
    assert_eq!(percentile(&s, 50.0), 7.0);
    assert_eq!(percentile(&s, 95.0), 12.0);
    assert_eq!(percentile(&[], 50.0), 0.0);
}

#[test]
fn decomposition_from_totals() {
    let c = DecompositionCounts::from_totals(150, 98, 111, 19, 6).unwrap();
    assert_eq!((c.both_correct, c.fixed, c.degraded, c.both_missed), (92, 19, 6, 33));
    assert!(DecompositionCounts::from_totals(150, 98, 111, 10, 6).is_none());
}
