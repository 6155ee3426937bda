mod common;

use std::collections::BTreeMap;

use common::tiny_finetuned;
use halluc_core::data::ImageShape;
use halluc_core::selection::{
    build_augmented, build_pool, load_pool, save_pool, score_candidate, scores_from_logits,
    select_top_m, Candidate, CandidatePool, Provenance, ScoringRule,
};
use halluc_core::Error;
use proptest::prelude::*;

fn cand(class: u32, g: usize, score: f64) -> Candidate {
    Candidate {
        image: vec![g as f32 / 1e4; 4],
        text_embedding: vec![0.0; 2],
        intended_class: class,
        source_embedding_index: 0,
        z_seed: g as u64,
        realism_score: 0.5,
        class_posterior: score,
        combined_score: score,
        generation_index: g,
    }
}

fn single_class_pool(scores: &[f64]) -> CandidatePool {
    CandidatePool {
        pool_size: scores.len(),
        image_shape: ImageShape::new(2, 2, 1),
        embed_dim: 2,
        rule: ScoringRule::ClassOnly,
        per_class: BTreeMap::from([(
            0,
            scores
                .iter()
                .enumerate()
                .map(|(g, &s)| cand(0, g, s))
                .collect(),
        )]),
    }
}

/// Exhaustive reference: the m-subset with the largest score sum, ties broken
/// towards the lexicographically smallest generation indices.
fn brute_force(scores: &[f64], m: usize) -> Vec<usize> {
    let n = scores.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let sum: f64 = idx.iter().map(|&i| scores[i]).sum();
        let better = match &best {
            None => true,
            Some((s, b)) => sum > *s || (sum == *s && idx < *b),
        };
        if better {
            best = Some((sum, idx));
        }
    }
    best.unwrap().1
}

fn picked(pool: &CandidatePool, m: usize) -> Vec<usize> {
    select_top_m(pool, m).unwrap()[&0]
        .iter()
        .map(|c| c.generation_index)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn top_m_matches_exhaustive_search(
        scores in prop::collection::vec(prop::sample::select(vec![0.0, 0.25, 0.5, 0.75, 1.0]), 1..12),
        m_frac in 0.0f64..=1.0,
    ) {
        let m = (m_frac * scores.len() as f64).round() as usize;
        let mut got = picked(&single_class_pool(&scores), m);
        let sum: f64 = got.iter().map(|&i| scores[i]).sum();
        let want = brute_force(&scores, m);
        let want_sum: f64 = want.iter().map(|&i| scores[i]).sum();
        prop_assert_eq!(sum, want_sum);
        got.sort_unstable();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn selection_is_ordered_and_dominates_the_rest(
        scores in prop::collection::vec(0.0f64..1.0, 1..40),
        m_frac in 0.0f64..=1.0,
    ) {
        let m = (m_frac * scores.len() as f64).floor() as usize;
        let pool = single_class_pool(&scores);
        let sel = &select_top_m(&pool, m).unwrap()[&0];
        prop_assert_eq!(sel.len(), m);
        prop_assert!(sel.windows(2).all(|w| w[0].combined_score >= w[1].combined_score));
        let chosen: Vec<usize> = sel.iter().map(|c| c.generation_index).collect();
        if let Some(worst) = sel.last() {
            for (g, &s) in scores.iter().enumerate() {
                if !chosen.contains(&g) {
                    prop_assert!(s <= worst.combined_score);
                }
            }
        }
    }

    #[test]
    fn selections_nest_as_m_grows(scores in prop::collection::vec(0.0f64..1.0, 1..30)) {
        let pool = single_class_pool(&scores);
        for m in 1..=scores.len() {
            let small = picked(&pool, m - 1);
            let large = picked(&pool, m);
            prop_assert_eq!(&large[..m - 1], small.as_slice());
        }
    }

    #[test]
    fn selection_ignores_pool_order(scores in prop::collection::vec(0.0f64..1.0, 1..30), m_frac in 0.0f64..=1.0, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let m = (m_frac * scores.len() as f64).floor() as usize;
        let pool = single_class_pool(&scores);
        let mut shuffled = pool.clone();
        shuffled.per_class.get_mut(&0).unwrap().shuffle(&mut halluc_core::rng::rng(seed));
        prop_assert_eq!(select_top_m(&pool, m).unwrap(), select_top_m(&shuffled, m).unwrap());
    }

    #[test]
    fn scores_are_probabilities(
        realism in -50.0f64..50.0,
        logits in prop::collection::vec(-50.0f64..50.0, 1..8),
        pick in any::<prop::sample::Index>(),
    ) {
        let i = pick.index(logits.len());
        for rule in [ScoringRule::ClassOnly, ScoringRule::RealismGated] {
            let s = scores_from_logits(realism, &logits, i, rule).unwrap();
            for v in [s.realism_score, s.class_posterior, s.combined_score] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(s.combined_score <= s.class_posterior);
        }
    }
}

#[test]
fn oversized_selection_is_an_error() {
    let pool = single_class_pool(&[0.1, 0.2]);
    assert!(matches!(
        select_top_m(&pool, 3),
        Err(Error::SelectionTooLarge {
            class: 0,
            m: 3,
            pool: 2
        })
    ));
    assert!(select_top_m(&pool, 0).unwrap()[&0].is_empty());
}

#[test]
fn pool_is_deterministic_complete_and_scored_in_range() {
    let (_, episode, model) = tiny_finetuned(21, 2);
    let pool = build_pool(&model, &episode, 40, 5, ScoringRule::RealismGated).unwrap();
    assert_eq!(
        pool,
        build_pool(&model, &episode, 40, 5, ScoringRule::RealismGated).unwrap()
    );
    assert_ne!(
        pool,
        build_pool(&model, &episode, 40, 6, ScoringRule::RealismGated).unwrap()
    );
    assert_eq!(
        pool.per_class.keys().copied().collect::<Vec<_>>(),
        episode.novel_classes()
    );
    for (&class, list) in &pool.per_class {
        assert_eq!(list.len(), 40);
        for (g, c) in list.iter().enumerate() {
            assert_eq!(c.generation_index, g);
            assert_eq!(c.intended_class, class);
            assert_eq!(episode.support[c.source_embedding_index].label, class);
            assert_eq!(
                c.text_embedding,
                episode.support[c.source_embedding_index].text_embedding
            );
            assert!(c.image.iter().all(|v| (-1.0..=1.0).contains(v)));
            let s = score_candidate(&model, &c.image, &c.text_embedding, class, pool.rule).unwrap();
            assert_eq!(s.combined_score, c.combined_score);
        }
    }
}

#[test]
fn scores_stay_in_range_over_a_large_pool() {
    let (_, episode, model) = tiny_finetuned(22, 1);
    let per_class = 10_000 / episode.novel_classes().len();
    let pool = build_pool(&model, &episode, per_class, 1, ScoringRule::RealismGated).unwrap();
    assert!(pool.len() >= 10_000 - episode.novel_classes().len());
    for c in pool.candidates() {
        for v in [c.realism_score, c.class_posterior, c.combined_score] {
            assert!((0.0..=1.0).contains(&v), "{c:?}");
        }
        assert!((c.combined_score - c.realism_score * c.class_posterior).abs() < 1e-12);
    }
}

#[test]
fn augmented_set_has_the_expected_cardinality() {
    let (_, episode, model) = tiny_finetuned(23, 2);
    let pool = build_pool(&model, &episode, 12, 3, ScoringRule::ClassOnly).unwrap();
    let k = episode.novel_classes().len();
    for m in [0, 1, 5, 12] {
        let selected = select_top_m(&pool, m).unwrap();
        let aug = build_augmented(&episode, &selected).unwrap();
        assert_eq!(aug.real, episode.support);
        assert_eq!(aug.len(), episode.support.len() + k * m);
        let (ds, provenance) = aug.to_dataset().unwrap();
        assert_eq!(ds.len(), aug.len());
        assert_eq!(
            provenance
                .iter()
                .filter(|p| **p == Provenance::Hallucinated)
                .count(),
            k * m
        );
        for &class in episode.novel_classes() {
            assert_eq!(ds.indices_of(class).len(), episode.n_shot() + m);
        }
    }
    let empty = build_augmented(&episode, &BTreeMap::new()).unwrap();
    assert_eq!(
        empty,
        build_augmented(&episode, &select_top_m(&pool, 0).unwrap()).unwrap()
    );

    let mut partial = select_top_m(&pool, 2).unwrap();
    partial.pop_first();
    assert!(matches!(
        build_augmented(&episode, &partial),
        Err(Error::ClassMismatch(_))
    ));
}

#[test]
fn pool_round_trips_through_disk() {
    let (_, episode, model) = tiny_finetuned(24, 1);
    let pool = build_pool(&model, &episode, 6, 3, ScoringRule::RealismGated).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_pool(&pool, dir.path()).unwrap();
    assert_eq!(load_pool(dir.path()).unwrap(), pool);
}
