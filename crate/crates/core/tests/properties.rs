mod common;

use std::collections::BTreeSet;

use pathmil::eval::{f1_score, hit, hits_at_1};
use pathmil::paths::{enumerate_candidate_paths, reachable_entities, weakly_supervised_paths, RelationPath};
use pathmil::question::QuestionSample;
use pathmil::supervision::{classify_negatives, NegativeSamplingConfig};
use proptest::prelude::*;

use common::{entity, labels_of, oracle_reach, random_graph};

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn reach_matches_triple_scan(seed in any::<u64>(), hops in 1usize..=3, start in 0usize..30, rels in prop::collection::vec(0usize..6, 3)) {
        let g = random_graph(seed, 30, 6, 150);
        let s = &g.entities[start % g.entities.len()];
        let used: Vec<&String> = g.relations.iter().filter(|r| g.store.relation(r).is_some()).collect();
        let seq: Vec<String> = rels[..hops].iter().map(|&r| used[r % used.len()].clone()).collect();
        let ids: Vec<_> = seq.iter().map(|r| g.store.relation(r).unwrap()).collect();
        let got: BTreeSet<String> = reachable_entities(&g.store, entity(&g.store, s), &RelationPath::new(ids))
            .unwrap()
            .into_iter()
            .map(|e| g.store.entity_label(e).unwrap().to_owned())
            .collect();
        prop_assert_eq!(got, oracle_reach(&g, s, &seq));
    }

    #[test]
    fn weak_paths_are_candidates_that_reach_an_answer(seed in any::<u64>(), hops in 1usize..=3, answers in prop::collection::vec(0usize..30, 1..4)) {
        let g = random_graph(seed, 30, 6, 150);
        let start = entity(&g.store, &g.entities[0]);
        let answers: Vec<String> = answers.iter().map(|&a| g.entities[a % g.entities.len()].clone()).collect();
        let cands = enumerate_candidate_paths(&g.store, &[start], hops).unwrap();
        let sample = QuestionSample {
            id: "p".into(),
            question: "q".into(),
            question_entities: vec![start],
            answers: answers.iter().map(|a| entity(&g.store, a)).collect(),
        };
        let weak = weakly_supervised_paths(&g.store, &sample, &cands).unwrap();
        for z in &cands {
            prop_assert!(z.len() >= 1 && z.len() <= hops);
            let ends = oracle_reach(&g, &g.entities[0], &labels_of(&g.store, z));
            prop_assert!(!ends.is_empty());
            prop_assert_eq!(weak.contains(z), ends.iter().any(|e| answers.contains(e)));
        }
    }

    #[test]
    fn quotas_fill_the_budget(weak in 0usize..1200, budget in 1usize..2000) {
        let cfg = NegativeSamplingConfig { budget, ..Default::default() };
        let q = cfg.quotas(weak);
        let n = budget.saturating_sub(weak);
        prop_assert_eq!(q.negatives, n);
        prop_assert_eq!(q.truncated + q.extended + q.deviated + q.other, n);
        // floors never overshoot the exact products
        prop_assert!(q.truncated as f64 <= 0.1 * n as f64 + 1e-6);
        prop_assert!(q.extended as f64 <= 0.4 * n as f64 + 1e-6);
        prop_assert!(q.deviated as f64 <= 0.3 * n as f64 + 1e-6);
    }

    #[test]
    fn negative_classes_partition(weak in prop::collection::btree_set(prop::collection::vec(0u32..4, 1..4), 1..5),
                                  neg in prop::collection::btree_set(prop::collection::vec(0u32..4, 1..4), 0..20)) {
        let to_path = |v: &Vec<u32>| RelationPath::new(v.iter().map(|&r| pathmil::kg::RelationId(r)).collect());
        let weak: Vec<RelationPath> = weak.iter().map(to_path).collect();
        let negatives: Vec<RelationPath> = neg.iter().map(to_path).filter(|z| !weak.contains(z)).collect();
        let part = classify_negatives(&weak, &negatives);
        let mut all: Vec<&RelationPath> = part.truncated.iter().chain(&part.extended).chain(&part.deviated).chain(&part.other).collect();
        prop_assert_eq!(all.len(), negatives.len());
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), negatives.len());
        let is_prefix = |a: &RelationPath, b: &RelationPath| a.len() < b.len() && b.relations()[..a.len()] == *a.relations();
        for z in &part.truncated {
            prop_assert!(weak.iter().any(|w| is_prefix(z, w)));
        }
        for z in &part.extended {
            prop_assert!(weak.iter().any(|w| is_prefix(w, z)));
        }
    }

    #[test]
    fn metrics_match_set_arithmetic(pred in prop::collection::vec("[a-d]", 0..5), gold in prop::collection::vec("[a-d]", 1..5)) {
        let p: BTreeSet<&String> = pred.iter().collect();
        let g: BTreeSet<&String> = gold.iter().collect();
        let common = p.intersection(&g).count() as f64;
        let expected = if common == 0.0 { 0.0 } else {
            let (pr, rc) = (common / p.len() as f64, common / g.len() as f64);
            2.0 * pr * rc / (pr + rc)
        };
        prop_assert!((f1_score(&pred, &gold).unwrap() - expected).abs() < 1e-12);
        prop_assert_eq!(hit(&pred, &gold).unwrap(), common > 0.0);
        prop_assert_eq!(hits_at_1(&pred, &gold).unwrap(), pred.first().is_some_and(|x| g.contains(x)));
    }
}
