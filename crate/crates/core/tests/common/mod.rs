#![allow(dead_code)]

use std::collections::BTreeSet;

use pathmil::kg::{EntityId, RelationId, TripleStore, TripleStoreBuilder};
use pathmil::paths::RelationPath;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct RandomGraph {
    pub store: TripleStore,
    pub triples: Vec<(String, String, String)>,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
}

pub fn random_graph(seed: u64, max_entities: usize, max_relations: usize, max_triples: usize) -> RandomGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_entities);
    let m = rng.random_range(1..=max_relations);
    let t = rng.random_range(1..=max_triples);
    let entities: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
    let relations: Vec<String> = (0..m).map(|i| format!("r{i}")).collect();
    let mut b = TripleStoreBuilder::new();
    for e in &entities {
        b.add_entity(e);
    }
    let mut triples = Vec::new();
    for _ in 0..t {
        let h = &entities[rng.random_range(0..n)];
        let r = &relations[rng.random_range(0..m)];
        let tl = &entities[rng.random_range(0..n)];
        if b.add(h, r, tl) {
            triples.push((h.clone(), r.clone(), tl.clone()));
        }
    }
    RandomGraph {
        store: b.build(),
        triples,
        entities,
        relations,
    }
}

/// Ends of walks along `path`, by scanning the raw triple list.
pub fn oracle_reach(g: &RandomGraph, start: &str, path: &[String]) -> BTreeSet<String> {
    let mut frontier = BTreeSet::from([start.to_owned()]);
    for r in path {
        frontier = g
            .triples
            .iter()
            .filter(|(h, rel, _)| rel == r && frontier.contains(h))
            .map(|(_, _, t)| t.clone())
            .collect();
    }
    frontier
}

/// Every relation sequence of length `1..=max_hop` over the graph's alphabet.
pub fn all_sequences(relations: &[String], max_hop: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<String>> = vec![vec![]];
    for _ in 0..max_hop {
        let mut next = Vec::new();
        for p in &layer {
            for r in relations {
                let mut q = p.clone();
                q.push(r.clone());
                next.push(q);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

pub fn labels_of(store: &TripleStore, p: &RelationPath) -> Vec<String> {
    p.to_labels(store).unwrap()
}

pub fn entity(store: &TripleStore, label: &str) -> EntityId {
    store.entity(label).unwrap()
}

pub fn relation(store: &TripleStore, label: &str) -> RelationId {
    store.relation(label).unwrap()
}

/// Largest elementwise `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
