//! Relation paths over a [`TripleStore`]: reachability, bounded enumeration,
//! weak supervision, and grounding of generated paths into evidence.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId, TripleStore};
use crate::question::QuestionSample;

/// An ordered relation sequence. Ordering is lexicographic over relation ids
/// with shorter prefixes first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationPath(Vec<RelationId>);

impl RelationPath {
    /// Panics on an empty relation list; paths have length at least one.
    pub fn new(relations: Vec<RelationId>) -> Self {
        assert!(!relations.is_empty(), "relation path must have length >= 1");
        RelationPath(relations)
    }

    pub fn try_new(relations: Vec<RelationId>) -> Option<Self> {
        (!relations.is_empty()).then_some(RelationPath(relations))
    }

    pub fn relations(&self) -> &[RelationId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// True if `self` is a proper prefix of `other`.
    pub fn is_proper_prefix_of(&self, other: &RelationPath) -> bool {
        self.len() < other.len() && other.0.starts_with(&self.0)
    }

    pub fn extended(&self, r: RelationId) -> RelationPath {
        let mut rels = self.0.clone();
        rels.push(r);
        RelationPath(rels)
    }

    pub fn labels<'a>(&self, store: &'a TripleStore) -> Result<Vec<&'a str>> {
        self.0.iter().map(|&r| store.relation_label(r)).collect()
    }

    pub fn to_labels(&self, store: &TripleStore) -> Result<Vec<String>> {
        Ok(self.labels(store)?.into_iter().map(str::to_owned).collect())
    }

    pub fn from_labels<S: AsRef<str>>(store: &TripleStore, labels: &[S]) -> Result<Self> {
        let rels = labels
            .iter()
            .map(|l| {
                store
                    .relation(l.as_ref())
                    .ok_or_else(|| Error::UnknownLabel(l.as_ref().to_owned()))
            })
            .collect::<Result<Vec<_>>>()?;
        RelationPath::try_new(rels).ok_or_else(|| Error::UnknownLabel("<empty path>".into()))
    }
}

impl fmt::Display for RelationPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, r) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" -> ")?;
            }
            write!(f, "r{}", r.0)?;
        }
        Ok(())
    }
}

/// `(start, path, ends)` with `ends` nonempty and sorted by id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundedEvidence {
    pub start: EntityId,
    pub path: RelationPath,
    pub ends: Vec<EntityId>,
}

fn step(store: &TripleStore, from: &BTreeSet<EntityId>, r: RelationId) -> Result<BTreeSet<EntityId>> {
    let mut next = BTreeSet::new();
    for &e in from {
        next.extend(store.neighbors(e, r)?.iter().copied());
    }
    Ok(next)
}

/// Entities at the end of some walk `e -r1-> .. -rl->` along `path`.
pub fn reachable_entities(
    store: &TripleStore,
    e: EntityId,
    path: &RelationPath,
) -> Result<BTreeSet<EntityId>> {
    store.outgoing_relations(e)?;
    for &r in path.relations() {
        store.relation_label(r)?;
    }
    let mut frontier = BTreeSet::from([e]);
    for &r in path.relations() {
        frontier = step(store, &frontier, r)?;
        if frontier.is_empty() {
            break;
        }
    }
    Ok(frontier)
}

/// All distinct relation sequences of length `1..=max_hop` realizable from at
/// least one start entity, in breadth-first order (by length, then by ids).
pub fn enumerate_candidate_paths(
    store: &TripleStore,
    starts: &[EntityId],
    max_hop: usize,
) -> Result<Vec<RelationPath>> {
    Ok(enumerate_candidate_paths_capped(store, starts, max_hop, None)?.0)
}

/// As [`enumerate_candidate_paths`], stopping once `cap` paths were produced.
/// The flag reports whether the cap cut enumeration short.
pub fn enumerate_candidate_paths_capped(
    store: &TripleStore,
    starts: &[EntityId],
    max_hop: usize,
    cap: Option<usize>,
) -> Result<(Vec<RelationPath>, bool)> {
    let mut out = Vec::new();
    if max_hop == 0 {
        return Ok((out, false));
    }
    // Union of reachable sets across starts: seq+r is realizable from some start
    // iff some entity reached by seq (from any start) has an r edge.
    let start_set: BTreeSet<EntityId> = starts.iter().copied().collect();
    let mut level: BTreeMap<Vec<RelationId>, BTreeSet<EntityId>> = BTreeMap::new();
    level.insert(Vec::new(), start_set);
    for _hop in 0..max_hop {
        let mut next: BTreeMap<Vec<RelationId>, BTreeSet<EntityId>> = BTreeMap::new();
        for (prefix, ents) in &level {
            let mut rels = BTreeSet::new();
            for &e in ents {
                rels.extend(store.outgoing_relations(e)?.iter().copied());
            }
            for r in rels {
                let reached = step(store, ents, r)?;
                let mut seq = prefix.clone();
                seq.push(r);
                next.insert(seq, reached);
            }
        }
        for seq in next.keys() {
            if cap.is_some_and(|c| out.len() >= c) {
                log::warn!("candidate cap of {} paths reached", cap.unwrap_or_default());
                return Ok((out, true));
            }
            out.push(RelationPath(seq.clone()));
        }
        level = next;
    }
    Ok((out, false))
}

/// The candidates reaching at least one gold answer from some question entity.
pub fn weakly_supervised_paths(
    store: &TripleStore,
    sample: &QuestionSample,
    candidates: &[RelationPath],
) -> Result<Vec<RelationPath>> {
    let mut out = Vec::new();
    for z in candidates {
        if reaches_any(store, &sample.question_entities, z, &sample.answers)? {
            out.push(z.clone());
        }
    }
    Ok(out)
}

/// Whether `z` leads from some start to some entity in `targets`.
pub fn reaches_any(
    store: &TripleStore,
    starts: &[EntityId],
    z: &RelationPath,
    targets: &[EntityId],
) -> Result<bool> {
    for &e in starts {
        let ends = reachable_entities(store, e, z)?;
        if targets.iter().any(|a| ends.contains(a)) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// One evidence item per `(entity, path)` pair with a nonempty end set, in
/// path order and, within a path, in entity-id order.
pub fn ground_paths(
    store: &TripleStore,
    question_entities: &[EntityId],
    paths: &[RelationPath],
) -> Result<Vec<GroundedEvidence>> {
    let starts: BTreeSet<EntityId> = question_entities.iter().copied().collect();
    let mut out = Vec::new();
    for z in paths {
        for &e in &starts {
            let ends = reachable_entities(store, e, z)?;
            if !ends.is_empty() {
                out.push(GroundedEvidence {
                    start: e,
                    path: z.clone(),
                    ends: ends.into_iter().collect(),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::TripleStoreBuilder;

    fn sports() -> TripleStore {
        let mut b = TripleStoreBuilder::new();
        b.add("LeBron James", "parent", "Bronny James");
        b.add("Bronny James", "play_for", "Los Angeles Lakers");
        b.build()
    }

    fn path(s: &TripleStore, labels: &[&str]) -> RelationPath {
        RelationPath::from_labels(s, labels).unwrap()
    }

    #[test]
    fn sports_reachability() {
        let s = sports();
        let lebron = s.entity("LeBron James").unwrap();
        let ends = reachable_entities(&s, lebron, &path(&s, &["parent", "play_for"])).unwrap();
        let labels: Vec<_> = ends.iter().map(|&e| s.entity_label(e).unwrap()).collect();
        assert_eq!(labels, ["Los Angeles Lakers"]);
        assert!(reachable_entities(&s, lebron, &path(&s, &["play_for"])).unwrap().is_empty());
    }

    #[test]
    fn chain_enumeration() {
        let mut b = TripleStoreBuilder::new();
        b.add("a", "r1", "b");
        b.add("b", "r2", "c");
        let s = b.build();
        let got = enumerate_candidate_paths(&s, &[s.entity("a").unwrap()], 2).unwrap();
        assert_eq!(got, vec![path(&s, &["r1"]), path(&s, &["r1", "r2"])]);
        let sink = enumerate_candidate_paths(&s, &[s.entity("c").unwrap()], 2).unwrap();
        assert!(sink.is_empty());
    }

    #[test]
    fn cycles_are_allowed() {
        let mut b = TripleStoreBuilder::new();
        b.add("a", "r", "b");
        b.add("b", "r", "a");
        let s = b.build();
        let got = enumerate_candidate_paths(&s, &[s.entity("a").unwrap()], 3).unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(got[2], path(&s, &["r", "r", "r"]));
    }

    #[test]
    fn cap_reports_truncation() {
        let mut b = TripleStoreBuilder::new();
        for r in ["r1", "r2", "r3"] {
            b.add("a", r, "b");
        }
        let s = b.build();
        let a = s.entity("a").unwrap();
        let (got, capped) = enumerate_candidate_paths_capped(&s, &[a], 1, Some(2)).unwrap();
        assert_eq!(got.len(), 2);
        assert!(capped);
        let (got, capped) = enumerate_candidate_paths_capped(&s, &[a], 1, Some(3)).unwrap();
        assert_eq!(got.len(), 3);
        assert!(!capped);
    }

    #[test]
    fn weak_paths_and_grounding_on_sports() {
        let s = sports();
        let lebron = s.entity("LeBron James").unwrap();
        let lakers = s.entity("Los Angeles Lakers").unwrap();
        let sample = QuestionSample {
            id: "q".into(),
            question: "Which team does LeBron James's son play for?".into(),
            question_entities: vec![lebron],
            answers: vec![lakers],
        };
        let cands = enumerate_candidate_paths(&s, &[lebron], 2).unwrap();
        let weak = weakly_supervised_paths(&s, &sample, &cands).unwrap();
        assert_eq!(weak, vec![path(&s, &["parent", "play_for"])]);

        let ev = ground_paths(&s, &[lebron], &weak).unwrap();
        assert_eq!(
            ev,
            vec![GroundedEvidence {
                start: lebron,
                path: path(&s, &["parent", "play_for"]),
                ends: vec![lakers]
            }]
        );
        assert!(ground_paths(&s, &[lebron], &[path(&s, &["play_for"])]).unwrap().is_empty());
    }

    #[test]
    fn prefix_relation() {
        let s = sports();
        let p = path(&s, &["parent"]);
        let pp = path(&s, &["parent", "play_for"]);
        assert!(p.is_proper_prefix_of(&pp));
        assert!(!pp.is_proper_prefix_of(&p));
        assert!(!p.is_proper_prefix_of(&p));
    }
}
