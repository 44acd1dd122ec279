//! Bags, budgeted negative sampling, top-T pseudo supervision and the hard
//! target distribution used for distillation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::embedding::{question_path_similarity, Embedding, EmbeddingCache, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::estimator::{PathScore, TrainingExample};
use crate::kg::{EntityId, RelationId, TripleStore};
use crate::paths::{reachable_entities, RelationPath};
use crate::question::QuestionSample;
use crate::seed::rng_for;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PositiveBag {
    pub answer: EntityId,
    pub members: Vec<RelationPath>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct QuestionBags {
    pub positive: Vec<PositiveBag>,
    /// Candidates reaching no answer; each is a singleton negative bag.
    pub negatives: Vec<RelationPath>,
    /// Answers no candidate reaches.
    pub unreached_answers: Vec<EntityId>,
}

impl QuestionBags {
    /// Distinct positive-bag members in first-appearance order.
    pub fn weak_positive(&self) -> Vec<RelationPath> {
        let mut seen = HashSet::new();
        self.positive
            .iter()
            .flat_map(|b| &b.members)
            .filter(|p| seen.insert(*p))
            .cloned()
            .collect()
    }

    /// Drops every member not in `keep` from the positive bags, then drops
    /// bags left empty.
    pub fn restrict_positive(&mut self, keep: &HashSet<RelationPath>) {
        for bag in &mut self.positive {
            bag.members.retain(|p| keep.contains(p));
        }
        self.positive.retain(|b| !b.members.is_empty());
    }
}

/// Groups `candidates` into one positive bag per reachable answer (members in
/// candidate order) and the set of candidates reaching no answer.
pub fn build_bags(
    store: &TripleStore,
    sample: &QuestionSample,
    candidates: &[RelationPath],
) -> Result<QuestionBags> {
    let answers: BTreeSet<EntityId> = sample.answers.iter().copied().collect();
    let mut per_answer: BTreeMap<EntityId, Vec<RelationPath>> = BTreeMap::new();
    let mut negatives = Vec::new();
    for z in candidates {
        let mut ends = BTreeSet::new();
        for &e in &sample.question_entities {
            ends.extend(reachable_entities(store, e, z)?);
        }
        let hit: Vec<EntityId> = ends.intersection(&answers).copied().collect();
        if hit.is_empty() {
            negatives.push(z.clone());
        }
        for a in hit {
            per_answer.entry(a).or_default().push(z.clone());
        }
    }
    let mut bags = QuestionBags {
        negatives,
        ..Default::default()
    };
    for &a in &sample.answers {
        match per_answer.remove(&a) {
            Some(members) => bags.positive.push(PositiveBag { answer: a, members }),
            None => bags.unreached_answers.push(a),
        }
    }
    if !bags.unreached_answers.is_empty() {
        log::debug!(
            "question {}: {} answers unreachable within the hop limit",
            sample.id,
            bags.unreached_answers.len()
        );
    }
    Ok(bags)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeClass {
    Truncated,
    Extended,
    Deviated,
    Other,
}

impl NegativeClass {
    pub const ALL: [NegativeClass; 4] = [
        NegativeClass::Truncated,
        NegativeClass::Extended,
        NegativeClass::Deviated,
        NegativeClass::Other,
    ];
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NegativePartition {
    pub truncated: Vec<RelationPath>,
    pub extended: Vec<RelationPath>,
    pub deviated: Vec<RelationPath>,
    pub other: Vec<RelationPath>,
}

impl NegativePartition {
    pub fn class(&self, c: NegativeClass) -> &[RelationPath] {
        match c {
            NegativeClass::Truncated => &self.truncated,
            NegativeClass::Extended => &self.extended,
            NegativeClass::Deviated => &self.deviated,
            NegativeClass::Other => &self.other,
        }
    }

    pub fn len(&self) -> usize {
        self.truncated.len() + self.extended.len() + self.deviated.len() + self.other.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The first class (truncated, extended, deviated, other) whose definition
/// `negative` satisfies against some weak path.
pub fn negative_class(weak: &[RelationPath], negative: &RelationPath) -> NegativeClass {
    if weak.iter().any(|w| negative.is_proper_prefix_of(w)) {
        NegativeClass::Truncated
    } else if weak.iter().any(|w| w.is_proper_prefix_of(negative)) {
        NegativeClass::Extended
    } else if weak
        .iter()
        .any(|w| w.relations().first() == negative.relations().first())
    {
        NegativeClass::Deviated
    } else {
        NegativeClass::Other
    }
}

pub fn classify_negatives(weak: &[RelationPath], negatives: &[RelationPath]) -> NegativePartition {
    let mut p = NegativePartition::default();
    for z in negatives {
        let bucket = match negative_class(weak, z) {
            NegativeClass::Truncated => &mut p.truncated,
            NegativeClass::Extended => &mut p.extended,
            NegativeClass::Deviated => &mut p.deviated,
            NegativeClass::Other => &mut p.other,
        };
        bucket.push(z.clone());
    }
    p
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NegativeSamplingConfig {
    pub budget: usize,
    pub rho_truncated: f64,
    pub rho_extended: f64,
    pub rho_deviated: f64,
    pub rho_other: f64,
    pub seed: u64,
}

impl Default for NegativeSamplingConfig {
    fn default() -> Self {
        NegativeSamplingConfig {
            budget: 1000,
            rho_truncated: 0.1,
            rho_extended: 0.4,
            rho_deviated: 0.3,
            rho_other: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quotas {
    pub negatives: usize,
    pub truncated: usize,
    pub extended: usize,
    pub deviated: usize,
    pub other: usize,
}

impl Quotas {
    pub fn of(&self, c: NegativeClass) -> usize {
        match c {
            NegativeClass::Truncated => self.truncated,
            NegativeClass::Extended => self.extended,
            NegativeClass::Deviated => self.deviated,
            NegativeClass::Other => self.other,
        }
    }
}

impl NegativeSamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let rhos = [
            self.rho_truncated,
            self.rho_extended,
            self.rho_deviated,
            self.rho_other,
        ];
        if rhos.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Config("sampling proportions must be nonnegative".into()));
        }
        let sum: f64 = rhos.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("sampling proportions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Per-class quotas for a question with `weak` weakly supervised paths.
    /// `other` absorbs the rounding remainder.
    pub fn quotas(&self, weak: usize) -> Quotas {
        let n = self.budget.saturating_sub(weak);
        // the epsilon keeps products like 0.3 * 900 from flooring to 269
        let floor = |rho: f64| ((rho * n as f64) + 1e-9).floor() as usize;
        let truncated = floor(self.rho_truncated);
        let extended = floor(self.rho_extended);
        let deviated = floor(self.rho_deviated);
        Quotas {
            negatives: n,
            truncated,
            extended,
            deviated,
            other: n.saturating_sub(truncated + extended + deviated),
        }
    }
}

/// Mean cosine between the question and each relation label of `path`.
pub fn path_similarity(
    question: &Embedding,
    path: &RelationPath,
    store: &TripleStore,
    provider: &dyn EmbeddingProvider,
    cache: &mut EmbeddingCache,
) -> Result<f64> {
    let mut rels = Vec::with_capacity(path.len());
    for &r in path.relations() {
        rels.push(cache.get(provider, store.relation_label(r)?)?.clone());
    }
    question_path_similarity(question, &rels)
}

fn by_similarity(a: &(f64, &RelationPath), b: &(f64, &RelationPath)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.len().cmp(&b.1.len()))
        .then(a.1.cmp(b.1))
}

/// Sorts by descending similarity (ties: shorter, then lexicographic) and
/// keeps the first `k`.
pub fn top_by_similarity(
    paths: &[RelationPath],
    k: usize,
    question: &Embedding,
    store: &TripleStore,
    provider: &dyn EmbeddingProvider,
    cache: &mut EmbeddingCache,
) -> Result<Vec<RelationPath>> {
    if paths.len() <= k {
        return Ok(paths.to_vec());
    }
    let mut scored = Vec::with_capacity(paths.len());
    for p in paths {
        scored.push((path_similarity(question, p, store, provider, cache)?, p));
    }
    scored.sort_by(by_similarity);
    Ok(scored.into_iter().take(k).map(|(_, p)| p.clone()).collect())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SampledNegatives {
    pub paths: Vec<RelationPath>,
    pub classes: Vec<NegativeClass>,
}

impl SampledNegatives {
    pub fn count(&self, c: NegativeClass) -> usize {
        self.classes.iter().filter(|&&k| k == c).count()
    }
}

/// Retains at most the per-class quota from each class of `partition`.
///
/// Over-quota classes keep their most question-similar paths. `other` first
/// takes paths sharing relations with the weak set (more shared relations,
/// then more similar), and fills the remaining slots by random sampling from
/// the rest with a stream derived from `(seed, question_id)`.
#[allow(clippy::too_many_arguments)]
pub fn sample_negatives(
    config: &NegativeSamplingConfig,
    question_id: &str,
    weak: &[RelationPath],
    partition: &NegativePartition,
    question: &Embedding,
    store: &TripleStore,
    provider: &dyn EmbeddingProvider,
    cache: &mut EmbeddingCache,
) -> Result<SampledNegatives> {
    config.validate()?;
    let quotas = config.quotas(weak.len());
    let mut out = SampledNegatives::default();
    for class in [
        NegativeClass::Truncated,
        NegativeClass::Extended,
        NegativeClass::Deviated,
    ] {
        let kept = top_by_similarity(
            partition.class(class),
            quotas.of(class),
            question,
            store,
            provider,
            cache,
        )?;
        out.classes.extend(std::iter::repeat_n(class, kept.len()));
        out.paths.extend(kept);
    }

    let quota = quotas.other;
    let pool = &partition.other;
    let kept = if pool.len() <= quota {
        pool.clone()
    } else {
        let weak_rels: HashSet<RelationId> =
            weak.iter().flat_map(|w| w.relations().iter().copied()).collect();
        let mut overlapping = Vec::new();
        let mut rest = Vec::new();
        for p in pool {
            let shared: HashSet<RelationId> = p
                .relations()
                .iter()
                .copied()
                .filter(|r| weak_rels.contains(r))
                .collect();
            if shared.is_empty() {
                rest.push(p);
            } else {
                let sim = path_similarity(question, p, store, provider, cache)?;
                overlapping.push((shared.len(), sim, p));
            }
        }
        overlapping.sort_by(|a, b| {
            b.0.cmp(&a.0)
                .then(b.1.total_cmp(&a.1))
                .then(a.2.len().cmp(&b.2.len()))
                .then(a.2.cmp(b.2))
        });
        let mut kept: Vec<RelationPath> = overlapping
            .into_iter()
            .take(quota)
            .map(|(_, _, p)| p.clone())
            .collect();
        let remaining = quota - kept.len();
        if remaining > 0 {
            let mut rng = rng_for(config.seed, question_id);
            let mut picks: Vec<usize> = sample(&mut rng, rest.len(), remaining).into_vec();
            picks.sort_unstable();
            kept.extend(picks.into_iter().map(|i| rest[i].clone()));
        }
        kept
    };
    out.classes
        .extend(std::iter::repeat_n(NegativeClass::Other, kept.len()));
    out.paths.extend(kept);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoSupervision {
    pub id: String,
    pub paths: Vec<RelationPath>,
    pub scores: Vec<f64>,
}

/// The `t` highest-scoring paths, ties broken by length then relation ids.
pub fn select_pseudo_supervision(
    question_id: &str,
    scores: &[PathScore],
    t: usize,
) -> Result<PseudoSupervision> {
    if t == 0 {
        return Err(Error::Config("T must be at least 1".into()));
    }
    if scores.is_empty() {
        return Err(Error::Unsupervisable(question_id.to_owned()));
    }
    let mut ranked: Vec<&PathScore> = scores.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.path.len().cmp(&b.path.len()))
            .then(a.path.cmp(&b.path))
    });
    ranked.truncate(t);
    Ok(PseudoSupervision {
        id: question_id.to_owned(),
        paths: ranked.iter().map(|s| s.path.clone()).collect(),
        scores: ranked.iter().map(|s| s.score).collect(),
    })
}

/// Uniform probability over the selected paths.
pub fn target_distribution(supervision: &PseudoSupervision) -> BTreeMap<RelationPath, f64> {
    let p = 1.0 / supervision.paths.len() as f64;
    supervision.paths.iter().map(|z| (z.clone(), p)).collect()
}

/// Everything the estimator needs for one question.
#[derive(Clone, Debug, PartialEq)]
pub struct QuestionSupervisionData {
    pub bags: QuestionBags,
    pub weak_positive: Vec<RelationPath>,
    pub negatives: SampledNegatives,
}

impl QuestionSupervisionData {
    pub fn training_example(&self, sample: &QuestionSample) -> TrainingExample {
        TrainingExample {
            id: sample.id.clone(),
            question: sample.question.clone(),
            positive_bags: self.bags.positive.iter().map(|b| b.members.clone()).collect(),
            negatives: self.negatives.paths.clone(),
        }
    }
}

/// Builds bags, caps the weak set at the budget, then samples negatives into
/// the remaining slots.
pub fn construct_question_data(
    config: &NegativeSamplingConfig,
    store: &TripleStore,
    sample: &QuestionSample,
    candidates: &[RelationPath],
    provider: &dyn EmbeddingProvider,
    cache: &mut EmbeddingCache,
) -> Result<QuestionSupervisionData> {
    let mut bags = build_bags(store, sample, candidates)?;
    let question = provider.embed(&sample.question)?;
    let mut weak = bags.weak_positive();
    if weak.len() > config.budget {
        log::warn!(
            "question {}: {} weak paths exceed the budget of {}; keeping the most similar",
            sample.id,
            weak.len(),
            config.budget
        );
        weak = top_by_similarity(&weak, config.budget, &question, store, provider, cache)?;
        let keep: HashSet<RelationPath> = weak.iter().cloned().collect();
        bags.restrict_positive(&keep);
        weak = bags.weak_positive();
    }
    let partition = classify_negatives(&weak, &bags.negatives);
    let negatives = sample_negatives(
        config, &sample.id, &weak, &partition, &question, store, provider, cache,
    )?;
    Ok(QuestionSupervisionData {
        bags,
        weak_positive: weak,
        negatives,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub questions: usize,
    pub questions_with_positive_bag: usize,
    pub answers: usize,
    pub answers_reached: usize,
}

impl CoverageReport {
    pub fn add(&mut self, bags: &QuestionBags) {
        self.questions += 1;
        if !bags.positive.is_empty() {
            self.questions_with_positive_bag += 1;
        }
        self.answers += bags.positive.len() + bags.unreached_answers.len();
        self.answers_reached += bags.positive.len();
    }
}
