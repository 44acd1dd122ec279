//! Planted-path benchmark generator.
//!
//! Each question belongs to one of a few types. A type fixes the relation
//! pattern that actually answers it (opaque labels) and a pool of spurious
//! relations whose labels echo the question's wording. Every question gets a
//! private subgraph: the planted chain from topic to answer plus the type's
//! fixed spurious relation sequences, a random subset of which happen to
//! reach the answer while the rest end in dead ends. Other types' planted
//! patterns can optionally be attached as dead ends too (off by default: with
//! hashed embeddings the estimator does not condition on the question sharply
//! enough to cope with them). Only the planted pattern reaches the answer
//! every time, so an estimator trained on answers alone can recover it, while
//! lexical similarity is drawn to the spurious relations.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::embedding::{EmbeddingCache, EmbeddingProvider};
use crate::error::Result;
use crate::estimator::{train_estimator, EstimatorConfig, MilEstimator};
use crate::kg::{TripleStore, TripleStoreBuilder};
use crate::paths::{enumerate_candidate_paths, RelationPath};
use crate::question::QuestionRecord;
use crate::seed::rng_for;
use crate::supervision::{construct_question_data, path_similarity, NegativeSamplingConfig};

struct QuestionType {
    template: &'static str,
    planted: &'static [&'static str],
    spurious: &'static [&'static str],
}

const TYPES: &[QuestionType] = &[
    QuestionType {
        template: "Which city hosts the team coached by {}?",
        planted: &["vq.kel", "vq.dro"],
        spurious: &["team_city", "coached_team", "city_hosts", "team_coach", "hosts_team", "coach_city"],
    },
    QuestionType {
        template: "What language is spoken in the birthplace of {}?",
        planted: &["mz.tal", "mz.obu"],
        spurious: &["birthplace", "language_spoken", "spoken_in", "place_language", "birth_language", "spoken_place"],
    },
    QuestionType {
        template: "Which company published the book written by {}?",
        planted: &["xr.pem", "xr.lug", "xr.fai"],
        spurious: &["book_written", "company_published", "publisher_book", "written_by", "published_company", "book_company"],
    },
    QuestionType {
        template: "Who founded the university attended by {}?",
        planted: &["hw.sor"],
        spurious: &["university_founder", "attended_university", "founded_by", "founder_attended", "university_attended", "founded_university"],
    },
    QuestionType {
        template: "Which instrument does the band member {} play?",
        planted: &["jn.ebi", "jn.cua"],
        spurious: &["band_member", "instrument_played", "plays_instrument", "member_band", "band_instrument", "member_plays"],
    },
];

/// Longest planted or spurious chain.
pub const MAX_HOP: usize = 3;

#[derive(Clone, Debug)]
pub struct PlantedQuestion {
    pub record: QuestionRecord,
    pub question_type: usize,
    pub planted: Vec<String>,
    pub spurious: Vec<Vec<String>>,
}

pub struct PlantedBenchmark {
    pub store: TripleStore,
    pub questions: Vec<PlantedQuestion>,
}

#[derive(Clone, Copy, Debug)]
pub struct PlantedConfig {
    pub questions: usize,
    /// Spurious sequences that reach the answer in a given question.
    pub spurious_per_question: usize,
    /// Spurious sequences that miss it. Each type owns
    /// `spurious_per_question + dead_ends_per_question` sequences in all.
    pub dead_ends_per_question: usize,
    /// Other types' planted patterns attached as dead ends.
    pub distractors_per_question: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            questions: 200,
            spurious_per_question: 3,
            dead_ends_per_question: 3,
            distractors_per_question: 0,
            seed: 0,
        }
    }
}

pub fn num_types() -> usize {
    TYPES.len()
}

fn add_chain(b: &mut TripleStoreBuilder, start: &str, end: &str, rels: &[String], tag: &str) {
    let mut cur = start.to_owned();
    for (i, r) in rels.iter().enumerate() {
        let next = if i + 1 == rels.len() { end.to_owned() } else { format!("{tag}.{i}") };
        b.add(&cur, r, &next);
        cur = next;
    }
}

fn random_chain<R: Rng>(rng: &mut R, pool: &[&str]) -> Vec<String> {
    let len = rng.random_range(1..=MAX_HOP);
    (0..len).map(|_| pool[rng.random_range(0..pool.len())].to_owned()).collect()
}

/// Builds the benchmark. Questions cycle through the types in order.
pub fn planted_benchmark(config: &PlantedConfig) -> PlantedBenchmark {
    let mut rng = rng_for(config.seed, "planted-benchmark");
    let spurious_sequences: Vec<Vec<Vec<String>>> = TYPES
        .iter()
        .map(|ty| {
            let mut seqs: Vec<Vec<String>> = Vec::new();
            while seqs.len() < config.spurious_per_question + config.dead_ends_per_question {
                let c = random_chain(&mut rng, ty.spurious);
                if !seqs.contains(&c) {
                    seqs.push(c);
                }
            }
            seqs
        })
        .collect();
    let mut b = TripleStoreBuilder::new();
    let mut questions = Vec::with_capacity(config.questions);
    for i in 0..config.questions {
        let k = i % TYPES.len();
        let ty = &TYPES[k];
        let topic = format!("Person {i:03}");
        let answer = format!("answer.{i:03}");
        let planted: Vec<String> = ty.planted.iter().map(|s| s.to_string()).collect();
        add_chain(&mut b, &topic, &answer, &planted, &format!("q{i:03}.p"));

        let mut pool = spurious_sequences[k].clone();
        pool.shuffle(&mut rng);
        let (reach, miss) = pool.split_at(config.spurious_per_question);
        for (j, c) in reach.iter().enumerate() {
            add_chain(&mut b, &topic, &answer, c, &format!("q{i:03}.s{j}"));
        }
        for (j, c) in miss.iter().enumerate() {
            add_chain(&mut b, &topic, &format!("q{i:03}.dead{j}"), c, &format!("q{i:03}.d{j}"));
        }
        let spurious = reach.to_vec();
        let mut others: Vec<usize> = (0..TYPES.len()).filter(|&o| o != k).collect();
        others.shuffle(&mut rng);
        for &o in others.iter().take(config.distractors_per_question) {
            let c: Vec<String> = TYPES[o].planted.iter().map(|s| s.to_string()).collect();
            add_chain(&mut b, &topic, &format!("q{i:03}.other{o}"), &c, &format!("q{i:03}.o{o}"));
        }
        questions.push(PlantedQuestion {
            record: QuestionRecord {
                id: format!("planted-{i:03}"),
                question: ty.template.replace("{}", &topic),
                question_entities: vec![topic],
                answers: vec![answer],
            },
            question_type: k,
            planted,
            spurious,
        });
    }
    PlantedBenchmark {
        store: b.build(),
        questions,
    }
}

/// Top-1 recovery rates on held-out questions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveryReport {
    pub held_out: usize,
    pub estimator: f64,
    /// Ranking by question/path embedding similarity alone.
    pub similarity: f64,
}

fn top1<F: FnMut(&RelationPath) -> Result<f64>>(paths: &[RelationPath], mut score: F) -> Result<RelationPath> {
    let mut best: Option<(f64, &RelationPath)> = None;
    for p in paths {
        let s = score(p)?;
        let better = match best {
            None => true,
            Some((b, bp)) => s > b || (s == b && (p.len(), p) < (bp.len(), bp)),
        };
        if better {
            best = Some((s, p));
        }
    }
    Ok(best.expect("non-empty weak set").1.clone())
}

/// Trains on the first `train` questions and checks which weakly supervised
/// path each method ranks first on the rest.
pub fn planted_recovery(
    bench: &PlantedBenchmark,
    train: usize,
    estimator: &EstimatorConfig,
    sampling: &NegativeSamplingConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<(MilEstimator, RecoveryReport)> {
    let store = &bench.store;
    let mut cache = EmbeddingCache::new();
    let mut examples = Vec::with_capacity(train);
    let mut held_out = Vec::new();
    for (i, q) in bench.questions.iter().enumerate() {
        let s = q.record.resolve(store)?;
        let cands = enumerate_candidate_paths(store, &s.question_entities, MAX_HOP)?;
        let data = construct_question_data(sampling, store, &s, &cands, provider, &mut cache)?;
        if i < train {
            examples.push(data.training_example(&s));
        } else {
            held_out.push((q, data.weak_positive));
        }
    }
    let (model, _) = train_estimator(estimator, &examples, store, provider)?;
    let (mut est_hits, mut sim_hits) = (0usize, 0usize);
    for (q, weak) in &held_out {
        let planted = RelationPath::from_labels(store, &q.planted)?;
        let scores = model.score_paths(&q.record.question, weak, store, provider, &mut cache)?;
        let est = top1(weak, |p| Ok(scores.iter().find(|s| &s.path == p).map_or(f64::NEG_INFINITY, |s| s.score)))?;
        let qe = provider.embed(&q.record.question)?;
        let sim = top1(weak, |p| path_similarity(&qe, p, store, provider, &mut cache))?;
        est_hits += (est == planted) as usize;
        sim_hits += (sim == planted) as usize;
    }
    let n = held_out.len().max(1) as f64;
    Ok((
        model,
        RecoveryReport {
            held_out: held_out.len(),
            estimator: est_hits as f64 / n,
            similarity: sim_hits as f64 / n,
        },
    ))
}
