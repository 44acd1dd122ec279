//! Stage orchestration over on-disk artifacts.
//!
//! Every stage reads its predecessors' artifacts from the output directory,
//! checks their headers against the current configuration hash, and writes
//! its own outputs atomically.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifact::{check_header, read_jsonl, write_atomic_with, write_json, write_jsonl, ArtifactHeader, Expect};
use crate::checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
use crate::config::{PathSource, PipelineConfig, ReasonerMode};
use crate::embedding::{EmbeddingCache, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::estimator::{train_estimator, EstimatorConfig, MilEstimator, PathScore, TrainingExample};
use crate::eval::{efficiency_report, supervision_hits_at_t, EfficiencyReport, MetricReport, QuestionResult, StageUsage};
use crate::generator::{distill, emit_finetune_dataset, Generator, GeneratorConfig};
use crate::kg::TripleStore;
use crate::paths::{enumerate_candidate_paths_capped, ground_paths, weakly_supervised_paths, RelationPath};
use crate::prompt::{EvidenceText, FinetuneRecord, PathParse};
use crate::question::{load_questions, QuestionRecord, QuestionSample};
use crate::reasoner::{
    generate_path_with_llm, reason_all, HttpChatClient, LlmReasoner, Reasoner, ReasonerRequest, UnionReasoner, Usage,
};
use crate::supervision::{construct_question_data, select_pseudo_supervision, CoverageReport, NegativeClass, PseudoSupervision};

/// A relation path written as its labels.
pub type LabelPath = Vec<String>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Enumerate,
    BuildBags,
    TrainEstimator,
    Score,
    SelectSupervision,
    TrainGenerator,
    EmitFinetune,
    Generate,
    Ground,
    Reason,
    Evaluate,
    SupervisionEval,
    Pipeline,
}

impl Stage {
    pub const ALL: [Stage; 14] = [
        Stage::Ingest,
        Stage::Enumerate,
        Stage::BuildBags,
        Stage::TrainEstimator,
        Stage::Score,
        Stage::SelectSupervision,
        Stage::TrainGenerator,
        Stage::EmitFinetune,
        Stage::Generate,
        Stage::Ground,
        Stage::Reason,
        Stage::Evaluate,
        Stage::SupervisionEval,
        Stage::Pipeline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Enumerate => "enumerate",
            Stage::BuildBags => "build-bags",
            Stage::TrainEstimator => "train-estimator",
            Stage::Score => "score",
            Stage::SelectSupervision => "select-supervision",
            Stage::TrainGenerator => "train-generator",
            Stage::EmitFinetune => "emit-finetune",
            Stage::Generate => "generate",
            Stage::Ground => "ground",
            Stage::Reason => "reason",
            Stage::Evaluate => "evaluate",
            Stage::SupervisionEval => "supervision-eval",
            Stage::Pipeline => "pipeline",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

pub mod files {
    pub const STORE: &str = "store.bin";
    pub const CANDIDATES: &str = "candidates.jsonl";
    pub const BAGS: &str = "bags.jsonl";
    pub const COVERAGE: &str = "coverage.json";
    pub const ESTIMATOR: &str = "estimator.ckpt";
    pub const ESTIMATOR_LOG: &str = "estimator_log.json";
    pub const SCORES: &str = "scores.jsonl";
    pub const SUPERVISION: &str = "supervision.jsonl";
    pub const GENERATOR: &str = "generator.ckpt";
    pub const GENERATOR_LOG: &str = "generator_log.json";
    pub const FINETUNE: &str = "finetune.jsonl";
    pub const GENERATED: &str = "generated.jsonl";
    pub const EVIDENCE: &str = "evidence.jsonl";
    pub const PREDICTIONS: &str = "predictions.jsonl";
    pub const TRANSCRIPT_GENERATE: &str = "transcript-generate.jsonl";
    pub const TRANSCRIPT_REASON: &str = "transcript-reason.jsonl";
    pub const REPORT_JSON: &str = "report.json";
    pub const REPORT_TXT: &str = "report.txt";
    pub const SUPERVISION_EVAL: &str = "supervision_eval.json";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: String,
    pub candidates: Vec<LabelPath>,
    pub weak_positive: Vec<LabelPath>,
    /// Enumeration stopped at the configured cap.
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositiveBagRecord {
    pub answer: String,
    pub paths: Vec<LabelPath>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagRecord {
    pub id: String,
    pub positive_bags: Vec<PositiveBagRecord>,
    pub negatives: Vec<LabelPath>,
    pub negative_classes: Vec<NegativeClass>,
}

/// Shared shape of the score and pseudo-supervision files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathScoreRecord {
    pub id: String,
    pub paths: Vec<LabelPath>,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRecord {
    pub id: String,
    pub paths: Vec<LabelPath>,
    /// `null` for paths returned by a chat model.
    pub logprobs: Vec<Option<f64>>,
    #[serde(default)]
    pub unresolved: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub id: String,
    pub question: String,
    pub evidence: Vec<EvidenceText>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub answers: Vec<String>,
    pub raw: String,
    pub grounded_ends: Vec<String>,
    #[serde(default)]
    pub usage: Usage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub id: String,
    pub paths: Vec<LabelPath>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metrics: MetricReport,
    pub efficiency: EfficiencyReport,
}

#[derive(Clone, Debug, Default)]
pub struct StageSummary {
    pub stage: String,
    pub outputs: Vec<PathBuf>,
    pub message: String,
}

impl fmt::Display for StageSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)?;
        for o in &self.outputs {
            write!(f, "\n  wrote {}", o.display())?;
        }
        Ok(())
    }
}

fn to_labels(store: &TripleStore, paths: &[RelationPath]) -> Result<Vec<LabelPath>> {
    paths.iter().map(|p| p.to_labels(store)).collect()
}

fn from_labels(store: &TripleStore, paths: &[LabelPath]) -> Result<Vec<RelationPath>> {
    paths.iter().map(|p| RelationPath::from_labels(store, p)).collect()
}

pub struct Pipeline {
    config: PipelineConfig,
    hash: String,
    force: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        Ok(Pipeline {
            config,
            hash,
            force: false,
        })
    }

    /// Accept predecessor artifacts written under a different configuration.
    pub fn force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.config.output(name)
    }

    fn header(&self, artifact: &str, stage: Stage) -> ArtifactHeader {
        ArtifactHeader::new(artifact, stage.name(), &self.hash)
    }

    fn expect<'a>(&'a self, artifact: &'a str) -> Expect<'a> {
        Expect {
            artifact,
            config_hash: (!self.force).then_some(self.hash.as_str()),
            header_required: true,
        }
    }

    fn read<T: serde::de::DeserializeOwned>(&self, name: &str, artifact: &str) -> Result<Vec<T>> {
        Ok(read_jsonl(&self.path(name), self.expect(artifact))?.1)
    }

    fn provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        self.config.embedding_spec()?.build()
    }

    pub fn run(&self, stage: Stage) -> Result<Vec<StageSummary>> {
        let one = |s: Result<StageSummary>| s.map(|s| vec![s]);
        match stage {
            Stage::Ingest => one(self.ingest()),
            Stage::Enumerate => one(self.enumerate()),
            Stage::BuildBags => one(self.build_bags()),
            Stage::TrainEstimator => one(self.train_estimator()),
            Stage::Score => one(self.score()),
            Stage::SelectSupervision => one(self.select_supervision()),
            Stage::TrainGenerator => one(self.train_generator()),
            Stage::EmitFinetune => one(self.emit_finetune()),
            Stage::Generate => one(self.generate()),
            Stage::Ground => one(self.ground()),
            Stage::Reason => one(self.reason()),
            Stage::Evaluate => one(self.evaluate(None, None).map(|(s, _)| s)),
            Stage::SupervisionEval => one(self.supervision_eval(None, None)),
            Stage::Pipeline => self.run_all(),
        }
    }

    fn run_all(&self) -> Result<Vec<StageSummary>> {
        let mut out = Vec::new();
        for stage in &Stage::ALL[..Stage::ALL.len() - 3] {
            let s = self.run(*stage)?;
            for x in &s {
                log::info!("{x}");
            }
            out.extend(s);
        }
        let (s, report) = self.evaluate(None, None)?;
        if report.metrics.n == 0 {
            return Err(Error::Config("no predictions to evaluate".into()));
        }
        out.push(s);
        if self.config.reference_paths.is_some() {
            out.push(self.supervision_eval(None, None)?);
        }
        Ok(out)
    }

    pub fn load_store(&self) -> Result<TripleStore> {
        let path = self.path(files::STORE);
        let file = File::open(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Artifact {
                path: path.clone(),
                message: "missing; run `ingest` first".into(),
            },
            _ => Error::io(&path, e),
        })?;
        let (store, meta) = TripleStore::read_snapshot(BufReader::new(file)).map_err(|m| Error::Artifact {
            path: path.clone(),
            message: m,
        })?;
        let header: ArtifactHeader = serde_json::from_str(&meta).map_err(|e| Error::Artifact {
            path: path.clone(),
            message: format!("unreadable header: {e}"),
        })?;
        check_header(&path, &header, self.expect("store"))?;
        Ok(store)
    }

    fn records(&self, which: Option<&PathBuf>, what: &str) -> Result<Vec<QuestionRecord>> {
        let p = which.ok_or_else(|| Error::Config(format!("no {what} question file configured")))?;
        load_questions(p)
    }

    pub fn train_records(&self) -> Result<Vec<QuestionRecord>> {
        self.records(self.config.train_questions.as_ref(), "training")
    }

    pub fn test_records(&self) -> Result<Vec<QuestionRecord>> {
        self.records(self.config.test_questions.as_ref(), "test")
    }

    fn resolve(store: &TripleStore, records: &[QuestionRecord]) -> Result<Vec<QuestionSample>> {
        records.iter().map(|r| r.resolve(store)).collect()
    }

    pub fn ingest(&self) -> Result<StageSummary> {
        let store = TripleStore::load_path(&self.config.kg)?;
        let path = self.path(files::STORE);
        let meta = serde_json::to_string(&self.header("store", Stage::Ingest))?;
        write_atomic_with(&path, |w| store.write_snapshot(w, &meta))?;
        Ok(StageSummary {
            stage: Stage::Ingest.name().into(),
            message: format!(
                "{} entities, {} relations, {} triples",
                store.num_entities(),
                store.num_relations(),
                store.num_triples()
            ),
            outputs: vec![path],
        })
    }

    pub fn enumerate(&self) -> Result<StageSummary> {
        let store = self.load_store()?;
        let samples = Self::resolve(&store, &self.train_records()?)?;
        let mut out = Vec::with_capacity(samples.len());
        let mut capped = 0;
        for s in &samples {
            let (cands, truncated) =
                enumerate_candidate_paths_capped(&store, &s.question_entities, self.config.max_hop(), self.config.candidate_cap)?;
            capped += truncated as usize;
            let weak = weakly_supervised_paths(&store, s, &cands)?;
            out.push(CandidateRecord {
                id: s.id.clone(),
                candidates: to_labels(&store, &cands)?,
                weak_positive: to_labels(&store, &weak)?,
                truncated,
            });
        }
        let path = self.path(files::CANDIDATES);
        write_jsonl(&path, &self.header("candidates", Stage::Enumerate), &out)?;
        Ok(StageSummary {
            stage: Stage::Enumerate.name().into(),
            message: format!("{} questions, {capped} hit the candidate cap", out.len()),
            outputs: vec![path],
        })
    }

    pub fn build_bags(&self) -> Result<StageSummary> {
        let store = self.load_store()?;
        let samples = Self::resolve(&store, &self.train_records()?)?;
        let cands: Vec<CandidateRecord> = self.read(files::CANDIDATES, "candidates")?;
        let by_id: HashMap<&str, &CandidateRecord> = cands.iter().map(|c| (c.id.as_str(), c)).collect();
        let provider = self.provider()?;
        let mut cache = EmbeddingCache::new();
        let mut coverage = CoverageReport::default();
        let mut out = Vec::with_capacity(samples.len());
        for s in &samples {
            let c = by_id.get(s.id.as_str()).ok_or_else(|| Error::Artifact {
                path: self.path(files::CANDIDATES),
                message: format!("no candidates for question `{}`; rerun `enumerate`", s.id),
            })?;
            let candidates = from_labels(&store, &c.candidates)?;
            let data = construct_question_data(&self.config.sampling, &store, s, &candidates, provider.as_ref(), &mut cache)?;
            coverage.add(&data.bags);
            out.push(BagRecord {
                id: s.id.clone(),
                positive_bags: data
                    .bags
                    .positive
                    .iter()
                    .map(|b| {
                        Ok(PositiveBagRecord {
                            answer: store.entity_label(b.answer)?.to_owned(),
                            paths: to_labels(&store, &b.members)?,
                        })
                    })
                    .collect::<Result<_>>()?,
                negatives: to_labels(&store, &data.negatives.paths)?,
                negative_classes: data.negatives.classes.clone(),
            });
        }
        let bags = self.path(files::BAGS);
        let cov = self.path(files::COVERAGE);
        write_jsonl(&bags, &self.header("bags", Stage::BuildBags), &out)?;
        write_json(&cov, &coverage)?;
        Ok(StageSummary {
            stage: Stage::BuildBags.name().into(),
            message: format!(
                "{} questions, {}/{} answers reachable",
                coverage.questions, coverage.answers_reached, coverage.answers
            ),
            outputs: vec![bags, cov],
        })
    }

    fn training_examples(&self, store: &TripleStore) -> Result<Vec<TrainingExample>> {
        let records = self.train_records()?;
        let questions: HashMap<&str, &str> = records.iter().map(|r| (r.id.as_str(), r.question.as_str())).collect();
        let bags: Vec<BagRecord> = self.read(files::BAGS, "bags")?;
        bags.iter()
            .map(|b| {
                Ok(TrainingExample {
                    id: b.id.clone(),
                    question: questions
                        .get(b.id.as_str())
                        .ok_or_else(|| Error::Config(format!("bag for unknown question `{}`", b.id)))?
                        .to_string(),
                    positive_bags: b
                        .positive_bags
                        .iter()
                        .map(|p| from_labels(store, &p.paths))
                        .collect::<Result<_>>()?,
                    negatives: from_labels(store, &b.negatives)?,
                })
            })
            .collect()
    }

    pub fn train_estimator(&self) -> Result<StageSummary> {
        let store = self.load_store()?;
        let examples = self.training_examples(&store)?;
        let provider = self.provider()?;
        let (model, log) = train_estimator(&self.config.estimator, &examples, &store, provider.as_ref())?;
        let ckpt = self.path(files::ESTIMATOR);
        let header = CheckpointHeader {
            kind: "mil-estimator".into(),
            stage: Stage::TrainEstimator.name().into(),
            config_hash: self.hash.clone(),
            config: json!({"estimator": model.config(), "input_dim": model.input_dim()}),
            tensors: vec![],
        };
        write_atomic_with(&ckpt, |w| write_checkpoint(w, &header, model.params()))?;
        let log_path = self.path(files::ESTIMATOR_LOG);
        write_json(&log_path, &json!({"epoch_losses": log.epoch_losses}))?;
        Ok(StageSummary {
            stage: Stage::TrainEstimator.name().into(),
            message: format!(
                "{} questions, {} epochs, final mean loss {:.4}",
                examples.len(),
                log.epoch_losses.len(),
                log.epoch_losses.last().copied().unwrap_or(f64::NAN)
            ),
            outputs: vec![ckpt, log_path],
        })
    }

    fn read_checkpoint_file(&self, name: &str, kind: &str) -> Result<(CheckpointHeader, crate::optim::ParamStore)> {
        let path = self.path(name);
        let file = File::open(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Artifact {
                path: path.clone(),
                message: "missing; run the training stage first".into(),
            },
            _ => Error::io(&path, e),
        })?;
        let (header, params) = read_checkpoint(BufReader::new(file)).map_err(|m| Error::Artifact {
            path: path.clone(),
            message: m,
        })?;
        let bad = |m: String| Error::Artifact {
            path: path.clone(),
            message: m,
        };
        if header.kind != kind {
            return Err(bad(format!("holds `{}`, expected `{kind}`", header.kind)));
        }
        if !self.force && header.config_hash != self.hash {
            return Err(bad(format!(
                "written under config {} but the current config is {}; rerun `{}` or pass --force",
                header.config_hash, self.hash, header.stage
            )));
        }
        Ok((header, params))
    }

    pub fn load_estimator(&self) -> Result<MilEstimator> {
        let (h, params) = self.read_checkpoint_file(files::ESTIMATOR, "mil-estimator")?;
        let cfg: EstimatorConfig = serde_json::from_value(h.config["estimator"].clone())?;
        let dim = h.config["input_dim"].as_u64().unwrap_or(0) as usize;
        MilEstimator::from_params(cfg, dim, params)
    }

    pub fn load_generator(&self) -> Result<Generator> {
        let (h, params) = self.read_checkpoint_file(files::GENERATOR, "path-generator")?;
        let cfg: GeneratorConfig = serde_json::from_value(h.config["generator"].clone())?;
        let dim = h.config["input_dim"].as_u64().unwrap_or(0) as usize;
        let vocab: Vec<String> = serde_json::from_value(h.config["vocab"].clone())?;
        Generator::from_params(cfg, dim, vocab, params)
    }

    pub fn score(&self) -> Result<StageSummary> {
        let store = self.load_store()?;
        let model = self.load_estimator()?;
        let provider = self.provider()?;
        let mut cache = EmbeddingCache::new();
        let examples = self.training_examples(&store)?;
        let mut out = Vec::with_capacity(examples.len());
        for ex in &examples {
            let mut weak: Vec<RelationPath> = Vec::new();
            for p in ex.positive_bags.iter().flatten() {
                if !weak.contains(p) {
                    weak.push(p.clone());
                }
            }
            let scores = model.score_paths(&ex.question, &weak, &store, provider.as_ref(), &mut cache)?;
            out.push(PathScoreRecord {
                id: ex.id.clone(),
                paths: to_labels(&store, &weak)?,
                scores: scores.iter().map(|s| s.score).collect(),
            });
        }
        let path = self.path(files::SCORES);
        write_jsonl(&path, &self.header("scores", Stage::Score), &out)?;
        Ok(StageSummary {
            stage: Stage::Score.name().into(),
            message: format!("scored {} questions", out.len()),
            outputs: vec![path],
        })
    }

    pub fn select_supervision(&self) -> Result<StageSummary> {
        let store = self.load_store()?;
        let scores: Vec<PathScoreRecord> = self.read(files::SCORES, "scores")?;
        let mut out = Vec::with_capacity(scores.len());
        let mut skipped = 0;
        for rec in &scores {
            let ps: Vec<PathScore> = from_labels(&store, &rec.paths)?
                .into_iter()
                .zip(&rec.scores)
                .map(|(path, &score)| PathScore { path, score })
                .collect();
            match select_pseudo_supervision(&rec.id, &ps, self.config.top_t) {
                Ok(sup) => out.push(PathScoreRecord {
                    id: sup.id,
                    paths: to_labels(&store, &sup.paths)?,
                    scores: sup.scores,
                }),
                Err(Error::Unsupervisable(id)) => {
                    log::warn!("question `{id}` has no weakly supervised path; skipped");
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        let path = self.path(files::SUPERVISION);
        write_jsonl(&path, &self.header("supervision", Stage::SelectSupervision), &out)?;
        Ok(StageSummary {
            stage: Stage::SelectSupervision.name().into(),
            message: format!("{} supervised, {skipped} unsupervisable", out.len()),
            outputs: vec![path],
        })
    }

    fn supervision_dataset(&self, store: &TripleStore) -> Result<Vec<(QuestionSample, PseudoSupervision)>> {
        let samples = Self::resolve(store, &self.train_records()?)?;
        let by_id: HashMap<&str, &QuestionSample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
        let sup: Vec<PathScoreRecord> = self.read(files::SUPERVISION, "supervision")?;
        sup.into_iter()
            .map(|r| {
                let s = by_id
                    .get(r.id.as_str())
                    .ok_or_else(|| Error::Config(format!("supervision for unknown question `{}`", r.id)))?;
                Ok((
                    (*s).clone(),
                    PseudoSupervision {
                        paths: from_labels(store, &r.paths)?,
                        id: r.id,
                        scores: r.scores,
                    },
                ))
            })
            .collect()
    }

    pub fn train_generator(&self) -> Result<StageSummary> {
        let store = self.load_store()?;
        let data = self.supervision_dataset(&store)?;
        let provider = self.provider()?;
        let (model, log) = distill(&self.config.generator, &data, &store, provider.as_ref())?;
        let ckpt = self.path(files::GENERATOR);
        let header = CheckpointHeader {
            kind: "path-generator".into(),
            stage: Stage::TrainGenerator.name().into(),
            config_hash: self.hash.clone(),
            config: json!({"generator": model.config(), "input_dim": model.input_dim(), "vocab": model.vocab()}),
            tensors: vec![],
        };
        write_atomic_with(&ckpt, |w| write_checkpoint(w, &header, model.params()))?;
        let log_path = self.path(files::GENERATOR_LOG);
        write_json(&log_path, &json!({"epoch_nll": log.epoch_nll}))?;
        Ok(StageSummary {
            stage: Stage::TrainGenerator.name().into(),
            message: format!(
                "{} questions, {} epochs, final mean NLL {:.4}",
                data.len(),
                log.epoch_nll.len(),
                log.epoch_nll.last().copied().unwrap_or(f64::NAN)
            ),
            outputs: vec![ckpt, log_path],
        })
    }

    pub fn emit_finetune(&self) -> Result<StageSummary> {
        let store = self.load_store()?;
        let data = self.supervision_dataset(&store)?;
        let records: Vec<FinetuneRecord> = emit_finetune_dataset(&data, &store)?;
        let path = self.path(files::FINETUNE);
        write_jsonl(&path, &self.header("finetune", Stage::EmitFinetune), &records)?;
        Ok(StageSummary {
            stage: Stage::EmitFinetune.name().into(),
            message: format!("{} records", records.len()),
            outputs: vec![path],
        })
    }

    pub fn generate(&self) -> Result<StageSummary> {
        let store = self.load_store()?;
        let samples = Self::resolve(&store, &self.test_records()?)?;
        let mut out = Vec::with_capacity(samples.len());
        let mut transcript = Vec::with_capacity(samples.len());
        match self.config.reasoner.path_source {
            PathSource::Builtin => {
                let mut model = self.load_generator()?;
                model.check_vocab(&store)?;
                model.set_beam_size(self.config.generator.beam_size);
                let provider = self.provider()?;
                for s in &samples {
                    let start = Instant::now();
                    let q = provider.embed(&s.question)?;
                    let beams = model.beam_search(&q)?;
                    transcript.push(StageUsage {
                        id: s.id.clone(),
                        stage: Stage::Generate.name().into(),
                        seconds: start.elapsed().as_secs_f64(),
                        ..Default::default()
                    });
                    let paths: Vec<RelationPath> = beams.iter().map(|(p, _)| p.clone()).collect();
                    out.push(GeneratedRecord {
                        id: s.id.clone(),
                        paths: to_labels(&store, &paths)?,
                        logprobs: beams.iter().map(|(_, l)| Some(*l)).collect(),
                        unresolved: vec![],
                    });
                }
            }
            PathSource::Llm => {
                let client = HttpChatClient::new(self.config.reasoner.endpoint.clone());
                for s in &samples {
                    let start = Instant::now();
                    let mut usage = Usage::default();
                    let mut paths: Vec<LabelPath> = Vec::new();
                    let mut unresolved = Vec::new();
                    for &e in &s.question_entities {
                        let g = generate_path_with_llm(&client, &s.question, store.entity_label(e)?, &store)?;
                        usage.add(g.usage);
                        match g.parse {
                            PathParse::Resolved(p) => {
                                let l = p.to_labels(&store)?;
                                if !paths.contains(&l) {
                                    paths.push(l);
                                }
                            }
                            PathParse::Partial { unresolved: u, .. } => unresolved.extend(u),
                            PathParse::Failure(m) => log::warn!("question `{}`: unparseable path ({m})", s.id),
                        }
                    }
                    transcript.push(StageUsage {
                        id: s.id.clone(),
                        stage: Stage::Generate.name().into(),
                        calls: usage.calls,
                        input_tokens: usage.input_tokens,
                        output_tokens: usage.output_tokens,
                        seconds: start.elapsed().as_secs_f64(),
                    });
                    out.push(GeneratedRecord {
                        id: s.id.clone(),
                        logprobs: vec![None; paths.len()],
                        paths,
                        unresolved,
                    });
                }
            }
        }
        let path = self.path(files::GENERATED);
        let tpath = self.path(files::TRANSCRIPT_GENERATE);
        write_jsonl(&path, &self.header("generated", Stage::Generate), &out)?;
        write_jsonl(&tpath, &self.header("transcript", Stage::Generate), &transcript)?;
        Ok(StageSummary {
            stage: Stage::Generate.name().into(),
            message: format!("{} questions", out.len()),
            outputs: vec![path, tpath],
        })
    }

    pub fn ground(&self) -> Result<StageSummary> {
        let store = self.load_store()?;
        let samples = Self::resolve(&store, &self.test_records()?)?;
        let generated: Vec<GeneratedRecord> = self.read(files::GENERATED, "generated")?;
        let by_id: HashMap<&str, &GeneratedRecord> = generated.iter().map(|g| (g.id.as_str(), g)).collect();
        let mut out = Vec::with_capacity(samples.len());
        let mut empty = 0;
        for s in &samples {
            let paths = match by_id.get(s.id.as_str()) {
                Some(g) => from_labels(&store, &g.paths)?,
                None => Vec::new(),
            };
            let evidence = ground_paths(&store, &s.question_entities, &paths)?;
            empty += evidence.is_empty() as usize;
            out.push(EvidenceRecord {
                id: s.id.clone(),
                question: s.question.clone(),
                evidence: EvidenceText::resolve_all(&store, &evidence)?,
            });
        }
        let path = self.path(files::EVIDENCE);
        write_jsonl(&path, &self.header("evidence", Stage::Ground), &out)?;
        Ok(StageSummary {
            stage: Stage::Ground.name().into(),
            message: format!("{} questions, {empty} without evidence", out.len()),
            outputs: vec![path],
        })
    }

    fn reasoner(&self) -> Box<dyn Reasoner> {
        match self.config.reasoner.mode {
            ReasonerMode::Union => Box::new(UnionReasoner),
            ReasonerMode::Llm => Box::new(LlmReasoner::new(HttpChatClient::new(self.config.reasoner.endpoint.clone()))),
        }
    }

    pub fn reason(&self) -> Result<StageSummary> {
        let evidence: Vec<EvidenceRecord> = self.read(files::EVIDENCE, "evidence")?;
        let requests: Vec<ReasonerRequest> = evidence
            .iter()
            .map(|e| ReasonerRequest {
                id: e.id.clone(),
                question: e.question.clone(),
                evidence: e.evidence.clone(),
            })
            .collect();
        let reasoner = self.reasoner();
        let responses = reason_all(reasoner.as_ref(), &requests, self.config.reasoner.endpoint.concurrency);
        let mut out = Vec::with_capacity(responses.len());
        let mut transcript = Vec::with_capacity(responses.len());
        for (e, r) in evidence.iter().zip(responses) {
            let r = r?;
            let mut ends: Vec<String> = Vec::new();
            for ev in &e.evidence {
                for x in &ev.end_entities {
                    if !ends.contains(x) {
                        ends.push(x.clone());
                    }
                }
            }
            transcript.push(StageUsage {
                id: r.id.clone(),
                stage: Stage::Reason.name().into(),
                calls: r.response.usage.calls,
                input_tokens: r.response.usage.input_tokens,
                output_tokens: r.response.usage.output_tokens,
                seconds: r.seconds,
            });
            out.push(PredictionRecord {
                id: r.id,
                answers: r.response.answers,
                raw: r.response.raw,
                grounded_ends: ends,
                usage: r.response.usage,
            });
        }
        let path = self.path(files::PREDICTIONS);
        let tpath = self.path(files::TRANSCRIPT_REASON);
        write_jsonl(&path, &self.header("predictions", Stage::Reason), &out)?;
        write_jsonl(&tpath, &self.header("transcript", Stage::Reason), &transcript)?;
        Ok(StageSummary {
            stage: Stage::Reason.name().into(),
            message: format!("{} questions answered", out.len()),
            outputs: vec![path, tpath],
        })
    }

    fn transcript(&self) -> Result<Vec<StageUsage>> {
        let mut all = Vec::new();
        for name in [files::TRANSCRIPT_GENERATE, files::TRANSCRIPT_REASON] {
            let p = self.path(name);
            if p.exists() {
                all.extend(read_jsonl::<StageUsage>(&p, Expect { config_hash: None, ..self.expect("transcript") })?.1);
            }
        }
        Ok(all)
    }

    /// Scores predictions against gold answers. Defaults to this run's
    /// predictions and test questions. Writes the report even when there is
    /// nothing to score.
    pub fn evaluate(&self, predictions: Option<&Path>, gold: Option<&Path>) -> Result<(StageSummary, EvaluationReport)> {
        let pred_path = predictions.map_or_else(|| self.path(files::PREDICTIONS), Path::to_path_buf);
        let external = predictions.is_some();
        let expect = Expect {
            artifact: "predictions",
            config_hash: if external { None } else { self.expect("predictions").config_hash },
            header_required: !external,
        };
        let (_, preds): (_, Vec<PredictionRecord>) = read_jsonl(&pred_path, expect)?;
        let gold_records = match gold {
            Some(p) => load_questions(p)?,
            None => self.test_records()?,
        };
        let gold_by_id: HashMap<&str, &QuestionRecord> = gold_records.iter().map(|g| (g.id.as_str(), g)).collect();
        let mut results = Vec::with_capacity(preds.len());
        for p in &preds {
            let Some(g) = gold_by_id.get(p.id.as_str()) else {
                log::warn!("prediction for unknown question `{}` ignored", p.id);
                continue;
            };
            results.push(QuestionResult {
                id: p.id.clone(),
                predicted: p.answers.clone(),
                gold: g.answers.clone(),
                grounded_ends: p.grounded_ends.clone(),
                usage: p.usage,
            });
        }
        let report = EvaluationReport {
            metrics: MetricReport::compute(&results),
            efficiency: if external { efficiency_report(&[]) } else { efficiency_report(&self.transcript()?) },
        };
        let json_path = self.path(files::REPORT_JSON);
        let txt_path = self.path(files::REPORT_TXT);
        write_json(&json_path, &report)?;
        crate::artifact::write_atomic(&txt_path, report.metrics.to_table().as_bytes())?;
        let summary = StageSummary {
            stage: Stage::Evaluate.name().into(),
            message: format!(
                "n={} F1={:.4} Hit={:.4} Hits@1={:.4}",
                report.metrics.n, report.metrics.f1, report.metrics.hit, report.metrics.hits_at_1
            ),
            outputs: vec![json_path, txt_path],
        };
        Ok((summary, report))
    }

    pub fn supervision_eval(&self, supervision: Option<&Path>, reference: Option<&Path>) -> Result<StageSummary> {
        let reference = reference
            .map(Path::to_path_buf)
            .or_else(|| self.config.reference_paths.clone())
            .ok_or_else(|| Error::Config("no reference path file given".into()))?;
        let sup_path = supervision.map_or_else(|| self.path(files::SUPERVISION), Path::to_path_buf);
        let expect = Expect {
            artifact: "supervision",
            config_hash: if supervision.is_some() { None } else { self.expect("supervision").config_hash },
            header_required: supervision.is_none(),
        };
        let (_, sup): (_, Vec<PathScoreRecord>) = read_jsonl(&sup_path, expect)?;
        let (_, refs): (_, Vec<ReferenceRecord>) = read_jsonl(
            &reference,
            Expect {
                artifact: "reference",
                config_hash: None,
                header_required: false,
            },
        )?;
        let selected: BTreeMap<String, Vec<LabelPath>> = sup.into_iter().map(|r| (r.id, r.paths)).collect();
        let reference_map: BTreeMap<String, Vec<LabelPath>> = refs.into_iter().map(|r| (r.id, r.paths)).collect();
        let eval = supervision_hits_at_t(&selected, &reference_map, self.config.top_t);
        let path = self.path(files::SUPERVISION_EVAL);
        write_json(&path, &eval)?;
        Ok(StageSummary {
            stage: Stage::SupervisionEval.name().into(),
            message: format!("Hits@{} = {:.4} over {} questions", eval.t, eval.hits_at_t, eval.n),
            outputs: vec![path],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("nope".parse::<Stage>().is_err());
    }
}
