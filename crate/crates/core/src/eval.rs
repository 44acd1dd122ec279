//! Answer metrics, failure attribution, supervision Hits@T and efficiency
//! accounting.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reasoner::Usage;

/// Case-folded with internal whitespace collapsed to single spaces.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn normalized_set<S: AsRef<str>>(xs: &[S]) -> HashSet<String> {
    xs.iter()
        .map(|x| normalize_answer(x.as_ref()))
        .filter(|x| !x.is_empty())
        .collect()
}

fn gold_set<S: AsRef<str>>(gold: &[S]) -> Result<HashSet<String>> {
    let g = normalized_set(gold);
    if g.is_empty() {
        Err(Error::EmptyGold)
    } else {
        Ok(g)
    }
}

pub fn f1_score<S: AsRef<str>, T: AsRef<str>>(predicted: &[S], gold: &[T]) -> Result<f64> {
    let g = gold_set(gold)?;
    let p = normalized_set(predicted);
    let common = p.intersection(&g).count();
    if common == 0 {
        return Ok(0.0);
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

pub fn hit<S: AsRef<str>, T: AsRef<str>>(predicted: &[S], gold: &[T]) -> Result<bool> {
    let g = gold_set(gold)?;
    Ok(predicted
        .iter()
        .any(|p| g.contains(&normalize_answer(p.as_ref()))))
}

pub fn hits_at_1<S: AsRef<str>, T: AsRef<str>>(predicted: &[S], gold: &[T]) -> Result<bool> {
    let g = gold_set(gold)?;
    Ok(predicted
        .first()
        .is_some_and(|p| g.contains(&normalize_answer(p.as_ref()))))
}

/// Fraction of gold answers present among the retrieved entities.
pub fn answer_recall<S: AsRef<str>, T: AsRef<str>>(retrieved: &[S], gold: &[T]) -> Result<f64> {
    let g = gold_set(gold)?;
    let r = normalized_set(retrieved);
    Ok(g.intersection(&r).count() as f64 / g.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    None,
    PathGeneration,
    Reasoning,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub id: String,
    pub predicted: Vec<String>,
    pub gold: Vec<String>,
    /// Labels of every end entity reached by the evidence.
    pub grounded_ends: Vec<String>,
    #[serde(default)]
    pub usage: Usage,
}

/// `None` on a hit; otherwise whether the evidence already missed the gold
/// answers (path generation) or contained one the reasoner dropped.
pub fn classify_failure(result: &QuestionResult) -> Result<FailureClass> {
    if hit(&result.predicted, &result.gold)? {
        return Ok(FailureClass::None);
    }
    let g = gold_set(&result.gold)?;
    let grounded = normalized_set(&result.grounded_ends);
    Ok(if grounded.is_disjoint(&g) {
        FailureClass::PathGeneration
    } else {
        FailureClass::Reasoning
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub path_generation: usize,
    pub reasoning: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    /// Questions skipped for having no gold answer.
    pub excluded: usize,
    pub f1: f64,
    pub hit: f64,
    pub hits_at_1: f64,
    /// Gold answers covered by the grounded evidence, macro averaged.
    pub answer_recall: f64,
    pub errors: ErrorBreakdown,
}

impl MetricReport {
    /// Macro averages over questions with a nonempty gold set.
    pub fn compute(results: &[QuestionResult]) -> MetricReport {
        let mut r = MetricReport::default();
        let (mut f1, mut rec, mut h, mut h1) = (0.0, 0.0, 0usize, 0usize);
        for res in results {
            if gold_set(&res.gold).is_err() {
                r.excluded += 1;
                continue;
            }
            r.n += 1;
            f1 += f1_score(&res.predicted, &res.gold).expect("gold checked");
            rec += answer_recall(&res.grounded_ends, &res.gold).expect("gold checked");
            h += hit(&res.predicted, &res.gold).expect("gold checked") as usize;
            h1 += hits_at_1(&res.predicted, &res.gold).expect("gold checked") as usize;
            match classify_failure(res).expect("gold checked") {
                FailureClass::None => {}
                FailureClass::PathGeneration => r.errors.path_generation += 1,
                FailureClass::Reasoning => r.errors.reasoning += 1,
            }
        }
        if r.excluded > 0 {
            log::warn!("{} questions without gold answers excluded", r.excluded);
        }
        if r.n > 0 {
            let n = r.n as f64;
            r.f1 = f1 / n;
            r.hit = h as f64 / n;
            r.hits_at_1 = h1 as f64 / n;
            r.answer_recall = rec / n;
        }
        r
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<22}{:>10}", "metric", "value");
        let _ = writeln!(s, "{:<22}{:>10}", "questions", self.n);
        let _ = writeln!(s, "{:<22}{:>10}", "excluded (no gold)", self.excluded);
        let _ = writeln!(s, "{:<22}{:>10.4}", "F1", self.f1);
        let _ = writeln!(s, "{:<22}{:>10.4}", "Hit", self.hit);
        let _ = writeln!(s, "{:<22}{:>10.4}", "Hits@1", self.hits_at_1);
        let _ = writeln!(s, "{:<22}{:>10.4}", "answer recall", self.answer_recall);
        let _ = writeln!(s, "{:<22}{:>10}", "path-generation errors", self.errors.path_generation);
        let _ = writeln!(s, "{:<22}{:>10}", "reasoning errors", self.errors.reasoning);
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SupervisionEval {
    pub t: usize,
    pub n: usize,
    pub hits: usize,
    pub hits_at_t: f64,
    /// Selected questions without a reference, skipped.
    pub missing_reference: Vec<String>,
}

/// Fraction of questions whose first `t` selected paths contain a reference path.
pub fn supervision_hits_at_t<P: PartialEq>(
    selected: &BTreeMap<String, Vec<P>>,
    reference: &BTreeMap<String, Vec<P>>,
    t: usize,
) -> SupervisionEval {
    let mut out = SupervisionEval {
        t,
        ..Default::default()
    };
    for (id, paths) in selected {
        let Some(refs) = reference.get(id) else {
            log::warn!("question {id} has no reference paths; skipped");
            out.missing_reference.push(id.clone());
            continue;
        };
        out.n += 1;
        if paths.iter().take(t).any(|p| refs.contains(p)) {
            out.hits += 1;
        }
    }
    if out.n > 0 {
        out.hits_at_t = out.hits as f64 / out.n as f64;
    }
    out
}

/// One transcript line: the cost of one stage for one question.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageUsage {
    pub id: String,
    pub stage: String,
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageEfficiency {
    pub questions: usize,
    pub mean_seconds: f64,
    pub mean_calls: f64,
    pub mean_input_tokens: f64,
    pub mean_output_tokens: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub stages: BTreeMap<String, StageEfficiency>,
    /// Per-question means summed over stages.
    pub total: StageEfficiency,
}

/// Per-question means for each stage; entries for the same question and stage
/// are summed first.
pub fn efficiency_report(records: &[StageUsage]) -> EfficiencyReport {
    let mut by_stage: BTreeMap<&str, BTreeMap<&str, StageUsage>> = BTreeMap::new();
    for r in records {
        let acc = by_stage
            .entry(&r.stage)
            .or_default()
            .entry(&r.id)
            .or_default();
        acc.calls += r.calls;
        acc.input_tokens += r.input_tokens;
        acc.output_tokens += r.output_tokens;
        acc.seconds += r.seconds;
    }
    let mut report = EfficiencyReport::default();
    let mut ids = BTreeSet::new();
    let mut sums = StageUsage::default();
    for (stage, per_id) in by_stage {
        let n = per_id.len() as f64;
        let mut s = StageUsage::default();
        for (id, u) in &per_id {
            ids.insert(*id);
            s.calls += u.calls;
            s.input_tokens += u.input_tokens;
            s.output_tokens += u.output_tokens;
            s.seconds += u.seconds;
        }
        sums.calls += s.calls;
        sums.input_tokens += s.input_tokens;
        sums.output_tokens += s.output_tokens;
        sums.seconds += s.seconds;
        report.stages.insert(
            stage.to_owned(),
            StageEfficiency {
                questions: per_id.len(),
                mean_seconds: s.seconds / n,
                mean_calls: s.calls as f64 / n,
                mean_input_tokens: s.input_tokens as f64 / n,
                mean_output_tokens: s.output_tokens as f64 / n,
            },
        );
    }
    if !ids.is_empty() {
        let n = ids.len() as f64;
        report.total = StageEfficiency {
            questions: ids.len(),
            mean_seconds: sums.seconds / n,
            mean_calls: sums.calls as f64 / n,
            mean_input_tokens: sums.input_tokens as f64 / n,
            mean_output_tokens: sums.output_tokens as f64 / n,
        };
    }
    report
}
