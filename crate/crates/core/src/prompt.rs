//! Prompt templates for path generation and evidence-grounded answering.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kg::TripleStore;
use crate::paths::{GroundedEvidence, RelationPath};

pub const ARROW: &str = " \u{2192} ";
pub const SEP: &str = " <SEP> ";

pub const PATH_GENERATION_INSTRUCTION: &str = "Reasoning path is a sequence of relations in the Knowledge Graph that connects the topic entity in the question to answer entities. Given a question, please generate a reasoning path in the Knowledge Graph starting from the topic entity to answer the question.";

pub const REASONING_INSTRUCTION: &str = "You are a helpful and precise assistant for answering questions based on the provided reasoning paths on a knowledge graph. Please return all the possible answers from the entities mentioned in the reasoning paths. Please return each answer at a new line.";

/// `<PATH> r1 → r2 </PATH>`
pub fn serialize_path<S: AsRef<str>>(labels: &[S]) -> String {
    let joined: Vec<&str> = labels.iter().map(AsRef::as_ref).collect();
    format!("<PATH> {} </PATH>", joined.join(ARROW))
}

pub fn path_generation_input(question: &str, topic_entity: &str) -> String {
    format!("Question: {question}\nTopic entity: {topic_entity}")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

impl FinetuneRecord {
    pub fn new<S: AsRef<str>>(question: &str, topic_entity: &str, path_labels: &[S]) -> Self {
        FinetuneRecord {
            instruction: PATH_GENERATION_INSTRUCTION.to_owned(),
            input: path_generation_input(question, topic_entity),
            output: serialize_path(path_labels),
        }
    }
}

/// Evidence with labels resolved, ready for rendering.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceText {
    pub topic_entity: String,
    pub relations: Vec<String>,
    pub end_entities: Vec<String>,
}

impl EvidenceText {
    pub fn resolve(store: &TripleStore, evidence: &GroundedEvidence) -> Result<Self> {
        Ok(EvidenceText {
            topic_entity: store.entity_label(evidence.start)?.to_owned(),
            relations: evidence.path.to_labels(store)?,
            end_entities: evidence
                .ends
                .iter()
                .map(|&e| store.entity_label(e).map(str::to_owned))
                .collect::<Result<_>>()?,
        })
    }

    pub fn resolve_all(store: &TripleStore, evidence: &[GroundedEvidence]) -> Result<Vec<Self>> {
        evidence.iter().map(|e| Self::resolve(store, e)).collect()
    }
}

/// The user turn of the answering prompt: numbered evidence blocks followed by
/// the question. Empty evidence leaves only the question.
pub fn reasoning_input(question: &str, evidence: &[EvidenceText]) -> String {
    if evidence.is_empty() {
        return format!("Question: {question}");
    }
    let mut out = String::from("Reasoning Paths:\n\n");
    for (i, e) in evidence.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(&format!(
            "[PATH{}]\nTopic Entity: {},\nRelation Path: {}\nEnd Entities: {}",
            i + 1,
            e.topic_entity,
            e.relations.join(ARROW),
            e.end_entities.join(SEP)
        ));
    }
    out.push_str(&format!("\n\nQuestion: {question}"));
    out
}

/// Full answering prompt: instruction, blank line, then [`reasoning_input`].
pub fn verbalize_evidence(question: &str, evidence: &[EvidenceText]) -> String {
    format!("{REASONING_INSTRUCTION}\n\n{}", reasoning_input(question, evidence))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PathParse {
    Resolved(RelationPath),
    /// Some labels are not relations of the graph; kept for diagnostics only.
    Partial {
        labels: Vec<String>,
        unresolved: Vec<String>,
    },
    Failure(String),
}

/// Reads the first `<PATH> .. </PATH>` span of a generation.
pub fn parse_generated_path(text: &str, store: &TripleStore) -> PathParse {
    let Some(start) = text.find("<PATH>") else {
        return PathParse::Failure("missing <PATH> tag".into());
    };
    let body = &text[start + "<PATH>".len()..];
    let Some(end) = body.find("</PATH>") else {
        return PathParse::Failure("missing </PATH> tag".into());
    };
    let body = body[..end].trim();
    if body.is_empty() {
        return PathParse::Failure("empty path".into());
    }
    let sep = if body.contains('\u{2192}') { "\u{2192}" } else { "->" };
    let labels: Vec<String> = body.split(sep).map(|s| s.trim().to_owned()).collect();
    if labels.iter().any(String::is_empty) {
        return PathParse::Failure("empty relation in path".into());
    }
    let mut ids = Vec::with_capacity(labels.len());
    let mut unresolved = Vec::new();
    for l in &labels {
        match store.relation(l) {
            Some(r) => ids.push(r),
            None => unresolved.push(l.clone()),
        }
    }
    if unresolved.is_empty() {
        PathParse::Resolved(RelationPath::new(ids))
    } else {
        PathParse::Partial { labels, unresolved }
    }
}
