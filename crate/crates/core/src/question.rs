//! Question records as stored on disk and their id-resolved form.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, TripleStore};

/// One line of a question file:
/// `{"id","question","question_entities":[…],"answers":[…]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    pub question_entities: Vec<String>,
    #[serde(default)]
    pub answers: Vec<String>,
}

/// A question with entities resolved against a store. Answers absent from the
/// store cannot be reached and are dropped here; `QuestionRecord::answers`
/// still holds them for evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuestionSample {
    pub id: String,
    pub question: String,
    pub question_entities: Vec<EntityId>,
    pub answers: Vec<EntityId>,
}

impl QuestionRecord {
    pub fn resolve(&self, store: &TripleStore) -> Result<QuestionSample> {
        if self.question.trim().is_empty() {
            return Err(Error::Config(format!("question `{}` has empty text", self.id)));
        }
        let mut question_entities: Vec<EntityId> = self
            .question_entities
            .iter()
            .filter_map(|label| {
                let id = store.entity(label);
                if id.is_none() {
                    log::warn!("question `{}`: entity `{label}` not in the graph", self.id);
                }
                id
            })
            .collect();
        question_entities.sort_unstable();
        question_entities.dedup();
        if question_entities.is_empty() {
            return Err(Error::Config(format!(
                "question `{}` has no question entity present in the graph",
                self.id
            )));
        }
        let mut answers: Vec<EntityId> = self.answers.iter().filter_map(|a| store.entity(a)).collect();
        answers.sort_unstable();
        answers.dedup();
        Ok(QuestionSample {
            id: self.id.clone(),
            question: self.question.clone(),
            question_entities,
            answers,
        })
    }
}

pub fn read_questions<R: BufRead>(reader: R, context: &str) -> Result<Vec<QuestionRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            context: context.to_owned(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QuestionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            context: context.to_owned(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_questions(path: &Path) -> Result<Vec<QuestionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_questions(std::io::BufReader::new(file), &path.display().to_string())
}
