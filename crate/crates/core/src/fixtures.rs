//! Bundled datasets: a small movie graph with held-in questions, and the
//! two-triple sports chain used in the grounding docs.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kg::TripleStore;
use crate::question::{read_questions, QuestionRecord};

pub const TOY_KG: &str = include_str!("../data/toy/kg.tsv");
pub const TOY_QUESTIONS: &str = include_str!("../data/toy/questions.jsonl");
pub const TOY_CONFIG: &str = include_str!("../data/toy/toy.toml");

pub const SPORTS_KG: &str = include_str!("../data/sports/kg.tsv");
pub const SPORTS_QUESTIONS: &str = include_str!("../data/sports/questions.jsonl");

pub fn toy_store() -> TripleStore {
    TripleStore::load_triples(Cursor::new(TOY_KG)).expect("bundled toy graph parses")
}

pub fn toy_questions() -> Vec<QuestionRecord> {
    read_questions(Cursor::new(TOY_QUESTIONS), "toy questions").expect("bundled toy questions parse")
}

pub fn sports_store() -> TripleStore {
    TripleStore::load_triples(Cursor::new(SPORTS_KG)).expect("bundled sports graph parses")
}

pub fn sports_questions() -> Vec<QuestionRecord> {
    read_questions(Cursor::new(SPORTS_QUESTIONS), "sports questions").expect("bundled sports questions parse")
}

/// Writes the toy graph, questions and config into `dir`, returning the
/// config path. Relative paths in the config resolve inside `dir`.
pub fn write_toy_dataset(dir: &Path) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in [
        ("kg.tsv", TOY_KG),
        ("questions.jsonl", TOY_QUESTIONS),
        ("toy.toml", TOY_CONFIG),
    ] {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(dir.join("toy.toml"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_data_loads() {
        let s = toy_store();
        assert_eq!(s.num_relations(), 6);
        assert!((35..=45).contains(&s.num_triples()));
        for q in toy_questions() {
            q.resolve(&s).unwrap();
        }
        let sp = sports_store();
        assert_eq!(sp.num_triples(), 2);
        assert_eq!(sports_questions()[0].answers, vec!["Los Angeles Lakers"]);
    }
}
