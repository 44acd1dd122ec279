//! Text embeddings for questions and relation labels.
//!
//! Two providers ship with the crate: a deterministic character n-gram hashing
//! embedder, and a lookup table loaded from a JSONL cache produced offline by
//! any sentence encoder.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};

/// A dense vector with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Embedding(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    fn is_deterministic(&self) -> bool;

    fn embed(&self, text: &str) -> Result<Embedding>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        (**self).embed(text)
    }
}

pub const DEFAULT_HASHING_DIM: usize = 256;

/// Character 3- and 4-gram feature hashing (FNV-1a) over the lowercased text
/// padded with boundary markers, followed by L2 normalization.
#[derive(Clone, Debug)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(HashingEmbedder { dim })
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder {
            dim: DEFAULT_HASHING_DIM,
        }
    }
}

fn fnv1a(chars: &[char]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut buf = [0u8; 4];
    for c in chars {
        for b in c.encode_utf8(&mut buf).bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl EmbeddingProvider for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(Error::EmptyText);
        }
        let mut chars = vec!['^'];
        chars.extend(trimmed.to_lowercase().chars());
        chars.push('$');
        let mut v = vec![0.0; self.dim];
        for n in [3usize, 4] {
            if chars.len() < n {
                v[(fnv1a(&chars) % self.dim as u64) as usize] += 1.0;
                continue;
            }
            for gram in chars.windows(n) {
                let mut key = Vec::with_capacity(n + 1);
                key.push(char::from(b'0' + n as u8));
                key.extend_from_slice(gram);
                v[(fnv1a(&key) % self.dim as u64) as usize] += 1.0;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(Embedding(v))
    }
}

/// Looks texts up in a table loaded from JSONL lines `{"text":…, "vector":[…]}`.
#[derive(Clone, Debug)]
pub struct FileEmbedder {
    dim: usize,
    table: HashMap<String, Embedding>,
}

#[derive(Deserialize)]
struct CacheLine {
    text: String,
    vector: Vec<f64>,
}

impl FileEmbedder {
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut table = HashMap::new();
        let mut dim = None;
        for (idx, line) in reader.lines().enumerate() {
            let parse_err = |message: String| Error::Parse {
                context: "embedding cache".into(),
                line: idx + 1,
                message,
            };
            let line = line.map_err(|e| parse_err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CacheLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            if rec.vector.iter().any(|v| !v.is_finite()) {
                return Err(parse_err("non-finite vector entry".into()));
            }
            match dim {
                None => dim = Some(rec.vector.len()),
                Some(d) if d != rec.vector.len() => {
                    return Err(parse_err(format!(
                        "vector dimension {} differs from {d}",
                        rec.vector.len()
                    )))
                }
                _ => {}
            }
            table.insert(rec.text, Embedding(rec.vector));
        }
        let dim = dim.ok_or_else(|| Error::Config("embedding cache is empty".into()))?;
        if dim == 0 {
            return Err(Error::Config("embedding cache has zero-length vectors".into()));
        }
        Ok(FileEmbedder { dim, table })
    }

    pub fn open(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(std::io::BufReader::new(file))
    }
}

impl EmbeddingProvider for FileEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| Error::MissingEmbedding(text.to_owned()))
    }
}

/// `builtin:<dim>` or `file:<path>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProviderSpec {
    Builtin(usize),
    File(PathBuf),
}

impl FromStr for ProviderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("builtin", dim)) => dim
                .parse()
                .ok()
                .filter(|&d| d > 0)
                .map(ProviderSpec::Builtin)
                .ok_or_else(|| Error::Config(format!("bad builtin dimension `{dim}`"))),
            Some(("file", path)) if !path.is_empty() => Ok(ProviderSpec::File(PathBuf::from(path))),
            _ if s == "builtin" => Ok(ProviderSpec::Builtin(DEFAULT_HASHING_DIM)),
            _ => Err(Error::Config(format!(
                "embedding provider must be `builtin:<dim>` or `file:<path>`, got `{s}`"
            ))),
        }
    }
}

impl ProviderSpec {
    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self {
            ProviderSpec::Builtin(dim) => Box::new(HashingEmbedder::new(*dim)?),
            ProviderSpec::File(path) => Box::new(FileEmbedder::open(path)?),
        })
    }
}

/// Memoizes embeddings of repeated texts (relation labels mostly).
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    map: HashMap<String, Embedding>,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get<P: EmbeddingProvider + ?Sized>(&mut self, provider: &P, text: &str) -> Result<&Embedding> {
        if !self.map.contains_key(text) {
            let e = provider.embed(text)?;
            self.map.insert(text.to_owned(), e);
        }
        Ok(&self.map[text])
    }
}

pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean cosine similarity between the question and each relation on the path.
/// Order-insensitive by construction.
pub fn question_path_similarity(question: &Embedding, relations: &[Embedding]) -> Result<f64> {
    if relations.is_empty() {
        return Err(Error::Config("similarity of an empty path".into()));
    }
    let mut total = 0.0;
    for r in relations {
        total += cosine(question, r)?;
    }
    Ok(total / relations.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_is_deterministic_and_normalized() {
        let p = HashingEmbedder::default();
        let a = p.embed("parent").unwrap();
        assert_eq!(a, p.embed("parent").unwrap());
        assert_eq!(a.dim(), 256);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert!(matches!(p.embed("   "), Err(Error::EmptyText)));
    }

    #[test]
    fn short_texts_embed() {
        let p = HashingEmbedder::new(16).unwrap();
        assert!((p.embed("a").unwrap().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn file_provider_lookup() {
        let p = FileEmbedder::from_reader(
            "{\"text\":\"a\",\"vector\":[1,0]}\n{\"text\":\"b\",\"vector\":[0,1]}\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(p.dimension(), 2);
        assert_eq!(p.embed("a").unwrap().values(), &[1.0, 0.0]);
        match p.embed("c") {
            Err(Error::MissingEmbedding(k)) => assert_eq!(k, "c"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_provider_rejects_ragged_rows() {
        let err = FileEmbedder::from_reader(
            "{\"text\":\"a\",\"vector\":[1,0]}\n{\"text\":\"b\",\"vector\":[0]}\n".as_bytes(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn provider_spec_parsing() {
        assert_eq!("builtin:64".parse::<ProviderSpec>().unwrap(), ProviderSpec::Builtin(64));
        assert_eq!(
            "file:/tmp/x.jsonl".parse::<ProviderSpec>().unwrap(),
            ProviderSpec::File("/tmp/x.jsonl".into())
        );
        assert!("builtin:0".parse::<ProviderSpec>().is_err());
        assert!("gte".parse::<ProviderSpec>().is_err());
    }

    #[test]
    fn similarity_edge_cases() {
        let e = |v: &[f64]| Embedding::new(v.to_vec());
        let q = e(&[1.0, 2.0, 0.0]);
        assert!((question_path_similarity(&q, &[q.clone()]).unwrap() - 1.0).abs() < 1e-12);
        let orth = [e(&[0.0, 0.0, 3.0]), e(&[2.0, -1.0, 0.0])];
        assert_eq!(question_path_similarity(&q, &orth).unwrap(), 0.0);
        assert!(matches!(
            question_path_similarity(&q, &[e(&[0.0, 0.0, 0.0])]),
            Err(Error::ZeroNorm)
        ));
        assert!(question_path_similarity(&q, &[e(&[1.0])]).is_err());
    }
}
