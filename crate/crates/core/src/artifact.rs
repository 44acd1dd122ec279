//! Stage artifacts: JSONL files whose first line is a provenance header, and
//! atomic write-then-rename persistence for every output.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub artifact: String,
    pub format_version: u32,
    pub stage: String,
    pub config_hash: String,
}

impl ArtifactHeader {
    pub fn new(artifact: &str, stage: &str, config_hash: &str) -> Self {
        ArtifactHeader {
            artifact: artifact.to_owned(),
            format_version: FORMAT_VERSION,
            stage: stage.to_owned(),
            config_hash: config_hash.to_owned(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    #[serde(rename = "_header")]
    header: ArtifactHeader,
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic_with(path, |w| w.write_all(bytes))
}

pub fn write_atomic_with<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    fill(&mut w).map_err(|e| Error::io(&tmp, e))?;
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_jsonl<T: Serialize>(path: &Path, header: &ArtifactHeader, records: &[T]) -> Result<()> {
    let mut buf = serde_json::to_vec(&HeaderLine {
        header: header.clone(),
    })?;
    buf.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

fn artifact_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Artifact {
        path: path.to_owned(),
        message: message.into(),
    }
}

/// What a reader requires of a file's header.
#[derive(Clone, Copy, Debug)]
pub struct Expect<'a> {
    pub artifact: &'a str,
    /// `None` accepts any producing configuration.
    pub config_hash: Option<&'a str>,
    /// Files without a header line are accepted when false.
    pub header_required: bool,
}

/// Reads a JSONL artifact, checking its header against `expect`.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, expect: Expect<'_>) -> Result<(Option<ArtifactHeader>, Vec<T>)> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(artifact_error(path, "missing; run the stage that produces it first"))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() && records.is_empty() && line.trim_start().starts_with("{\"_header\"") {
            let h: HeaderLine = serde_json::from_str(&line)
                .map_err(|e| artifact_error(path, format!("unreadable header: {e}")))?;
            check_header(path, &h.header, expect)?;
            header = Some(h.header);
            continue;
        }
        if header.is_none() && records.is_empty() && expect.header_required {
            return Err(artifact_error(path, "no provenance header"));
        }
        let r = serde_json::from_str(&line).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(r);
    }
    if header.is_none() && expect.header_required {
        return Err(artifact_error(path, "no provenance header"));
    }
    Ok((header, records))
}

pub fn check_header(path: &Path, h: &ArtifactHeader, expect: Expect<'_>) -> Result<()> {
    if h.artifact != expect.artifact {
        return Err(artifact_error(
            path,
            format!("holds `{}`, expected `{}`", h.artifact, expect.artifact),
        ));
    }
    if h.format_version != FORMAT_VERSION {
        return Err(artifact_error(
            path,
            format!(
                "format version {} is stale (current {FORMAT_VERSION}); rerun stage `{}`",
                h.format_version, h.stage
            ),
        ));
    }
    if let Some(hash) = expect.config_hash {
        if h.config_hash != hash {
            return Err(artifact_error(
                path,
                format!(
                    "written under config {} but the current config is {hash}; rerun stage `{}` or pass --force",
                    h.config_hash, h.stage
                ),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip_and_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let h = ArtifactHeader::new("things", "make", "abc");
        write_jsonl(&path, &h, &[1u32, 2, 3]).unwrap();
        let expect = Expect {
            artifact: "things",
            config_hash: Some("abc"),
            header_required: true,
        };
        let (got, recs): (_, Vec<u32>) = read_jsonl(&path, expect).unwrap();
        assert_eq!(got, Some(h));
        assert_eq!(recs, vec![1, 2, 3]);
        let stale = Expect {
            config_hash: Some("zzz"),
            ..expect
        };
        assert!(matches!(read_jsonl::<u32>(&path, stale), Err(Error::Artifact { .. })));
        let wrong = Expect {
            artifact: "other",
            ..expect
        };
        assert!(read_jsonl::<u32>(&path, wrong).is_err());
        assert!(!dir.path().join("x.jsonl.tmp").exists());
        let missing = read_jsonl::<u32>(&dir.path().join("nope.jsonl"), expect);
        assert!(matches!(missing, Err(Error::Artifact { .. })));
    }

    #[test]
    fn headerless_files_when_allowed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain.jsonl");
        std::fs::write(&path, "1\n\n2\n").unwrap();
        let expect = Expect {
            artifact: "n",
            config_hash: None,
            header_required: false,
        };
        let (h, recs): (_, Vec<u32>) = read_jsonl(&path, expect).unwrap();
        assert!(h.is_none());
        assert_eq!(recs, vec![1, 2]);
        let strict = Expect {
            header_required: true,
            ..expect
        };
        assert!(read_jsonl::<u32>(&path, strict).is_err());
    }
}
