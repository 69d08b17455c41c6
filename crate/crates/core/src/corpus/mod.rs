//! Documents as raw byte sequences.

mod batch;
mod noise;

pub use batch::{read_batch_dump, write_batch_dump, Batch, BatchPacker, PackOptions, PackStats, PositionFlag};
pub use noise::{apply_noise, apply_noise_pair, NoiseSpec, NoiseStrategy, NoiseTarget};

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// One input record. `bytes` are exactly the input encoding; nothing is normalized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub bytes: Vec<u8>,
    /// Byte offsets of UTF-8 character starts, present when `bytes` is valid UTF-8.
    pub char_offsets: Option<Vec<usize>>,
}

impl Document {
    pub fn new(id: impl Into<String>, bytes: Vec<u8>) -> Self {
        let char_offsets = std::str::from_utf8(&bytes)
            .ok()
            .map(|s| s.char_indices().map(|(i, _)| i).collect());
        Document {
            id: id.into(),
            bytes,
            char_offsets,
        }
    }

    pub fn from_text(id: impl Into<String>, text: &str) -> Self {
        Document::new(id, text.as_bytes().to_vec())
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    /// SHA-256 of the content, used to keep evaluation data disjoint from training data.
    pub fn content_hash(&self) -> [u8; 32] {
        Sha256::digest(&self.bytes).into()
    }
}

pub type DocumentSet = Vec<Document>;

/// Total bytes across a document set.
pub fn total_bytes(docs: &[Document]) -> usize {
    docs.iter().map(Document::len).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// One document per line.
    Plain,
    /// One JSON object per line with a string `text` field.
    Jsonl,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" | "plain-text" | "txt" => Ok(CorpusFormat::Plain),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::Config(format!("unknown corpus format '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub format: CorpusFormat,
    /// Fail on the first malformed record instead of skipping it.
    pub strict: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            format: CorpusFormat::Plain,
            strict: false,
        }
    }
}

#[derive(Debug, Default)]
pub struct LoadReport {
    pub docs: DocumentSet,
    /// (line number, reason) for every skipped malformed record.
    pub skipped: Vec<(usize, String)>,
    pub warnings: Vec<String>,
}

/// Load documents from `path`; files ending in `.gz` are decompressed transparently.
pub fn load_corpus(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<LoadReport> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(flate2::read::GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "doc".to_string());
    let report = read_corpus(BufReader::new(reader), &stem, opts).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    if report.docs.is_empty() {
        log::warn!("{}: no documents loaded", path.display());
    }
    Ok(report)
}

/// Parse documents from any buffered reader. `id_prefix` names documents `<prefix>:<line>`.
pub fn read_corpus(mut reader: impl BufRead, id_prefix: &str, opts: &LoadOptions) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    let mut line = Vec::new();
    let mut lineno = 0usize;
    loop {
        line.clear();
        let n = reader
            .read_until(b'\n', &mut line)
            .map_err(|e| Error::io(id_prefix, e))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        if line.last() == Some(&b'\n') {
            line.pop();
        }
        if line.is_empty() {
            continue;
        }
        let id = format!("{id_prefix}:{lineno}");
        match opts.format {
            CorpusFormat::Plain => report.docs.push(Document::new(id, line.clone())),
            CorpusFormat::Jsonl => match parse_jsonl_record(&line) {
                Ok(text) if text.is_empty() => {}
                Ok(text) => report.docs.push(Document::new(id, text.into_bytes())),
                Err(reason) if opts.strict => {
                    return Err(Error::MalformedRecord { line: lineno, reason })
                }
                Err(reason) => {
                    log::warn!("skipping line {lineno}: {reason}");
                    report.skipped.push((lineno, reason));
                }
            },
        }
    }
    if report.docs.is_empty() {
        report.warnings.push("empty document set".to_string());
    }
    Ok(report)
}

fn parse_jsonl_record(line: &[u8]) -> std::result::Result<String, String> {
    let value: serde_json::Value = serde_json::from_slice(line).map_err(|e| e.to_string())?;
    match value.get("text") {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(_) => Err("`text` is not a string".to_string()),
        None => Err("missing `text` field".to_string()),
    }
}

/// Split documents into two halves by alternating index; used for held-out calibration checks.
pub fn split_alternating(docs: &[Document]) -> (DocumentSet, DocumentSet) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, d) in docs.iter().enumerate() {
        if i % 2 == 0 {
            a.push(d.clone());
        } else {
            b.push(d.clone());
        }
    }
    (a, b)
}

/// Take documents in order until at least `bytes` bytes are collected.
pub fn take_bytes(docs: &[Document], bytes: usize) -> DocumentSet {
    let mut out = Vec::new();
    let mut total = 0;
    for d in docs {
        if total >= bytes {
            break;
        }
        total += d.len();
        out.push(d.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn load_str(content: &str, format: CorpusFormat, strict: bool) -> Result<LoadReport> {
        read_corpus(content.as_bytes(), "t", &LoadOptions { format, strict })
    }

    #[test]
    fn plain_line_is_one_document() {
        let r = load_str("ab\n", CorpusFormat::Plain, false).unwrap();
        assert_eq!(r.docs.len(), 1);
        assert_eq!(r.docs[0].bytes, vec![0x61, 0x62]);
        assert_eq!(r.docs[0].char_offsets.as_deref(), Some(&[0, 1][..]));
    }

    #[test]
    fn empty_input_warns() {
        let r = load_str("", CorpusFormat::Plain, false).unwrap();
        assert!(r.docs.is_empty());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn jsonl_text_is_utf8_encoded() {
        let r = load_str("{\"text\":\"hé\"}\n", CorpusFormat::Jsonl, false).unwrap();
        assert_eq!(r.docs[0].bytes, vec![0x68, 0xC3, 0xA9]);
        assert_eq!(r.docs[0].char_offsets.as_deref(), Some(&[0, 1][..]));
    }

    #[test]
    fn malformed_jsonl_skipped_or_fatal() {
        let input = "{\"text\":\"a\"}\nnot json\n{\"txt\":1}\n{\"text\":\"b\"}\n";
        let r = load_str(input, CorpusFormat::Jsonl, false).unwrap();
        assert_eq!(r.docs.len(), 2);
        assert_eq!(r.skipped.iter().map(|s| s.0).collect::<Vec<_>>(), vec![2, 3]);
        match load_str(input, CorpusFormat::Jsonl, true) {
            Err(Error::MalformedRecord { line: 2, .. }) => {}
            other => panic!("expected line-2 failure, got {other:?}"),
        }
    }

    #[test]
    fn plain_bytes_are_not_normalized() {
        let r = read_corpus(&b"a\xffb\r\n"[..], "t", &LoadOptions::default()).unwrap();
        assert_eq!(r.docs[0].bytes, b"a\xffb\r".to_vec());
        assert!(r.docs[0].char_offsets.is_none());
    }

    #[test]
    fn gz_files_load_transparently() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt.gz");
        let mut enc = flate2::write::GzEncoder::new(
            File::create(&path).unwrap(),
            flate2::Compression::default(),
        );
        enc.write_all(b"one\ntwo\n").unwrap();
        enc.finish().unwrap();
        let r = load_corpus(&path, &LoadOptions::default()).unwrap();
        assert_eq!(r.docs.len(), 2);
        assert_eq!(r.docs[1].id, "c.txt:2");
    }

    #[test]
    fn unreadable_path_is_an_io_error() {
        assert!(matches!(
            load_corpus("/nonexistent/corpus.txt", &LoadOptions::default()),
            Err(Error::Io { .. })
        ));
    }
}
