use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("duplicate segment id {0:?}")]
    DuplicateId(String),
    #[error("segment {0:?} names a phenomenon but lists no target words")]
    MissingTargetWords(String),
    #[error("{path} line {line}: {source}")]
    BadLine {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("source has {src} lines but reference has {reference}")]
    Ragged { src: usize, reference: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One line of a JSONL corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    pub src: String,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    /// Acceptable surface forms of the targeted word.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub target_words: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phenomenon: Option<String>,
}

impl Segment {
    pub fn new(id: impl Into<String>, src: impl Into<String>) -> Self {
        Segment {
            id: id.into(),
            doc_id: None,
            src: src.into(),
            reference: None,
            domain: None,
            target_words: Vec::new(),
            phenomenon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    /// `None` for segments without a document id; each of those is its own document.
    pub doc_id: Option<String>,
    /// Segment indices in corpus order.
    pub indices: Vec<usize>,
}

/// Validated list of segments.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    segments: Vec<Segment>,
}

impl Corpus {
    pub fn new(segments: Vec<Segment>) -> Result<Self, IngestError> {
        let mut seen = HashSet::new();
        for s in &segments {
            if !seen.insert(s.id.as_str()) {
                return Err(IngestError::DuplicateId(s.id.clone()));
            }
            if s.phenomenon.is_some() && s.target_words.is_empty() {
                return Err(IngestError::MissingTargetWords(s.id.clone()));
            }
        }
        Ok(Corpus { segments })
    }

    pub fn parse_jsonl(text: &str, origin: &str) -> Result<Self, IngestError> {
        let segments = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|source| IngestError::BadLine { path: origin.into(), line: i + 1, source })
            })
            .collect::<Result<Vec<Segment>, _>>()?;
        Self::new(segments)
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref();
        Self::parse_jsonl(&read(path)?, &path.display().to_string())
    }

    /// Aligned plain-text files; ids are 1-based line numbers.
    pub fn from_lines(src: &str, reference: Option<&str>) -> Result<Self, IngestError> {
        let src_lines: Vec<&str> = src.lines().collect();
        let refs: Option<Vec<&str>> = reference.map(|r| r.lines().collect());
        if let Some(r) = &refs {
            if r.len() != src_lines.len() {
                return Err(IngestError::Ragged { src: src_lines.len(), reference: r.len() });
            }
        }
        let segments = src_lines
            .iter()
            .enumerate()
            .map(|(i, s)| Segment {
                reference: refs.as_ref().map(|r| r[i].to_string()),
                ..Segment::new((i + 1).to_string(), *s)
            })
            .collect();
        Self::new(segments)
    }

    pub fn load_plain(src: impl AsRef<Path>, reference: Option<&Path>) -> Result<Self, IngestError> {
        let src_text = read(src.as_ref())?;
        let ref_text = reference.map(read).transpose()?;
        Self::from_lines(&src_text, ref_text.as_deref())
    }

    pub fn to_jsonl(&self) -> String {
        self.segments
            .iter()
            .map(|s| serde_json::to_string(s).expect("segments serialise") + "\n")
            .collect()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Groups segments by `doc_id`, documents ordered by first appearance.
    pub fn documents(&self) -> Vec<Document> {
        let mut docs: Vec<Document> = Vec::new();
        let mut index_of: HashMap<&str, usize> = HashMap::new();
        for (i, s) in self.segments.iter().enumerate() {
            match &s.doc_id {
                Some(d) => {
                    let slot = *index_of.entry(d.as_str()).or_insert_with(|| {
                        docs.push(Document { doc_id: Some(d.clone()), indices: Vec::new() });
                        docs.len() - 1
                    });
                    docs[slot].indices.push(i);
                }
                None => docs.push(Document { doc_id: None, indices: vec![i] }),
            }
        }
        docs
    }
}

fn read(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })
}
