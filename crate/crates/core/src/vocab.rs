//! Shared target vocabulary.
//!
//! Fusion adds distributions index-wise, so every scorer in an ensemble must
//! agree on the exact ordered token list and special-token assignment. That
//! identity is captured by a 64-bit FNV-1a digest over:
//!
//! ```text
//! for each token, in id order:    "{id}\t{token}\n"
//! then for bos, eos, unk, pad (only those declared):
//!                                 "#special\t{name}\t{id}\n"
//! ```
//!
//! The file format is UTF-8 with one token per line. Lines of the form
//! `#special: eos=</s>` declare special tokens; they may appear anywhere and do
//! not consume an id. Blank lines are ignored.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

const SPECIAL_PREFIX: &str = "#special:";

/// Content digest of a vocabulary, rendered on the wire as 16 lowercase hex digits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct VocabHash(pub u64);

impl VocabHash {
    pub fn to_hex(self) -> String {
        format!("{:016x}", self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 16 {
            return None;
        }
        u64::from_str_radix(s, 16).ok().map(VocabHash)
    }
}

impl fmt::Display for VocabHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for VocabHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VocabHash({})", self.to_hex())
    }
}

impl From<VocabHash> for String {
    fn from(h: VocabHash) -> String {
        h.to_hex()
    }
}

impl TryFrom<String> for VocabHash {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        VocabHash::from_hex(&s).ok_or_else(|| format!("invalid vocab hash {s:?}"))
    }
}

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("token {token:?} listed twice (lines {first} and {second})")]
    DuplicateToken { token: String, first: usize, second: usize },
    #[error("no {0} token declared")]
    MissingSpecial(&'static str),
    #[error("special {name} refers to {token:?}, which is not in the vocabulary")]
    UnknownSpecialToken { name: String, token: String },
    #[error("malformed special declaration on line {line}: {text:?}")]
    BadSpecial { line: usize, text: String },
    #[error("piece {0:?} is not in the vocabulary and no unk token is declared")]
    UnknownPiece(String),
    #[error("token id {0} out of range")]
    IdOutOfRange(TokenId),
    #[error("vocabulary mismatch: expected {expected}, found {found}")]
    VocabMismatch { expected: VocabHash, found: VocabHash },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Specials {
    pub bos: Option<TokenId>,
    pub eos: TokenId,
    pub unk: Option<TokenId>,
    pub pad: Option<TokenId>,
}

/// Immutable ordered token inventory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, TokenId>,
    specials: Specials,
    hash: VocabHash,
}

impl Vocabulary {
    /// Builds a vocabulary from tokens in id order and special assignments by token string.
    pub fn new<S: AsRef<str>>(tokens: &[S], specials: &[(&str, &str)]) -> Result<Self, VocabError> {
        let mut id_of = HashMap::with_capacity(tokens.len());
        let mut owned = Vec::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            let tok = tok.as_ref().to_string();
            if let Some(&prev) = id_of.get(&tok) {
                return Err(VocabError::DuplicateToken { token: tok, first: prev as usize + 1, second: i + 1 });
            }
            id_of.insert(tok.clone(), i as TokenId);
            owned.push(tok);
        }
        Self::assemble(owned, id_of, specials)
    }

    fn assemble(tokens: Vec<String>, id_of: HashMap<String, TokenId>, specials: &[(&str, &str)]) -> Result<Self, VocabError> {
        let mut bos = None;
        let mut eos = None;
        let mut unk = None;
        let mut pad = None;
        for &(name, token) in specials {
            let id = *id_of.get(token).ok_or_else(|| VocabError::UnknownSpecialToken {
                name: name.to_string(),
                token: token.to_string(),
            })?;
            match name {
                "bos" => bos = Some(id),
                "eos" => eos = Some(id),
                "unk" => unk = Some(id),
                "pad" => pad = Some(id),
                other => {
                    return Err(VocabError::UnknownSpecialToken { name: other.to_string(), token: token.to_string() })
                }
            }
        }
        let eos = eos.ok_or(VocabError::MissingSpecial("eos"))?;
        let specials = Specials { bos, eos, unk, pad };
        let hash = content_hash(&tokens, &specials);
        Ok(Vocabulary { tokens, id_of, specials, hash })
    }

    pub fn parse(text: &str) -> Result<Self, VocabError> {
        let mut tokens = Vec::new();
        let mut id_of: HashMap<String, TokenId> = HashMap::new();
        let mut first_line: Vec<usize> = Vec::new();
        let mut specials: Vec<(String, String)> = Vec::new();
        for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
            if let Some(decl) = line.strip_prefix(SPECIAL_PREFIX) {
                let (name, token) = decl
                    .trim_start()
                    .split_once('=')
                    .ok_or_else(|| VocabError::BadSpecial { line: lineno, text: line.to_string() })?;
                specials.push((name.trim().to_string(), token.to_string()));
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if let Some(&prev) = id_of.get(line) {
                return Err(VocabError::DuplicateToken {
                    token: line.to_string(),
                    first: first_line[prev as usize],
                    second: lineno,
                });
            }
            id_of.insert(line.to_string(), tokens.len() as TokenId);
            tokens.push(line.to_string());
            first_line.push(lineno);
        }
        let specials: Vec<(&str, &str)> = specials.iter().map(|(n, t)| (n.as_str(), t.as_str())).collect();
        Self::assemble(tokens, id_of, &specials)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Serialises into the file format accepted by [`Vocabulary::parse`].
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (name, id) in self.special_entries() {
            out.push_str(&format!("{SPECIAL_PREFIX} {name}={}\n", self.tokens[id as usize]));
        }
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VocabError> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    fn special_entries(&self) -> impl Iterator<Item = (&'static str, TokenId)> + '_ {
        let s = &self.specials;
        [("bos", s.bos), ("eos", Some(s.eos)), ("unk", s.unk), ("pad", s.pad)]
            .into_iter()
            .filter_map(|(n, id)| id.map(|id| (n, id)))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn hash(&self) -> VocabHash {
        self.hash
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn eos_id(&self) -> TokenId {
        self.specials.eos
    }

    pub fn unk_id(&self) -> Option<TokenId> {
        self.specials.unk
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Whitespace tokenizer; unknown pieces map to the unk token.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, VocabError> {
        text.split_whitespace()
            .map(|piece| match (self.id(piece), self.specials.unk) {
                (Some(id), _) => Ok(id),
                (None, Some(unk)) => Ok(unk),
                (None, None) => Err(VocabError::UnknownPiece(piece.to_string())),
            })
            .collect()
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String, VocabError> {
        let pieces = ids
            .iter()
            .map(|&id| self.token(id).ok_or(VocabError::IdOutOfRange(id)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(pieces.join(" "))
    }

    pub fn check_compatible(&self, other: &Vocabulary) -> Result<(), VocabError> {
        check_hash(self.hash, other.hash)
    }
}

pub fn check_hash(expected: VocabHash, found: VocabHash) -> Result<(), VocabError> {
    if expected == found {
        Ok(())
    } else {
        Err(VocabError::VocabMismatch { expected, found })
    }
}

fn content_hash(tokens: &[String], specials: &Specials) -> VocabHash {
    let mut h = FnvHasher::default();
    for (i, tok) in tokens.iter().enumerate() {
        h.write(format!("{i}\t{tok}\n").as_bytes());
    }
    let entries = [("bos", specials.bos), ("eos", Some(specials.eos)), ("unk", specials.unk), ("pad", specials.pad)];
    for (name, id) in entries {
        if let Some(id) = id {
            h.write(format!("#special\t{name}\t{id}\n").as_bytes());
        }
    }
    VocabHash(h.finish())
}
