//! Part-of-speech tagging.
//!
//! The bundled tagger is a closed lexicon plus suffix rules. Unknown tokens
//! fall back to `NN`: a spurious noun only adds a keep-region candidate,
//! whereas a missed noun could leave an object unprotected.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::stem;
use crate::{Error, Result};

const BUNDLED_LEXICON: &str = include_str!("../../data/lexicon.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tag {
    Dt,
    Nn,
    Nns,
    Jj,
    In,
    Vb,
    Vbd,
    Vbg,
    Vbn,
    Vbp,
    Vbz,
    Cc,
    Other,
}

impl Tag {
    pub fn is_noun(self) -> bool {
        matches!(self, Tag::Nn | Tag::Nns)
    }

    pub fn is_verb(self) -> bool {
        matches!(self, Tag::Vb | Tag::Vbd | Tag::Vbg | Tag::Vbn | Tag::Vbp | Tag::Vbz)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Dt => "DT",
            Tag::Nn => "NN",
            Tag::Nns => "NNS",
            Tag::Jj => "JJ",
            Tag::In => "IN",
            Tag::Vb => "VB",
            Tag::Vbd => "VBD",
            Tag::Vbg => "VBG",
            Tag::Vbn => "VBN",
            Tag::Vbp => "VBP",
            Tag::Vbz => "VBZ",
            Tag::Cc => "CC",
            Tag::Other => "OTHER",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tag {
    type Err = Error;

    /// Accepts the Penn tags this crate models; other Penn tags map to the
    /// closest class (`NNP`→`NN`, `JJR`→`JJ`, `TO`→`IN`, ...) or `OTHER`.
    fn from_str(s: &str) -> Result<Self> {
        let tag = match s.trim().to_ascii_uppercase().as_str() {
            "DT" | "PDT" | "WDT" | "PRP$" => Tag::Dt,
            "NN" | "NNP" => Tag::Nn,
            "NNS" | "NNPS" => Tag::Nns,
            "JJ" | "JJR" | "JJS" => Tag::Jj,
            "IN" | "TO" => Tag::In,
            "VB" => Tag::Vb,
            "VBD" => Tag::Vbd,
            "VBG" => Tag::Vbg,
            "VBN" => Tag::Vbn,
            "VBP" => Tag::Vbp,
            "VBZ" => Tag::Vbz,
            "CC" => Tag::Cc,
            "" => return Err(Error::format("tag", "empty tag")),
            _ => Tag::Other,
        };
        Ok(tag)
    }
}

pub trait TaggerProvider: Send + Sync {
    fn name(&self) -> &str;
    /// One tag per token. Never fails on unknown tokens.
    fn tag(&self, tokens: &[String]) -> Vec<Tag>;
}

#[derive(Clone, Debug)]
pub struct LexiconTagger {
    lexicon: HashMap<String, Tag>,
}

impl Default for LexiconTagger {
    fn default() -> Self {
        Self::bundled()
    }
}

impl LexiconTagger {
    pub fn bundled() -> Self {
        Self::from_tsv(BUNDLED_LEXICON).expect("bundled lexicon parses")
    }

    /// `token<TAB>tag` lines; `#` starts a comment line.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lexicon = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (tok, tag) = line
                .split_once('\t')
                .ok_or_else(|| Error::format("lexicon", format!("line {}: missing tab", lineno + 1)))?;
            lexicon.insert(tok.to_lowercase(), tag.parse()?);
        }
        Ok(LexiconTagger { lexicon })
    }

    pub fn lookup(&self, token: &str) -> Option<Tag> {
        self.lexicon.get(token).copied()
    }

    fn tag_token(&self, token: &str) -> Tag {
        if let Some(t) = self.lookup(token) {
            return t;
        }
        if token.chars().all(|c| c.is_ascii_digit()) {
            return Tag::Other;
        }
        let stemmed = stem(token);
        if stemmed.len() < token.len() {
            if let Some(Tag::Nn) = self.lookup(&stemmed) {
                return Tag::Nns;
            }
        }
        suffix_rule(token)
    }
}

fn suffix_rule(token: &str) -> Tag {
    let n = token.len();
    if n > 4 && token.ends_with("ing") {
        Tag::Vbg
    } else if n > 3 && token.ends_with("ed") {
        Tag::Vbd
    } else if n > 3 && token.ends_with("ly") {
        Tag::Other
    } else if n > 4
        && ["ous", "ful", "ive", "less", "ish", "able", "ible"]
            .iter()
            .any(|s| token.ends_with(s))
    {
        Tag::Jj
    } else if n > 3 && token.ends_with('s') && !token.ends_with("ss") {
        Tag::Nns
    } else {
        Tag::Nn
    }
}

impl TaggerProvider for LexiconTagger {
    fn name(&self) -> &str {
        "lexicon"
    }

    fn tag(&self, tokens: &[String]) -> Vec<Tag> {
        tokens.iter().map(|t| self.tag_token(t)).collect()
    }
}

/// Tags from an external tagger, supplied as TSV sentences
/// (`token<TAB>tag` per line, blank line between sentences).
///
/// A token sequence that matches a stored sentence gets the stored tags;
/// anything else falls through to the bundled lexicon tagger.
#[derive(Clone, Debug, Default)]
pub struct FileTagger {
    sentences: HashMap<Vec<String>, Vec<Tag>>,
    fallback: LexiconTagger,
}

impl FileTagger {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sentences = HashMap::new();
        let mut toks = Vec::new();
        let mut tags = Vec::new();
        let mut flush = |toks: &mut Vec<String>, tags: &mut Vec<Tag>| {
            if !toks.is_empty() {
                sentences.insert(std::mem::take(toks), std::mem::take(tags));
            }
        };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                flush(&mut toks, &mut tags);
                continue;
            }
            let (tok, tag) = line
                .split_once('\t')
                .ok_or_else(|| Error::format("tag file", format!("line {}: missing tab", lineno + 1)))?;
            toks.push(tok.to_lowercase());
            tags.push(tag.parse()?);
        }
        flush(&mut toks, &mut tags);
        Ok(FileTagger {
            sentences,
            fallback: LexiconTagger::bundled(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

impl TaggerProvider for FileTagger {
    fn name(&self) -> &str {
        "tag-file"
    }

    fn tag(&self, tokens: &[String]) -> Vec<Tag> {
        match self.sentences.get(tokens) {
            Some(tags) => tags.clone(),
            None => self.fallback.tag(tokens),
        }
    }
}
