//! Caption analysis: tokenization, part-of-speech tags, noun phrases with
//! adjective modifiers, and ROUGE caption similarity.

mod rouge;
mod tagger;

use serde::{Deserialize, Serialize};

pub use rouge::{rouge1_f1, rouge_similarity, DEFAULT_ROUGE_THRESHOLD};
pub use tagger::{FileTagger, LexiconTagger, Tag, TaggerProvider};

use crate::{Error, Result};

/// Lowercase alphanumeric tokens. Punctuation and other separators are
/// discarded.
pub fn tokenize(text: &str) -> Result<Vec<String>> {
    let tokens: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptyCaption);
    }
    Ok(tokens)
}

pub fn pos_tag(tokens: &[String], tagger: &dyn TaggerProvider) -> Result<Vec<Tag>> {
    if tokens.is_empty() {
        return Err(Error::EmptyCaption);
    }
    let tags = tagger.tag(tokens);
    if tags.len() != tokens.len() {
        return Err(Error::dims(tokens.len(), format!("{} tags from {}", tags.len(), tagger.name())));
    }
    Ok(tags)
}

/// Plural-insensitive lemma: strips one trailing `s`.
pub fn stem(token: &str) -> String {
    if token.len() > 2 && token.ends_with('s') && !token.ends_with("ss") {
        token[..token.len() - 1].to_string()
    } else {
        token.to_string()
    }
}

/// A noun head and the adjectives directly preceding it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NounPhrase {
    pub head_index: usize,
    pub modifier_indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizedCaption {
    pub text: String,
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
    pub phrases: Vec<NounPhrase>,
}

impl TokenizedCaption {
    pub fn analyze(text: &str, tagger: &dyn TaggerProvider) -> Result<Self> {
        let tokens = tokenize(text)?;
        let tags = pos_tag(&tokens, tagger)?;
        Self::from_parts(text, tokens, tags)
    }

    pub fn from_parts(text: &str, tokens: Vec<String>, tags: Vec<Tag>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyCaption);
        }
        if tokens.len() != tags.len() {
            return Err(Error::dims(tokens.len(), tags.len()));
        }
        let phrases = extract_noun_phrases(&tags);
        Ok(TokenizedCaption {
            text: text.to_string(),
            tokens,
            tags,
            phrases,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lemma(&self, i: usize) -> String {
        stem(&self.tokens[i])
    }

    pub fn phrase_with_head(&self, head: usize) -> Option<&NounPhrase> {
        self.phrases.iter().find(|p| p.head_index == head)
    }

    /// Stemmed modifier lemmas, sorted (multiset form).
    pub fn modifier_lemmas(&self, phrase: &NounPhrase) -> Vec<String> {
        let mut m: Vec<String> = phrase.modifier_indices.iter().map(|&i| self.lemma(i)).collect();
        m.sort();
        m
    }

    /// Modifiers followed by the head lemma, e.g. `"red jacket"`.
    pub fn phrase_text(&self, phrase: &NounPhrase) -> String {
        let mut words: Vec<String> = phrase
            .modifier_indices
            .iter()
            .map(|&i| self.tokens[i].clone())
            .collect();
        words.push(self.lemma(phrase.head_index));
        words.join(" ")
    }
}

/// Every `NN`/`NNS` token heads a phrase; its modifiers are the maximal run
/// of `JJ` tokens immediately before it.
pub fn extract_noun_phrases(tags: &[Tag]) -> Vec<NounPhrase> {
    let mut phrases = Vec::new();
    for (i, tag) in tags.iter().enumerate() {
        if !tag.is_noun() {
            continue;
        }
        let mut start = i;
        while start > 0 && tags[start - 1] == Tag::Jj {
            start -= 1;
        }
        phrases.push(NounPhrase {
            head_index: i,
            modifier_indices: (start..i).collect(),
        });
    }
    phrases
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Tag::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("A clear sky and a ship landed on the sand.").unwrap(),
            ["a", "clear", "sky", "and", "a", "ship", "landed", "on", "the", "sand"]
        );
        assert_eq!(tokenize("Cat").unwrap(), ["cat"]);
        assert!(matches!(tokenize("  "), Err(Error::EmptyCaption)));
        assert!(matches!(tokenize("?!."), Err(Error::EmptyCaption)));
    }

    #[test]
    fn noun_phrase_examples() {
        assert_eq!(
            extract_noun_phrases(&[Dt, Jj, Nn]),
            vec![NounPhrase { head_index: 2, modifier_indices: vec![1] }]
        );
        assert_eq!(
            extract_noun_phrases(&[Dt, Nn, In, Dt, Nn]),
            vec![
                NounPhrase { head_index: 1, modifier_indices: vec![] },
                NounPhrase { head_index: 4, modifier_indices: vec![] },
            ]
        );
        assert_eq!(
            extract_noun_phrases(&[Jj, Jj, Nn]),
            vec![NounPhrase { head_index: 2, modifier_indices: vec![0, 1] }]
        );
        // adjectives separated by a conjunction: only the adjacent one attaches
        assert_eq!(
            extract_noun_phrases(&[Jj, Cc, Jj, Nns]),
            vec![NounPhrase { head_index: 3, modifier_indices: vec![2] }]
        );
        assert!(extract_noun_phrases(&[Dt, Jj, Vbg]).is_empty());
    }

    #[test]
    fn analyze_caption() {
        let c = TokenizedCaption::analyze("A woman with a red jacket.", &LexiconTagger::bundled()).unwrap();
        assert_eq!(c.phrases.len(), 2);
        assert_eq!(c.phrase_text(&c.phrases[1]), "red jacket");
        assert_eq!(stem("flowers"), stem("flower"));
        assert_eq!(stem("glass"), "glass");
    }

    fn arb_tags() -> impl Strategy<Value = Vec<Tag>> {
        proptest::collection::vec(
            prop_oneof![Just(Dt), Just(Nn), Just(Nns), Just(Jj), Just(In), Just(Cc), Just(Vbg), Just(Other)],
            0..20,
        )
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(s in "[ -~]{1,60}") {
            if let Ok(t) = tokenize(&s) {
                prop_assert_eq!(tokenize(&t.join(" ")).unwrap(), t);
            }
        }

        #[test]
        fn phrases_are_well_formed(tags in arb_tags()) {
            let phrases = extract_noun_phrases(&tags);
            let mut last_head = None;
            let mut used = std::collections::HashSet::new();
            for p in &phrases {
                prop_assert!(tags[p.head_index].is_noun());
                if let Some(h) = last_head { prop_assert!(p.head_index > h); }
                last_head = Some(p.head_index);
                for &m in &p.modifier_indices {
                    prop_assert!(m < p.head_index);
                    prop_assert_eq!(tags[m], Jj);
                    prop_assert!(used.insert(m), "modifier shared");
                }
            }
            prop_assert_eq!(phrases.len(), tags.iter().filter(|t| t.is_noun()).count());
        }
    }
}
