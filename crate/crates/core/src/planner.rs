//! Keep/alter classification of source nouns from a word alignment.

use serde::{Deserialize, Serialize};

use crate::aligner::WordAlignmentSet;
use crate::caption::{NounPhrase, TokenizedCaption};
use crate::{Error, Result};

pub const PLAN_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Identical,
    Substituted,
    ModifierChanged,
    Deleted,
}

impl Verdict {
    pub fn is_alter(self) -> bool {
        matches!(self, Verdict::Substituted | Verdict::ModifierChanged)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedNoun {
    pub source: NounPhrase,
    /// Modifiers plus head lemma, the text sent to grounding.
    pub source_phrase: String,
    pub verdict: Verdict,
    /// Aligned target phrase; absent for deleted nouns.
    pub target: Option<NounPhrase>,
    pub target_phrase: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InsertedNoun {
    pub target: NounPhrase,
    pub target_phrase: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditPlan {
    pub schema_version: u32,
    pub alter: Vec<PlannedNoun>,
    pub keep: Vec<PlannedNoun>,
    pub inserted: Vec<InsertedNoun>,
}

impl EditPlan {
    pub fn verdict_of(&self, head: usize) -> Option<Verdict> {
        self.alter
            .iter()
            .chain(&self.keep)
            .find(|n| n.source.head_index == head)
            .map(|n| n.verdict)
    }

    /// Treats modifier-only changes as identical.
    pub fn without_modifiers(mut self) -> Self {
        let (moved, alter): (Vec<_>, Vec<_>) =
            self.alter.into_iter().partition(|n| n.verdict == Verdict::ModifierChanged);
        self.alter = alter;
        for mut n in moved {
            n.verdict = Verdict::Identical;
            self.keep.push(n);
        }
        self.keep.sort_by_key(|n| n.source.head_index);
        self
    }

    /// Drops deleted nouns from the keep set.
    pub fn without_deleted_keep(mut self) -> Self {
        self.keep.retain(|n| n.verdict != Verdict::Deleted);
        self
    }
}

/// Classifies every source noun phrase of `c1` against `c2`.
///
/// The aligned partner of a source head is the smallest target index among
/// its alignment pairs that heads a target noun phrase. Without such a
/// partner the noun is deleted. Different stemmed lemmas mean substituted;
/// equal lemmas with different modifier multisets mean modifier-changed.
pub fn classify(c1: &TokenizedCaption, c2: &TokenizedCaption, alignment: &WordAlignmentSet) -> Result<EditPlan> {
    if alignment.source_len != c1.len() || alignment.target_len != c2.len() {
        return Err(Error::IndexOutOfRange(format!(
            "alignment over {}x{} tokens, captions have {}x{}",
            alignment.source_len,
            alignment.target_len,
            c1.len(),
            c2.len()
        )));
    }
    if let Some(&(i, j)) = alignment.pairs.iter().find(|&&(i, j)| i >= c1.len() || j >= c2.len()) {
        return Err(Error::IndexOutOfRange(format!("pair ({i},{j})")));
    }
    let mut plan = EditPlan { schema_version: PLAN_SCHEMA_VERSION, alter: vec![], keep: vec![], inserted: vec![] };
    let mut claimed = vec![false; c2.len()];
    for phrase in &c1.phrases {
        let partner = alignment
            .targets_of(phrase.head_index)
            .filter_map(|j| c2.phrase_with_head(j))
            .min_by_key(|p| p.head_index);
        let source_phrase = c1.phrase_text(phrase);
        let Some(tp) = partner else {
            plan.keep.push(PlannedNoun {
                source: phrase.clone(),
                source_phrase,
                verdict: Verdict::Deleted,
                target: None,
                target_phrase: None,
            });
            continue;
        };
        claimed[tp.head_index] = true;
        let verdict = if c1.lemma(phrase.head_index) != c2.lemma(tp.head_index) {
            Verdict::Substituted
        } else if c1.modifier_lemmas(phrase) != c2.modifier_lemmas(tp) {
            Verdict::ModifierChanged
        } else {
            Verdict::Identical
        };
        let entry = PlannedNoun {
            source: phrase.clone(),
            source_phrase,
            verdict,
            target: Some(tp.clone()),
            target_phrase: Some(c2.phrase_text(tp)),
        };
        if verdict.is_alter() {
            plan.alter.push(entry);
        } else {
            plan.keep.push(entry);
        }
    }
    plan.inserted = c2
        .phrases
        .iter()
        .filter(|p| !claimed[p.head_index])
        .map(|p| InsertedNoun { target: p.clone(), target_phrase: c2.phrase_text(p) })
        .collect();
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::LexiconTagger;

    fn cap(s: &str) -> TokenizedCaption {
        TokenizedCaption::analyze(s, &LexiconTagger::bundled()).unwrap()
    }

    #[test]
    fn girl_sofa_hand_alignment() {
        let c1 = cap("A girl in a white dress sitting on a sofa with a cat");
        let c2 = cap("A girl in a red dress sitting on a bench");
        // a girl in a white/red dress sitting on a sofa/bench
        let pairs = (0..10).map(|i| (i, i));
        let plan = classify(&c1, &c2, &WordAlignmentSet::new(c1.len(), c2.len(), pairs).unwrap()).unwrap();
        assert_eq!(plan.verdict_of(1), Some(Verdict::Identical));
        assert_eq!(plan.verdict_of(5), Some(Verdict::ModifierChanged));
        assert_eq!(plan.verdict_of(9), Some(Verdict::Substituted));
        assert_eq!(plan.verdict_of(12), Some(Verdict::Deleted));
        assert!(plan.inserted.is_empty());
        let json = serde_json::to_value(&plan).unwrap();
        assert_eq!(json["alter"][0]["verdict"], "MODIFIER_CHANGED");
        assert_eq!(json["schema_version"], 1);
    }

    #[test]
    fn non_noun_partner_means_deleted_and_noun_partner_wins() {
        let c1 = cap("a cat");
        let c2 = cap("a red dog");
        let only_adj = WordAlignmentSet::new(2, 3, [(1, 1)]).unwrap();
        let plan = classify(&c1, &c2, &only_adj).unwrap();
        assert_eq!(plan.verdict_of(1), Some(Verdict::Deleted));
        assert_eq!(plan.inserted.len(), 1);
        let both = WordAlignmentSet::new(2, 3, [(1, 1), (1, 2)]).unwrap();
        assert_eq!(classify(&c1, &c2, &both).unwrap().verdict_of(1), Some(Verdict::Substituted));
    }

    #[test]
    fn identity_and_ablation_views() {
        let c = cap("A woman with a red jacket");
        let plan = classify(&c, &c, &WordAlignmentSet::identity(c.len())).unwrap();
        assert!(plan.alter.is_empty() && plan.inserted.is_empty());
        assert_eq!(plan.keep.len(), 2);
        let c2 = cap("A woman with a green jacket");
        let plan = classify(&c, &c2, &WordAlignmentSet::identity(c.len())).unwrap();
        assert_eq!(plan.alter.len(), 1);
        let stripped = plan.without_modifiers();
        assert!(stripped.alter.is_empty());
        assert_eq!(stripped.verdict_of(5), Some(Verdict::Identical));
        assert!(classify(&c, &c2, &WordAlignmentSet::identity(3)).is_err());
    }
}
