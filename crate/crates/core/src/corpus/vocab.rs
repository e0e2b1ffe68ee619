//! Corpus-built vocabulary with fixed reserved ids.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::records::PromptRecord;
use super::tokenize::split_words;
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const MASK_ID: u32 = 2;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const MASK_TOKEN: &str = "<mask>";

/// Token/id map with dense ids in `[0, size)` and reserved PAD/UNK/MASK slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabOnDisk", into = "VocabOnDisk")]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    id_of: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabOnDisk {
    tokens: Vec<String>,
}

impl From<Vocabulary> for VocabOnDisk {
    fn from(v: Vocabulary) -> Self {
        VocabOnDisk { tokens: v.tokens }
    }
}

impl TryFrom<VocabOnDisk> for Vocabulary {
    type Error = Error;

    fn try_from(disk: VocabOnDisk) -> Result<Self> {
        Vocabulary::from_tokens(disk.tokens)
    }
}

impl Vocabulary {
    /// Builds a vocabulary from the training split: lowercased words kept at
    /// frequency >= `min_freq`, everything else mapping to UNK. Tokens are
    /// assigned ids in sorted order so repeated builds are byte-identical.
    pub fn from_records(records: &[PromptRecord], min_freq: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for record in records {
            for word in split_words(&record.text) {
                *counts.entry(word.lower).or_insert(0) += 1;
            }
        }
        let mut tokens = vec![
            PAD_TOKEN.to_string(),
            UNK_TOKEN.to_string(),
            MASK_TOKEN.to_string(),
        ];
        tokens.extend(
            counts
                .into_iter()
                .filter(|(token, count)| *count >= min_freq && !is_reserved(token))
                .map(|(token, _)| token),
        );
        Self::index(tokens)
    }

    /// Rebuilds a vocabulary from a persisted token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3
            || tokens[0] != PAD_TOKEN
            || tokens[1] != UNK_TOKEN
            || tokens[2] != MASK_TOKEN
        {
            return Err(Error::Config(
                "vocabulary must start with <pad>, <unk>, <mask>".to_string(),
            ));
        }
        let mut seen = HashMap::new();
        for (i, token) in tokens.iter().enumerate() {
            if seen.insert(token.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token `{token}`")));
            }
        }
        Ok(Self::index(tokens))
    }

    fn index(tokens: Vec<String>) -> Self {
        let id_of = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, id_of }
    }

    /// Id for a word, falling back to UNK.
    pub fn id(&self, word: &str) -> u32 {
        self.id_of.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn lookup(&self, word: &str) -> Option<u32> {
        self.id_of.get(word).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

fn is_reserved(token: &str) -> bool {
    token == PAD_TOKEN || token == UNK_TOKEN || token == MASK_TOKEN
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SafetyLabel;

    fn recs(texts: &[&str]) -> Vec<PromptRecord> {
        texts
            .iter()
            .map(|t| PromptRecord {
                id: "x".into(),
                text: t.to_string(),
                label: SafetyLabel::Safe,
                explanation_words: None,
                category: None,
            })
            .collect()
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::from_records(&recs(&["a b"]), 1);
        assert_eq!(v.id(PAD_TOKEN), PAD_ID);
        assert_eq!(v.id(UNK_TOKEN), UNK_ID);
        assert_eq!(v.id(MASK_TOKEN), MASK_ID);
    }

    #[test]
    fn min_frequency_filters_rare_words() {
        let v = Vocabulary::from_records(&recs(&["common word", "common other"]), 2);
        assert_ne!(v.id("common"), UNK_ID);
        assert_eq!(v.id("word"), UNK_ID);
    }

    #[test]
    fn ids_are_dense_and_deterministic() {
        let data = recs(&["b a", "a c b"]);
        let v1 = Vocabulary::from_records(&data, 1);
        let v2 = Vocabulary::from_records(&data, 1);
        assert_eq!(v1, v2);
        for id in 0..v1.size() as u32 {
            assert!(v1.token(id).is_some());
        }
    }

    #[test]
    fn persisted_token_list_round_trips() {
        let v = Vocabulary::from_records(&recs(&["alpha beta"]), 1);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn from_tokens_rejects_missing_reserved_slots() {
        assert!(Vocabulary::from_tokens(vec!["a".into(), "b".into(), "c".into()]).is_err());
    }
}
