//! Whitespace tokenizer and closed vocabulary for the toy scorer.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel tokens. The first three double as the template's mask tokens;
/// the full pool is cycled through during span-corruption pretraining.
pub const SENTINELS: [&str; 4] = ["<mask_1>", "<mask_2>", "<mask_3>", "<mask_4>"];

/// Returns the sentinel for mask position 1–3.
pub fn mask_sentinel(mask_index: u8) -> &'static str {
    SENTINELS[(mask_index - 1) as usize]
}

/// Lowercasing whitespace tokenizer. Leading and trailing punctuation of
/// each whitespace chunk becomes its own single-character token, so
/// "Overall," splits to ["overall", ","] while intra-word apostrophes
/// survive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer;

impl Tokenizer {
    pub fn split(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for chunk in text.split_whitespace() {
            let lower = chunk.to_lowercase();
            if SENTINELS.contains(&lower.as_str()) {
                out.push(lower);
                continue;
            }
            let chars: Vec<char> = lower.chars().collect();
            let mut start = 0;
            let mut end = chars.len();
            while start < end && chars[start].is_ascii_punctuation() {
                out.push(chars[start].to_string());
                start += 1;
            }
            let mut trailing = Vec::new();
            while end > start && chars[end - 1].is_ascii_punctuation() {
                trailing.push(chars[end - 1].to_string());
                end -= 1;
            }
            if start < end {
                out.push(chars[start..end].iter().collect());
            }
            out.extend(trailing.into_iter().rev());
        }
        out
    }
}

/// An ordered closed vocabulary with token → id lookup. Unknown tokens are
/// an error, never silently mapped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Vocabulary {
    /// Builds a vocabulary from corpus texts plus fixed extra tokens
    /// (label words, template fragments, probe lexicon). Sentinels are
    /// always included. Order: sentinels, extras (split and deduplicated),
    /// then corpus tokens in first-seen order.
    pub fn build<'a>(
        tokenizer: &Tokenizer,
        corpus_texts: impl IntoIterator<Item = &'a str>,
        extra_texts: &[&str],
    ) -> Self {
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        let add = |tok: String, tokens: &mut Vec<String>, index: &mut HashMap<String, usize>| {
            if !index.contains_key(&tok) {
                index.insert(tok.clone(), tokens.len());
                tokens.push(tok);
            }
        };
        for s in SENTINELS {
            add(s.to_string(), &mut tokens, &mut index);
        }
        for text in extra_texts {
            for tok in tokenizer.split(text) {
                add(tok, &mut tokens, &mut index);
            }
        }
        for text in corpus_texts {
            for tok in tokenizer.split(text) {
                add(tok, &mut tokens, &mut index);
            }
        }
        Vocabulary { tokens, index }
    }

    /// Vocabulary from an explicit token list (checkpoint loading).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut v = Vocabulary {
            tokens,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::OutOfVocabulary(token.to_string()))
    }

    /// Encodes a text, erroring on the first unknown token.
    pub fn encode(&self, tokenizer: &Tokenizer, text: &str) -> Result<Vec<usize>> {
        tokenizer.split(text).iter().map(|t| self.id(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_template_fragments() {
        let t = Tokenizer;
        assert_eq!(t.split(", it is"), vec![",", "it", "is"]);
        assert_eq!(t.split("Overall,"), vec!["overall", ","]);
        assert_eq!(t.split("is plausible."), vec!["is", "plausible", "."]);
        assert_eq!(t.split("choice1:"), vec!["choice1", ":"]);
        assert_eq!(t.split("not plausible"), vec!["not", "plausible"]);
    }

    #[test]
    fn keeps_sentinels_intact() {
        let t = Tokenizer;
        assert_eq!(t.split("<mask_1>"), vec!["<mask_1>"]);
        assert_eq!(t.split("a <mask_2> b."), vec!["a", "<mask_2>", "b", "."]);
    }

    #[test]
    fn vocabulary_roundtrip_through_ids() {
        let t = Tokenizer;
        let v = Vocabulary::build(&t, ["The storm caused flooding."], &["plausible"]);
        let ids = v.encode(&t, "the STORM caused flooding.").unwrap();
        let back: Vec<&str> = ids.iter().map(|&i| v.token(i)).collect();
        assert_eq!(back, ["the", "storm", "caused", "flooding", "."]);
    }

    #[test]
    fn unknown_token_errors_by_name() {
        let t = Tokenizer;
        let v = Vocabulary::build(&t, ["a b"], &[]);
        match v.encode(&t, "a zebra") {
            Err(Error::OutOfVocabulary(tok)) => assert_eq!(tok, "zebra"),
            other => panic!("expected OOV, got {other:?}"),
        }
    }
}
