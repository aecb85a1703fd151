//! The scoring contract: a scorer turns an assembled prompt into one
//! probability distribution per mask over that mask's label-word
//! candidates. Two implementations exist: the table-driven [`OracleScorer`]
//! for tests and the trainable toy model in [`crate::toy`].

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::template::{AssembledPrompt, Pattern, PromptLayout};
use crate::tokenizer::Tokenizer;

/// Candidate label words for masks 1 and 2.
pub const PLAUSIBILITY_WORDS: [&str; 2] = ["plausible", "not plausible"];
/// Candidate label words for mask 3.
pub const CHOICE_WORDS: [&str; 2] = ["choice1", "choice2"];

/// Candidate word set for a mask position (1-based).
pub fn candidate_words(mask_index: u8) -> [&'static str; 2] {
    match mask_index {
        1 | 2 => PLAUSIBILITY_WORDS,
        3 => CHOICE_WORDS,
        other => panic!("mask index {other} out of range"),
    }
}

/// A normalized probability distribution over one mask's candidate words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskDistribution<F> {
    pub mask_index: u8,
    /// `(word, probability)` pairs in candidate order.
    pub probs: Vec<(String, F)>,
}

impl<F: Scalar> MaskDistribution<F> {
    /// Builds a distribution from raw non-negative weights over the mask's
    /// candidate set, renormalizing to sum 1.
    pub fn from_weights(mask_index: u8, weights: [F; 2]) -> Result<Self> {
        let words = candidate_words(mask_index);
        let total = weights[0] + weights[1];
        if !(total > F::zero()) {
            return Err(Error::Degenerate(format!(
                "mask {mask_index}: candidate weights sum to zero"
            )));
        }
        Ok(MaskDistribution {
            mask_index,
            probs: words
                .iter()
                .zip(weights)
                .map(|(w, p)| (w.to_string(), p / total))
                .collect(),
        })
    }

    pub fn probability(&self, word: &str) -> Result<F> {
        self.probs
            .iter()
            .find(|(w, _)| w == word)
            .map(|(_, p)| *p)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "word {word:?} is not a candidate at mask {}",
                    self.mask_index
                ))
            })
    }

    /// Checks normalization to within `tol`.
    pub fn is_normalized(&self, tol: F) -> bool {
        let sum: F = self.probs.iter().map(|(_, p)| *p).sum();
        (sum - F::one()).abs() <= tol
            && self.probs.iter().all(|(_, p)| *p >= F::zero() && *p <= F::one() + tol)
    }
}

/// Scores the probability of a (possibly multi-token) label word under a
/// full-vocabulary distribution: the geometric mean of the per-token
/// probabilities, so two-word candidates are not penalized for length.
pub fn label_word_probability<F: Scalar>(
    vocab_probs: &BTreeMap<String, F>,
    word: &str,
    tokenizer: &Tokenizer,
) -> Result<F> {
    let tokens = tokenizer.split(word);
    if tokens.is_empty() {
        return Err(Error::Degenerate(format!("label word {word:?} has no tokens")));
    }
    let mut log_sum = F::zero();
    for token in &tokens {
        let p = vocab_probs
            .get(token)
            .copied()
            .ok_or_else(|| Error::OutOfVocabulary(token.clone()))?;
        log_sum += p.max(F::from_f64_lossy(1e-300)).ln();
    }
    Ok((log_sum / F::from_f64_lossy(tokens.len() as f64)).exp())
}

/// Read-only snapshot of a scorer's token embeddings and prompt vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable<F> {
    pub vocab: Vec<String>,
    /// One vector per vocab entry, all of the same dimension.
    pub vectors: Vec<Vec<F>>,
    /// Slot id → that slot's prompt vectors.
    pub prompt_vectors: BTreeMap<u8, Vec<Vec<F>>>,
}

impl<F: Scalar> EmbeddingTable<F> {
    pub fn dim(&self) -> usize {
        self.vectors.first().map(|v| v.len()).unwrap_or(0)
    }

    pub fn token_vector(&self, token: &str) -> Option<&[F]> {
        self.vocab
            .iter()
            .position(|t| t == token)
            .map(|i| self.vectors[i].as_slice())
    }
}

/// What kind of scorer sits behind a handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Oracle,
    Toy,
}

/// The scoring contract shared by the oracle and the toy model.
pub trait Scorer<F: Scalar> {
    fn kind(&self) -> ScorerKind;

    /// Digest of all frozen parameters; stable across `score_masks` calls
    /// and across prompt-vector updates.
    fn backbone_checksum(&self) -> String;

    fn layout(&self) -> &PromptLayout;

    /// One normalized distribution per mask, in mask order.
    fn score_masks(&self, prompt: &AssembledPrompt) -> Result<[MaskDistribution<F>; 3]>;

    /// Snapshot of embeddings and prompt vectors.
    fn embeddings(&self) -> Result<EmbeddingTable<F>>;
}

/// Raw candidate weights for the three masks, first candidate of each pair.
/// `(a, b, c)` means mask 1 puts weight `a` on "plausible", mask 2 puts
/// weight `b` on "plausible", mask 3 puts weight `c` on "choice1"; the
/// complementary candidate gets `1 - weight`.
pub type OracleTriple = [f64; 3];

/// A table-driven scorer for tests: distributions are configured, not
/// computed. Lookups key on content (texts and pattern), never on instance
/// ids, so scoring is invariant under id relabeling.
#[derive(Debug, Clone)]
pub struct OracleScorer<F> {
    layout: PromptLayout,
    default: OracleTriple,
    by_pattern: BTreeMap<&'static str, OracleTriple>,
    by_content: Vec<(ContentKey, OracleTriple)>,
    /// Seed for content-hash pseudo-random mode; `None` disables it.
    random_seed: Option<u64>,
    embeddings: Option<EmbeddingTable<F>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ContentKey {
    seq1: [String; 3],
    seq2: [String; 3],
    pattern: Pattern,
}

impl<F: Scalar> OracleScorer<F> {
    /// Oracle answering every prompt with the same triple.
    pub fn constant(triple: OracleTriple) -> Self {
        OracleScorer {
            layout: PromptLayout::a2_default(),
            default: triple,
            by_pattern: BTreeMap::new(),
            by_content: Vec::new(),
            random_seed: None,
            embeddings: None,
        }
    }

    /// Oracle whose distributions are a deterministic hash of the prompt
    /// content — a reproducible "random guesser".
    pub fn seeded_random(seed: u64) -> Self {
        let mut oracle = Self::constant([0.5, 0.5, 0.5]);
        oracle.random_seed = Some(seed);
        oracle
    }

    pub fn with_layout(mut self, layout: PromptLayout) -> Self {
        self.layout = layout;
        self
    }

    /// Overrides the triple for one narrative pattern.
    pub fn with_pattern(mut self, pattern: Pattern, triple: OracleTriple) -> Self {
        self.by_pattern.insert(pattern.name(), triple);
        self
    }

    /// Overrides the triple for one prompt's exact content.
    pub fn with_content(mut self, prompt: &AssembledPrompt, triple: OracleTriple) -> Self {
        self.by_content.push((
            ContentKey {
                seq1: prompt.seq1.clone(),
                seq2: prompt.seq2.clone(),
                pattern: prompt.pattern,
            },
            triple,
        ));
        self
    }

    /// Attaches a synthetic embedding table so interpretability code can be
    /// exercised against the oracle.
    pub fn with_embeddings(mut self, table: EmbeddingTable<F>) -> Self {
        self.embeddings = Some(table);
        self
    }

    fn triple_for(&self, prompt: &AssembledPrompt) -> OracleTriple {
        let key = ContentKey {
            seq1: prompt.seq1.clone(),
            seq2: prompt.seq2.clone(),
            pattern: prompt.pattern,
        };
        if let Some((_, t)) = self.by_content.iter().find(|(k, _)| *k == key) {
            return *t;
        }
        if let Some(t) = self.by_pattern.get(prompt.pattern.name()) {
            return *t;
        }
        if let Some(seed) = self.random_seed {
            let mut hasher = DefaultHasher::new();
            seed.hash(&mut hasher);
            key.seq1.hash(&mut hasher);
            key.seq2.hash(&mut hasher);
            key.pattern.name().hash(&mut hasher);
            let mut triple = [0.0; 3];
            for (i, v) in triple.iter_mut().enumerate() {
                let mut h = hasher.clone();
                i.hash(&mut h);
                // Map the hash to (0, 1), away from exact 0/1.
                *v = (h.finish() % 10_000) as f64 / 10_001.0 + 1e-4;
            }
            return triple;
        }
        self.default
    }
}

impl<F: Scalar> Scorer<F> for OracleScorer<F> {
    fn kind(&self) -> ScorerKind {
        ScorerKind::Oracle
    }

    fn backbone_checksum(&self) -> String {
        // The oracle has no parameters; the checksum covers its config.
        let mut hasher = DefaultHasher::new();
        for v in self.default {
            v.to_bits().hash(&mut hasher);
        }
        self.random_seed.hash(&mut hasher);
        format!("oracle-{:016x}", hasher.finish())
    }

    fn layout(&self) -> &PromptLayout {
        &self.layout
    }

    fn score_masks(&self, prompt: &AssembledPrompt) -> Result<[MaskDistribution<F>; 3]> {
        if prompt.mask_count() != 3 {
            return Err(Error::Validation(format!(
                "prompt has {} masks, expected 3",
                prompt.mask_count()
            )));
        }
        let triple = self.triple_for(prompt);
        let dist = |idx: u8, first: f64| {
            MaskDistribution::from_weights(
                idx,
                [F::from_f64_lossy(first), F::from_f64_lossy(1.0 - first)],
            )
        };
        Ok([dist(1, triple[0])?, dist(2, triple[1])?, dist(3, triple[2])?])
    }

    fn embeddings(&self) -> Result<EmbeddingTable<F>> {
        self.embeddings
            .clone()
            .ok_or(Error::NoEmbeddings("oracle"))
    }
}
