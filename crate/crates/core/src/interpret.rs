//! Interpretability probe: rank discourse connectives by cosine similarity
//! to the averaged learned cloze-prompt vectors, render narrative case
//! studies, and build the three probe input settings (no cloze content,
//! discrete connectives, continuous prompts).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, Label};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scorer::EmbeddingTable;
use crate::template::{assemble, assemble_with, AssembledPrompt, ClozeFill, Pattern, PromptLayout, SlotRole};
use crate::tokenizer::Tokenizer;

/// The bundled 23-connective inventory (contingency and temporal classes),
/// one "<surface>\t<class>" pair per line.
pub const BUILTIN_CONNECTIVES: &str = include_str!("../data/connectives.txt");

/// Expected inventory size.
pub const INVENTORY_SIZE: usize = 23;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelationClass {
    Contingency,
    Temporal,
}

impl FromStr for RelationClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Contingency" => Ok(RelationClass::Contingency),
            "Temporal" => Ok(RelationClass::Temporal),
            other => Err(Error::Validation(format!("unknown relation class {other:?}"))),
        }
    }
}

impl fmt::Display for RelationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RelationClass::Contingency => write!(f, "Contingency"),
            RelationClass::Temporal => write!(f, "Temporal"),
        }
    }
}

/// The discourse connective inventory: exactly 23 unique surface forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectiveInventory {
    pub connectives: Vec<(String, RelationClass)>,
}

impl ConnectiveInventory {
    /// The bundled inventory.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_CONNECTIVES).expect("bundled inventory is valid")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut connectives = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (surface, class) = line.split_once('\t').ok_or_else(|| {
                Error::Validation(format!("connectives line {}: expected '<surface>\\t<class>'", no + 1))
            })?;
            let surface = surface.trim().to_lowercase();
            if !seen.insert(surface.clone()) {
                return Err(Error::Validation(format!("duplicate connective {surface:?}")));
            }
            connectives.push((surface, class.parse()?));
        }
        if connectives.len() != INVENTORY_SIZE {
            return Err(Error::Validation(format!(
                "inventory has {} connectives, expected {INVENTORY_SIZE}",
                connectives.len()
            )));
        }
        Ok(ConnectiveInventory { connectives })
    }

    pub fn len(&self) -> usize {
        self.connectives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.connectives.is_empty()
    }
}

/// Ranking of the whole inventory against one slot's averaged prompt
/// vector, scores non-increasing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConnectiveRanking<F> {
    pub slot_id: u8,
    pub ranked: Vec<(String, F)>,
}

impl<F: Scalar> ConnectiveRanking<F> {
    pub fn top(&self, k: usize) -> &[(String, F)] {
        &self.ranked[..k.min(self.ranked.len())]
    }
}

fn mean_of<F: Scalar>(vectors: &[&[F]]) -> Vec<F> {
    let dim = vectors[0].len();
    let n = F::from_f64_lossy(vectors.len() as f64);
    (0..dim)
        .map(|d| vectors.iter().map(|v| v[d]).sum::<F>() / n)
        .collect()
}

fn cosine<F: Scalar>(a: &[F], b: &[F]) -> Result<F> {
    let dot: F = a.iter().zip(b).map(|(x, y)| *x * *y).sum();
    let na: F = a.iter().map(|x| *x * *x).sum::<F>().sqrt();
    let nb: F = b.iter().map(|x| *x * *x).sum::<F>().sqrt();
    if na.is_zero() || nb.is_zero() {
        return Err(Error::Degenerate("zero-norm vector in cosine similarity".into()));
    }
    Ok(dot / (na * nb))
}

/// Ranks the inventory by cosine similarity between the mean of the slot's
/// prompt vectors and each connective's mean token embedding. Multi-word
/// connectives embed as the mean of their token vectors. Ties keep
/// inventory order.
pub fn nearest_connectives<F: Scalar>(
    table: &EmbeddingTable<F>,
    slot_id: u8,
    inventory: &ConnectiveInventory,
    top_k: usize,
) -> Result<ConnectiveRanking<F>> {
    let slot_vectors = table
        .prompt_vectors
        .get(&slot_id)
        .ok_or(Error::UnknownSlot(slot_id))?;
    if slot_vectors.is_empty() {
        return Err(Error::UnknownSlot(slot_id));
    }
    let refs: Vec<&[F]> = slot_vectors.iter().map(|v| v.as_slice()).collect();
    let prompt_mean = mean_of(&refs);

    let tokenizer = Tokenizer;
    let mut scored = Vec::with_capacity(inventory.len());
    for (surface, _) in &inventory.connectives {
        let tokens = tokenizer.split(surface);
        let vectors: Vec<&[F]> = tokens
            .iter()
            .map(|t| {
                table
                    .token_vector(t)
                    .ok_or_else(|| Error::OutOfVocabulary(t.clone()))
            })
            .collect::<Result<_>>()?;
        let conn_mean = mean_of(&vectors);
        scored.push((surface.clone(), cosine(&prompt_mean, &conn_mean)?));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let _ = top_k; // The full ranking is returned; callers take `top(k)`.
    Ok(ConnectiveRanking {
        slot_id,
        ranked: scored,
    })
}

/// Connectives that read as sentence adverbials and take a following comma
/// when they open a sentence. Subordinators ("because", "if", ...) do not.
const COMMA_CONNECTIVES: &[&str] = &[
    "meanwhile",
    "meantime",
    "in fact",
    "as a result",
    "indeed",
    "furthermore",
    "thus",
    "in turn",
    "previously",
    "so",
    "then",
];

/// Words safe to lowercase at a sentence start when the sentence is pulled
/// into the middle of a rendered narrative.
const LOWERABLE_STARTS: &[&str] = &[
    "the", "a", "an", "he", "she", "it", "they", "we", "his", "her", "their", "this", "that",
    "there", "on", "by", "later", "probably",
];

fn lower_start(sentence: &str) -> String {
    let mut words = sentence.split_whitespace();
    let Some(first) = words.next() else {
        return sentence.to_string();
    };
    if LOWERABLE_STARTS.contains(&first.to_lowercase().as_str()) {
        let mut chars = sentence.chars();
        match chars.next() {
            Some(c) => c.to_lowercase().collect::<String>() + chars.as_str(),
            None => sentence.to_string(),
        }
    } else {
        sentence.to_string()
    }
}

fn capitalize_first(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

fn ensure_terminal_period(text: &str) -> String {
    let trimmed = text.trim_end();
    if trimmed.ends_with(['.', '!', '?']) {
        trimmed.to_string()
    } else {
        format!("{trimmed}.")
    }
}

/// Renders a narrative case study: the pattern-ordered sentences hosting
/// the gold hypothesis, each introduced by its connective, sentence-cased
/// with terminal punctuation. Empty connectives degrade to plain
/// pattern-ordered concatenation.
pub fn render_case(
    instance: &Instance,
    pattern: Pattern,
    connectives: &[String; 3],
    gold_hyp: Label,
) -> Result<String> {
    render_case_inner(instance, pattern, connectives, gold_hyp, false)
}

/// [`render_case`] with the connectives wrapped in `**` markers, for the
/// case-study output files.
pub fn render_case_marked(
    instance: &Instance,
    pattern: Pattern,
    connectives: &[String; 3],
    gold_hyp: Label,
) -> Result<String> {
    render_case_inner(instance, pattern, connectives, gold_hyp, true)
}

fn render_case_inner(
    instance: &Instance,
    pattern: Pattern,
    connectives: &[String; 3],
    gold_hyp: Label,
    marked: bool,
) -> Result<String> {
    let hyp = instance.hypothesis(gold_hyp);
    let sentences = pattern.order().map(|role| match role {
        SlotRole::Obs1 => instance.obs1.clone(),
        SlotRole::Obs2 => instance.obs2.clone(),
        SlotRole::Hyp => hyp.to_string(),
    });

    let mut parts = Vec::with_capacity(3);
    for (connective, sentence) in connectives.iter().zip(sentences.iter()) {
        let connective = connective.trim();
        if connective.is_empty() {
            parts.push(ensure_terminal_period(sentence));
            continue;
        }
        let shown = capitalize_first(connective);
        let shown = if marked { format!("**{shown}**") } else { shown };
        let comma = if COMMA_CONNECTIVES.contains(&connective.to_lowercase().as_str()) {
            ","
        } else {
            ""
        };
        let body = lower_start(sentence);
        parts.push(ensure_terminal_period(&format!("{shown}{comma} {body}")));
    }
    Ok(parts.join(" "))
}

/// The three probe input settings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProbeSetting {
    /// Cloze slots removed entirely; only prefix slots remain.
    None,
    /// Cloze slots replaced by discrete connective texts (one per cloze
    /// position, reused in both sequences).
    Discrete([String; 3]),
    /// The standard continuous-prompt assembly.
    Continuous,
}

/// Builds the probe input for one setting.
pub fn build_setting(
    instance: &Instance,
    pattern: Pattern,
    setting: &ProbeSetting,
    layout: &PromptLayout,
) -> Result<AssembledPrompt> {
    match setting {
        ProbeSetting::None => assemble_with(instance, pattern, layout, ClozeFill::Empty),
        ProbeSetting::Discrete(connectives) => {
            if connectives.iter().any(|c| c.trim().is_empty()) {
                return Err(Error::Validation("discrete probe setting needs three connectives".into()));
            }
            assemble_with(instance, pattern, layout, ClozeFill::Discrete(connectives.clone()))
        }
        ProbeSetting::Continuous => assemble(instance, pattern, layout),
    }
}
