//! Narrative sequence patterns and prompt assembly.
//!
//! An instance's two observations and one hypothesis are serialized in one
//! of six narrative orders. The assembled prompt interleaves discrete
//! template fragments, continuous prompt slots (ids 0–7), and three mask
//! positions: one plausibility mask per sentence sequence and a final
//! choice mask.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Instance;
use crate::error::{Error, Result};

/// Positions in a narrative order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotRole {
    Obs1,
    Obs2,
    Hyp,
}

/// The six narrative orders of {O¹, O², H}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum Pattern {
    O1O2H,
    O1HO2,
    HO1O2,
    HO2O1,
    O2O1H,
    O2HO1,
}

impl Pattern {
    /// All six patterns in their fixed canonical order.
    pub fn all() -> [Pattern; 6] {
        [
            Pattern::O1O2H,
            Pattern::O1HO2,
            Pattern::HO1O2,
            Pattern::HO2O1,
            Pattern::O2O1H,
            Pattern::O2HO1,
        ]
    }

    pub fn order(self) -> [SlotRole; 3] {
        use SlotRole::*;
        match self {
            Pattern::O1O2H => [Obs1, Obs2, Hyp],
            Pattern::O1HO2 => [Obs1, Hyp, Obs2],
            Pattern::HO1O2 => [Hyp, Obs1, Obs2],
            Pattern::HO2O1 => [Hyp, Obs2, Obs1],
            Pattern::O2O1H => [Obs2, Obs1, Hyp],
            Pattern::O2HO1 => [Obs2, Hyp, Obs1],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pattern::O1O2H => "O1O2H",
            Pattern::O1HO2 => "O1HO2",
            Pattern::HO1O2 => "HO1O2",
            Pattern::HO2O1 => "HO2O1",
            Pattern::O2O1H => "O2O1H",
            Pattern::O2HO1 => "O2HO1",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pattern::all()
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown pattern {s:?}")))
    }
}

/// Lengths of the eight continuous prompt slots: two prefix slots (0 and 4)
/// and six cloze slots (1–3 and 5–7).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLayout {
    pub prefix: [usize; 2],
    pub cloze: [usize; 6],
}

impl PromptLayout {
    /// Default configuration: prefix length 30, cloze length 3.
    pub fn a2_default() -> Self {
        PromptLayout {
            prefix: [30, 30],
            cloze: [3; 6],
        }
    }

    /// Alternative preset totalling 46 tunable tokens: prefix length 14,
    /// cloze length 3.
    pub fn a4_compat() -> Self {
        PromptLayout {
            prefix: [14, 14],
            cloze: [3; 6],
        }
    }

    /// Small layout for desk-scale training runs and tests.
    pub fn toy() -> Self {
        PromptLayout {
            prefix: [4, 4],
            cloze: [2; 6],
        }
    }

    /// Length of slot `id` (ids 0–7).
    pub fn slot_len(&self, id: u8) -> usize {
        match id {
            0 => self.prefix[0],
            4 => self.prefix[1],
            1..=3 => self.cloze[(id - 1) as usize],
            5..=7 => self.cloze[(id - 3) as usize],
            _ => 0,
        }
    }

    /// Total number of tunable prompt tokens.
    pub fn total_tokens(&self) -> usize {
        (0u8..8).map(|id| self.slot_len(id)).sum()
    }

    /// Slot ids with nonzero length, ascending.
    pub fn active_slots(&self) -> Vec<u8> {
        (0u8..8).filter(|&id| self.slot_len(id) > 0).collect()
    }
}

/// One element of an assembled prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Element {
    /// Fixed template text or instance sentence.
    Discrete(String),
    /// Continuous prompt slot `id` holding `len` tunable vectors.
    Slot { id: u8, len: usize },
    /// Mask position 1, 2, or 3.
    Mask(u8),
}

impl Element {
    fn discrete(text: &str) -> Element {
        Element::Discrete(text.to_string())
    }

    /// One line of the golden-fixture format.
    pub fn fixture_line(&self) -> String {
        match self {
            Element::Discrete(text) => format!("DISCRETE:{text}"),
            Element::Slot { id, len } => format!("SLOT:{id}:{len}"),
            Element::Mask(i) => format!("MASK:{i}"),
        }
    }
}

/// Template portions that can be ablated away.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    ItIsMask,
    ChoiceMarkers,
    OverallClause,
    ClozeSlots,
    PrefixSlots,
}

/// A fully serialized prompt: element sequence plus the two pattern-ordered
/// sentence sequences (the first always hosts H¹, the second H²).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    pub elements: Vec<Element>,
    pub pattern: Pattern,
    pub seq1: [String; 3],
    pub seq2: [String; 3],
    /// Portions removed by [`ablation_flags`]; empty for a full assembly.
    pub ablated: BTreeSet<Ablation>,
}

impl AssembledPrompt {
    pub fn mask_count(&self) -> usize {
        self.elements
            .iter()
            .filter(|e| matches!(e, Element::Mask(_)))
            .count()
    }

    pub fn slot_ids(&self) -> Vec<u8> {
        self.elements
            .iter()
            .filter_map(|e| match e {
                Element::Slot { id, .. } => Some(*id),
                _ => None,
            })
            .collect()
    }

    /// Golden-fixture rendering: one element per line, trailing newline.
    pub fn fixture_string(&self) -> String {
        let mut out = String::new();
        for el in &self.elements {
            out.push_str(&el.fixture_line());
            out.push('\n');
        }
        out
    }
}

/// How the six cloze positions are filled.
#[derive(Debug, Clone)]
pub(crate) enum ClozeFill {
    /// Continuous slots from the layout.
    Continuous,
    /// No cloze content at all.
    Empty,
    /// Discrete connective texts, one per cloze position of a sequence.
    Discrete([String; 3]),
}

fn ordered_texts(instance: &Instance, pattern: Pattern, hyp: &str) -> [String; 3] {
    pattern.order().map(|role| match role {
        SlotRole::Obs1 => instance.obs1.clone(),
        SlotRole::Obs2 => instance.obs2.clone(),
        SlotRole::Hyp => hyp.to_string(),
    })
}

fn validate_instance(instance: &Instance) -> Result<()> {
    for (key, text) in [
        ("obs1", &instance.obs1),
        ("obs2", &instance.obs2),
        ("hyp1", &instance.hyp1),
        ("hyp2", &instance.hyp2),
    ] {
        if text.trim().is_empty() {
            return Err(Error::Validation(format!(
                "instance {}: field {key:?} is empty",
                instance.id
            )));
        }
    }
    Ok(())
}

/// Assembles the full three-mask prompt for one instance and pattern.
///
/// Element order: prefix slot 0, "choice1:", the first sentence sequence
/// with cloze slots 1–3 before its sentences, ", it is", mask 1; then the
/// mirrored second half with slots 4–7 and mask 2; then "Overall,", mask 3,
/// "is plausible.". Zero-length slots are omitted.
pub fn assemble(instance: &Instance, pattern: Pattern, layout: &PromptLayout) -> Result<AssembledPrompt> {
    assemble_with(instance, pattern, layout, ClozeFill::Continuous)
}

pub(crate) fn assemble_with(
    instance: &Instance,
    pattern: Pattern,
    layout: &PromptLayout,
    fill: ClozeFill,
) -> Result<AssembledPrompt> {
    validate_instance(instance)?;
    let seq1 = ordered_texts(instance, pattern, &instance.hyp1);
    let seq2 = ordered_texts(instance, pattern, &instance.hyp2);

    let mut elements = Vec::with_capacity(24);
    let push_slot = |elements: &mut Vec<Element>, id: u8| {
        let len = layout.slot_len(id);
        if len > 0 {
            elements.push(Element::Slot { id, len });
        }
    };
    let push_cloze = |elements: &mut Vec<Element>, id: u8, pos: usize, fill: &ClozeFill| match fill {
        ClozeFill::Continuous => {
            let len = layout.slot_len(id);
            if len > 0 {
                elements.push(Element::Slot { id, len });
            }
        }
        ClozeFill::Empty => {}
        ClozeFill::Discrete(connectives) => {
            elements.push(Element::Discrete(connectives[pos].clone()));
        }
    };

    push_slot(&mut elements, 0);
    elements.push(Element::discrete("choice1:"));
    for (pos, text) in seq1.iter().enumerate() {
        push_cloze(&mut elements, 1 + pos as u8, pos, &fill);
        elements.push(Element::Discrete(text.clone()));
    }
    elements.push(Element::discrete(", it is"));
    elements.push(Element::Mask(1));

    push_slot(&mut elements, 4);
    elements.push(Element::discrete("choice2:"));
    for (pos, text) in seq2.iter().enumerate() {
        push_cloze(&mut elements, 5 + pos as u8, pos, &fill);
        elements.push(Element::Discrete(text.clone()));
    }
    elements.push(Element::discrete(", it is"));
    elements.push(Element::Mask(2));

    elements.push(Element::discrete("Overall,"));
    elements.push(Element::Mask(3));
    elements.push(Element::discrete("is plausible."));

    Ok(AssembledPrompt {
        elements,
        pattern,
        seq1,
        seq2,
        ablated: BTreeSet::new(),
    })
}

/// Baseline input kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Finetune,
    Prefix,
    Prompt,
}

/// Output of [`assemble_baseline`]: plain text for the fine-tune baseline,
/// a single-mask prompt for the tunable baselines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaselineInput {
    Text(String),
    Prompt(Vec<Element>),
}

const BASELINE_TUNABLE_TOKENS: usize = 55;

/// Builds the baseline inputs: the literal fine-tune template, a 55-token
/// prefix block plus one mask, or 55 tunable tokens spread evenly across
/// the gaps between sentences and before the mask.
pub fn assemble_baseline(instance: &Instance, kind: BaselineKind) -> Result<BaselineInput> {
    validate_instance(instance)?;
    let finetune_text = format!(
        "Observation 1: {}\nHypothesis 1: {}\nHypothesis 2: {}\nObservation 2: {}",
        instance.obs1, instance.hyp1, instance.hyp2, instance.obs2
    );
    match kind {
        BaselineKind::Finetune => Ok(BaselineInput::Text(finetune_text)),
        BaselineKind::Prefix => Ok(BaselineInput::Prompt(vec![
            Element::Slot {
                id: 0,
                len: BASELINE_TUNABLE_TOKENS,
            },
            Element::Discrete(finetune_text),
            Element::Mask(1),
        ])),
        BaselineKind::Prompt => {
            let sentences = [
                format!("Observation 1: {}", instance.obs1),
                format!("Hypothesis 1: {}", instance.hyp1),
                format!("Hypothesis 2: {}", instance.hyp2),
                format!("Observation 2: {}", instance.obs2),
            ];
            // Four gaps: after each sentence (the last sits before the mask).
            let gaps = sentences.len();
            let base = BASELINE_TUNABLE_TOKENS / gaps;
            let extra = BASELINE_TUNABLE_TOKENS % gaps;
            let mut elements = Vec::new();
            for (i, s) in sentences.iter().enumerate() {
                elements.push(Element::Discrete(s.clone()));
                let len = base + usize::from(i < extra);
                elements.push(Element::Slot { id: i as u8, len });
            }
            elements.push(Element::Mask(1));
            Ok(BaselineInput::Prompt(elements))
        }
    }
}

/// Returns a copy of `assembly` with the named portions removed. Dropping
/// the overall clause also drops mask 3; the removals are recorded on the
/// result.
pub fn ablation_flags(assembly: &AssembledPrompt, drop: &BTreeSet<Ablation>) -> AssembledPrompt {
    let mut out = assembly.clone();
    out.ablated.extend(drop.iter().copied());
    out.elements.retain(|el| match el {
        Element::Discrete(text) => {
            if drop.contains(&Ablation::ItIsMask) && text == ", it is" {
                return false;
            }
            if drop.contains(&Ablation::ChoiceMarkers) && (text == "choice1:" || text == "choice2:") {
                return false;
            }
            if drop.contains(&Ablation::OverallClause) && (text == "Overall," || text == "is plausible.") {
                return false;
            }
            true
        }
        Element::Slot { id, .. } => {
            let is_prefix = *id == 0 || *id == 4;
            if drop.contains(&Ablation::PrefixSlots) && is_prefix {
                return false;
            }
            if drop.contains(&Ablation::ClozeSlots) && !is_prefix {
                return false;
            }
            true
        }
        Element::Mask(i) => {
            if drop.contains(&Ablation::ItIsMask) && (*i == 1 || *i == 2) {
                return false;
            }
            if drop.contains(&Ablation::OverallClause) && *i == 3 {
                return false;
            }
            true
        }
    });
    out
}
