//! Desk-scale synthetic abductive data with machine-checkable gold labels.
//!
//! Each instance is built from a cause/effect marker chain: the first
//! observation mentions the chain's cause token, the second observation its
//! effect token, and the gold hypothesis contains both. The distractor
//! hypothesis uses a different chain, so exactly one hypothesis shares its
//! marker chain with both observations. [`certify`] re-derives the label
//! from the text alone.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Instance, Label, Split};
use crate::error::{Error, Result};

/// Cause/effect marker pairs. One chain per instance is the gold chain.
const CHAINS: &[(&str, &str)] = &[
    ("storm", "flooding"),
    ("oven", "smoke"),
    ("virus", "fever"),
    ("drought", "dust"),
    ("pipe", "leak"),
    ("wiring", "sparks"),
    ("frost", "cracks"),
    ("moths", "holes"),
];

const NAMES: &[&str] = &["mia", "omar", "ken", "lena", "ravi", "tara"];

const PLACES: &[&str] = &["kitchen", "garden", "office", "market", "harbor", "library"];

const OBS1_TEMPLATES: &[&str] = &[
    "{name} noticed the {cause} near the {place}.",
    "On monday {name} spotted the {cause} by the {place}.",
];

const OBS2_TEMPLATES: &[&str] = &[
    "Later the {place} was full of {effect}.",
    "By evening {effect} covered the whole {place}.",
];

const HYP_TEMPLATES: &[&str] = &[
    "The {cause} caused the {effect} in the {place}.",
    "Probably the {cause} led to {effect} around the {place}.",
];

fn fill(template: &str, name: &str, place: &str, cause: &str, effect: &str) -> String {
    template
        .replace("{name}", &capitalize(name))
        .replace("{place}", place)
        .replace("{cause}", cause)
        .replace("{effect}", effect)
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Generates `n` labeled instances. Deterministic under `seed`; gold labels
/// are balanced by construction (⌈n/2⌉ H1), then shuffled.
pub fn generate_synthetic(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Balanced gold positions, shuffled for unpredictability.
    let mut golds: Vec<Label> = (0..n)
        .map(|i| if i < n.div_ceil(2) { Label::H1 } else { Label::H2 })
        .collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        golds.swap(i, j);
    }

    let mut instances = Vec::with_capacity(n);
    for (i, gold) in golds.into_iter().enumerate() {
        let gold_chain = rng.gen_range(0..CHAINS.len());
        let mut distractor_chain = rng.gen_range(0..CHAINS.len() - 1);
        if distractor_chain >= gold_chain {
            distractor_chain += 1;
        }
        let name = NAMES[rng.gen_range(0..NAMES.len())];
        let place = PLACES[rng.gen_range(0..PLACES.len())];
        let (cause, effect) = CHAINS[gold_chain];
        let (d_cause, d_effect) = CHAINS[distractor_chain];

        let obs1 = fill(
            OBS1_TEMPLATES[rng.gen_range(0..OBS1_TEMPLATES.len())],
            name,
            place,
            cause,
            effect,
        );
        let obs2 = fill(
            OBS2_TEMPLATES[rng.gen_range(0..OBS2_TEMPLATES.len())],
            name,
            place,
            cause,
            effect,
        );
        let gold_hyp = fill(
            HYP_TEMPLATES[rng.gen_range(0..HYP_TEMPLATES.len())],
            name,
            place,
            cause,
            effect,
        );
        let distractor_hyp = fill(
            HYP_TEMPLATES[rng.gen_range(0..HYP_TEMPLATES.len())],
            name,
            place,
            d_cause,
            d_effect,
        );

        let (hyp1, hyp2) = match gold {
            Label::H1 => (gold_hyp, distractor_hyp),
            Label::H2 => (distractor_hyp, gold_hyp),
        };
        instances.push(Instance {
            id: format!("syn-{seed}-{i:05}"),
            obs1,
            obs2,
            hyp1,
            hyp2,
            label: Some(gold),
        });
    }

    Dataset::new(
        Split::Synthetic,
        instances,
        format!("synthetic(n={n}, seed={seed})"),
    )
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

fn chain_matches(hyp: &str, obs1: &str, obs2: &str) -> bool {
    let h = words(hyp);
    let o1 = words(obs1);
    let o2 = words(obs2);
    CHAINS.iter().any(|(cause, effect)| {
        h.iter().any(|w| w == cause)
            && h.iter().any(|w| w == effect)
            && o1.iter().any(|w| w == cause)
            && o2.iter().any(|w| w == effect)
    })
}

/// Re-derives the gold label of a synthetic instance from its text: the
/// hypothesis whose marker chain appears in both observations is gold.
/// Returns `None` when zero or both hypotheses match.
pub fn certify(instance: &Instance) -> Option<Label> {
    let m1 = chain_matches(&instance.hyp1, &instance.obs1, &instance.obs2);
    let m2 = chain_matches(&instance.hyp2, &instance.obs1, &instance.obs2);
    match (m1, m2) {
        (true, false) => Some(Label::H1),
        (false, true) => Some(Label::H2),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_generated_label_is_certified_by_the_marker_chain_check() {
        let ds = generate_synthetic(500, 7).unwrap();
        assert_eq!(ds.len(), 500);
        for inst in &ds.instances {
            assert_eq!(certify(inst), inst.label, "instance {}", inst.id);
        }
    }

    #[test]
    fn single_instance_gold_hypothesis_contains_the_chain() {
        let ds = generate_synthetic(1, 0).unwrap();
        let inst = &ds.instances[0];
        let gold = inst.label.unwrap();
        let gold_text = inst.hypothesis(gold);
        assert!(chain_matches(gold_text, &inst.obs1, &inst.obs2));
        assert!(!chain_matches(
            inst.hypothesis(gold.other()),
            &inst.obs1,
            &inst.obs2
        ));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(500, 7).unwrap();
        let b = generate_synthetic(500, 7).unwrap();
        assert_eq!(a.instances, b.instances);
    }

    #[test]
    fn labels_are_balanced_within_five_percent() {
        for (n, seed) in [(100usize, 1u64), (101, 2), (500, 7), (250, 99)] {
            let ds = generate_synthetic(n, seed).unwrap();
            let h1 = ds
                .instances
                .iter()
                .filter(|i| i.label == Some(Label::H1))
                .count();
            let frac = h1 as f64 / n as f64;
            assert!((frac - 0.5).abs() <= 0.05, "n={n} seed={seed} frac={frac}");
        }
    }

    #[test]
    fn zero_instances_rejected() {
        assert!(generate_synthetic(0, 1).is_err());
    }
}
