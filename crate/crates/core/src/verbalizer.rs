//! Label-word mapping and joint-probability scoring.
//!
//! Each class label maps to one label word per mask: H1 to
//! ("plausible", "not plausible", "choice1") and H2 to the complementary
//! triple. The joint score of a label is the product of its label-word
//! probabilities over a mask subset, and prediction is the argmax of that
//! product.

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scorer::MaskDistribution;

/// The fixed label-word map: one word per (class label, mask) pair. The two
/// rows differ at every position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LabelWordMap;

impl LabelWordMap {
    /// The word triple for a class label, in mask order.
    pub fn words(&self, label: Label) -> [&'static str; 3] {
        match label {
            Label::H1 => ["plausible", "not plausible", "choice1"],
            Label::H2 => ["not plausible", "plausible", "choice2"],
        }
    }

    /// The word for one mask (1-based).
    pub fn word(&self, label: Label, mask_index: u8) -> &'static str {
        self.words(label)[(mask_index - 1) as usize]
    }
}

/// A non-empty subset of the three mask positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSubset(u8);

impl MaskSubset {
    pub const ALL: MaskSubset = MaskSubset(0b111);

    pub fn new(masks: &[u8]) -> Result<Self> {
        let mut bits = 0u8;
        for &m in masks {
            if !(1..=3).contains(&m) {
                return Err(Error::InvalidArgument(format!("mask index {m} out of range")));
            }
            bits |= 1 << (m - 1);
        }
        if bits == 0 {
            return Err(Error::InvalidArgument("mask subset must be non-empty".into()));
        }
        Ok(MaskSubset(bits))
    }

    pub fn contains(self, mask_index: u8) -> bool {
        self.0 & (1 << (mask_index - 1)) != 0
    }

    pub fn indices(self) -> Vec<u8> {
        (1..=3).filter(|&m| self.contains(m)).collect()
    }
}

impl Default for MaskSubset {
    fn default() -> Self {
        MaskSubset::ALL
    }
}

/// Unnormalized joint probabilities of the two labels over a mask subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointScore<F> {
    pub h1: F,
    pub h2: F,
    pub mask_subset: MaskSubset,
}

impl<F: Scalar> JointScore<F> {
    pub fn get(&self, label: Label) -> F {
        match label {
            Label::H1 => self.h1,
            Label::H2 => self.h2,
        }
    }
}

/// Product over the subset's masks of the label's word probability.
pub fn joint_probability<F: Scalar>(
    dists: &[MaskDistribution<F>; 3],
    label: Label,
    subset: MaskSubset,
) -> Result<F> {
    let map = LabelWordMap;
    let mut product = F::one();
    for dist in dists {
        if subset.contains(dist.mask_index) {
            product = product * dist.probability(map.word(label, dist.mask_index))?;
        }
    }
    Ok(product)
}

/// A prediction: the argmax label, both joint scores, and a tie flag.
/// Exact ties break to H1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict<F> {
    pub label: Label,
    pub scores: JointScore<F>,
    pub tie: bool,
}

/// Argmax of the joint probability over {H1, H2}.
pub fn predict<F: Scalar>(
    dists: &[MaskDistribution<F>; 3],
    subset: MaskSubset,
) -> Result<Verdict<F>> {
    let h1 = joint_probability(dists, Label::H1, subset)?;
    let h2 = joint_probability(dists, Label::H2, subset)?;
    let tie = h1 == h2;
    Ok(Verdict {
        label: if h2 > h1 { Label::H2 } else { Label::H1 },
        scores: JointScore {
            h1,
            h2,
            mask_subset: subset,
        },
        tie,
    })
}

/// Which functional form the training loss takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    /// −Σₖ log pₖ(gold word): cross-entropy summed over masks, equal to
    /// −log of the joint probability. The default.
    PerMaskCe,
    /// −log((Σₖ pₖ(gold word)) / 3): sum of mask probabilities inside the
    /// log, normalized by 3 so a perfect prediction scores 0.
    Eq3Literal,
}

impl Default for LossForm {
    fn default() -> Self {
        LossForm::PerMaskCe
    }
}

/// Probability floor applied before taking logs.
pub const LOSS_EPSILON: f64 = 1e-12;

/// A loss value plus a flag recording whether any gold-word probability had
/// to be clamped up to [`LOSS_EPSILON`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingLoss<F> {
    pub value: F,
    pub clamped: bool,
}

/// Training loss of a distribution triple against the gold label.
pub fn training_loss<F: Scalar>(
    dists: &[MaskDistribution<F>; 3],
    gold: Label,
    form: LossForm,
) -> Result<TrainingLoss<F>> {
    let map = LabelWordMap;
    let eps = F::from_f64_lossy(LOSS_EPSILON);
    let mut clamped = false;
    let mut gold_probs = Vec::with_capacity(3);
    for dist in dists {
        let p = dist.probability(map.word(gold, dist.mask_index))?;
        if p < eps {
            clamped = true;
        }
        gold_probs.push(p.max(eps));
    }
    let value = match form {
        LossForm::PerMaskCe => -gold_probs.iter().map(|p| p.ln()).sum::<F>(),
        LossForm::Eq3Literal => {
            let mean = gold_probs.iter().copied().sum::<F>() / F::from_f64_lossy(3.0);
            -mean.ln()
        }
    };
    Ok(TrainingLoss { value, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triple(p1: f64, p2: f64, p3: f64) -> [MaskDistribution<f64>; 3] {
        [
            MaskDistribution::from_weights(1, [p1, 1.0 - p1]).unwrap(),
            MaskDistribution::from_weights(2, [p2, 1.0 - p2]).unwrap(),
            MaskDistribution::from_weights(3, [p3, 1.0 - p3]).unwrap(),
        ]
    }

    /// Brute force: enumerate all 2×2×2 label-word assignments and sum the
    /// probability of those consistent with `label` on `subset`.
    fn brute_force_joint(dists: &[MaskDistribution<f64>; 3], label: Label, subset: MaskSubset) -> f64 {
        let map = LabelWordMap;
        let mut total = 0.0;
        for bits in 0..8u8 {
            let mut p = 1.0;
            let mut consistent = true;
            for (k, dist) in dists.iter().enumerate() {
                let pick_first = bits & (1 << k) == 0;
                let (word, prob) = &dist.probs[if pick_first { 0 } else { 1 }];
                p *= prob;
                if subset.contains(dist.mask_index) && word != map.word(label, dist.mask_index) {
                    consistent = false;
                }
            }
            if consistent {
                total += p;
            }
        }
        total
    }

    #[test]
    fn joint_product_example() {
        // H1's words carry 0.7, 0.6, 0.8 at the three masks.
        let dists = triple(0.7, 0.4, 0.8);
        let j = joint_probability(&dists, Label::H1, MaskSubset::ALL).unwrap();
        assert_relative_eq!(j, 0.336, max_relative = 1e-12);
    }

    #[test]
    fn third_mask_only_subset() {
        let dists = triple(0.7, 0.4, 0.8);
        let j = joint_probability(&dists, Label::H1, MaskSubset::new(&[3]).unwrap()).unwrap();
        assert_relative_eq!(j, 0.8, max_relative = 1e-12);
    }

    #[test]
    fn joint_matches_brute_force_on_random_triples_and_subsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let subsets: Vec<MaskSubset> = vec![
            MaskSubset::ALL,
            MaskSubset::new(&[1]).unwrap(),
            MaskSubset::new(&[2]).unwrap(),
            MaskSubset::new(&[3]).unwrap(),
            MaskSubset::new(&[1, 2]).unwrap(),
            MaskSubset::new(&[1, 3]).unwrap(),
            MaskSubset::new(&[2, 3]).unwrap(),
        ];
        for _ in 0..1000 {
            let dists = triple(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            for &subset in &subsets {
                for label in [Label::H1, Label::H2] {
                    let fast = joint_probability(&dists, label, subset).unwrap();
                    let brute = brute_force_joint(&dists, label, subset);
                    assert!((fast - brute).abs() <= 1e-12, "fast={fast} brute={brute}");
                }
            }
        }
    }

    #[test]
    fn predict_picks_the_larger_product() {
        let dists = triple(0.3, 0.4, 0.2);
        // H1: 0.3·0.6·0.2 = 0.036; H2: 0.7·0.4·0.8 = 0.224.
        let v = predict(&dists, MaskSubset::ALL).unwrap();
        assert_eq!(v.label, Label::H2);
        assert!(!v.tie);
        assert_relative_eq!(v.scores.h1, 0.036, max_relative = 1e-12);
        assert_relative_eq!(v.scores.h2, 0.224, max_relative = 1e-12);
    }

    #[test]
    fn uniform_masks_tie_to_h1_with_flag() {
        let dists = triple(0.5, 0.5, 0.5);
        let v = predict(&dists, MaskSubset::ALL).unwrap();
        assert_eq!(v.label, Label::H1);
        assert!(v.tie);
    }

    #[test]
    fn predict_agrees_with_brute_force_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..1000 {
            let dists = triple(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            let v = predict(&dists, MaskSubset::ALL).unwrap();
            let b1 = brute_force_joint(&dists, Label::H1, MaskSubset::ALL);
            let b2 = brute_force_joint(&dists, Label::H2, MaskSubset::ALL);
            let expected = if b2 > b1 { Label::H2 } else { Label::H1 };
            assert_eq!(v.label, expected);
        }
    }

    #[test]
    fn perfect_prediction_has_zero_loss_under_both_forms() {
        // Gold H2 with all its words at probability 1.
        let dists = triple(0.0, 1.0, 0.0);
        for form in [LossForm::PerMaskCe, LossForm::Eq3Literal] {
            let loss = training_loss(&dists, Label::H2, form).unwrap();
            assert_relative_eq!(loss.value, 0.0, epsilon = 1e-12);
            assert!(!loss.clamped);
        }
    }

    #[test]
    fn uniform_loss_is_three_ln_two() {
        let dists = triple(0.5, 0.5, 0.5);
        let loss = training_loss(&dists, Label::H1, LossForm::PerMaskCe).unwrap();
        assert_relative_eq!(loss.value, 3.0 * std::f64::consts::LN_2, max_relative = 1e-12);
    }

    #[test]
    fn per_mask_ce_equals_negative_log_joint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            // Keep probabilities away from the clamp floor.
            let p = |r: &mut ChaCha8Rng| 0.05 + 0.9 * r.gen::<f64>();
            let dists = triple(p(&mut rng), p(&mut rng), p(&mut rng));
            for gold in [Label::H1, Label::H2] {
                let loss = training_loss(&dists, gold, LossForm::PerMaskCe).unwrap();
                let joint = joint_probability(&dists, gold, MaskSubset::ALL).unwrap();
                assert_relative_eq!(loss.value, -joint.ln(), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn zero_gold_probability_clamps_and_flags() {
        let dists = triple(0.0, 0.5, 0.5);
        let loss = training_loss(&dists, Label::H1, LossForm::PerMaskCe).unwrap();
        assert!(loss.clamped);
        assert!(loss.value.is_finite());
    }

    #[test]
    fn joint_pair_sums_to_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let dists = triple(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            let j1 = joint_probability(&dists, Label::H1, MaskSubset::ALL).unwrap();
            let j2 = joint_probability(&dists, Label::H2, MaskSubset::ALL).unwrap();
            assert!(j1 + j2 <= 1.0 + 1e-12);
        }
        // Degenerate consistent distributions reach exactly 1.
        let dists = triple(1.0, 0.0, 1.0);
        let j1 = joint_probability(&dists, Label::H1, MaskSubset::ALL).unwrap();
        let j2 = joint_probability(&dists, Label::H2, MaskSubset::ALL).unwrap();
        assert_relative_eq!(j1 + j2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn label_word_rows_differ_at_every_position() {
        let map = LabelWordMap;
        for k in 1..=3 {
            assert_ne!(map.word(Label::H1, k), map.word(Label::H2, k));
        }
    }

    #[test]
    fn empty_subset_rejected() {
        assert!(MaskSubset::new(&[]).is_err());
        assert!(MaskSubset::new(&[4]).is_err());
    }
}
