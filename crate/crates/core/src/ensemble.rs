//! Per-pattern normalization and six-pattern majority voting, plus the
//! sample-and-marginalize baseline that resamples a single pattern.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, Label};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scorer::Scorer;
use crate::template::{assemble, Pattern, PromptLayout};
use crate::verbalizer::{joint_probability, predict, LabelWordMap, MaskSubset};

/// How a pattern's two joint scores become a two-point distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Normalization {
    /// Divide each score by their sum. The default.
    Plain,
    /// Softmax over the log scores with a temperature; equivalent to
    /// renormalizing the scores raised to 1/temperature.
    SoftmaxLog { temperature: f64 },
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::Plain
    }
}

/// Renormalizes a pair of non-negative joint scores to sum 1. Argmax is
/// preserved; two zero inputs are an error.
pub fn normalize<F: Scalar>(joint_h1: F, joint_h2: F) -> Result<(F, F)> {
    normalize_with(joint_h1, joint_h2, Normalization::Plain)
}

/// [`normalize`] with a configurable scheme.
pub fn normalize_with<F: Scalar>(joint_h1: F, joint_h2: F, mode: Normalization) -> Result<(F, F)> {
    if joint_h1 < F::zero() || joint_h2 < F::zero() {
        return Err(Error::Degenerate("joint scores must be non-negative".into()));
    }
    let sum = joint_h1 + joint_h2;
    if !(sum > F::zero()) {
        return Err(Error::Degenerate("both joint scores are zero".into()));
    }
    match mode {
        Normalization::Plain => Ok((joint_h1 / sum, joint_h2 / sum)),
        Normalization::SoftmaxLog { temperature } => {
            if temperature <= 0.0 {
                return Err(Error::InvalidArgument("softmax temperature must be positive".into()));
            }
            let t = F::from_f64_lossy(temperature);
            let floor = F::from_f64_lossy(1e-300);
            let l1 = joint_h1.max(floor).ln() / t;
            let l2 = joint_h2.max(floor).ln() / t;
            let m = l1.max(l2);
            let e1 = (l1 - m).exp();
            let e2 = (l2 - m).exp();
            let z = e1 + e2;
            Ok((e1 / z, e2 / z))
        }
    }
}

/// One pattern's normalized two-point distribution and its vote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternVerdict<F> {
    pub pattern: Pattern,
    pub p_h1: F,
    pub p_h2: F,
    pub vote: Label,
    pub tie: bool,
}

impl<F: Scalar> PatternVerdict<F> {
    pub fn new(pattern: Pattern, p_h1: F, p_h2: F) -> Self {
        let tie = p_h1 == p_h2;
        PatternVerdict {
            pattern,
            p_h1,
            p_h2,
            vote: if p_h2 > p_h1 { Label::H2 } else { Label::H1 },
            tie,
        }
    }
}

/// How a tied tally was resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    None,
    MeanProbability,
}

/// Outcome of a majority vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult<F> {
    pub verdicts: Vec<PatternVerdict<F>>,
    pub tally: (usize, usize),
    pub final_label: Label,
    pub tie_broken_by: TieBreak,
}

/// Shared tally logic: votes with their normalized probabilities. A tied
/// tally resolves to the label with the larger mean probability; an exact
/// mean tie falls back to H1. Order-invariant.
pub(crate) fn tally_votes<F: Scalar>(items: &[(Label, F, F)]) -> (usize, usize, Label, TieBreak) {
    let count_h1 = items.iter().filter(|(v, _, _)| *v == Label::H1).count();
    let count_h2 = items.len() - count_h1;
    if count_h1 != count_h2 {
        let winner = if count_h1 > count_h2 { Label::H1 } else { Label::H2 };
        return (count_h1, count_h2, winner, TieBreak::None);
    }
    let n = F::from_f64_lossy(items.len() as f64);
    let mean_h1 = items.iter().map(|(_, p1, _)| *p1).sum::<F>() / n;
    let mean_h2 = items.iter().map(|(_, _, p2)| *p2).sum::<F>() / n;
    let winner = if mean_h2 > mean_h1 { Label::H2 } else { Label::H1 };
    (count_h1, count_h2, winner, TieBreak::MeanProbability)
}

/// Majority vote over pattern verdicts.
pub fn majority_vote<F: Scalar>(verdicts: &[PatternVerdict<F>]) -> Result<VoteResult<F>> {
    if verdicts.is_empty() {
        return Err(Error::InvalidArgument("majority vote needs at least one verdict".into()));
    }
    let items: Vec<(Label, F, F)> = verdicts.iter().map(|v| (v.vote, v.p_h1, v.p_h2)).collect();
    let (count_h1, count_h2, final_label, tie_broken_by) = tally_votes(&items);
    Ok(VoteResult {
        verdicts: verdicts.to_vec(),
        tally: (count_h1, count_h2),
        final_label,
        tie_broken_by,
    })
}

/// Scores one pattern end to end: assemble, score the masks, take the joint
/// probabilities, and normalize.
pub fn pattern_verdict<F: Scalar, S: Scorer<F>>(
    instance: &Instance,
    scorer: &S,
    pattern: Pattern,
    layout: &PromptLayout,
) -> Result<PatternVerdict<F>> {
    let prompt = assemble(instance, pattern, layout)?;
    let dists = scorer.score_masks(&prompt)?;
    let j1 = joint_probability(&dists, Label::H1, MaskSubset::ALL)?;
    let j2 = joint_probability(&dists, Label::H2, MaskSubset::ALL)?;
    let (p1, p2) = normalize(j1, j2)?;
    Ok(PatternVerdict::new(pattern, p1, p2))
}

/// Scores all six narrative patterns and majority-votes their verdicts.
pub fn general_consistency<F: Scalar, S: Scorer<F>>(
    instance: &Instance,
    scorer: &S,
    layout: &PromptLayout,
) -> Result<VoteResult<F>> {
    let verdicts = Pattern::all()
        .into_iter()
        .map(|p| pattern_verdict(instance, scorer, p, layout))
        .collect::<Result<Vec<_>>>()?;
    majority_vote(&verdicts)
}

/// Sample-and-marginalize over a single pattern: draw `n_samples` label-word
/// assignments by sampling each mask's candidate distribution at
/// `temperature`, convert each assignment to a verdict by counting which
/// label's words it matches, and majority-vote the samples.
///
/// Temperature 0 collapses sampling to the deterministic maximum-joint
/// verdict, so the result equals single-pattern prediction.
pub fn sample_and_marginalize<F: Scalar, S: Scorer<F>>(
    instance: &Instance,
    scorer: &S,
    pattern: Pattern,
    n_samples: usize,
    temperature: f64,
    seed: u64,
) -> Result<VoteResult<F>> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    if temperature < 0.0 {
        return Err(Error::InvalidArgument("temperature must be non-negative".into()));
    }
    let prompt = assemble(instance, pattern, scorer.layout())?;
    let dists = scorer.score_masks(&prompt)?;

    if temperature == 0.0 {
        let verdict = predict(&dists, MaskSubset::ALL)?;
        let (p1, p2) = normalize(verdict.scores.h1, verdict.scores.h2)?;
        let verdicts = vec![PatternVerdict::new(pattern, p1, p2); n_samples];
        return majority_vote(&verdicts);
    }

    let map = LabelWordMap;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut verdicts = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut matches_h1 = 0usize;
        for dist in &dists {
            // Temperature-adjusted draw over the two candidates.
            let p_first = dist.probs[0].1.to_f64().unwrap_or(0.0);
            let p_second = dist.probs[1].1.to_f64().unwrap_or(0.0);
            let a = p_first.max(1e-300).powf(1.0 / temperature);
            let b = p_second.max(1e-300).powf(1.0 / temperature);
            let threshold = a / (a + b);
            let pick_first = rng.gen::<f64>() < threshold;
            let word = &dist.probs[if pick_first { 0 } else { 1 }].0;
            if word == map.word(Label::H1, dist.mask_index) {
                matches_h1 += 1;
            }
        }
        let p1 = F::from_f64_lossy(matches_h1 as f64 / 3.0);
        let p2 = F::one() - p1;
        verdicts.push(PatternVerdict::new(pattern, p1, p2));
    }
    majority_vote(&verdicts)
}

/// One line of the per-instance verdict log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictLogLine {
    pub id: String,
    pub patterns: Vec<PatternLogEntry>,
    pub tally: (usize, usize),
    pub final_label: Label,
    pub tie_broken_by: TieBreak,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold: Option<Label>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternLogEntry {
    pub pattern: Pattern,
    pub p_h1: f64,
    pub p_h2: f64,
    pub vote: Label,
    pub tie: bool,
}

impl VerdictLogLine {
    pub fn from_result<F: Scalar>(instance: &Instance, result: &VoteResult<F>) -> Self {
        VerdictLogLine {
            id: instance.id.clone(),
            patterns: result
                .verdicts
                .iter()
                .map(|v| PatternLogEntry {
                    pattern: v.pattern,
                    p_h1: v.p_h1.to_f64().unwrap_or(f64::NAN),
                    p_h2: v.p_h2.to_f64().unwrap_or(f64::NAN),
                    vote: v.vote,
                    tie: v.tie,
                })
                .collect(),
            tally: result.tally,
            final_label: result.final_label,
            tie_broken_by: result.tie_broken_by,
            gold: instance.label,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::OracleScorer;
    use crate::synthetic::generate_synthetic;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn verdict(pattern: Pattern, p_h1: f64) -> PatternVerdict<f64> {
        PatternVerdict::new(pattern, p_h1, 1.0 - p_h1)
    }

    #[test]
    fn normalize_divides_by_the_sum() {
        let (a, b) = normalize(0.2_f64, 0.6).unwrap();
        assert_relative_eq!(a, 0.25, max_relative = 1e-12);
        assert_relative_eq!(b, 0.75, max_relative = 1e-12);
    }

    #[test]
    fn equal_inputs_normalize_to_half() {
        for x in [1e-9_f64, 0.3, 7.0] {
            let (a, b) = normalize(x, x).unwrap();
            assert_relative_eq!(a, 0.5, epsilon = 1e-15);
            assert_relative_eq!(b, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn normalize_preserves_argmax_and_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let x = rng.gen::<f64>() + 1e-9;
            let y = rng.gen::<f64>() + 1e-9;
            let (a, b) = normalize(x, y).unwrap();
            assert!((a + b - 1.0).abs() <= 1e-12);
            assert_eq!(x > y, a > b);
        }
    }

    #[test]
    fn both_zero_is_degenerate() {
        assert!(matches!(normalize(0.0_f64, 0.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn softmax_log_normalization_preserves_argmax() {
        let (a, b) = normalize_with(0.2_f64, 0.6, Normalization::SoftmaxLog { temperature: 2.0 }).unwrap();
        assert!((a + b - 1.0).abs() <= 1e-12);
        assert!(b > a);
        // Higher temperature flattens relative to plain renormalization.
        let (plain_a, _) = normalize(0.2_f64, 0.6).unwrap();
        assert!(a > plain_a);
    }

    #[test]
    fn strict_majority_wins_without_tiebreak() {
        let patterns = Pattern::all();
        let verdicts: Vec<_> = (0..6)
            .map(|i| verdict(patterns[i], if i < 2 { 0.9 } else { 0.1 }))
            .collect();
        let result = majority_vote(&verdicts).unwrap();
        assert_eq!(result.tally, (2, 4));
        assert_eq!(result.final_label, Label::H2);
        assert_eq!(result.tie_broken_by, TieBreak::None);
    }

    #[test]
    fn tied_tally_resolves_by_mean_probability() {
        let patterns = Pattern::all();
        // Three votes each; H1 votes are more confident: means 0.52 vs 0.48.
        let p_h1_values = [0.8, 0.8, 0.8, 0.24, 0.24, 0.24];
        let verdicts: Vec<_> = patterns
            .iter()
            .zip(p_h1_values)
            .map(|(&p, v)| verdict(p, v))
            .collect();
        let result = majority_vote(&verdicts).unwrap();
        assert_eq!(result.tally, (3, 3));
        assert_eq!(result.final_label, Label::H1);
        assert_eq!(result.tie_broken_by, TieBreak::MeanProbability);
    }

    #[test]
    fn vote_is_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=8);
            let verdicts: Vec<_> = (0..n)
                .map(|i| verdict(Pattern::all()[i % 6], rng.gen::<f64>()))
                .collect();
            let forward = majority_vote(&verdicts).unwrap();
            let mut reversed = verdicts.clone();
            reversed.reverse();
            let backward = majority_vote(&reversed).unwrap();
            assert_eq!(forward.final_label, backward.final_label);
            assert_eq!(forward.tally, (backward.tally.0, backward.tally.1));
            assert_eq!(forward.tie_broken_by, backward.tie_broken_by);

            // Independent tally.
            let h1 = verdicts.iter().filter(|v| v.vote == Label::H1).count();
            assert_eq!(forward.tally, (h1, n - h1));
        }
    }

    #[test]
    fn identical_voters_are_unanimous() {
        let oracle: OracleScorer<f64> = OracleScorer::constant([0.6, 0.5, 0.6]);
        let ds = generate_synthetic(1, 1).unwrap();
        // Joint H1 = 0.6·0.5·0.6 = 0.18 > joint H2 = 0.4·0.5·0.4 = 0.08.
        let result = general_consistency(&ds.instances[0], &oracle, &PromptLayout::a2_default()).unwrap();
        assert_eq!(result.tally, (6, 0));
        assert_eq!(result.final_label, Label::H1);
    }

    #[test]
    fn constructed_two_four_split_goes_to_h2() {
        let mut oracle: OracleScorer<f64> = OracleScorer::constant([0.2, 0.8, 0.2]);
        for p in [Pattern::O1O2H, Pattern::O1HO2] {
            oracle = oracle.with_pattern(p, [0.8, 0.2, 0.8]);
        }
        let ds = generate_synthetic(1, 2).unwrap();
        let result = general_consistency(&ds.instances[0], &oracle, &PromptLayout::a2_default()).unwrap();
        assert_eq!(result.tally, (2, 4));
        assert_eq!(result.final_label, Label::H2);
    }

    #[test]
    fn general_consistency_equals_manual_chaining() {
        let oracle: OracleScorer<f64> = OracleScorer::seeded_random(77);
        let ds = generate_synthetic(3, 3).unwrap();
        let layout = PromptLayout::a2_default();
        for inst in &ds.instances {
            let result = general_consistency(inst, &oracle, &layout).unwrap();
            let manual: Vec<PatternVerdict<f64>> = Pattern::all()
                .into_iter()
                .map(|pattern| {
                    let prompt = assemble(inst, pattern, &layout).unwrap();
                    let dists = oracle.score_masks(&prompt).unwrap();
                    let j1 = joint_probability(&dists, Label::H1, MaskSubset::ALL).unwrap();
                    let j2 = joint_probability(&dists, Label::H2, MaskSubset::ALL).unwrap();
                    let (p1, p2) = normalize(j1, j2).unwrap();
                    PatternVerdict::new(pattern, p1, p2)
                })
                .collect();
            assert_eq!(result, majority_vote(&manual).unwrap());
        }
    }

    #[test]
    fn single_pattern_ensemble_equals_predict() {
        let oracle: OracleScorer<f64> = OracleScorer::seeded_random(8);
        let ds = generate_synthetic(5, 4).unwrap();
        let layout = PromptLayout::a2_default();
        for inst in &ds.instances {
            let v = pattern_verdict(inst, &oracle, Pattern::HO1O2, &layout).unwrap();
            let result = majority_vote(&[v]).unwrap();
            let prompt = assemble(inst, Pattern::HO1O2, &layout).unwrap();
            let dists = oracle.score_masks(&prompt).unwrap();
            let direct = predict(&dists, MaskSubset::ALL).unwrap();
            assert_eq!(result.final_label, direct.label);
        }
    }

    #[test]
    fn degenerate_oracle_samples_unanimously() {
        // All mass on H2's words at every mask.
        let oracle: OracleScorer<f64> = OracleScorer::constant([0.0, 1.0, 0.0]);
        let ds = generate_synthetic(1, 5).unwrap();
        let result =
            sample_and_marginalize(&ds.instances[0], &oracle, Pattern::HO1O2, 6, 1.0, 42).unwrap();
        assert_eq!(result.tally, (0, 6));
        assert_eq!(result.final_label, Label::H2);
    }

    #[test]
    fn sampling_is_deterministic_under_a_seed() {
        let oracle: OracleScorer<f64> = OracleScorer::constant([0.6, 0.45, 0.7]);
        let ds = generate_synthetic(1, 6).unwrap();
        let a = sample_and_marginalize(&ds.instances[0], &oracle, Pattern::O2HO1, 50, 1.0, 9).unwrap();
        let b = sample_and_marginalize(&ds.instances[0], &oracle, Pattern::O2HO1, 50, 1.0, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_samples_rejected() {
        let oracle: OracleScorer<f64> = OracleScorer::constant([0.5, 0.5, 0.5]);
        let ds = generate_synthetic(1, 7).unwrap();
        assert!(sample_and_marginalize(&ds.instances[0], &oracle, Pattern::O1O2H, 0, 1.0, 0).is_err());
    }

    #[test]
    fn zero_temperature_equals_single_pattern_predict() {
        let oracle: OracleScorer<f64> = OracleScorer::seeded_random(31);
        let ds = generate_synthetic(10, 8).unwrap();
        let layout = PromptLayout::a2_default();
        for inst in &ds.instances {
            let sm = sample_and_marginalize(inst, &oracle, Pattern::O1HO2, 6, 0.0, 1).unwrap();
            let prompt = assemble(inst, Pattern::O1HO2, &layout).unwrap();
            let dists = oracle.score_masks(&prompt).unwrap();
            let direct = predict(&dists, MaskSubset::ALL).unwrap();
            assert_eq!(sm.final_label, direct.label);
        }
    }

    #[test]
    fn bernoulli_oracle_tally_is_binomial() {
        // Mask 2 pins one vote to H2, mask 3 pins one to H1, mask 1 decides:
        // each sample votes H1 with probability 0.7.
        let oracle: OracleScorer<f64> = OracleScorer::constant([0.7, 1.0, 1.0]);
        let ds = generate_synthetic(1, 9).unwrap();
        let n = 10_000usize;
        let result =
            sample_and_marginalize(&ds.instances[0], &oracle, Pattern::HO1O2, n, 1.0, 123).unwrap();
        let expected = 0.7 * n as f64;
        let sigma = (n as f64 * 0.7 * 0.3).sqrt();
        let observed = result.tally.0 as f64;
        assert!(
            (observed - expected).abs() <= 3.0 * sigma,
            "observed {observed}, expected {expected} ± {:.1}",
            3.0 * sigma
        );
    }
}
