//! Prompt-only training over a frozen backbone, evaluation loops, and
//! numerical verification (finite-difference gradient checks).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Instance, Label};
use crate::ensemble::{
    general_consistency, majority_vote, pattern_verdict, sample_and_marginalize, VerdictLogLine,
    VoteResult,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scorer::Scorer;
use crate::template::{assemble, AssembledPrompt, Pattern};
use crate::toy::ToyScorer;
use crate::verbalizer::LossForm;

/// Learning-rate candidates searched in the full-data configuration.
pub const FULL_DATA_LR_CANDIDATES: [f64; 5] = [8e-4, 8e-5, 6e-5, 5e-5, 3e-5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub max_sequence_tokens: usize,
    pub seed: u64,
    pub loss_form: LossForm,
    /// When more than one candidate is given, each is trained and the one
    /// with the best dev accuracy is kept.
    pub lr_candidates: Vec<f64>,
}

impl TrainConfig {
    /// The full-data configuration: batch 1, 350-token budget, 30,000
    /// steps, learning rate searched over the candidate set.
    pub fn full_data(seed: u64) -> Self {
        TrainConfig {
            learning_rate: FULL_DATA_LR_CANDIDATES[0],
            steps: 30_000,
            batch_size: 1,
            max_sequence_tokens: 350,
            seed,
            loss_form: LossForm::PerMaskCe,
            lr_candidates: FULL_DATA_LR_CANDIDATES.to_vec(),
        }
    }

    /// Few-shot configuration: batch 3, 5,000 steps, otherwise as
    /// [`TrainConfig::full_data`].
    pub fn few_shot(seed: u64) -> Self {
        TrainConfig {
            steps: 5_000,
            batch_size: 3,
            ..Self::full_data(seed)
        }
    }

    /// Desk-scale configuration for the toy scorer.
    pub fn toy(seed: u64) -> Self {
        TrainConfig {
            learning_rate: 0.5,
            steps: 600,
            batch_size: 3,
            max_sequence_tokens: 350,
            seed,
            loss_form: LossForm::PerMaskCe,
            lr_candidates: vec![0.5],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.learning_rate <= 0.0 || self.lr_candidates.iter().any(|&lr| lr <= 0.0) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        Ok(())
    }

    fn candidates(&self) -> Vec<f64> {
        if self.lr_candidates.is_empty() {
            vec![self.learning_rate]
        } else {
            self.lr_candidates.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub optimizer: &'static str,
    pub seed: u64,
    pub selected_lr: f64,
    pub steps: usize,
    pub loss_curve: Vec<(usize, f64)>,
    pub final_train_accuracy: f64,
    pub final_dev_accuracy: f64,
    pub backbone_checksum_before: String,
    pub backbone_checksum_after: String,
    /// Dev accuracy per learning-rate candidate, in candidate order.
    pub lr_search: Vec<(f64, f64)>,
}

/// Evaluation mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EvalMode {
    SinglePattern(Pattern),
    GeneralConsistency,
    SampleAndMarginalize {
        pattern: Pattern,
        n_samples: usize,
        temperature: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub verdicts: Vec<VerdictLogLine>,
}

/// Trains the prompt vectors with plain seeded SGD, leaving the backbone
/// untouched. With several learning-rate candidates, each candidate is
/// trained from the same initial prompt state and the best dev accuracy
/// wins. Per-step progress lines are emitted through `progress`.
pub fn train_prompts<F: Scalar>(
    scorer: &mut ToyScorer<F>,
    train: &Dataset,
    dev: &Dataset,
    pattern: Pattern,
    config: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    config.validate()?;
    if !train.is_labeled() || !dev.is_labeled() {
        return Err(Error::Validation("training and dev datasets must be labeled".into()));
    }
    let checksum_before = scorer.backbone_checksum();
    let initial_prompts = scorer.prompt_vectors().clone();

    // Pre-assemble every training prompt once.
    let prompts: Vec<(AssembledPrompt, Label)> = train
        .instances
        .iter()
        .map(|inst| {
            let prompt = assemble(inst, pattern, scorer.layout())?;
            check_budget(scorer, &prompt, config.max_sequence_tokens)?;
            Ok((prompt, inst.label.expect("labeled")))
        })
        .collect::<Result<_>>()?;

    let mut best: Option<(f64, f64, Vec<(usize, f64)>, _)> = None;
    let mut lr_search = Vec::new();
    let candidates = config.candidates();
    let single_candidate = candidates.len() == 1;
    for &lr in &candidates {
        let mut trial = scorer.clone();
        trial.set_prompt_vectors(initial_prompts.clone());
        let curve = run_sgd(
            &mut trial,
            &prompts,
            lr,
            config,
            if single_candidate { Some(&mut progress) } else { None },
        )?;
        let dev_acc = evaluate(&trial, dev, &EvalMode::SinglePattern(pattern))?.accuracy;
        lr_search.push((lr, dev_acc));
        let better = match &best {
            None => true,
            Some((best_acc, _, _, _)) => dev_acc > *best_acc,
        };
        if better {
            best = Some((dev_acc, lr, curve, trial.prompt_vectors().clone()));
        }
    }

    let (dev_acc, selected_lr, curve, winning_prompts) = best.expect("at least one candidate");
    scorer.set_prompt_vectors(winning_prompts);
    let train_acc = evaluate(scorer, train, &EvalMode::SinglePattern(pattern))?.accuracy;
    let checksum_after = scorer.backbone_checksum();

    Ok(TrainReport {
        optimizer: "sgd",
        seed: config.seed,
        selected_lr,
        steps: config.steps,
        loss_curve: curve,
        final_train_accuracy: train_acc,
        final_dev_accuracy: dev_acc,
        backbone_checksum_before: checksum_before,
        backbone_checksum_after: checksum_after,
        lr_search,
    })
}

fn check_budget<F: Scalar>(
    scorer: &ToyScorer<F>,
    prompt: &AssembledPrompt,
    max_tokens: usize,
) -> Result<()> {
    let got = scorer.sequence_len(prompt)?;
    if got > max_tokens {
        return Err(Error::SequenceTooLong { got, max: max_tokens });
    }
    Ok(())
}

fn run_sgd<F: Scalar>(
    scorer: &mut ToyScorer<F>,
    prompts: &[(AssembledPrompt, Label)],
    lr: f64,
    config: &TrainConfig,
    mut progress: Option<&mut dyn FnMut(usize, f64)>,
) -> Result<Vec<(usize, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lr = F::from_f64_lossy(lr);
    let n = prompts.len();
    let mut curve = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        // Full dataset when the batch covers it, else a seeded draw
        // without replacement.
        let batch_indices: Vec<usize> = if config.batch_size >= n {
            (0..n).collect()
        } else {
            let mut idxs: Vec<usize> = (0..n).collect();
            for i in 0..config.batch_size {
                let j = rng.gen_range(i..n);
                idxs.swap(i, j);
            }
            idxs.truncate(config.batch_size);
            idxs
        };
        let batch: Vec<(&AssembledPrompt, Label)> = batch_indices
            .iter()
            .map(|&i| (&prompts[i].0, prompts[i].1))
            .collect();
        let (loss, grads) = scorer.batch_prompt_loss_and_grads(&batch, config.loss_form)?;
        scorer.apply_prompt_grads(&grads, lr);
        let loss = loss.to_f64().unwrap_or(f64::NAN);
        curve.push((step, loss));
        if let Some(cb) = progress.as_deref_mut() {
            cb(step, loss);
        }
    }
    Ok(curve)
}

/// Central-difference verification of the analytic prompt gradients.
/// Returns the maximum relative error over `n_coords` randomly chosen
/// prompt coordinates. Meaningful only in double precision.
pub fn gradient_check(
    scorer: &ToyScorer<f64>,
    instance: &Instance,
    pattern: Pattern,
    n_coords: usize,
    h: f64,
    seed: u64,
) -> Result<f64> {
    let gold = instance
        .label
        .ok_or_else(|| Error::Validation("gradient check needs a labeled instance".into()))?;
    let prompt = assemble(instance, pattern, scorer.layout())?;
    let (_, grads) = scorer.batch_prompt_loss_and_grads(&[(&prompt, gold)], LossForm::PerMaskCe)?;

    let coords = scorer.prompt_coordinates();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0_f64;
    for _ in 0..n_coords {
        let (slot, idx, dim) = coords[rng.gen_range(0..coords.len())];
        let analytic = grads[&(slot, idx)][dim];
        let numeric = numeric_prompt_grad(scorer, &prompt, gold, slot, idx, dim, h)?;
        max_rel = max_rel.max(relative_error(analytic, numeric));
    }
    Ok(max_rel)
}

/// Central difference of the loss in one prompt coordinate.
pub fn numeric_prompt_grad(
    scorer: &ToyScorer<f64>,
    prompt: &AssembledPrompt,
    gold: Label,
    slot: u8,
    idx: usize,
    dim: usize,
    h: f64,
) -> Result<f64> {
    let mut plus = scorer.clone();
    plus.nudge_prompt(slot, idx, dim, h);
    let mut minus = scorer.clone();
    minus.nudge_prompt(slot, idx, dim, -h);
    let lp = plus.instance_loss(prompt, gold, LossForm::PerMaskCe)?;
    let lm = minus.instance_loss(prompt, gold, LossForm::PerMaskCe)?;
    Ok((lp - lm) / (2.0 * h))
}

/// Relative error with a floor that keeps near-zero gradient pairs from
/// reading as spurious disagreement.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Accuracy of a scorer over a labeled dataset.
pub fn evaluate<F: Scalar, S: Scorer<F>>(
    scorer: &S,
    data: &Dataset,
    mode: &EvalMode,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Validation("evaluation dataset is empty".into()));
    }
    if !data.is_labeled() {
        return Err(Error::Validation("evaluation dataset must be labeled".into()));
    }
    let mut correct = 0usize;
    let mut verdicts = Vec::with_capacity(data.len());
    for inst in &data.instances {
        let result: VoteResult<F> = match mode {
            EvalMode::SinglePattern(pattern) => {
                let v = pattern_verdict(inst, scorer, *pattern, scorer.layout())?;
                majority_vote(&[v])?
            }
            EvalMode::GeneralConsistency => general_consistency(inst, scorer, scorer.layout())?,
            EvalMode::SampleAndMarginalize {
                pattern,
                n_samples,
                temperature,
                seed,
            } => sample_and_marginalize(inst, scorer, *pattern, *n_samples, *temperature, *seed)?,
        };
        if Some(result.final_label) == inst.label {
            correct += 1;
        }
        verdicts.push(VerdictLogLine::from_result(inst, &result));
    }
    Ok(EvalReport {
        mode: mode_name(mode),
        total: data.len(),
        correct,
        accuracy: correct as f64 / data.len() as f64,
        verdicts,
    })
}

fn mode_name(mode: &EvalMode) -> String {
    match mode {
        EvalMode::SinglePattern(p) => format!("pattern:{p}"),
        EvalMode::GeneralConsistency => "vote".to_string(),
        EvalMode::SampleAndMarginalize { n_samples, .. } => format!("sm:{n_samples}"),
    }
}

/// Fraction of consecutive window-mean comparisons where the loss mean
/// increased. Windows partition the curve into `window`-step chunks.
pub fn loss_window_violation_fraction(curve: &[(usize, f64)], window: usize) -> f64 {
    let means: Vec<f64> = curve
        .chunks(window)
        .filter(|c| !c.is_empty())
        .map(|c| c.iter().map(|(_, l)| *l).sum::<f64>() / c.len() as f64)
        .collect();
    if means.len() < 2 {
        return 0.0;
    }
    let violations = means.windows(2).filter(|w| w[1] > w[0]).count();
    violations as f64 / (means.len() - 1) as f64
}
