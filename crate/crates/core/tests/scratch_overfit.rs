use abduct_core::synthetic::generate_synthetic;
use abduct_core::template::{Pattern, PromptLayout};
use abduct_core::toy::pretrain_toy_backbone;
use abduct_core::trainer::{evaluate, train_prompts, EvalMode, TrainConfig};
use abduct_core::verbalizer::LossForm;

#[test]
fn scratch_overfit() {
    let corpus = generate_synthetic(60, 11).unwrap();
    let eight = generate_synthetic(8, 42).unwrap();
    let layout = PromptLayout::toy();
    let (scorer0, _) = pretrain_toy_backbone::<f64>(&corpus, 800, 3, &layout).unwrap();

    for lr in [0.05, 0.2, 0.5, 1.0, 2.0] {
        let mut scorer = scorer0.clone();
        let config = TrainConfig {
            learning_rate: lr, steps: 500, batch_size: 8,
            max_sequence_tokens: 350, seed: 1, loss_form: LossForm::PerMaskCe,
            lr_candidates: vec![lr],
        };
        let report = train_prompts(&mut scorer, &eight, &eight, Pattern::HO1O2, &config, |_,_|{}).unwrap();
        let first = report.loss_curve[0].1;
        let mid = report.loss_curve[250].1;
        let last = report.loss_curve.last().unwrap().1;
        let acc = evaluate(&scorer, &eight, &EvalMode::SinglePattern(Pattern::HO1O2)).unwrap().accuracy;
        println!("lr={lr}: loss {first:.4} -> {mid:.4} -> {last:.4}, train_acc={acc}");
    }
}
