use abduct_core::synthetic::generate_synthetic;
use abduct_core::template::{Pattern, PromptLayout};
use abduct_core::toy::pretrain_toy_backbone;
use abduct_core::trainer::{evaluate, train_prompts, EvalMode, TrainConfig};
use abduct_core::verbalizer::LossForm;

#[test]
fn scratch_overfit2() {
    let corpus = generate_synthetic(60, 11).unwrap();
    let eight = generate_synthetic(8, 42).unwrap();
    let layout = PromptLayout::toy();
    let (scorer0, _) = pretrain_toy_backbone::<f64>(&corpus, 800, 3, &layout).unwrap();

    for lr in [2.0, 4.0, 8.0] {
        let mut scorer = scorer0.clone();
        let config = TrainConfig {
            learning_rate: lr, steps: 3000, batch_size: 8,
            max_sequence_tokens: 350, seed: 1, loss_form: LossForm::PerMaskCe,
            lr_candidates: vec![lr],
        };
        let report = train_prompts(&mut scorer, &eight, &eight, Pattern::HO1O2, &config, |_,_|{}).unwrap();
        let c = &report.loss_curve;
        println!("lr={lr}: loss {:.4} -> {:.4} -> {:.4} -> {:.4}, train_acc={}",
            c[0].1, c[1000].1, c[2000].1, c.last().unwrap().1, report.final_train_accuracy);
    }
}
