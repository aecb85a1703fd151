use abduct_core::synthetic::generate_synthetic;
use abduct_core::template::{assemble, Pattern, PromptLayout};
use abduct_core::toy::pretrain_toy_backbone;
use abduct_core::verbalizer::LossForm;

#[test]
fn scratch_grad_norms() {
    let corpus = generate_synthetic(60, 11).unwrap();
    let layout = PromptLayout::toy();
    let (scorer, _) = pretrain_toy_backbone::<f64>(&corpus, 800, 3, &layout).unwrap();
    let inst = &corpus.instances[0];
    let prompt = assemble(inst, Pattern::HO1O2, &layout).unwrap();
    let (loss, grads) = scorer
        .batch_prompt_loss_and_grads(&[(&prompt, inst.label.unwrap())], LossForm::PerMaskCe)
        .unwrap();
    let mut total = 0.0f64;
    let mut max = 0.0f64;
    for g in grads.values() {
        for x in g {
            total += x * x;
            max = max.max(x.abs());
        }
    }
    println!("loss={loss:.4} grad_l2={:.6} grad_max={max:.6} coords={}", total.sqrt(), grads.len() * 32);
}
