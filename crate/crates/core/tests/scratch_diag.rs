use abduct_core::corpus::Label;
use abduct_core::scorer::Scorer;
use abduct_core::synthetic::generate_synthetic;
use abduct_core::template::{assemble, Pattern, PromptLayout};
use abduct_core::toy::pretrain_toy_backbone;

#[test]
fn scratch_signal_diagnostic() {
    let corpus = generate_synthetic(200, 11).unwrap();
    let layout = PromptLayout::toy();
    let (scorer, _) = pretrain_toy_backbone::<f64>(&corpus, 1500, 3, &layout).unwrap();

    // Correlation between per-mask log-odds and gold label.
    let mut deltas: Vec<[f64; 3]> = Vec::new();
    let mut golds: Vec<f64> = Vec::new();
    for inst in &corpus.instances[..100] {
        let prompt = assemble(inst, Pattern::HO1O2, &layout).unwrap();
        let dists = scorer.score_masks(&prompt).unwrap();
        let d1 = dists[0].probability("plausible").unwrap().ln()
            - dists[0].probability("not plausible").unwrap().ln();
        let d2 = dists[1].probability("plausible").unwrap().ln()
            - dists[1].probability("not plausible").unwrap().ln();
        let d3 = dists[2].probability("choice1").unwrap().ln()
            - dists[2].probability("choice2").unwrap().ln();
        deltas.push([d1, d2, d3]);
        golds.push(if inst.label == Some(Label::H1) { 1.0 } else { -1.0 });
    }
    for k in 0..3 {
        let xs: Vec<f64> = deltas.iter().map(|d| d[k]).collect();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = golds.iter().sum::<f64>() / golds.len() as f64;
        let cov: f64 = xs.iter().zip(&golds).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = golds.iter().map(|y| (y - my).powi(2)).sum();
        let corr = cov / (vx.sqrt() * vy.sqrt() + 1e-12);
        let std = (vx / xs.len() as f64).sqrt();
        println!("mask{}: log-odds mean={:.4} std={:.4} corr_with_gold={:.4}", k + 1, mx, std, corr);
    }
}
