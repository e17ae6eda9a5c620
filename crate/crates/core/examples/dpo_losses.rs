//! Language and vision-contrastive preference losses with their gradients,
//! and the line-delimited batch interface.
//!
//! cargo run --example dpo_losses

use prefalign::dpo::{
    dpo_loss, focus_loss, reject_loss, run_batch, total_loss, vision_contrastive_loss, ContrastLogProbs,
    LossConfig, PairLogProbs,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = LossConfig::default();
    let pair = PairLogProbs {
        policy_chosen: -42.0,
        ref_chosen: -45.0,
        policy_rejected: -60.0,
        ref_rejected: -58.0,
    };
    let dpo = dpo_loss(&pair, cfg.beta)?;
    let total = total_loss(&dpo, -pair.policy_chosen, cfg.gamma)?;
    println!("dpo   {:.6}  grads {:?}", dpo.value, dpo.grads);
    println!("total {:.6}  (with the chosen-response nll)", total.value);

    let views = ContrastLogProbs {
        policy_cond: -30.0,
        ref_cond: -31.0,
        policy_uncond: -36.0,
        ref_uncond: -35.5,
        policy_contra: Some(-40.0),
        ref_contra: Some(-38.0),
    };
    let focus = focus_loss(&views, cfg.beta1)?;
    let reject = reject_loss(&views, cfg.beta2)?;
    let both = vision_contrastive_loss(&views, cfg.beta1, cfg.beta2)?;
    println!("focus {:.6}  reject {:.6}  sum {:.6}", focus.value, reject.value, both.value);

    let batch = r#"{"pair_id":"a","kind":"pair","policy_chosen":-3,"ref_chosen":-3,"policy_rejected":-5,"ref_rejected":-5}
{"pair_id":"b","kind":"contrast","policy_cond":-2,"ref_cond":-2,"policy_uncond":-2,"ref_uncond":-2,"policy_contra":-2,"ref_contra":-2}"#;
    let mut out = Vec::new();
    run_batch(batch.as_bytes(), &mut out, &cfg)?;
    print!("{}", String::from_utf8(out)?);
    Ok(())
}
