//! Finite-difference gradient check of the full training objective on a
//! tiny model: every parameter tensor, every coordinate.

use dapkit::corpus::{generate_corpus, make_batches, LanguageSpec};
use dapkit::model::{init_params, EncoderConfig, ParamVars};
use dapkit::numcore::{grad_check, DiffContext, Var};
use dapkit::objectives::{build_loss, Objective, TrainConfig};

fn main() -> dapkit::error::Result<()> {
    let spec = LanguageSpec {
        n_langs: 3,
        n_concepts: 7,
        len_min: 3,
        len_max: 5,
        seed: 3,
        ..LanguageSpec::default()
    };
    let pairs = generate_corpus(&spec, 2, 3)?;
    let mcfg = EncoderConfig {
        layers: 1,
        d: 8,
        n_heads: 2,
        d_ff: 16,
        vocab: spec.vocab_size(),
        s_max: 12,
        rtl_layers: 1,
        n_langs: spec.n_langs,
        ..EncoderConfig::default()
    };
    let params = init_params(&mcfg)?;
    let tcfg = TrainConfig {
        objective: Objective::Dap,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let batch = make_batches(&pairs, 2, mcfg.s_max, 0, false)?.remove(0);

    let f = |ctx: &mut DiffContext, vars: &[Var]| {
        let pv = ParamVars::from_ordered(&mcfg, vars)?;
        build_loss(ctx, &pv, &mcfg, &batch, &tcfg, 0).map(|(total, _)| total)
    };
    let tensors = params.tensor_list();
    let n: usize = tensors.iter().map(|t| t.len()).sum();
    println!("checking {} coordinates across {} tensors...", n, tensors.len());
    let worst = grad_check(&f, &tensors, 1e-4)?;
    println!("worst relative error: {worst:.3e}");
    assert!(worst < 1e-3, "gradient mismatch");
    println!("analytic gradients agree with finite differences");
    Ok(())
}
