use super::config::{Objective, TrainConfig};
use super::losses::{
    apply_direction_mode, rtl_group_loss, select_reconstruction_positions, tlm_loss, tr_loss,
    DirectionGroup,
};
use super::optim::AdamW;
use crate::corpus::{mask_for_tlm, ParallelBatch};
use crate::error::{DapError, Result};
use crate::model::{
    derive_rng, encode, rtl_forward, tlm_forward, EncodedBatch, EncoderConfig, ModelParams,
};
use crate::numcore::{DiffContext, Var};

/// Stream tags for per-step RNG derivation, so reconstruction sampling
/// and masking never share draws.
const STREAM_RTL: u64 = 0x52544c;
const STREAM_TLM: u64 = 0x544c4d;

#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub tr: f64,
    pub rtl: Option<f64>,
    pub tlm: Option<f64>,
    /// Value of the optimized objective; equals the sum of the parts.
    pub total: f64,
}

/// Rows of `enc.hidden` for a group of examples, CLS excluded, clipped to
/// the group's longest sentence: [len(group), s_g, d].
fn group_hidden(
    ctx: &mut DiffContext,
    enc: &EncodedBatch,
    indices: &[usize],
    s_g: usize,
    d: usize,
) -> Result<Var> {
    let t = enc.s + 1;
    let total = enc.lens.len() * t;
    let mut rows = Vec::with_capacity(indices.len() * s_g);
    for &b in indices {
        for p in 0..s_g {
            rows.push(b * t + 1 + p);
        }
    }
    let flat = ctx.reshape(enc.hidden, vec![total, d])?;
    let g = ctx.gather_rows(flat, &rows)?;
    ctx.reshape(g, vec![indices.len(), s_g, d])
}

/// Compose the reconstruction loss for every direction group and add it
/// to the tape. Returns the summed loss variable.
#[allow(clippy::too_many_arguments)]
fn rtl_term(
    ctx: &mut DiffContext,
    pv: &crate::model::ParamVars,
    config: &EncoderConfig,
    batch: &ParallelBatch,
    enc_src: &EncodedBatch,
    enc_piv: &EncodedBatch,
    cfg: &TrainConfig,
    step: usize,
) -> Result<Var> {
    let b_total = batch.len();
    let groups = apply_direction_mode(b_total, cfg.direction);

    // Sample positions in batch order so draws do not depend on grouping.
    let mut rng = derive_rng(cfg.seed ^ STREAM_RTL, step as u64);
    let group_of: Vec<&DirectionGroup> = {
        let mut owner: Vec<Option<&DirectionGroup>> = vec![None; b_total];
        for g in &groups {
            for &i in &g.indices {
                owner[i] = Some(g);
            }
        }
        owner.into_iter().map(|g| g.unwrap()).collect()
    };
    let mut recon: Vec<Vec<usize>> = Vec::with_capacity(b_total);
    for b in 0..b_total {
        let tgt_len = if group_of[b].src_is_pivot {
            batch.src[b].len()
        } else {
            batch.pivot[b].len()
        };
        recon.push(select_reconstruction_positions(tgt_len, cfg.rho, &mut rng)?);
    }

    let d = config.d;
    let mut loss: Option<Var> = None;
    for g in &groups {
        let (enc_from, enc_to) = if g.src_is_pivot {
            (enc_piv, enc_src)
        } else {
            (enc_src, enc_piv)
        };
        let tgt_side: &[Vec<u32>] = if g.src_is_pivot { &batch.src } else { &batch.pivot };
        let src_lens: Vec<usize> = g.indices.iter().map(|&b| enc_from.lens[b]).collect();
        let tgt_lens: Vec<usize> = g.indices.iter().map(|&b| tgt_side[b].len()).collect();
        let s_x = *src_lens.iter().max().unwrap();
        let s_y = *tgt_lens.iter().max().unwrap();

        let src_hidden = group_hidden(ctx, enc_from, &g.indices, s_x, d)?;
        // rho = 1 reconstructs everything, so the target encoder pass
        // stays out of the loss graph entirely
        let leaked = if cfg.rho < 1.0 {
            Some(group_hidden(ctx, enc_to, &g.indices, s_y, d)?)
        } else {
            None
        };
        let positions: Vec<Vec<usize>> = g.indices.iter().map(|&b| recon[b].clone()).collect();
        let lang_ids: Option<Vec<usize>> = g.use_lang_emb.then(|| {
            g.indices
                .iter()
                .map(|&b| g.target_lang(&batch.lang_ids, b))
                .collect()
        });
        let out = rtl_forward(
            ctx,
            pv,
            config,
            src_hidden,
            &src_lens,
            &tgt_lens,
            &positions,
            leaked,
            lang_ids.as_deref(),
        )?;
        let mut targets = Vec::new();
        for (&b, pos) in g.indices.iter().zip(&positions) {
            for &p in pos {
                targets.push(tgt_side[b][p] as usize);
            }
        }
        let term = rtl_group_loss(ctx, &out, &targets, b_total)?;
        loss = Some(match loss {
            None => term,
            Some(acc) => ctx.add(acc, term)?,
        });
    }
    Ok(loss.expect("direction groups are never empty"))
}

struct Forward {
    ctx: DiffContext,
    ordered: Vec<Var>,
    total: Var,
    breakdown: LossBreakdown,
}

/// Build the full objective graph on an existing tape given already
/// registered parameter Vars. Exposed so callers (gradient checks in
/// particular) can differentiate the loss with respect to leaves they
/// created themselves.
pub fn build_loss(
    ctx: &mut DiffContext,
    pv: &crate::model::ParamVars,
    config: &EncoderConfig,
    batch: &ParallelBatch,
    cfg: &TrainConfig,
    step: usize,
) -> Result<(Var, LossBreakdown)> {
    let enc_src = encode(ctx, pv, config, &batch.src)?;
    let enc_piv = encode(ctx, pv, config, &batch.pivot)?;

    let tr = tr_loss(ctx, enc_src.cls, enc_piv.cls, cfg)?;
    let mut breakdown = LossBreakdown {
        tr: ctx.value(tr).item()?,
        rtl: None,
        tlm: None,
        total: 0.0,
    };
    let total = match cfg.objective {
        Objective::Tr => tr,
        Objective::Dap => {
            let rtl = rtl_term(ctx, pv, config, batch, &enc_src, &enc_piv, cfg, step)?;
            breakdown.rtl = Some(ctx.value(rtl).item()?);
            ctx.add(tr, rtl)?
        }
        Objective::TrTlm => {
            let mut rng = derive_rng(cfg.seed ^ STREAM_TLM, step as u64);
            let masked = mask_for_tlm(batch, cfg.tlm_mask_prob, config.vocab, &mut rng)?;
            let (logits, _) = tlm_forward(
                ctx,
                pv,
                config,
                &masked.concat_ids,
                &masked.masked_positions,
            )?;
            let originals: Vec<usize> = masked
                .original_ids
                .iter()
                .flatten()
                .map(|&t| t as usize)
                .collect();
            let tlm = tlm_loss(ctx, logits, &originals)?;
            breakdown.tlm = Some(ctx.value(tlm).item()?);
            ctx.add(tr, tlm)?
        }
    };
    breakdown.total = ctx.value(total).item()?;
    Ok((total, breakdown))
}

fn forward(params: &ModelParams, batch: &ParallelBatch, cfg: &TrainConfig, step: usize) -> Result<Forward> {
    let mut ctx = DiffContext::new();
    let (pv, ordered) = params.register(&mut ctx);
    let (total, breakdown) = build_loss(&mut ctx, &pv, &params.config, batch, cfg, step)?;
    if !breakdown.total.is_finite() {
        return Err(DapError::Diverged {
            step,
            msg: format!("objective value {}", breakdown.total),
        });
    }
    Ok(Forward {
        ctx,
        ordered,
        total,
        breakdown,
    })
}

/// Objective values without touching parameters (used for step-0 logging
/// and post-hoc inspection).
pub fn compute_losses(
    params: &ModelParams,
    batch: &ParallelBatch,
    cfg: &TrainConfig,
    step: usize,
) -> Result<LossBreakdown> {
    Ok(forward(params, batch, cfg, step)?.breakdown)
}

/// Run one optimization step: forward, objective, backward, AdamW update.
/// A non-finite objective aborts before any parameter is touched.
pub fn dap_step(
    params: &mut ModelParams,
    opt: &mut AdamW,
    batch: &ParallelBatch,
    cfg: &TrainConfig,
    step: usize,
) -> Result<LossBreakdown> {
    let fwd = forward(params, batch, cfg, step)?;
    let grads = fwd.ctx.backward(fwd.total)?;
    let aligned: Vec<Option<crate::numcore::Tensor>> =
        fwd.ordered.iter().map(|&v| grads.get(v).cloned()).collect();
    opt.step(params, &aligned, cfg.lr_at(step))?;
    Ok(fwd.breakdown)
}
