use super::config::{DirectionMode, TrainConfig};
use crate::error::{DapError, Result};
use crate::model::RtlOutput;
use crate::numcore::{DiffContext, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// In-batch-negatives translation ranking loss. Rows of `cls_x` must pair
/// with the same rows of `cls_y`; every other row is a negative. Raw dot
/// products by default; `cosine`/`temperature`/`bidirectional` come from
/// the config.
pub fn tr_loss(ctx: &mut DiffContext, cls_x: Var, cls_y: Var, cfg: &TrainConfig) -> Result<Var> {
    let (sx, sy) = (ctx.value(cls_x).shape().to_vec(), ctx.value(cls_y).shape().to_vec());
    if sx.len() != 2 || sx != sy {
        return Err(DapError::Shape(format!(
            "tr_loss: expected matching [B, d] inputs, got {sx:?} and {sy:?}"
        )));
    }
    let b = sx[0];
    let (x, y) = if cfg.cosine {
        (ctx.normalize_rows(cls_x)?, ctx.normalize_rows(cls_y)?)
    } else {
        (cls_x, cls_y)
    };
    let yt = ctx.transpose(y)?;
    let mut scores = ctx.matmul(x, yt)?;
    if cfg.temperature != 1.0 {
        scores = ctx.scale(scores, 1.0 / cfg.temperature);
    }
    let diag: Vec<usize> = (0..b).collect();
    let fwd = ctx.cross_entropy(scores, &diag)?;
    if !cfg.bidirectional {
        return Ok(fwd);
    }
    let st = ctx.transpose(scores)?;
    let bwd = ctx.cross_entropy(st, &diag)?;
    let sum = ctx.add(fwd, bwd)?;
    Ok(ctx.scale(sum, 0.5))
}

/// Reconstruction loss for one direction group: per-example mean over that
/// example's reconstruction positions, then averaged over the full batch.
/// `total_examples` is the batch size B, so partial groups contribute
/// their share of the batch-level mean and group losses add up exactly.
pub fn rtl_group_loss(
    ctx: &mut DiffContext,
    out: &RtlOutput,
    targets: &[usize],
    total_examples: usize,
) -> Result<Var> {
    let n: usize = out.rows_per_example.iter().sum();
    if targets.len() != n {
        return Err(DapError::Shape(format!(
            "rtl_group_loss: {} logit rows but {} targets",
            n,
            targets.len()
        )));
    }
    let mut weights = Vec::with_capacity(n);
    for &rows in &out.rows_per_example {
        let w = 1.0 / (total_examples as f64 * rows as f64);
        weights.extend(std::iter::repeat(w).take(rows));
    }
    ctx.cross_entropy_weighted(out.logits, targets, &weights)
}

/// Masked-prediction loss: mean negative log likelihood over every masked
/// position in the batch.
pub fn tlm_loss(ctx: &mut DiffContext, logits: Var, original_ids: &[usize]) -> Result<Var> {
    ctx.cross_entropy(logits, original_ids)
}

/// Draw the set of target positions to reconstruct: each position
/// independently with probability `rho`; if none is drawn, one uniform
/// position is forced so every pair always contributes.
pub fn select_reconstruction_positions(
    len: usize,
    rho: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(DapError::Config(format!("rho must be in [0, 1], got {rho}")));
    }
    if len == 0 {
        return Err(DapError::Contract("cannot reconstruct an empty sentence".into()));
    }
    if rho >= 1.0 {
        return Ok((0..len).collect());
    }
    let mut picked: Vec<usize> = (0..len).filter(|_| rng.gen_bool(rho)).collect();
    if picked.is_empty() {
        picked.push(rng.gen_range(0..len));
    }
    Ok(picked)
}

/// One reconstruction direction applied to a subset of the batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectionGroup {
    /// Batch indices covered by this group, in batch order.
    pub indices: Vec<usize>,
    /// When set the pivot side is the reconstruction source.
    pub src_is_pivot: bool,
    /// Whether the head receives a target-language embedding.
    pub use_lang_emb: bool,
}

impl DirectionGroup {
    /// Target language id for example `b` under this group's direction.
    pub fn target_lang(&self, lang_ids: &[usize], b: usize) -> usize {
        if self.src_is_pivot {
            lang_ids[b]
        } else {
            0
        }
    }
}

/// Partition a batch into direction groups. Reconstructing the pivot
/// needs no language hint (there is only one pivot); reconstructing a
/// non-pivot side always gets one. Mixed batches mark the language on
/// both halves so the head sees a consistent input signature.
pub fn apply_direction_mode(batch_len: usize, mode: DirectionMode) -> Vec<DirectionGroup> {
    let all: Vec<usize> = (0..batch_len).collect();
    match mode {
        DirectionMode::XxToEn => vec![DirectionGroup {
            indices: all,
            src_is_pivot: false,
            use_lang_emb: false,
        }],
        DirectionMode::EnToXx => vec![DirectionGroup {
            indices: all,
            src_is_pivot: true,
            use_lang_emb: true,
        }],
        DirectionMode::Both => {
            let split = batch_len.div_ceil(2);
            let mut groups = vec![DirectionGroup {
                indices: all[..split].to_vec(),
                src_is_pivot: false,
                use_lang_emb: true,
            }];
            if split < batch_len {
                groups.push(DirectionGroup {
                    indices: all[split..].to_vec(),
                    src_is_pivot: true,
                    use_lang_emb: true,
                });
            }
            groups
        }
    }
}
