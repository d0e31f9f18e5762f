use crate::error::{DapError, Result};
use crate::model::config::{EncoderConfig, CLS_ID, MASK_ID, PAD_ID};
use crate::model::params::{BlockVars, ParamVars};
use crate::numcore::{DiffContext, Tensor, Var};

const LN_EPS: f64 = 1e-5;
const MASKED_SCORE: f64 = -1e30;

/// One encoded batch: CLS sentence embeddings plus the full final-layer
/// hidden sequence (CLS at position 0).
pub struct EncodedBatch {
    /// [B, d] sentence embeddings (row 0 of the hidden sequence).
    pub cls: Var,
    /// [B, S+1, d] final-layer hiddens including the CLS slot.
    pub hidden: Var,
    /// Real token counts per example (excluding CLS).
    pub lens: Vec<usize>,
    /// Padded token length (excluding CLS).
    pub s: usize,
}

/// Attention mask tensor: 0 where key `j` is attendable, large negative
/// where it is padding. `valid(b, j)` decides attendability.
fn build_mask(bsz: usize, t: usize, valid: impl Fn(usize, usize) -> bool) -> Tensor {
    let mut data = vec![0.0; bsz * t * t];
    for b in 0..bsz {
        for j in 0..t {
            if !valid(b, j) {
                for i in 0..t {
                    data[b * t * t + i * t + j] = MASKED_SCORE;
                }
            }
        }
    }
    Tensor::new(vec![bsz, t, t], data).unwrap()
}

/// One pre-norm transformer block: x + Attn(LN(x)), then x + FFN(LN(x)).
fn transformer_block(
    ctx: &mut DiffContext,
    x: Var,
    blk: &BlockVars,
    mask: &Tensor,
    n_heads: usize,
) -> Result<Var> {
    let shape = ctx.value(x).shape().to_vec();
    let (bsz, t, d) = (shape[0], shape[1], shape[2]);
    let dh = d / n_heads;

    let ln1 = ctx.layer_norm(x, blk.ln1_g, blk.ln1_b, LN_EPS)?;
    let flat = ctx.reshape(ln1, vec![bsz * t, d])?;
    let proj = |w: Var, b: Var, ctx: &mut DiffContext| -> Result<Var> {
        let y = ctx.matmul(flat, w)?;
        let y = ctx.add_bias(y, b)?;
        ctx.reshape(y, vec![bsz, t, d])
    };
    let q = proj(blk.wq, blk.bq, ctx)?;
    let k = proj(blk.wk, blk.bk, ctx)?;
    let v = proj(blk.wv, blk.bv, ctx)?;

    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = ctx.slice_cols(q, h * dh, dh)?;
        let kh = ctx.slice_cols(k, h * dh, dh)?;
        let vh = ctx.slice_cols(v, h * dh, dh)?;
        let kt = ctx.transpose(kh)?;
        let scores = ctx.bmm(qh, kt)?;
        let scaled = ctx.scale(scores, 1.0 / (dh as f64).sqrt());
        let masked = ctx.add_const(scaled, mask)?;
        let attn = ctx.softmax_rows(masked)?;
        heads.push(ctx.bmm(attn, vh)?);
    }
    let merged = ctx.concat_cols(&heads)?;
    let mflat = ctx.reshape(merged, vec![bsz * t, d])?;
    let out = ctx.matmul(mflat, blk.wo)?;
    let out = ctx.add_bias(out, blk.bo)?;
    let out = ctx.reshape(out, vec![bsz, t, d])?;
    let x = ctx.add(x, out)?;

    let ln2 = ctx.layer_norm(x, blk.ln2_g, blk.ln2_b, LN_EPS)?;
    let lflat = ctx.reshape(ln2, vec![bsz * t, d])?;
    let h1 = ctx.matmul(lflat, blk.ff1_w)?;
    let h1 = ctx.add_bias(h1, blk.ff1_b)?;
    let h1 = ctx.gelu(h1);
    let h2 = ctx.matmul(h1, blk.ff2_w)?;
    let h2 = ctx.add_bias(h2, blk.ff2_b)?;
    let ffn = ctx.reshape(h2, vec![bsz, t, d])?;
    ctx.add(x, ffn)
}

/// Run the shared encoder over a batch of sentences. A CLS token is
/// prepended internally; callers must pre-truncate so that
/// `len + 1 <= s_max`.
pub fn encode(
    ctx: &mut DiffContext,
    pv: &ParamVars,
    cfg: &EncoderConfig,
    ids: &[Vec<u32>],
) -> Result<EncodedBatch> {
    if ids.is_empty() {
        return Err(DapError::Contract("encode: empty batch".into()));
    }
    let bsz = ids.len();
    let s = ids.iter().map(|x| x.len()).max().unwrap();
    if s + 1 > cfg.s_max {
        return Err(DapError::Contract(format!(
            "encode: sequence length {} + CLS exceeds s_max {}; pre-truncate",
            s, cfg.s_max
        )));
    }
    let t = s + 1;
    let mut idx = Vec::with_capacity(bsz * t);
    for sent in ids {
        idx.push(CLS_ID as usize);
        for &tok in sent {
            if tok as usize >= cfg.vocab {
                return Err(DapError::Index(format!(
                    "encode: token id {} out of vocab {}",
                    tok, cfg.vocab
                )));
            }
            idx.push(tok as usize);
        }
        idx.extend(std::iter::repeat(PAD_ID as usize).take(s - sent.len()));
    }
    let emb = ctx.gather_rows(pv.token_emb, &idx)?;
    let mut x = ctx.reshape(emb, vec![bsz, t, cfg.d])?;
    let pos_idx: Vec<usize> = (0..t).collect();
    let pos = ctx.gather_rows(pv.pos_emb, &pos_idx)?;
    x = ctx.add_bcast0(x, pos)?;

    let lens: Vec<usize> = ids.iter().map(|x| x.len()).collect();
    let mask = build_mask(bsz, t, |b, j| j <= lens[b]);
    for blk in &pv.blocks {
        x = transformer_block(ctx, x, blk, &mask, cfg.n_heads)?;
    }
    let flat = ctx.reshape(x, vec![bsz * t, cfg.d])?;
    let cls_rows: Vec<usize> = (0..bsz).map(|b| b * t).collect();
    let cls = ctx.gather_rows(flat, &cls_rows)?;
    Ok(EncodedBatch {
        cls,
        hidden: x,
        lens,
        s,
    })
}

/// Vocabulary logits for a [n, d] matrix of hidden rows. Uses the tied
/// token table unless an untied head is present.
pub fn project_vocab(ctx: &mut DiffContext, pv: &ParamVars, h: Var) -> Result<Var> {
    match pv.vocab_w {
        Some(w) => ctx.matmul(h, w),
        None => {
            let wt = ctx.transpose(pv.token_emb)?;
            ctx.matmul(h, wt)
        }
    }
}

/// RTL head output: logits restricted to reconstruction positions.
pub struct RtlOutput {
    /// [n_total, V] logits, grouped per example in batch order.
    pub logits: Var,
    /// Rows of `logits` owned by each example.
    pub rows_per_example: Vec<usize>,
}

/// Reconstruct target-sentence tokens from source token representations.
///
/// `src_hidden` is [B, S_x, d] and must exclude the CLS vector. The head
/// input is the concatenation of the source hiddens and one slot per
/// target position: the MASK embedding where the position is to be
/// reconstructed, the leaked target representation elsewhere. Fresh
/// position embeddings (rows `s_max..` of the table) cover the
/// concatenated length; when `lang_ids` is given the language embedding is
/// added at every position.
#[allow(clippy::too_many_arguments)]
pub fn rtl_forward(
    ctx: &mut DiffContext,
    pv: &ParamVars,
    cfg: &EncoderConfig,
    src_hidden: Var,
    src_lens: &[usize],
    tgt_lens: &[usize],
    recon_positions: &[Vec<usize>],
    leaked_target: Option<Var>,
    lang_ids: Option<&[usize]>,
) -> Result<RtlOutput> {
    let shape = ctx.value(src_hidden).shape().to_vec();
    let (bsz, s_x, d) = (shape[0], shape[1], shape[2]);
    if src_lens.len() != bsz || tgt_lens.len() != bsz || recon_positions.len() != bsz {
        return Err(DapError::Shape("rtl_forward: per-example metadata length".into()));
    }
    let s_y = *tgt_lens.iter().max().unwrap();
    let t = s_x + s_y;
    if t > cfg.s_max {
        return Err(DapError::Contract(format!(
            "rtl_forward: concatenated length {} exceeds s_max {}",
            t, cfg.s_max
        )));
    }
    for (b, rp) in recon_positions.iter().enumerate() {
        if rp.is_empty() {
            return Err(DapError::Contract(format!(
                "rtl_forward: example {b} has no reconstruction positions"
            )));
        }
        if rp.iter().any(|&p| p >= tgt_lens[b]) {
            return Err(DapError::Contract(format!(
                "rtl_forward: reconstruction position out of range in example {b}"
            )));
        }
        if leaked_target.is_none() && rp.len() < tgt_lens[b] {
            return Err(DapError::Contract(format!(
                "rtl_forward: example {b} keeps target positions visible but no \
                 leaked target representations were provided"
            )));
        }
    }

    // slot matrix: MASK embedding at reconstruction positions (and padding),
    // leaked target hiddens elsewhere
    let mask_rows = ctx.gather_rows(pv.token_emb, &vec![MASK_ID as usize; bsz * s_y])?;
    let mask_rows = ctx.reshape(mask_rows, vec![bsz, s_y, d])?;
    let slots = match leaked_target {
        None => mask_rows,
        Some(leaked) => {
            if ctx.value(leaked).shape() != [bsz, s_y, d] {
                return Err(DapError::Shape(format!(
                    "rtl_forward: leaked target shape {:?}, expected {:?}",
                    ctx.value(leaked).shape(),
                    [bsz, s_y, d]
                )));
            }
            let mut sel = vec![0.0; bsz * s_y * d];
            for b in 0..bsz {
                for p in 0..s_y {
                    let use_mask = p >= tgt_lens[b] || recon_positions[b].contains(&p);
                    if use_mask {
                        let off = (b * s_y + p) * d;
                        sel[off..off + d].iter_mut().for_each(|v| *v = 1.0);
                    }
                }
            }
            let sel_t = Tensor::new(vec![bsz, s_y, d], sel.clone())?;
            let inv = Tensor::new(
                vec![bsz, s_y, d],
                sel.iter().map(|v| 1.0 - v).collect::<Vec<f64>>(),
            )?;
            let a = ctx.mul_const(mask_rows, &sel_t)?;
            let b = ctx.mul_const(leaked, &inv)?;
            ctx.add(a, b)?
        }
    };

    let mut x = ctx.concat_axis1(src_hidden, slots)?;
    let pos_idx: Vec<usize> = (0..t).map(|p| cfg.s_max + p).collect();
    let pos = ctx.gather_rows(pv.pos_emb, &pos_idx)?;
    x = ctx.add_bcast0(x, pos)?;
    if let Some(langs) = lang_ids {
        if langs.len() != bsz {
            return Err(DapError::Shape("rtl_forward: lang_ids length".into()));
        }
        if let Some(&bad) = langs.iter().find(|&&l| l >= cfg.n_langs) {
            return Err(DapError::Index(format!(
                "rtl_forward: language id {bad} out of range 0..{}",
                cfg.n_langs
            )));
        }
        let mut lidx = Vec::with_capacity(bsz * t);
        for &l in langs {
            lidx.extend(std::iter::repeat(l).take(t));
        }
        let lemb = ctx.gather_rows(pv.lang_emb, &lidx)?;
        let lemb = ctx.reshape(lemb, vec![bsz, t, d])?;
        let flat_x = ctx.reshape(x, vec![bsz * t, d])?;
        let flat_l = ctx.reshape(lemb, vec![bsz * t, d])?;
        let summed = ctx.add(flat_x, flat_l)?;
        x = ctx.reshape(summed, vec![bsz, t, d])?;
    }

    let mask = build_mask(bsz, t, |b, j| {
        if j < s_x {
            j < src_lens[b]
        } else {
            j - s_x < tgt_lens[b]
        }
    });
    for blk in &pv.rtl_blocks {
        x = transformer_block(ctx, x, blk, &mask, cfg.n_heads)?;
    }
    let flat = ctx.reshape(x, vec![bsz * t, d])?;
    let mut rows = Vec::new();
    let mut rows_per_example = Vec::with_capacity(bsz);
    for (b, rp) in recon_positions.iter().enumerate() {
        for &p in rp {
            rows.push(b * t + s_x + p);
        }
        rows_per_example.push(rp.len());
    }
    let picked = ctx.gather_rows(flat, &rows)?;
    let logits = project_vocab(ctx, pv, picked)?;
    Ok(RtlOutput {
        logits,
        rows_per_example,
    })
}

/// TLM forward: one encoder pass over pre-masked concatenated pairs,
/// vocabulary logits at the masked positions only. Positions index the
/// concatenation (CLS excluded, as produced by the corpus masker).
pub fn tlm_forward(
    ctx: &mut DiffContext,
    pv: &ParamVars,
    cfg: &EncoderConfig,
    concat_masked_ids: &[Vec<u32>],
    masked_positions: &[Vec<usize>],
) -> Result<(Var, Vec<usize>)> {
    if masked_positions.iter().all(|m| m.is_empty()) {
        return Err(DapError::Contract(
            "tlm_forward: no masked positions in batch".into(),
        ));
    }
    for (b, (ids, pos)) in concat_masked_ids.iter().zip(masked_positions).enumerate() {
        if pos.iter().any(|&p| p >= ids.len()) {
            return Err(DapError::Contract(format!(
                "tlm_forward: masked position out of range in example {b}"
            )));
        }
    }
    let enc = encode(ctx, pv, cfg, concat_masked_ids)?;
    let t = enc.s + 1;
    let d = cfg.d;
    let flat = ctx.reshape(enc.hidden, vec![concat_masked_ids.len() * t, d])?;
    let mut rows = Vec::new();
    let mut rows_per_example = Vec::new();
    for (b, pos) in masked_positions.iter().enumerate() {
        for &p in pos {
            rows.push(b * t + 1 + p); // +1 skips CLS
        }
        rows_per_example.push(pos.len());
    }
    let picked = ctx.gather_rows(flat, &rows)?;
    let logits = project_vocab(ctx, pv, picked)?;
    Ok((logits, rows_per_example))
}
