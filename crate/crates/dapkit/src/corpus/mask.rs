use super::ParallelBatch;
use crate::error::{DapError, Result};
use crate::model::{MASK_ID, N_SPECIALS};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A batch prepared for masked translation-pair prediction. Each example
/// is the concatenation src + pivot with a subset of positions corrupted.
#[derive(Clone, Debug)]
pub struct TlmMasked {
    /// Corrupted concatenated ids, one row per pair.
    pub concat_ids: Vec<Vec<u32>>,
    /// Positions (into the concatenation) selected for prediction.
    pub masked_positions: Vec<Vec<usize>>,
    /// Original ids at the masked positions, aligned with `masked_positions`.
    pub original_ids: Vec<Vec<u32>>,
}

/// BERT-style corruption over the concatenated pair: each position is
/// selected with probability `p_mask`; a selected position becomes MASK
/// with prob 0.8, a random non-special token with prob 0.1, and stays
/// unchanged with prob 0.1. At least one position per example is always
/// selected (forced uniformly if the Bernoulli draws select none).
pub fn mask_for_tlm(
    batch: &ParallelBatch,
    p_mask: f64,
    vocab: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TlmMasked> {
    if !(p_mask > 0.0 && p_mask <= 1.0) {
        return Err(DapError::Config(format!(
            "mask probability must be in (0, 1], got {p_mask}"
        )));
    }
    if vocab <= N_SPECIALS {
        return Err(DapError::Config("vocab has no non-special tokens".into()));
    }
    let mut out = TlmMasked {
        concat_ids: Vec::with_capacity(batch.len()),
        masked_positions: Vec::with_capacity(batch.len()),
        original_ids: Vec::with_capacity(batch.len()),
    };
    for b in 0..batch.len() {
        let mut ids: Vec<u32> = batch.src[b].iter().chain(&batch.pivot[b]).copied().collect();
        let mut selected: Vec<usize> = (0..ids.len()).filter(|_| rng.gen_bool(p_mask)).collect();
        if selected.is_empty() {
            selected.push(rng.gen_range(0..ids.len()));
        }
        let mut orig = Vec::with_capacity(selected.len());
        for &p in &selected {
            orig.push(ids[p]);
            let u: f64 = rng.gen();
            if u < 0.8 {
                ids[p] = MASK_ID;
            } else if u < 0.9 {
                ids[p] = rng.gen_range(N_SPECIALS as u32..vocab as u32);
            }
        }
        out.concat_ids.push(ids);
        out.masked_positions.push(selected);
        out.original_ids.push(orig);
    }
    Ok(out)
}
