//! Synthetic multilingual parallel corpora with known gold token
//! alignments, plus batching and TLM masking.
//!
//! Every concept has one token per language; per-language token ranges are
//! disjoint, so a model can never shortcut cross-lingual alignment through
//! shared surface forms. Non-pivot renderings apply a deterministic
//! adjacent-swap reordering, which keeps the gold alignment exactly
//! computable while breaking positional identity.

mod gen;
mod io;
mod mask;

pub use gen::{generate_corpus, LanguageSpec, ParallelPair};
pub use io::{read_corpus, write_corpus, CORPUS_HEADER};
pub use mask::{mask_for_tlm, TlmMasked};

use crate::error::{DapError, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A batch of bitext pairs. Sentences are stored unpadded; `padded` views
/// materialize PAD-filled matrices with their masks.
#[derive(Clone, Debug)]
pub struct ParallelBatch {
    pub lang_ids: Vec<usize>,
    pub src: Vec<Vec<u32>>,
    pub pivot: Vec<Vec<u32>>,
    /// Gold alignment per pair: source position -> pivot position.
    pub alignments: Vec<Vec<usize>>,
}

impl ParallelBatch {
    pub fn len(&self) -> usize {
        self.lang_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lang_ids.is_empty()
    }

    /// PAD-filled id matrix plus boolean mask (true = real token).
    pub fn padded(sentences: &[Vec<u32>]) -> (Vec<Vec<u32>>, Vec<Vec<bool>>) {
        let s = sentences.iter().map(|x| x.len()).max().unwrap_or(0);
        let ids = sentences
            .iter()
            .map(|sent| {
                let mut row = sent.clone();
                row.resize(s, crate::model::PAD_ID);
                row
            })
            .collect();
        let mask = sentences
            .iter()
            .map(|sent| (0..s).map(|i| i < sent.len()).collect())
            .collect();
        (ids, mask)
    }
}

/// Shuffle pairs by seed and split them into full batches of `b`. The
/// final short batch is dropped when `drop_last` is set (in-batch
/// negatives need a full batch).
pub fn make_batches(
    pairs: &[ParallelPair],
    b: usize,
    s_max: usize,
    shuffle_seed: u64,
    drop_last: bool,
) -> Result<Vec<ParallelBatch>> {
    if b == 0 {
        return Err(DapError::Contract("make_batches: batch size 0".into()));
    }
    for (i, p) in pairs.iter().enumerate() {
        if p.src.len() + 1 > s_max || p.pivot.len() + 1 > s_max {
            return Err(DapError::Data(format!(
                "pair {i}: sentence does not fit in s_max {s_max} with CLS"
            )));
        }
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    order.shuffle(&mut rng);
    let mut out = Vec::new();
    for chunk in order.chunks(b) {
        if chunk.len() < b && drop_last {
            break;
        }
        let mut batch = ParallelBatch {
            lang_ids: Vec::with_capacity(chunk.len()),
            src: Vec::with_capacity(chunk.len()),
            pivot: Vec::with_capacity(chunk.len()),
            alignments: Vec::with_capacity(chunk.len()),
        };
        for &i in chunk {
            batch.lang_ids.push(pairs[i].lang_id);
            batch.src.push(pairs[i].src.clone());
            batch.pivot.push(pairs[i].pivot.clone());
            batch.alignments.push(pairs[i].alignment.clone());
        }
        out.push(batch);
    }
    Ok(out)
}
