use crate::error::Result;
use crate::model::{encode, ModelParams};
use crate::numcore::DiffContext;

/// Sentence embeddings (CLS vectors) for a frozen model. Sentences are
/// encoded in fixed-size chunks so memory stays bounded and the chunking
/// itself is deterministic.
pub fn embed_sentences(
    params: &ModelParams,
    sentences: &[Vec<u32>],
    chunk: usize,
) -> Result<Vec<Vec<f64>>> {
    let chunk = chunk.max(1);
    let d = params.config.d;
    let mut out = Vec::with_capacity(sentences.len());
    for group in sentences.chunks(chunk) {
        let mut ctx = DiffContext::new();
        let (pv, _) = params.register(&mut ctx);
        let enc = encode(&mut ctx, &pv, &params.config, group)?;
        let cls = ctx.value(enc.cls);
        for b in 0..group.len() {
            out.push(cls.data()[b * d..(b + 1) * d].to_vec());
        }
    }
    Ok(out)
}

/// Final-layer token representations (CLS excluded) for a batch of
/// sentences: one [len_i][d] matrix per sentence.
pub fn token_hiddens(params: &ModelParams, sentences: &[Vec<u32>]) -> Result<Vec<Vec<Vec<f64>>>> {
    let d = params.config.d;
    let mut out = Vec::with_capacity(sentences.len());
    for group in sentences.chunks(16) {
        let mut ctx = DiffContext::new();
        let (pv, _) = params.register(&mut ctx);
        let enc = encode(&mut ctx, &pv, &params.config, group)?;
        let hidden = ctx.value(enc.hidden);
        let t = enc.s + 1;
        for (b, sent) in group.iter().enumerate() {
            let mut rows = Vec::with_capacity(sent.len());
            for p in 0..sent.len() {
                let off = (b * t + 1 + p) * d;
                rows.push(hidden.data()[off..off + d].to_vec());
            }
            out.push(rows);
        }
    }
    Ok(out)
}
