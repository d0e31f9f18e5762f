use super::retrieval::{cosine, norm};
use crate::error::{DapError, Result};

/// Token-level alignment accuracy: each source token vector is matched to
/// its cosine-nearest target token within the paired sentence (ties break
/// toward the lower index) and compared to the gold alignment. Per-pair
/// accuracies are averaged with equal weight per pair.
pub fn token_alignment_accuracy(
    src_hiddens: &[Vec<Vec<f64>>],
    tgt_hiddens: &[Vec<Vec<f64>>],
    alignments: &[Vec<usize>],
) -> Result<f64> {
    if src_hiddens.len() != tgt_hiddens.len() || src_hiddens.len() != alignments.len() {
        return Err(DapError::Contract(format!(
            "token_alignment_accuracy: {} source, {} target, {} alignments",
            src_hiddens.len(),
            tgt_hiddens.len(),
            alignments.len()
        )));
    }
    if src_hiddens.is_empty() {
        return Err(DapError::Contract("token_alignment_accuracy: no pairs".into()));
    }
    let mut per_pair = 0.0;
    for (p, ((sh, th), gold)) in src_hiddens
        .iter()
        .zip(tgt_hiddens)
        .zip(alignments)
        .enumerate()
    {
        if sh.len() != gold.len() {
            return Err(DapError::Contract(format!(
                "token_alignment_accuracy: pair {p} has {} source tokens but {} links",
                sh.len(),
                gold.len()
            )));
        }
        let tn: Vec<f64> = th.iter().map(|v| norm(v)).collect();
        let mut hits = 0usize;
        for (i, s) in sh.iter().enumerate() {
            let sn = norm(s);
            if sn == 0.0 {
                return Err(DapError::Metric(format!(
                    "token_alignment_accuracy: zero-norm source token {i} in pair {p}"
                )));
            }
            let mut best = 0usize;
            let mut best_cos = f64::NEG_INFINITY;
            for (j, t) in th.iter().enumerate() {
                if tn[j] == 0.0 {
                    return Err(DapError::Metric(format!(
                        "token_alignment_accuracy: zero-norm target token {j} in pair {p}"
                    )));
                }
                let c = cosine(s, t, sn, tn[j]);
                if c > best_cos {
                    best_cos = c;
                    best = j;
                }
            }
            if best == gold[i] {
                hits += 1;
            }
        }
        per_pair += hits as f64 / sh.len() as f64;
    }
    Ok(per_pair / src_hiddens.len() as f64)
}
