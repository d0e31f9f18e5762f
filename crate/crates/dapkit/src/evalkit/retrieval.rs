use crate::error::{DapError, Result};

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn cosine(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

fn norms(embs: &[Vec<f64>], side: &str) -> Result<Vec<f64>> {
    embs.iter()
        .enumerate()
        .map(|(i, e)| {
            let n = norm(e);
            if n == 0.0 {
                Err(DapError::Metric(format!("{side} row {i} has zero norm")))
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Fraction of queries whose cosine-nearest candidate is the gold one
/// (row i pairs with row i). Ties break toward the lower index.
pub fn retrieval_accuracy(queries: &[Vec<f64>], candidates: &[Vec<f64>]) -> Result<f64> {
    if queries.len() != candidates.len() || queries.len() < 2 {
        return Err(DapError::Contract(format!(
            "retrieval_accuracy: need matching sets of at least 2, got {} and {}",
            queries.len(),
            candidates.len()
        )));
    }
    let nq = norms(queries, "query")?;
    let nc = norms(candidates, "candidate")?;
    let mut hits = 0usize;
    for (i, q) in queries.iter().enumerate() {
        let mut best = 0usize;
        let mut best_cos = f64::NEG_INFINITY;
        for (j, c) in candidates.iter().enumerate() {
            let s = cosine(q, c, nq[i], nc[j]);
            if s > best_cos {
                best_cos = s;
                best = j;
            }
        }
        if best == i {
            hits += 1;
        }
    }
    Ok(hits as f64 / queries.len() as f64)
}

fn knn_mean(q: &[f64], qn: f64, pool: &[Vec<f64>], pool_norms: &[f64], k: usize) -> f64 {
    let mut sims: Vec<f64> = pool
        .iter()
        .zip(pool_norms)
        .map(|(p, &pn)| cosine(q, p, qn, pn))
        .collect();
    sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let k = k.min(sims.len());
    sims[..k].iter().sum::<f64>() / k as f64
}

/// Ratio-margin score of candidate pair (i, j): the cosine of the pair
/// over the summed average cosines of each side's k nearest neighbors in
/// the opposite corpus. A candidate may appear in its own neighborhood.
pub fn margin_score(
    i: usize,
    j: usize,
    src_embs: &[Vec<f64>],
    tgt_embs: &[Vec<f64>],
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(DapError::Contract("margin_score: k must be at least 1".into()));
    }
    if i >= src_embs.len() || j >= tgt_embs.len() {
        return Err(DapError::Index(format!(
            "margin_score: pair ({i}, {j}) out of range ({}, {})",
            src_embs.len(),
            tgt_embs.len()
        )));
    }
    let ns = norms(src_embs, "source")?;
    let nt = norms(tgt_embs, "target")?;
    single_margin(i, j, src_embs, tgt_embs, &ns, &nt, k)
}

pub(crate) fn single_margin(
    i: usize,
    j: usize,
    src: &[Vec<f64>],
    tgt: &[Vec<f64>],
    ns: &[f64],
    nt: &[f64],
    k: usize,
) -> Result<f64> {
    let num = cosine(&src[i], &tgt[j], ns[i], nt[j]);
    let denom = knn_mean(&src[i], ns[i], tgt, nt, k) + knn_mean(&tgt[j], nt[j], src, ns, k);
    if denom == 0.0 {
        return Err(DapError::Score(format!(
            "margin_score: zero denominator for pair ({i}, {j})"
        )));
    }
    Ok(num / denom)
}

/// Highest-F1 decision threshold over candidate scores. Sweeps every
/// midpoint of consecutive distinct scores plus one point below the
/// minimum and one above the maximum; F1 is computed after source-side
/// dedupe. Equal F1 resolves toward the larger threshold.
pub fn optimal_threshold(
    candidates: &[(usize, usize, f64)],
    gold: &[(usize, usize)],
) -> Result<(f64, f64)> {
    if candidates.is_empty() {
        return Err(DapError::Contract("optimal_threshold: no candidates".into()));
    }
    if gold.is_empty() {
        return Err(DapError::Contract("optimal_threshold: empty gold set".into()));
    }
    let mut scores: Vec<f64> = candidates.iter().map(|&(_, _, s)| s).collect();
    scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    scores.dedup();
    let mut grid = Vec::with_capacity(scores.len() + 1);
    grid.push(scores[0] - 1.0);
    for w in scores.windows(2) {
        grid.push(0.5 * (w[0] + w[1]));
    }
    grid.push(scores[scores.len() - 1] + 1.0);

    let mut best = (grid[0], -1.0);
    for &gamma in &grid {
        let (_, _, f1) = prf(&dedupe_by_source(candidates, gamma), gold);
        if f1 > best.1 || (f1 == best.1 && gamma > best.0) {
            best = (gamma, f1);
        }
    }
    Ok(best)
}

/// Keep candidates scoring at least `gamma`, at most one per source index
/// (max score wins; ties toward the lower target index).
pub(crate) fn dedupe_by_source(
    candidates: &[(usize, usize, f64)],
    gamma: f64,
) -> Vec<(usize, usize, f64)> {
    let mut best: std::collections::BTreeMap<usize, (usize, f64)> = Default::default();
    for &(i, j, s) in candidates {
        if s < gamma {
            continue;
        }
        match best.get(&i) {
            Some(&(bj, bs)) if bs > s || (bs == s && bj <= j) => {}
            _ => {
                best.insert(i, (j, s));
            }
        }
    }
    best.into_iter().map(|(i, (j, s))| (i, j, s)).collect()
}

pub(crate) fn prf(pred: &[(usize, usize, f64)], gold: &[(usize, usize)]) -> (f64, f64, f64) {
    let gold_set: std::collections::BTreeSet<(usize, usize)> = gold.iter().copied().collect();
    let tp = pred.iter().filter(|&&(i, j, _)| gold_set.contains(&(i, j))).count();
    let p = if pred.is_empty() { 0.0 } else { tp as f64 / pred.len() as f64 };
    let r = if gold.is_empty() { 0.0 } else { tp as f64 / gold.len() as f64 };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiningMode {
    /// Score every source-target pair.
    Exact,
    /// Score only pairs in the union of forward and backward top-m
    /// cosine neighborhoods.
    TopM(usize),
}

#[derive(Clone, Debug)]
pub struct MiningResult {
    /// All scored candidates (source idx, target idx, margin score).
    pub candidates: Vec<(usize, usize, f64)>,
    pub gamma: f64,
    /// Thresholded, source-deduped predictions.
    pub predicted: Vec<(usize, usize, f64)>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Margin-based bitext mining: generate candidates, score, threshold at
/// `gamma`, dedupe by source, and report P/R/F1 against `gold`.
/// Candidates whose margin denominator vanishes are skipped with a
/// warning instead of failing the run.
pub fn mine_pairs(
    src_embs: &[Vec<f64>],
    tgt_embs: &[Vec<f64>],
    k: usize,
    gamma: f64,
    gold: &[(usize, usize)],
    mode: MiningMode,
) -> Result<MiningResult> {
    if k == 0 {
        return Err(DapError::Contract("mine_pairs: k must be at least 1".into()));
    }
    if !gamma.is_finite() {
        return Err(DapError::Contract(format!("mine_pairs: gamma {gamma} not finite")));
    }
    let ns = norms(src_embs, "source")?;
    let nt = norms(tgt_embs, "target")?;

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    match mode {
        MiningMode::Exact => {
            for i in 0..src_embs.len() {
                for j in 0..tgt_embs.len() {
                    pairs.push((i, j));
                }
            }
        }
        MiningMode::TopM(m) => {
            let mut seen = std::collections::BTreeSet::new();
            let top = |q: &[f64], qn: f64, pool: &[Vec<f64>], pn: &[f64]| -> Vec<usize> {
                let mut idx: Vec<usize> = (0..pool.len()).collect();
                let sims: Vec<f64> = pool
                    .iter()
                    .zip(pn)
                    .map(|(p, &n)| cosine(q, p, qn, n))
                    .collect();
                idx.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap().then(a.cmp(&b)));
                idx.truncate(m.min(pool.len()));
                idx
            };
            for i in 0..src_embs.len() {
                for j in top(&src_embs[i], ns[i], tgt_embs, &nt) {
                    seen.insert((i, j));
                }
            }
            for j in 0..tgt_embs.len() {
                for i in top(&tgt_embs[j], nt[j], src_embs, &ns) {
                    seen.insert((i, j));
                }
            }
            pairs.extend(seen);
        }
    }

    let mut candidates = Vec::with_capacity(pairs.len());
    for (i, j) in pairs {
        match single_margin(i, j, src_embs, tgt_embs, &ns, &nt, k) {
            Ok(s) => candidates.push((i, j, s)),
            Err(DapError::Score(msg)) => eprintln!("warning: skipping candidate: {msg}"),
            Err(e) => return Err(e),
        }
    }
    let predicted = dedupe_by_source(&candidates, gamma);
    let (precision, recall, f1) = prf(&predicted, gold);
    Ok(MiningResult {
        candidates,
        gamma,
        predicted,
        precision,
        recall,
        f1,
    })
}
