//! Release gate: seven checks covering gradient correctness, the analytic
//! FLOPs model, closed-form loss values, oracle equivalence of the
//! evaluation stack, end-to-end toy training quality, ablation trend
//! direction, and determinism/persistence. Each check prints a single
//! PASS/FAIL line (visible with `--nocapture`; a FAIL also panics).

use dapkit::cli::{cmd_gen_data, cmd_train, eval_retrieval, eval_token_align, held_out_split, RunConfig};
use dapkit::corpus::{generate_corpus, make_batches, read_corpus, write_corpus, LanguageSpec};
use dapkit::error::DapError;
use dapkit::model::{init_params, load_checkpoint, save_checkpoint, EncoderConfig, ParamVars};
use dapkit::numcore::{grad_check, DiffContext, Tensor, Var};
use dapkit::objectives::{
    build_loss, compute_losses, rtl_group_loss, tr_loss, Objective, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// Print the verdict line and panic on failure so the harness records it.
/// Writes to stdout directly (not via `println!`) so the line stays visible
/// even under the default output capture of `cargo test`.
fn verdict(n: usize, name: &str, ok: bool, detail: &str) {
    use std::io::Write;
    let state = if ok { "PASS" } else { "FAIL" };
    writeln!(std::io::stdout(), "criterion {n} ({name}): {state} — {detail}").unwrap();
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------- 1

#[test]
fn c1_gradient_correctness() {
    let start = Instant::now();
    let spec = LanguageSpec {
        n_langs: 3,
        n_concepts: 7, // vocabulary: 3 specials + 3 * 7 = 24
        len_min: 2,
        len_max: 3,
        ..LanguageSpec::default()
    };
    let mcfg = EncoderConfig {
        layers: 2,
        d: 8,
        n_heads: 2,
        d_ff: 16,
        vocab: spec.vocab_size(),
        s_max: 6,
        rtl_layers: 1,
        n_langs: spec.n_langs,
        ..EncoderConfig::default()
    };
    assert_eq!(mcfg.vocab, 24);
    let params = init_params(&mcfg).unwrap();
    let tcfg = TrainConfig {
        objective: Objective::Dap,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let pairs = generate_corpus(&spec, 2, 5).unwrap();
    let batch = make_batches(&pairs, 2, mcfg.s_max, 0, false).unwrap().remove(0);

    let f = |ctx: &mut DiffContext, vars: &[Var]| {
        let pv = ParamVars::from_ordered(&mcfg, vars)?;
        build_loss(ctx, &pv, &mcfg, &batch, &tcfg, 0).map(|(total, _)| total)
    };
    let worst = grad_check(&f, &params.tensor_list(), 1e-4).unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient correctness",
        worst <= 1e-3 && secs < 60.0,
        &format!("max relative error {worst:.3e} in {secs:.1}s"),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn c2_flops_model() {
    let cfg = dapkit::cli::paper_scale_config();
    let r = dapkit::evalkit::estimate_flops(&cfg, 32).unwrap();
    let (tr, tlm, dap) = (r.tr.total(), r.tr_tlm.total(), r.dap.total());
    let within = |got: f64, want: f64| (got - want).abs() / want <= 0.20;
    let dap_over = (dap - tr) / tr;
    let tlm_over = (tlm - tr) / tr;
    let ok = within(tr, 11.0e9)
        && within(tlm, 33.7e9)
        && within(dap, 16.5e9)
        && tr < dap
        && dap < tlm
        && dap_over < 0.60
        && tlm_over > 1.50;
    verdict(
        2,
        "FLOPs model",
        ok,
        &format!(
            "tr {:.3}G, tr+mlm {:.3}G, tr+recon {:.3}G; overheads {:.1}% / {:.1}%",
            tr / 1e9,
            tlm / 1e9,
            dap / 1e9,
            dap_over * 100.0,
            tlm_over * 100.0
        ),
    );
}

// ---------------------------------------------------------------- 3

#[test]
fn c3_loss_identities() {
    // (a) ranking loss over a single pair has no negatives: exactly zero
    let mut ctx = DiffContext::new();
    let x = ctx.leaf(Tensor::new(vec![1, 3], vec![0.3, -1.2, 4.0]).unwrap());
    let y = ctx.leaf(Tensor::new(vec![1, 3], vec![-2.0, 0.5, 1.5]).unwrap());
    let l = tr_loss(&mut ctx, x, y, &TrainConfig::default()).unwrap();
    let single_pair_zero = ctx.value(l).item().unwrap() == 0.0;

    // (b) uniform logits make the reconstruction loss exactly ln V
    let v = 37;
    let mut ctx = DiffContext::new();
    let logits = ctx.leaf(Tensor::filled(vec![4, v], 0.123));
    let out = dapkit::model::RtlOutput {
        logits,
        rows_per_example: vec![1, 3],
    };
    let l = rtl_group_loss(&mut ctx, &out, &[0, 5, 9, 36], 2).unwrap();
    let uniform_is_ln_v = (ctx.value(l).item().unwrap() - (v as f64).ln()).abs() <= 1e-9;

    // (c) ranking loss of a fresh model at B=32 sits near ln 32
    let spec = LanguageSpec::default();
    let mcfg = EncoderConfig {
        vocab: spec.vocab_size(),
        ..EncoderConfig::default()
    };
    let params = init_params(&mcfg).unwrap();
    let pairs = generate_corpus(&spec, 32, 9).unwrap();
    let batch = make_batches(&pairs, 32, mcfg.s_max, 0, false).unwrap().remove(0);
    let tr_cfg = TrainConfig {
        objective: Objective::Tr,
        ..TrainConfig::default()
    };
    let b = compute_losses(&params, &batch, &tr_cfg, 0).unwrap();
    let ln32 = 32f64.ln();
    let init_near_ln_b = (b.tr - ln32).abs() / ln32 <= 0.10;

    // (d) the combined objective is the plain sum of its parts
    let dap_cfg = TrainConfig::default();
    let b = compute_losses(&params, &batch, &dap_cfg, 0).unwrap();
    let total_is_sum = b.total == b.tr + b.rtl.unwrap();

    verdict(
        3,
        "loss identities",
        single_pair_zero && uniform_is_ln_v && init_near_ln_b && total_is_sum,
        &format!(
            "single-pair zero {single_pair_zero}, uniform ln V {uniform_is_ln_v}, init tr {:.4} vs ln32 {ln32:.4}, total==sum {total_is_sum}",
            b.tr
        ),
    );
}

// ---------------------------------------------------------------- 4

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

fn random_embs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

/// Threshold + per-source dedupe, written independently of the library.
fn oracle_predict(cands: &[(usize, usize, f64)], gamma: f64) -> Vec<(usize, usize, f64)> {
    let mut best: std::collections::BTreeMap<usize, (usize, f64)> = Default::default();
    for &(i, j, s) in cands {
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

fn oracle_f1(pred: &[(usize, usize, f64)], gold: &[(usize, usize)]) -> (f64, f64, f64) {
    let gold_set: std::collections::BTreeSet<_> = gold.iter().copied().collect();
    let tp = pred.iter().filter(|&&(i, j, _)| gold_set.contains(&(i, j))).count() as f64;
    if pred.is_empty() || tp == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let p = tp / pred.len() as f64;
    let r = tp / gold.len() as f64;
    (p, r, 2.0 * p * r / (p + r))
}

#[test]
fn c4_oracle_equivalence() {
    use dapkit::evalkit::{
        margin_score, mine_pairs, optimal_threshold, pca_project, retrieval_accuracy, MiningMode,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut worst = 0.0f64;
    let mut pca_worst = 0.0f64;
    for trial in 0..20 {
        let n = rng.gen_range(5..=100);
        let d = rng.gen_range(2..=8);
        let x = random_embs(&mut rng, n, d);
        let y = random_embs(&mut rng, n, d);
        let k = rng.gen_range(1..=4.min(n));

        // retrieval: argmax cosine per query, exact hit-rate match
        let got = retrieval_accuracy(&x, &y).unwrap();
        let mut hits = 0;
        for i in 0..n {
            let mut best = (f64::NEG_INFINITY, 0usize);
            for j in 0..n {
                let s = cos(&x[i], &y[j]);
                if s > best.0 {
                    best = (s, j);
                }
            }
            if best.1 == i {
                hits += 1;
            }
        }
        worst = worst.max((got - hits as f64 / n as f64).abs());

        // margin scoring against a sort-based k-NN mean
        let knn = |q: &[f64], pool: &[Vec<f64>]| {
            let mut sims: Vec<f64> = pool.iter().map(|p| cos(q, p)).collect();
            sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
            sims[..k].iter().sum::<f64>() / k as f64
        };
        for _ in 0..5 {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            let got = margin_score(i, j, &x, &y, k).unwrap();
            let want = cos(&x[i], &y[j]) / (knn(&x[i], &y) + knn(&y[j], &x));
            worst = worst.max((got - want).abs());
        }

        // exact-mode mining end to end: scores, threshold, dedupe, P/R/F1
        let gold: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        let gamma = rng.gen_range(0.3..0.7);
        let got = mine_pairs(&x, &y, k, gamma, &gold, MiningMode::Exact).unwrap();
        let mut all: Vec<(usize, usize, f64)> = Vec::new();
        for i in 0..n {
            for j in 0..n {
                all.push((i, j, cos(&x[i], &y[j]) / (knn(&x[i], &y) + knn(&y[j], &x))));
            }
        }
        for (a, b) in got.candidates.iter().zip(&all) {
            assert_eq!((a.0, a.1), (b.0, b.1), "trial {trial}: candidate order");
            worst = worst.max((a.2 - b.2).abs());
        }
        let pred = oracle_predict(&all, gamma);
        let (p, r, f1) = oracle_f1(&pred, &gold);
        assert_eq!(got.predicted.len(), pred.len(), "trial {trial}");
        worst = worst
            .max((got.precision - p).abs())
            .max((got.recall - r).abs())
            .max((got.f1 - f1).abs());

        // threshold search: best F1 over every distinct decision boundary
        let (got_gamma, got_f1) = optimal_threshold(&all, &gold).unwrap();
        let mut scores: Vec<f64> = all.iter().map(|c| c.2).collect();
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        scores.dedup();
        let mut grid = vec![scores[0] - 1.0, scores[scores.len() - 1] + 1.0];
        for w in scores.windows(2) {
            grid.push((w[0] + w[1]) / 2.0);
        }
        let best = grid
            .iter()
            .map(|&g| oracle_f1(&oracle_predict(&all, g), &gold).2)
            .fold(0.0f64, f64::max);
        worst = worst.max((got_f1 - best).abs());
        // and the returned gamma must actually achieve that F1
        worst =
            worst.max((oracle_f1(&oracle_predict(&all, got_gamma), &gold).2 - got_f1).abs());

        // PCA explained variances against a cyclic Jacobi eigensolver
        let (_, vars) = pca_project(&x, 2).unwrap();
        let evs = jacobi_eigenvalues(covariance(&x));
        pca_worst = pca_worst
            .max((vars[0] - evs[0]).abs())
            .max((vars[1] - evs[1]).abs());
    }
    verdict(
        4,
        "oracle equivalence",
        worst <= 1e-12 && pca_worst <= 1e-6,
        &format!("worst score deviation {worst:.2e}, worst PCA variance deviation {pca_worst:.2e}"),
    );
}

fn covariance(data: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, d) = (data.len(), data[0].len());
    let mut mean = vec![0.0; d];
    for row in data {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for row in data {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (row[i] - mean[i]) * (row[j] - mean[j]) / (n - 1) as f64;
            }
        }
    }
    cov
}

fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let d = a.len();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..d {
                    let (aip, aiq) = (a[i][p], a[i][q]);
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for i in 0..d {
                    let (api, aqi) = (a[p][i], a[q][i]);
                    a[p][i] = c * api - s * aqi;
                    a[q][i] = s * api + c * aqi;
                }
            }
        }
    }
    let mut evs: Vec<f64> = (0..d).map(|i| a[i][i]).collect();
    evs.sort_by(|x, y| y.partial_cmp(x).unwrap());
    evs
}

// ---------------------------------------------------------------- 5 & 6

/// The frozen end-to-end configuration: 2 languages + pivot, 200 concepts,
/// a 2-layer d=64 encoder with a 2-layer reconstruction head, batch 32,
/// lr 3e-4. Ranking uses cosine scores with temperature 0.05 in both
/// directions; these scoring switches are free knobs of the recipe and were
/// fixed by the calibration runs that froze the thresholds below.
fn e2e_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.run_name = "e2e".into();
    cfg.model = EncoderConfig {
        layers: 2,
        d: 64,
        n_heads: 4,
        d_ff: 128,
        vocab: cfg.data.vocab_size(),
        s_max: 32,
        rtl_layers: 2,
        n_langs: 3,
        tie_vocab_head: true,
        seed: 0,
    };
    cfg.train.steps = 2000;
    cfg.train.batch_size = 32;
    cfg.train.lr = 3e-4;
    cfg.train.cosine = true;
    cfg.train.temperature = 0.05;
    cfg.train.bidirectional = true;
    cfg.validate().unwrap();
    cfg
}

#[test]
fn c5_end_to_end_training() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.tsv");
    let cfg = e2e_config();
    cmd_gen_data(&cfg, 5000, Some(42), &corpus, false).unwrap();
    let pairs = read_corpus(&corpus).unwrap();
    let (_, held) = held_out_split(&pairs);
    assert_eq!(held.len(), 500);

    let dap = cmd_train(&cfg, &corpus, &dir.path().join("dap")).unwrap();
    let mut tr_cfg = cfg.clone();
    tr_cfg.train.objective = Objective::Tr;
    let tr = cmd_train(&tr_cfg, &corpus, &dir.path().join("tr")).unwrap();

    let retr = eval_retrieval(&dap.params, held, cfg.eval.chunk).unwrap();
    let xx = retr["average"]["xx_to_en"].as_f64().unwrap();
    let ex = retr["average"]["en_to_xx"].as_f64().unwrap();

    let a_dap = eval_token_align(&dap.params, held).unwrap()["average"]["accuracy"]
        .as_f64()
        .unwrap();
    let a_tr = eval_token_align(&tr.params, held).unwrap()["average"]["accuracy"]
        .as_f64()
        .unwrap();

    let mins = start.elapsed().as_secs_f64() / 60.0;
    let ok = xx >= 0.90 && ex >= 0.90 && a_dap - a_tr >= 0.10 && mins < 30.0;
    verdict(
        5,
        "end-to-end toy training",
        ok,
        &format!(
            "retrieval xx->en {xx:.3}, en->xx {ex:.3}; token alignment {a_dap:.3} vs ranking-only {a_tr:.3} (+{:.1} pts); wall {mins:.1} min",
            (a_dap - a_tr) * 100.0
        ),
    );
}

#[test]
fn c6_ablation_trends() {
    // Single seed, 800 steps per run: enough for the orderings to separate
    // while keeping the sweep affordable on one core.
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.tsv");
    let mut cfg = e2e_config();
    cfg.train.steps = 800;
    cmd_gen_data(&cfg, 5000, Some(42), &corpus, false).unwrap();
    let pairs = read_corpus(&corpus).unwrap();
    let (_, held) = held_out_split(&pairs);

    let avg_retr = |cfg: &RunConfig, out: &str| {
        let o = cmd_train(cfg, &corpus, &dir.path().join(out)).unwrap();
        let r = eval_retrieval(&o.params, held, cfg.eval.chunk).unwrap();
        (r["average"]["xx_to_en"].as_f64().unwrap() + r["average"]["en_to_xx"].as_f64().unwrap())
            / 2.0
    };

    let rho_full = avg_retr(&cfg, "rho100"); // default rho = 1.0, xx->en
    let mut low = cfg.clone();
    low.train.rho = 0.25;
    let rho_low = avg_retr(&low, "rho025");

    let mut rev = cfg.clone();
    rev.train.direction = dapkit::objectives::DirectionMode::EnToXx;
    let en_to_xx = avg_retr(&rev, "entoxx");

    let ok = rho_full >= rho_low && rho_full >= en_to_xx;
    verdict(
        6,
        "ablation trends",
        ok,
        &format!(
            "avg retrieval: rho=1.0 {rho_full:.3} vs rho=0.25 {rho_low:.3}; xx->en {rho_full:.3} vs en->xx {en_to_xx:.3}"
        ),
    );
}

// ---------------------------------------------------------------- 7

#[test]
fn c7_determinism_and_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.tsv");
    let mut cfg = e2e_config();
    cfg.model.layers = 1;
    cfg.model.d = 16;
    cfg.model.n_heads = 2;
    cfg.model.d_ff = 32;
    cfg.model.rtl_layers = 1;
    cfg.data.n_concepts = 20;
    cfg.model.vocab = cfg.data.vocab_size();
    cfg.train.steps = 6;
    cfg.train.batch_size = 4;
    cfg.train.log_interval = 2;
    cfg.validate().unwrap();
    cmd_gen_data(&cfg, 60, Some(3), &corpus, false).unwrap();

    // same seed twice: bitwise-identical checkpoints, identical logs
    // (modulo the wall-clock field, which is timing, not state)
    let a = cmd_train(&cfg, &corpus, &dir.path().join("a")).unwrap();
    let b = cmd_train(&cfg, &corpus, &dir.path().join("b")).unwrap();
    let ckpt_same = std::fs::read(&a.checkpoint).unwrap() == std::fs::read(&b.checkpoint).unwrap();
    let strip = |p: &std::path::Path| {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_ms");
                v.to_string()
            })
            .collect::<Vec<_>>()
    };
    let logs_same = strip(&a.metrics) == strip(&b.metrics);

    // corpus file round trip is lossless
    let pairs = read_corpus(&corpus).unwrap();
    let copy = dir.path().join("copy.tsv");
    write_corpus(&copy, &pairs).unwrap();
    let corpus_roundtrip = std::fs::read(&corpus).unwrap() == std::fs::read(&copy).unwrap()
        && read_corpus(&copy).unwrap() == pairs;

    // checkpoint round trip preserves every tensor bit
    let (loaded, _) = load_checkpoint(&a.checkpoint).unwrap();
    let ckpt_roundtrip = loaded
        .visit()
        .iter()
        .zip(a.params.visit())
        .all(|((n1, t1), (n2, t2))| {
            *n1 == n2 && t1.shape() == t2.shape() && t1.data() == t2.data()
        });
    let resaved = dir.path().join("resaved.bin");
    save_checkpoint(&loaded, &resaved).unwrap();
    let ckpt_bytes_stable =
        std::fs::read(&a.checkpoint).unwrap() == std::fs::read(&resaved).unwrap();

    // flipping one payload byte must be caught by the checksum
    let mut bytes = std::fs::read(&a.checkpoint).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, &bytes).unwrap();
    let corrupted_rejected = matches!(load_checkpoint(&bad), Err(DapError::Integrity { .. }));

    let ok = ckpt_same && logs_same && corpus_roundtrip && ckpt_roundtrip && ckpt_bytes_stable
        && corrupted_rejected;
    verdict(
        7,
        "determinism & persistence",
        ok,
        &format!(
            "checkpoints bitwise {ckpt_same}, logs {logs_same}, corpus round trip {corpus_roundtrip}, checkpoint round trip {ckpt_roundtrip}/{ckpt_bytes_stable}, corruption rejected {corrupted_rejected}"
        ),
    );
}
