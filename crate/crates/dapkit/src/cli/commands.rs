use super::config::{EvalConfig, RunConfig};
use crate::corpus::{
    generate_corpus, make_batches, read_corpus, write_corpus, ParallelPair,
};
use crate::error::{DapError, Result};
use crate::evalkit::{
    embed_sentences, estimate_flops, mine_pairs, optimal_threshold, pca_project,
    retrieval_accuracy, token_alignment_accuracy, token_hiddens, write_points_csv,
    write_scatter_svg, FlopsReport, MiningMode,
};
use crate::model::{
    init_params, load_checkpoint, save_checkpoint, EncoderConfig, ModelParams,
};
use crate::objectives::{compute_losses, dap_step, AdamW};
use serde_json::json;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Deterministic evaluation split: the last tenth of the corpus (rounded
/// down) is held out and never batched for training.
pub fn held_out_split(pairs: &[ParallelPair]) -> (&[ParallelPair], &[ParallelPair]) {
    let n_held = pairs.len() / 10;
    pairs.split_at(pairs.len() - n_held)
}

fn by_language(pairs: &[ParallelPair]) -> BTreeMap<usize, Vec<&ParallelPair>> {
    let mut map: BTreeMap<usize, Vec<&ParallelPair>> = BTreeMap::new();
    for p in pairs {
        map.entry(p.lang_id).or_default().push(p);
    }
    map
}

pub fn cmd_gen_data(
    cfg: &RunConfig,
    n_pairs: usize,
    seed: Option<u64>,
    out: &Path,
    force: bool,
) -> Result<()> {
    if n_pairs == 0 {
        return Err(DapError::Config("--n-pairs must be positive".into()));
    }
    if out.exists() && !force {
        return Err(DapError::Config(format!(
            "{} exists; pass --force to overwrite",
            out.display()
        )));
    }
    let pairs = generate_corpus(&cfg.data, n_pairs, seed.unwrap_or(cfg.data.seed))?;
    write_corpus(out, &pairs)?;
    Ok(())
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub first_total: f64,
    pub last_total: f64,
}

pub fn cmd_train(cfg: &RunConfig, corpus_path: &Path, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let pairs = read_corpus(corpus_path)?;
    let (train_pairs, _) = held_out_split(&pairs);
    if train_pairs.len() < cfg.train.batch_size {
        return Err(DapError::Config(format!(
            "corpus leaves {} training pairs for batch size {}",
            train_pairs.len(),
            cfg.train.batch_size
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("config.json"),
        serde_json::to_string_pretty(cfg)?,
    )?;

    let mut params = init_params(&cfg.model)?;
    let mut opt = AdamW::new(&params, &cfg.train);
    let ckpt = out_dir.join("ckpt.bin");
    save_checkpoint(&params, &ckpt)?;

    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
    let started = Instant::now();
    let tcfg = &cfg.train;
    let log = |step: usize,
                   b: &crate::objectives::LossBreakdown,
                   w: &mut std::io::BufWriter<std::fs::File>|
     -> Result<()> {
        let line = json!({
            "step": step,
            "tr": b.tr,
            "rtl": b.rtl,
            "tlm": b.tlm,
            "total": b.total,
            "wall_ms": started.elapsed().as_millis() as u64,
        });
        writeln!(w, "{line}")?;
        Ok(())
    };

    let mut epoch = 0u64;
    let mut batches = make_batches(
        train_pairs,
        tcfg.batch_size,
        cfg.model.s_max,
        tcfg.seed.wrapping_add(epoch),
        true,
    )?;
    if batches.is_empty() {
        return Err(DapError::Config("no full training batch available".into()));
    }
    let first = compute_losses(&params, &batches[0], tcfg, 0)?;
    log(0, &first, &mut metrics)?;

    let mut cursor = 0usize;
    let mut last = first;
    for step in 0..tcfg.steps {
        if cursor >= batches.len() {
            epoch += 1;
            batches = make_batches(
                train_pairs,
                tcfg.batch_size,
                cfg.model.s_max,
                tcfg.seed.wrapping_add(epoch),
                true,
            )?;
            cursor = 0;
        }
        let outcome = dap_step(&mut params, &mut opt, &batches[cursor], tcfg, step);
        cursor += 1;
        match outcome {
            Ok(b) => {
                last = b;
                if (step + 1) % tcfg.log_interval == 0 {
                    log(step + 1, &b, &mut metrics)?;
                }
                if cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0 {
                    save_checkpoint(&params, &ckpt)?;
                }
            }
            Err(e) => {
                // the last periodic checkpoint stays on disk
                metrics.flush()?;
                return Err(e);
            }
        }
    }
    metrics.flush()?;
    save_checkpoint(&params, &ckpt)?;
    Ok(TrainOutcome {
        params,
        checkpoint: ckpt,
        metrics: metrics_path,
        first_total: first.total,
        last_total: last.total,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalTask {
    Retrieval,
    Mining,
    TokenAlign,
}

fn sentences(pairs: &[&ParallelPair]) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    let src = pairs.iter().map(|p| p.src.clone()).collect();
    let piv = pairs.iter().map(|p| p.pivot.clone()).collect();
    (src, piv)
}

/// Per-language retrieval accuracy in both directions, plus the average.
pub fn eval_retrieval(
    params: &ModelParams,
    held: &[ParallelPair],
    chunk: usize,
) -> Result<serde_json::Value> {
    let mut per_language = serde_json::Map::new();
    let (mut sum_xe, mut sum_ex, mut n) = (0.0, 0.0, 0.0);
    for (lang, pairs) in by_language(held) {
        let (src, piv) = sentences(&pairs);
        let src_e = embed_sentences(params, &src, chunk)?;
        let piv_e = embed_sentences(params, &piv, chunk)?;
        let xe = retrieval_accuracy(&src_e, &piv_e)?;
        let ex = retrieval_accuracy(&piv_e, &src_e)?;
        per_language.insert(
            format!("lang{lang}"),
            json!({"xx_to_en": xe, "en_to_xx": ex}),
        );
        sum_xe += xe;
        sum_ex += ex;
        n += 1.0;
    }
    Ok(json!({
        "per_language": per_language,
        "average": {"xx_to_en": sum_xe / n, "en_to_xx": sum_ex / n},
    }))
}

fn eval_mining(
    params: &ModelParams,
    held: &[ParallelPair],
    ecfg: &EvalConfig,
) -> Result<serde_json::Value> {
    let mode = if ecfg.top_m == 0 {
        MiningMode::Exact
    } else {
        MiningMode::TopM(ecfg.top_m)
    };
    let mut per_language = serde_json::Map::new();
    let (mut sp, mut sr, mut sf, mut n) = (0.0, 0.0, 0.0, 0.0);
    for (lang, pairs) in by_language(held) {
        let (src, piv) = sentences(&pairs);
        let src_e = embed_sentences(params, &src, ecfg.chunk)?;
        let piv_e = embed_sentences(params, &piv, ecfg.chunk)?;
        let gold: Vec<(usize, usize)> = (0..pairs.len()).map(|i| (i, i)).collect();
        // threshold chosen for best F1 on the candidates, then applied
        let scored = mine_pairs(&src_e, &piv_e, ecfg.margin_k, f64::MIN, &gold, mode)?;
        let (gamma, _) = optimal_threshold(&scored.candidates, &gold)?;
        let mined = mine_pairs(&src_e, &piv_e, ecfg.margin_k, gamma, &gold, mode)?;
        per_language.insert(
            format!("lang{lang}"),
            json!({
                "gamma": mined.gamma,
                "precision": mined.precision,
                "recall": mined.recall,
                "f1": mined.f1,
                "n_predicted": mined.predicted.len(),
            }),
        );
        sp += mined.precision;
        sr += mined.recall;
        sf += mined.f1;
        n += 1.0;
    }
    Ok(json!({
        "per_language": per_language,
        "average": {"precision": sp / n, "recall": sr / n, "f1": sf / n},
    }))
}

/// Average gold-alignment recovery rate from final-layer token states.
pub fn eval_token_align(
    params: &ModelParams,
    held: &[ParallelPair],
) -> Result<serde_json::Value> {
    let mut per_language = serde_json::Map::new();
    let (mut sum, mut n) = (0.0, 0.0);
    for (lang, pairs) in by_language(held) {
        let (src, piv) = sentences(&pairs);
        let src_h = token_hiddens(params, &src)?;
        let piv_h = token_hiddens(params, &piv)?;
        let aligns: Vec<Vec<usize>> = pairs.iter().map(|p| p.alignment.clone()).collect();
        let acc = token_alignment_accuracy(&src_h, &piv_h, &aligns)?;
        per_language.insert(format!("lang{lang}"), json!({"accuracy": acc}));
        sum += acc;
        n += 1.0;
    }
    Ok(json!({
        "per_language": per_language,
        "average": {"accuracy": sum / n},
    }))
}

pub fn cmd_eval(
    checkpoint: &Path,
    corpus_path: &Path,
    task: EvalTask,
    ecfg: &EvalConfig,
    out: Option<&Path>,
) -> Result<serde_json::Value> {
    let (params, _) = load_checkpoint(checkpoint)?;
    let pairs = read_corpus(corpus_path)?;
    let (_, held) = held_out_split(&pairs);
    if held.is_empty() {
        return Err(DapError::Data("corpus too small: empty held-out split".into()));
    }
    let body = match task {
        EvalTask::Retrieval => eval_retrieval(&params, held, ecfg.chunk)?,
        EvalTask::Mining => eval_mining(&params, held, ecfg)?,
        EvalTask::TokenAlign => eval_token_align(&params, held)?,
    };
    let report = json!({
        "task": match task {
            EvalTask::Retrieval => "retrieval",
            EvalTask::Mining => "mining",
            EvalTask::TokenAlign => "token-align",
        },
        "per_language": body["per_language"],
        "average": body["average"],
    });
    if let Some(out) = out {
        std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    Direction,
    Rho,
    KLayers,
}

/// Train and evaluate one model per sweep setting; one CSV row each.
/// Returns false when any row failed (callers map that to exit code 4).
pub fn cmd_ablate(
    base: &RunConfig,
    sweep: SweepKind,
    corpus_path: &Path,
    out_dir: &Path,
) -> Result<bool> {
    use crate::objectives::DirectionMode;
    std::fs::create_dir_all(out_dir)?;
    let settings: Vec<(String, RunConfig)> = match sweep {
        SweepKind::Direction => [
            DirectionMode::XxToEn,
            DirectionMode::EnToXx,
            DirectionMode::Both,
        ]
        .iter()
        .map(|&m| {
            let mut c = base.clone();
            c.train.direction = m;
            (format!("{m:?}").to_lowercase(), c)
        })
        .collect(),
        SweepKind::Rho => [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&r| {
                let mut c = base.clone();
                c.train.rho = r;
                (format!("{r}"), c)
            })
            .collect(),
        SweepKind::KLayers => (1..=4)
            .map(|k| {
                let mut c = base.clone();
                c.model.rtl_layers = k;
                (format!("{k}"), c)
            })
            .collect(),
    };

    let csv_path = out_dir.join("ablation.csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(
        csv,
        "sweep,value,status,xx_to_en,en_to_xx,retrieval_avg,token_align"
    )?;
    let sweep_name = match sweep {
        SweepKind::Direction => "direction",
        SweepKind::Rho => "rho",
        SweepKind::KLayers => "klayers",
    };
    let mut all_ok = true;
    for (value, cfg) in &settings {
        let row_dir = out_dir.join(format!("{sweep_name}-{value}"));
        let result = (|| -> Result<(f64, f64, f64)> {
            let outcome = cmd_train(cfg, corpus_path, &row_dir)?;
            let pairs = read_corpus(corpus_path)?;
            let (_, held) = held_out_split(&pairs);
            let r = eval_retrieval(&outcome.params, held, cfg.eval.chunk)?;
            let a = eval_token_align(&outcome.params, held)?;
            let xe = r["average"]["xx_to_en"].as_f64().unwrap();
            let ex = r["average"]["en_to_xx"].as_f64().unwrap();
            let ta = a["average"]["accuracy"].as_f64().unwrap();
            Ok((xe, ex, ta))
        })();
        match result {
            Ok((xe, ex, ta)) => writeln!(
                csv,
                "{sweep_name},{value},ok,{xe},{ex},{},{ta}",
                0.5 * (xe + ex)
            )?,
            Err(e) => {
                eprintln!("sweep row {value} failed: {e}");
                writeln!(csv, "{sweep_name},{value},failed,,,,")?;
                all_ok = false;
            }
        }
    }
    csv.flush()?;
    Ok(all_ok)
}

/// Pool token states from held-out pairs, project to 2-D, and write the
/// scatter plot plus its CSV. Returns the number of plotted tokens.
pub fn cmd_visualize(
    checkpoint: &Path,
    corpus_path: &Path,
    n_pairs: usize,
    out_dir: &Path,
) -> Result<usize> {
    let (params, cfg) = load_checkpoint(checkpoint)?;
    let pairs = read_corpus(corpus_path)?;
    let (_, held) = held_out_split(&pairs);
    if held.is_empty() {
        return Err(DapError::Data("corpus too small: empty held-out split".into()));
    }
    let take = if n_pairs > held.len() {
        eprintln!(
            "warning: requested {n_pairs} pairs but only {} held out; clipping",
            held.len()
        );
        held.len()
    } else {
        n_pairs.max(1)
    };
    let held = &held[..take];

    let src: Vec<Vec<u32>> = held.iter().map(|p| p.src.clone()).collect();
    let piv: Vec<Vec<u32>> = held.iter().map(|p| p.pivot.clone()).collect();
    let src_h = token_hiddens(&params, &src)?;
    let piv_h = token_hiddens(&params, &piv)?;

    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for (p, h) in held.iter().zip(&src_h) {
        for row in h {
            vectors.push(row.clone());
            labels.push(p.lang_id);
        }
    }
    for h in &piv_h {
        for row in h {
            vectors.push(row.clone());
            labels.push(0);
        }
    }
    let (points, _) = pca_project(&vectors, 2)?;
    let names: Vec<String> = (0..cfg.n_langs)
        .map(|l| {
            if l == 0 {
                "lang0 (pivot)".to_string()
            } else {
                format!("lang{l}")
            }
        })
        .collect();
    std::fs::create_dir_all(out_dir)?;
    write_scatter_svg(&out_dir.join("tokens.svg"), &points, &labels, &names)?;
    write_points_csv(&out_dir.join("tokens.csv"), &points, &labels, &names)?;
    Ok(points.len())
}

/// mBERT-base scale constants used for paper-scale FLOPs reporting.
pub fn paper_scale_config() -> EncoderConfig {
    EncoderConfig {
        layers: 12,
        d: 768,
        n_heads: 12,
        d_ff: 3072,
        vocab: 119_547,
        s_max: 64,
        rtl_layers: 2,
        n_langs: 3,
        tie_vocab_head: true,
        seed: 0,
    }
}

pub fn cmd_flops(cfg: &EncoderConfig, s: usize) -> Result<FlopsReport> {
    let report = estimate_flops(cfg, s)?;
    println!("per-sample forward FLOPs at S={s} (G = 1e9)");
    println!(
        "{:<8} {:>12} {:>12} {:>12} {:>12}",
        "obj", "encoder", "rtl_head", "vocab", "total"
    );
    let g = 1e9;
    for (name, c) in [
        ("tr", report.tr),
        ("tr+tlm", report.tr_tlm),
        ("dap", report.dap),
    ] {
        println!(
            "{:<8} {:>11.3}G {:>11.3}G {:>11.3}G {:>11.3}G",
            name,
            c.encoder / g,
            c.rtl_head / g,
            c.vocab / g,
            c.total() / g
        );
    }
    Ok(report)
}
