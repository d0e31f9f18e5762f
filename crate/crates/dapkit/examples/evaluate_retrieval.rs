//! End-to-end: generate data, train briefly, measure bitext retrieval on a
//! held-out split in both directions.

use dapkit::cli::{cmd_gen_data, cmd_train, eval_retrieval, held_out_split, RunConfig};
use dapkit::corpus::read_corpus;

fn main() -> dapkit::error::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.model.layers = 1;
    cfg.model.d = 32;
    cfg.model.n_heads = 2;
    cfg.model.d_ff = 64;
    cfg.model.rtl_layers = 1;
    cfg.data.n_concepts = 200;
    cfg.model.vocab = cfg.data.vocab_size();
    cfg.train.steps = 300;
    cfg.train.batch_size = 16;
    cfg.train.lr = 1e-3;
    cfg.train.log_interval = 50;

    let dir = std::env::temp_dir().join("dap-example-retrieval");
    std::fs::create_dir_all(&dir)?;
    let corpus = dir.join("corpus.tsv");
    cmd_gen_data(&cfg, 1200, Some(11), &corpus, true)?;

    let outcome = cmd_train(&cfg, &corpus, &dir.join("run"))?;
    println!(
        "loss {:.3} -> {:.3}",
        outcome.first_total, outcome.last_total
    );

    let pairs = read_corpus(&corpus)?;
    let (_, held) = held_out_split(&pairs);
    let report = eval_retrieval(&outcome.params, held, cfg.eval.chunk)?;
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}
