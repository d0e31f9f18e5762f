//! Train briefly, project token representations to 2-D with PCA, and write
//! an SVG scatter plot plus a CSV of the projected points.

use dapkit::cli::{cmd_gen_data, cmd_train, cmd_visualize, RunConfig};

fn main() -> dapkit::error::Result<()> {
    let dir = std::env::temp_dir().join("dap-example-visualize");
    std::fs::create_dir_all(&dir)?;
    let corpus = dir.join("corpus.tsv");

    let mut cfg = RunConfig::default();
    cfg.run_name = "visualize-demo".into();
    cfg.model.layers = 1;
    cfg.model.d = 32;
    cfg.model.n_heads = 4;
    cfg.model.d_ff = 64;
    cfg.model.s_max = 16;
    cfg.model.rtl_layers = 1;
    cfg.data.len_min = 3;
    cfg.data.len_max = 8;
    cfg.model.vocab = cfg.data.vocab_size();
    cfg.train.steps = 150;
    cfg.train.batch_size = 16;
    cfg.train.log_interval = 50;
    cfg.validate()?;

    cmd_gen_data(&cfg, 400, Some(7), &corpus, true)?;
    let run_dir = dir.join("run");
    let outcome = cmd_train(&cfg, &corpus, &run_dir)?;
    println!(
        "trained {} steps, total loss {:.4} -> {:.4}",
        cfg.train.steps, outcome.first_total, outcome.last_total
    );

    let out_dir = dir.join("viz");
    let n_tokens = cmd_visualize(&outcome.checkpoint, &corpus, 40, &out_dir)?;
    println!("projected {n_tokens} token vectors");
    println!("svg: {}", out_dir.join("tokens.svg").display());
    println!("csv: {}", out_dir.join("tokens.csv").display());
    Ok(())
}
