//! Print the per-sample FLOPs breakdown for the three objectives at a
//! BERT-base-like scale and show the relative overhead of each auxiliary task.

use dapkit::cli::paper_scale_config;
use dapkit::evalkit::estimate_flops;

fn main() -> dapkit::error::Result<()> {
    let cfg = paper_scale_config();
    let seq_len = 32;
    let report = estimate_flops(&cfg, seq_len)?;

    println!(
        "per-pair forward FLOPs at d={} L={} V={} S={seq_len}",
        cfg.d, cfg.layers, cfg.vocab
    );
    println!(
        "{:<28} {:>12} {:>12} {:>12} {:>12}",
        "objective", "encoder", "head", "vocab", "total"
    );
    for (name, c) in [
        ("translation ranking only", report.tr),
        ("ranking + masked LM", report.tr_tlm),
        ("ranking + reconstruction", report.dap),
    ] {
        println!(
            "{:<28} {:>11.3}G {:>11.3}G {:>11.3}G {:>11.3}G",
            name,
            c.encoder / 1e9,
            c.rtl_head / 1e9,
            c.vocab / 1e9,
            c.total() / 1e9
        );
    }
    let base = report.tr.total();
    println!(
        "overhead vs ranking-only: masked LM +{:.1}%, reconstruction +{:.1}%",
        (report.tr_tlm.total() / base - 1.0) * 100.0,
        (report.dap.total() / base - 1.0) * 100.0
    );
    Ok(())
}
