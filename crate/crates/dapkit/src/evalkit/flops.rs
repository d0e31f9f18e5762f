use crate::error::Result;
use crate::model::EncoderConfig;
use serde::Serialize;

/// One objective's per-sample forward FLOPs, split by component.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FlopsComponents {
    /// Full encoder passes (dual-encoder passes plus any concatenated pass).
    pub encoder: f64,
    /// Reconstruction-head layers.
    pub rtl_head: f64,
    /// Vocabulary projections.
    pub vocab: f64,
}

impl FlopsComponents {
    pub fn total(&self) -> f64 {
        self.encoder + self.rtl_head + self.vocab
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct FlopsReport {
    pub tr: FlopsComponents,
    pub tr_tlm: FlopsComponents,
    pub dap: FlopsComponents,
}

/// Matrix products in one encoder pass over `s` tokens, counted at 2 FLOPs
/// per multiply-accumulate: QKV projections (3d^2 per token per layer),
/// attention scores and context (2·s·d), output projection (d^2), and the
/// feed-forward pair (2·d·d_ff). Norms, softmaxes, biases, and embedding
/// lookups are excluded.
fn encoder_pass(layers: usize, d: usize, d_ff: usize, s: usize) -> f64 {
    2.0 * (layers * s) as f64 * (4 * d * d + 2 * s * d + 2 * d * d_ff) as f64
}

/// The vocabulary projection is counted at d·V per position: one
/// multiply-accumulate per weight, matching how the head's cost is
/// conventionally reported relative to the encoder body.
fn vocab_projection(d: usize, vocab: usize, positions: usize) -> f64 {
    (d * vocab) as f64 * positions as f64
}

/// Analytic per-sample FLOPs for a pair of sentences of length `s` each.
/// Ranking alone needs the two dual-encoder passes; masked prediction
/// adds a third pass over the 2s-token concatenation plus vocabulary
/// logits at all 2s positions; reconstruction instead adds the
/// `rtl_layers` head layers over the concatenation plus vocabulary
/// logits at the s target positions.
pub fn estimate_flops(cfg: &EncoderConfig, s: usize) -> Result<FlopsReport> {
    let (l, d, d_ff, v, k) = (cfg.layers, cfg.d, cfg.d_ff, cfg.vocab, cfg.rtl_layers);
    let dual = 2.0 * encoder_pass(l, d, d_ff, s);
    let tr = FlopsComponents {
        encoder: dual,
        rtl_head: 0.0,
        vocab: 0.0,
    };
    let tr_tlm = FlopsComponents {
        encoder: dual + encoder_pass(l, d, d_ff, 2 * s),
        rtl_head: 0.0,
        vocab: vocab_projection(d, v, 2 * s),
    };
    let dap = FlopsComponents {
        encoder: dual,
        rtl_head: encoder_pass(k, d, d_ff, 2 * s),
        vocab: vocab_projection(d, v, s),
    };
    Ok(FlopsReport { tr, tr_tlm, dap })
}
