use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::config::EncoderConfig;
use crate::numcore::{DiffContext, Tensor, Var};

/// Weights of one pre-norm transformer block.
#[derive(Clone, Debug)]
pub struct BlockParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub ff1_w: Tensor,
    pub ff1_b: Tensor,
    pub ff2_w: Tensor,
    pub ff2_b: Tensor,
}

/// All learnable tensors of encoder, RTL head, and vocabulary head.
///
/// The position table holds `2 * s_max` rows: the first half serves the
/// encoder, the second half is a fresh range the RTL head indexes from 0.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub config: EncoderConfig,
    pub token_emb: Tensor,
    pub pos_emb: Tensor,
    pub lang_emb: Tensor,
    pub blocks: Vec<BlockParams>,
    pub rtl_blocks: Vec<BlockParams>,
    /// Untied vocabulary projection (d x V); `None` when tied to `token_emb`.
    pub vocab_w: Option<Tensor>,
}

fn trunc_normal(rng: &mut ChaCha8Rng, shape: Vec<usize>, sigma: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        // Box-Muller, rejected beyond 2 sigma
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        for z in [r * theta.cos(), r * theta.sin()] {
            if z.abs() <= 2.0 && data.len() < n {
                data.push(z * sigma);
            }
        }
    }
    Tensor::new(shape, data).unwrap()
}

fn init_block(rng: &mut ChaCha8Rng, d: usize, d_ff: usize, sigma: f64) -> BlockParams {
    BlockParams {
        wq: trunc_normal(rng, vec![d, d], sigma),
        bq: Tensor::zeros(vec![d]),
        wk: trunc_normal(rng, vec![d, d], sigma),
        bk: Tensor::zeros(vec![d]),
        wv: trunc_normal(rng, vec![d, d], sigma),
        bv: Tensor::zeros(vec![d]),
        wo: trunc_normal(rng, vec![d, d], sigma),
        bo: Tensor::zeros(vec![d]),
        ln1_g: Tensor::filled(vec![d], 1.0),
        ln1_b: Tensor::zeros(vec![d]),
        ln2_g: Tensor::filled(vec![d], 1.0),
        ln2_b: Tensor::zeros(vec![d]),
        ff1_w: trunc_normal(rng, vec![d, d_ff], sigma),
        ff1_b: Tensor::zeros(vec![d_ff]),
        ff2_w: trunc_normal(rng, vec![d_ff, d], sigma),
        ff2_b: Tensor::zeros(vec![d]),
    }
}

/// Deterministic initialization: truncated normal (sigma = 0.02) weights,
/// zero biases, unit layer-norm gains.
pub fn init_params(config: &EncoderConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sigma = 0.02;
    let d = config.d;
    let token_emb = trunc_normal(&mut rng, vec![config.vocab, d], sigma);
    let pos_emb = trunc_normal(&mut rng, vec![2 * config.s_max, d], sigma);
    let lang_emb = trunc_normal(&mut rng, vec![config.n_langs, d], sigma);
    let blocks = (0..config.layers)
        .map(|_| init_block(&mut rng, d, config.d_ff, sigma))
        .collect();
    let rtl_blocks = (0..config.rtl_layers)
        .map(|_| init_block(&mut rng, d, config.d_ff, sigma))
        .collect();
    let vocab_w = if config.tie_vocab_head {
        None
    } else {
        Some(trunc_normal(&mut rng, vec![d, config.vocab], sigma))
    };
    Ok(ModelParams {
        config: config.clone(),
        token_emb,
        pos_emb,
        lang_emb,
        blocks,
        rtl_blocks,
        vocab_w,
    })
}

macro_rules! block_fields {
    () => {
        [
            "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b", "ln2_g", "ln2_b",
            "ff1_w", "ff1_b", "ff2_w", "ff2_b",
        ]
    };
}

fn block_tensors(b: &BlockParams) -> [&Tensor; 16] {
    [
        &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo, &b.ln1_g, &b.ln1_b, &b.ln2_g,
        &b.ln2_b, &b.ff1_w, &b.ff1_b, &b.ff2_w, &b.ff2_b,
    ]
}

fn block_tensors_mut(b: &mut BlockParams) -> [&mut Tensor; 16] {
    [
        &mut b.wq,
        &mut b.bq,
        &mut b.wk,
        &mut b.bk,
        &mut b.wv,
        &mut b.bv,
        &mut b.wo,
        &mut b.bo,
        &mut b.ln1_g,
        &mut b.ln1_b,
        &mut b.ln2_g,
        &mut b.ln2_b,
        &mut b.ff1_w,
        &mut b.ff1_b,
        &mut b.ff2_w,
        &mut b.ff2_b,
    ]
}

impl ModelParams {
    /// Enumerate all named tensors in a stable order.
    pub fn visit(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("token_emb".into(), &self.token_emb),
            ("pos_emb".into(), &self.pos_emb),
            ("lang_emb".into(), &self.lang_emb),
        ];
        for (prefix, blocks) in [("enc", &self.blocks), ("rtl", &self.rtl_blocks)] {
            for (i, b) in blocks.iter().enumerate() {
                for (name, t) in block_fields!().iter().zip(block_tensors(b)) {
                    out.push((format!("{prefix}.{i}.{name}"), t));
                }
            }
        }
        if let Some(w) = &self.vocab_w {
            out.push(("vocab_w".into(), w));
        }
        out
    }

    pub fn visit_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("token_emb".into(), &mut self.token_emb),
            ("pos_emb".into(), &mut self.pos_emb),
            ("lang_emb".into(), &mut self.lang_emb),
        ];
        for (prefix, blocks) in [("enc", &mut self.blocks), ("rtl", &mut self.rtl_blocks)] {
            for (i, b) in blocks.iter_mut().enumerate() {
                for (name, t) in block_fields!().iter().zip(block_tensors_mut(b)) {
                    out.push((format!("{prefix}.{i}.{name}"), t));
                }
            }
        }
        if let Some(w) = &mut self.vocab_w {
            out.push(("vocab_w".into(), w));
        }
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.visit().iter().map(|(_, t)| t.len()).sum()
    }

    /// Whether AdamW applies weight decay to this tensor. Biases,
    /// layer-norm parameters, and embeddings are exempt.
    pub fn decays(name: &str) -> bool {
        let field = name.rsplit('.').next().unwrap_or(name);
        !(field.starts_with('b')
            || field.starts_with("ln")
            || field.ends_with("_b")
            || name.ends_with("_emb"))
    }

    /// Register every tensor as a tape leaf. Returns the Vars in `visit`
    /// order together with a structured view.
    pub fn register(&self, ctx: &mut DiffContext) -> (ParamVars, Vec<Var>) {
        let mut ordered = Vec::new();
        let mut reg = |t: &Tensor, ordered: &mut Vec<Var>| {
            let v = ctx.leaf(t.clone());
            ordered.push(v);
            v
        };
        let token_emb = reg(&self.token_emb, &mut ordered);
        let pos_emb = reg(&self.pos_emb, &mut ordered);
        let lang_emb = reg(&self.lang_emb, &mut ordered);
        let mut mk_blocks = |blocks: &[BlockParams], ordered: &mut Vec<Var>| {
            blocks
                .iter()
                .map(|b| {
                    let ts = block_tensors(b);
                    let vs: Vec<Var> = ts.iter().map(|t| {
                        let v = ctx.leaf((*t).clone());
                        ordered.push(v);
                        v
                    }).collect();
                    BlockVars {
                        wq: vs[0],
                        bq: vs[1],
                        wk: vs[2],
                        bk: vs[3],
                        wv: vs[4],
                        bv: vs[5],
                        wo: vs[6],
                        bo: vs[7],
                        ln1_g: vs[8],
                        ln1_b: vs[9],
                        ln2_g: vs[10],
                        ln2_b: vs[11],
                        ff1_w: vs[12],
                        ff1_b: vs[13],
                        ff2_w: vs[14],
                        ff2_b: vs[15],
                    }
                })
                .collect::<Vec<_>>()
        };
        let blocks = mk_blocks(&self.blocks, &mut ordered);
        let rtl_blocks = mk_blocks(&self.rtl_blocks, &mut ordered);
        let vocab_w = self.vocab_w.as_ref().map(|w| {
            let v = ctx.leaf(w.clone());
            ordered.push(v);
            v
        });
        (
            ParamVars {
                token_emb,
                pos_emb,
                lang_emb,
                blocks,
                rtl_blocks,
                vocab_w,
            },
            ordered,
        )
    }
}

impl ModelParams {
    /// All tensors in `visit` order.
    pub fn tensor_list(&self) -> Vec<Tensor> {
        self.visit().into_iter().map(|(_, t)| t.clone()).collect()
    }

    /// Rebuild params from a tensor list in `visit` order (shapes implied
    /// by the config).
    pub fn from_tensor_list(config: &EncoderConfig, tensors: &[Tensor]) -> Result<ModelParams> {
        let mut p = init_params(config)?;
        let mut slots = p.visit_mut();
        if slots.len() != tensors.len() {
            return Err(crate::error::DapError::Shape(format!(
                "from_tensor_list: expected {} tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for ((_, slot), t) in slots.iter_mut().zip(tensors) {
            **slot = t.clone();
        }
        Ok(p)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub ln2_g: Var,
    pub ln2_b: Var,
    pub ff1_w: Var,
    pub ff1_b: Var,
    pub ff2_w: Var,
    pub ff2_b: Var,
}

/// Tape handles for one registration of [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub token_emb: Var,
    pub pos_emb: Var,
    pub lang_emb: Var,
    pub blocks: Vec<BlockVars>,
    pub rtl_blocks: Vec<BlockVars>,
    pub vocab_w: Option<Var>,
}

impl ParamVars {
    /// Structure a flat Var slice (in [`ModelParams::visit`] order) into the
    /// named handles the forward passes expect. Lets callers leaf their own
    /// parameter tensors — the gradient checker does this — and still reuse
    /// the full model graph.
    pub fn from_ordered(config: &EncoderConfig, vars: &[Var]) -> Result<ParamVars> {
        let expected = 3
            + 16 * (config.layers + config.rtl_layers)
            + usize::from(!config.tie_vocab_head);
        if vars.len() != expected {
            return Err(crate::error::DapError::Shape(format!(
                "from_ordered: expected {expected} vars, got {}",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let token_emb = it.next().unwrap();
        let pos_emb = it.next().unwrap();
        let lang_emb = it.next().unwrap();
        let take_blocks = |n: usize, it: &mut dyn Iterator<Item = Var>| {
            (0..n)
                .map(|_| {
                    let v: Vec<Var> = (&mut *it).take(16).collect();
                    BlockVars {
                        wq: v[0],
                        bq: v[1],
                        wk: v[2],
                        bk: v[3],
                        wv: v[4],
                        bv: v[5],
                        wo: v[6],
                        bo: v[7],
                        ln1_g: v[8],
                        ln1_b: v[9],
                        ln2_g: v[10],
                        ln2_b: v[11],
                        ff1_w: v[12],
                        ff1_b: v[13],
                        ff2_w: v[14],
                        ff2_b: v[15],
                    }
                })
                .collect::<Vec<_>>()
        };
        let blocks = take_blocks(config.layers, &mut it);
        let rtl_blocks = take_blocks(config.rtl_layers, &mut it);
        let vocab_w = if config.tie_vocab_head { None } else { it.next() };
        Ok(ParamVars {
            token_emb,
            pos_emb,
            lang_emb,
            blocks,
            rtl_blocks,
            vocab_w,
        })
    }
}

/// Derive a fresh RNG for an indexed sub-task (batch element, sweep row).
pub fn derive_rng(seed: u64, index: u64) -> ChaCha8Rng {
    // splitmix64 over (seed, index)
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let mut rng = ChaCha8Rng::seed_from_u64(z);
    // burn one draw so index 0 does not mirror the raw seed stream
    rng.next_u64();
    rng
}
