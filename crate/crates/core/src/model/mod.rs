//! The tiny decoder-only transformer host plus the gated calculator module.
//!
//! The host is a standard pre-norm transformer: learned token and position
//! embeddings, causal self-attention blocks with tanh MLPs, a final layer
//! norm and an unembedding tied to the token embedding. The calculator
//! module sits after a fixed block (`insertion_layer`, 1-based) and
//! modifies the post-anchor rows of that block's output; with the module
//! detached or its gates at zero the host is the plain transformer.

pub mod igc;
pub mod input_map;
pub mod output_map;

use crate::array::tape::{NodeId, Tape};
use crate::array::{DiffArray, ParamId, ParamStore};
use crate::config::RunConfig;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use igc::{GenOutput, IgcCache, IgcModel, TrainForward};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("array error: {0}")]
    Array(#[from] crate::array::ArrayError),
    #[error("calculator error: {0}")]
    Calc(#[from] crate::calculator::CalcError),
    #[error("codec error: {0}")]
    Codec(#[from] crate::codec::CodecError),
    #[error("sequence of {len} tokens exceeds the {context}-token context")]
    ContextOverflow { len: usize, context: usize },
    #[error("arithmetic sample has no anchor token")]
    MissingAnchor,
    #[error("cannot freeze the base before a pretrained checkpoint is loaded")]
    FreezeBeforePretrain,
    #[error("token id {0} outside the vocabulary of {1}")]
    BadToken(u32, usize),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] crate::array::checkpoint::CheckpointError),
}

#[derive(Debug, Clone, Copy)]
pub struct BlockIds {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub mlp_w1: ParamId,
    pub mlp_b1: ParamId,
    pub mlp_w2: ParamId,
    pub mlp_b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct HostIds {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub blocks: Vec<BlockIds>,
    pub lnf_g: ParamId,
    pub lnf_b: ParamId,
}

/// Gaussian init helper with a deterministic stream.
pub(crate) fn randn(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    use rand::Rng;
    (0..n)
        .map(|_| {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

pub(crate) fn linear_init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    randn(rng, fan_in * fan_out, 1.0 / (fan_in as f64).sqrt())
}

/// Register every base-transformer parameter under the `base.` prefix.
pub fn register_base(
    store: &mut ParamStore,
    cfg: &RunConfig,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
) -> HostIds {
    let d = cfg.model.width;
    let ff = d * cfg.model.ff_mult;
    let ctx = cfg.model.context;

    let tok_emb = store.register(
        "base.tok_emb",
        DiffArray::new(vec![vocab_size, d], randn(rng, vocab_size * d, 0.05), true),
    );
    let pos_emb = store.register(
        "base.pos_emb",
        DiffArray::new(vec![ctx, d], randn(rng, ctx * d, 0.05), true),
    );
    let mut blocks = Vec::with_capacity(cfg.model.layers);
    for l in 0..cfg.model.layers {
        let p = |s: &str| format!("base.block{l}.{s}");
        blocks.push(BlockIds {
            ln1_g: store.register(&p("ln1.g"), DiffArray::new(vec![d], vec![1.0; d], true)),
            ln1_b: store.register(&p("ln1.b"), DiffArray::zeros(vec![d], true)),
            wq: store.register(&p("attn.wq"), DiffArray::new(vec![d, d], linear_init(rng, d, d), true)),
            wk: store.register(&p("attn.wk"), DiffArray::new(vec![d, d], linear_init(rng, d, d), true)),
            wv: store.register(&p("attn.wv"), DiffArray::new(vec![d, d], linear_init(rng, d, d), true)),
            wo: store.register(&p("attn.wo"), DiffArray::new(vec![d, d], linear_init(rng, d, d), true)),
            ln2_g: store.register(&p("ln2.g"), DiffArray::new(vec![d], vec![1.0; d], true)),
            ln2_b: store.register(&p("ln2.b"), DiffArray::zeros(vec![d], true)),
            mlp_w1: store.register(&p("mlp.w1"), DiffArray::new(vec![d, ff], linear_init(rng, d, ff), true)),
            mlp_b1: store.register(&p("mlp.b1"), DiffArray::zeros(vec![ff], true)),
            mlp_w2: store.register(&p("mlp.w2"), DiffArray::new(vec![ff, d], linear_init(rng, ff, d), true)),
            mlp_b2: store.register(&p("mlp.b2"), DiffArray::zeros(vec![d], true)),
        });
    }
    let lnf_g = store.register("base.lnf.g", DiffArray::new(vec![d], vec![1.0; d], true));
    let lnf_b = store.register("base.lnf.b", DiffArray::zeros(vec![d], true));
    HostIds {
        tok_emb,
        pos_emb,
        blocks,
        lnf_g,
        lnf_b,
    }
}

/// Token + position embedding rows for a sequence.
pub fn embed(
    tape: &mut Tape,
    ids: &HostIds,
    tokens: &[u32],
) -> Result<NodeId, crate::array::ArrayError> {
    let tok = tape.param(ids.tok_emb);
    let pos = tape.param(ids.pos_emb);
    let rows: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let te = tape.gather(tok, &rows)?;
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let pe = tape.gather(pos, &positions)?;
    tape.add(te, pe)
}

/// One pre-norm transformer block.
pub fn block_forward(
    tape: &mut Tape,
    x: NodeId,
    ids: &BlockIds,
    heads: usize,
) -> Result<NodeId, crate::array::ArrayError> {
    let (g1, b1) = (tape.param(ids.ln1_g), tape.param(ids.ln1_b));
    let n1 = tape.layer_norm(x, g1, b1, LN_EPS)?;
    let (wq, wk, wv, wo) = (
        tape.param(ids.wq),
        tape.param(ids.wk),
        tape.param(ids.wv),
        tape.param(ids.wo),
    );
    let q = tape.matmul(n1, wq)?;
    let k = tape.matmul(n1, wk)?;
    let v = tape.matmul(n1, wv)?;
    let att = tape.causal_attention(q, k, v, heads)?;
    let proj = tape.matmul(att, wo)?;
    let x = tape.add(x, proj)?;

    let (g2, b2) = (tape.param(ids.ln2_g), tape.param(ids.ln2_b));
    let n2 = tape.layer_norm(x, g2, b2, LN_EPS)?;
    let (w1, bb1, w2, bb2) = (
        tape.param(ids.mlp_w1),
        tape.param(ids.mlp_b1),
        tape.param(ids.mlp_w2),
        tape.param(ids.mlp_b2),
    );
    let h = tape.matmul(n2, w1)?;
    let h = tape.add_bias(h, bb1)?;
    let h = tape.tanh(h);
    let m = tape.matmul(h, w2)?;
    let m = tape.add_bias(m, bb2)?;
    tape.add(x, m)
}

/// Final layer norm followed by the tied unembedding.
pub fn unembed(
    tape: &mut Tape,
    x: NodeId,
    ids: &HostIds,
) -> Result<NodeId, crate::array::ArrayError> {
    let (g, b) = (tape.param(ids.lnf_g), tape.param(ids.lnf_b));
    let n = tape.layer_norm(x, g, b, LN_EPS)?;
    let emb = tape.param(ids.tok_emb);
    tape.matmul_nt(n, emb)
}

/// Deterministic model RNG for a stage seed.
pub fn model_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
