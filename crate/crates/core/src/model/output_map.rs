//! The output mapping: gated injection of the calculator's one-hot result
//! into the post-anchor rows.
//!
//! For each post-anchor token the conditioning network reads the token's
//! hidden state, an anchor-relative position embedding and the fixed-width
//! conditioning vector (one-hot result and, in shortcut modes, the input
//! mapping's payload), and produces a residual delta. A per-token scalar
//! gate — sigmoid of an affine map over the token state and a learned
//! summary of the conditioning — scales the delta. The modified row is
//! always `hidden + gate * delta`, never a replacement, and the gate bias
//! starts at -4 so an untrained module is near-silent.
//!
//! The hidden state alone cannot tell which chunk of the result a given
//! position must surface, so the delta is conditioned on the token and its
//! anchor-relative position rather than being one shared projection of the
//! result; the fixed-length result still enters every row only through
//! this projection path.

use crate::array::tape::{NodeId, Tape};
use crate::array::{DiffArray, ParamId, ParamStore};
use crate::config::RunConfig;
use rand_chacha::ChaCha8Rng;

use super::{linear_init, randn, ModelError};

#[derive(Debug, Clone)]
pub struct OutputMapIds {
    pub ln_g: ParamId,
    pub ln_b: ParamId,
    pub relpos: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub summary_w: ParamId,
    pub gate_w: ParamId,
    pub gate_b: ParamId,
}

/// Width of the one-hot result part of the conditioning vector.
pub fn result_dim(cfg: &RunConfig) -> usize {
    cfg.codec.width * cfg.codec.alignment.classes() + 2 + 4
}

/// Width of the shortcut payload part.
pub fn payload_dim(cfg: &RunConfig) -> usize {
    super::input_map::slot_count(cfg.codec.width) * cfg.igc.payload_slot_dim
}

/// Full conditioning width: result one-hot next to the payload, either
/// side zero-filled depending on mode.
pub fn cond_dim(cfg: &RunConfig) -> usize {
    result_dim(cfg) + payload_dim(cfg)
}

pub fn register_output_map(
    store: &mut ParamStore,
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> OutputMapIds {
    let d = cfg.model.width;
    let i = &cfg.igc;
    let c = cond_dim(cfg);
    let hm = i.mlp_hidden;
    let fan_in = d + i.relpos_dim_out + c;

    let ln_g = store.register("igc.om.ln.g", DiffArray::new(vec![d], vec![1.0; d], true));
    let ln_b = store.register("igc.om.ln.b", DiffArray::zeros(vec![d], true));
    let relpos = store.register(
        "igc.om.relpos",
        DiffArray::new(
            vec![i.relpos_window_out, i.relpos_dim_out],
            randn(rng, i.relpos_window_out * i.relpos_dim_out, 1.0),
            true,
        ),
    );
    let w1 = store.register(
        "igc.om.w1",
        DiffArray::new(vec![fan_in, hm], linear_init(rng, fan_in, hm), true),
    );
    let b1 = store.register("igc.om.b1", DiffArray::zeros(vec![hm], true));
    let w2 = store.register(
        "igc.om.w2",
        DiffArray::new(vec![hm, d], linear_init(rng, hm, d), true),
    );
    let b2 = store.register("igc.om.b2", DiffArray::zeros(vec![d], true));
    let summary_w = store.register(
        "igc.om.summary.w",
        DiffArray::new(vec![c, i.summary_dim], linear_init(rng, c, i.summary_dim), true),
    );
    // near-zero so the bias decides the initial gate value
    let gate_w = store.register(
        "igc.om.gate.w",
        DiffArray::new(
            vec![d + i.summary_dim, 1],
            randn(rng, d + i.summary_dim, 0.01 / ((d + i.summary_dim) as f64).sqrt()),
            true,
        ),
    );
    let gate_b = store.register(
        "igc.om.gate.b",
        DiffArray::new(vec![1], vec![cfg.igc.gate_bias_init], true),
    );
    OutputMapIds {
        ln_g,
        ln_b,
        relpos,
        w1,
        b1,
        w2,
        b2,
        summary_w,
        gate_w,
        gate_b,
    }
}

pub struct OutputMapOut {
    /// Modified post-anchor rows, [n, width].
    pub modified: NodeId,
    /// Per-token gate scalars, [n, 1].
    pub gates: NodeId,
}

/// Apply the output mapping to `h_post` (rows from the anchor onward).
/// `cond` is the [1, cond_dim] conditioning node. With `force_zero_gates`
/// the gate column is replaced by exact zeros, which must reproduce the
/// plain model.
pub fn forward(
    tape: &mut Tape,
    ids: &OutputMapIds,
    cfg: &RunConfig,
    h_post: NodeId,
    cond: NodeId,
    force_zero_gates: bool,
) -> Result<OutputMapOut, ModelError> {
    let n = tape.shape(h_post)[0];

    // normalized view of the stream rows for the conditioning network and
    // the gate; the residual add below still uses the raw rows
    let (ln_g, ln_b) = (tape.param(ids.ln_g), tape.param(ids.ln_b));
    let h_norm = tape.layer_norm(h_post, ln_g, ln_b, super::LN_EPS)?;

    let rel_ids: Vec<usize> = (0..n).map(|i| i.min(cfg.igc.relpos_window_out - 1)).collect();
    let relpos = tape.param(ids.relpos);
    let rel = tape.gather(relpos, &rel_ids)?;
    let cond_rows = tape.broadcast_rows(cond, n)?;
    let feats = tape.concat_cols(&[h_norm, rel, cond_rows])?;

    let (w1, b1) = (tape.param(ids.w1), tape.param(ids.b1));
    let h = tape.matmul(feats, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.tanh(h);
    let (w2, b2) = (tape.param(ids.w2), tape.param(ids.b2));
    let delta = tape.matmul(h, w2)?;
    let delta = tape.add_bias(delta, b2)?;

    let gates = if force_zero_gates {
        tape.constant(vec![n, 1], vec![0.0; n])
    } else {
        let sw = tape.param(ids.summary_w);
        let summary = tape.matmul(cond, sw)?;
        let srows = tape.broadcast_rows(summary, n)?;
        let gin = tape.concat_cols(&[h_norm, srows])?;
        let (gw, gb) = (tape.param(ids.gate_w), tape.param(ids.gate_b));
        let g = tape.matmul(gin, gw)?;
        let g = tape.add_bias(g, gb)?;
        tape.sigmoid(g)
    };

    let scaled = tape.scale_rows(delta, gates)?;
    let modified = tape.add(h_post, scaled)?;
    Ok(OutputMapOut { modified, gates })
}
