//! The input mapping: anchor-queried cross attention over pre-anchor
//! hidden states into fixed-width categorical operand and operator
//! distributions.
//!
//! Each of the 2W+1 slots (operand A digits, operand B digits, operator)
//! owns a learned query seed added to a projection of the anchor token's
//! hidden state. Keys carry an anchor-relative position embedding next to
//! the hidden state, values are a plain projection. A shared tanh trunk
//! feeds per-slot classification heads: 11-way for left-aligned digit
//! slots (ten digits plus placeholder), 10-way for right-aligned, 4-way
//! for the operator. Attention only ever sees rows strictly before the
//! anchor, so its mass on positions at or past the anchor is exactly zero
//! by construction.

use crate::array::tape::{NodeId, Tape};
use crate::array::{DiffArray, ParamId, ParamStore};
use crate::codec::{Alignment, DigitBlock, OperatorClass};
use crate::config::RunConfig;
use rand_chacha::ChaCha8Rng;

use super::{linear_init, randn, ModelError};

#[derive(Debug, Clone)]
pub struct InputMapIds {
    pub ln_g: ParamId,
    pub ln_b: ParamId,
    pub wq: ParamId,
    pub seeds: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub relpos: ParamId,
    pub trunk_w: ParamId,
    pub trunk_b: ParamId,
    /// One (w, b) head per operand digit slot.
    pub digit_heads: Vec<(ParamId, ParamId)>,
    pub op_head_w: ParamId,
    pub op_head_b: ParamId,
    pub payload_w: ParamId,
}

/// Slot count: digit slots for both operands plus the operator slot.
pub fn slot_count(codec_width: usize) -> usize {
    2 * codec_width + 1
}

pub fn register_input_map(
    store: &mut ParamStore,
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> InputMapIds {
    let d = cfg.model.width;
    let w = cfg.codec.width;
    let classes = cfg.codec.alignment.classes();
    let i = &cfg.igc;
    let slots = slot_count(w);
    let dk = i.query_dim;
    let dv = i.value_dim;
    let ht = i.trunk_dim;

    let ln_g = store.register("igc.im.ln.g", DiffArray::new(vec![d], vec![1.0; d], true));
    let ln_b = store.register("igc.im.ln.b", DiffArray::zeros(vec![d], true));
    let wq = store.register(
        "igc.im.wq",
        DiffArray::new(vec![d, dk], linear_init(rng, d, dk), true),
    );
    let seeds = store.register(
        "igc.im.seeds",
        DiffArray::new(vec![slots, dk], randn(rng, slots * dk, 1.0), true),
    );
    let wk = store.register(
        "igc.im.wk",
        DiffArray::new(
            vec![d + i.relpos_dim_in, dk],
            linear_init(rng, d + i.relpos_dim_in, dk),
            true,
        ),
    );
    let wv = store.register(
        "igc.im.wv",
        DiffArray::new(vec![d, dv], linear_init(rng, d, dv), true),
    );
    let relpos = store.register(
        "igc.im.relpos",
        DiffArray::new(
            vec![i.relpos_window_in, i.relpos_dim_in],
            randn(rng, i.relpos_window_in * i.relpos_dim_in, 1.0),
            true,
        ),
    );
    let trunk_w = store.register(
        "igc.im.trunk.w",
        DiffArray::new(vec![dv, ht], linear_init(rng, dv, ht), true),
    );
    let trunk_b = store.register("igc.im.trunk.b", DiffArray::zeros(vec![ht], true));
    let digit_heads = (0..2 * w)
        .map(|s| {
            (
                store.register(
                    &format!("igc.im.head{s}.w"),
                    DiffArray::new(vec![ht, classes], linear_init(rng, ht, classes), true),
                ),
                store.register(
                    &format!("igc.im.head{s}.b"),
                    DiffArray::zeros(vec![classes], true),
                ),
            )
        })
        .collect();
    let op_head_w = store.register(
        "igc.im.op_head.w",
        DiffArray::new(vec![ht, 4], linear_init(rng, ht, 4), true),
    );
    let op_head_b = store.register("igc.im.op_head.b", DiffArray::zeros(vec![4], true));
    let payload_w = store.register(
        "igc.im.payload.w",
        DiffArray::new(
            vec![ht, i.payload_slot_dim],
            linear_init(rng, ht, i.payload_slot_dim),
            true,
        ),
    );
    InputMapIds {
        ln_g,
        ln_b,
        wq,
        seeds,
        wk,
        wv,
        relpos,
        trunk_w,
        trunk_b,
        digit_heads,
        op_head_w,
        op_head_b,
        payload_w,
    }
}

/// Tape nodes produced by one input-mapping pass.
pub struct InputMapOut {
    /// Per digit-slot logits, each [1, classes].
    pub slot_logits: Vec<NodeId>,
    /// Operator logits [1, 4].
    pub op_logits: NodeId,
    /// Pre-classification features flattened to [1, slots * payload_slot_dim];
    /// the differentiable shortcut payload.
    pub payload: NodeId,
    /// Attention over pre-anchor rows, [slots, t]; kept for introspection.
    pub attention: NodeId,
}

/// Run the input mapping over `h_pre` (rows strictly before the anchor)
/// with the anchor row `h_anchor`.
pub fn forward(
    tape: &mut Tape,
    ids: &InputMapIds,
    cfg: &RunConfig,
    h_pre: NodeId,
    h_anchor: NodeId,
) -> Result<InputMapOut, ModelError> {
    let w = cfg.codec.width;
    let slots = slot_count(w);
    let t = tape.shape(h_pre)[0];
    let dk = cfg.igc.query_dim;

    // the rows come straight off the residual stream; normalize before
    // they feed fresh attention, or its softmax starts saturated
    let (ln_g, ln_b) = (tape.param(ids.ln_g), tape.param(ids.ln_b));
    let h_pre = tape.layer_norm(h_pre, ln_g, ln_b, super::LN_EPS)?;
    let h_anchor = tape.layer_norm(h_anchor, ln_g, ln_b, super::LN_EPS)?;

    // keys: hidden state next to an anchor-relative position embedding
    let rel_ids: Vec<usize> = (0..t)
        .map(|j| (t - j).min(cfg.igc.relpos_window_in) - 1)
        .collect();
    let relpos = tape.param(ids.relpos);
    let rel = tape.gather(relpos, &rel_ids)?;
    let key_in = tape.concat_cols(&[h_pre, rel])?;
    let wk = tape.param(ids.wk);
    let keys = tape.matmul(key_in, wk)?;
    let wv = tape.param(ids.wv);
    let vals = tape.matmul(h_pre, wv)?;

    // queries: anchor projection plus per-slot seeds
    let wq = tape.param(ids.wq);
    let qbase = tape.matmul(h_anchor, wq)?;
    let seeds = tape.param(ids.seeds);
    let queries = tape.add_bias(seeds, qbase)?;

    let scores = tape.matmul_nt(queries, keys)?;
    let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    let attention = tape.softmax_rows(scores);
    let reads = tape.matmul(attention, vals)?;

    let trunk_w = tape.param(ids.trunk_w);
    let trunk_b = tape.param(ids.trunk_b);
    let z = tape.matmul(reads, trunk_w)?;
    let z = tape.add_bias(z, trunk_b)?;
    let z = tape.tanh(z);

    let mut slot_logits = Vec::with_capacity(2 * w);
    for (s, (hw, hb)) in ids.digit_heads.iter().enumerate() {
        let zi = tape.slice_rows(z, s, s + 1)?;
        let (hw, hb) = (tape.param(*hw), tape.param(*hb));
        let l = tape.matmul(zi, hw)?;
        slot_logits.push(tape.add_bias(l, hb)?);
    }
    let zop = tape.slice_rows(z, slots - 1, slots)?;
    let (ow, ob) = (tape.param(ids.op_head_w), tape.param(ids.op_head_b));
    let op_logits = tape.matmul(zop, ow)?;
    let op_logits = tape.add_bias(op_logits, ob)?;

    let pw = tape.param(ids.payload_w);
    let pay = tape.matmul(z, pw)?;
    let payload = tape.reshape(pay, vec![1, slots * cfg.igc.payload_slot_dim])?;

    Ok(InputMapOut {
        slot_logits,
        op_logits,
        payload,
        attention,
    })
}

/// Harden the slot distributions into a calculator request (plain values,
/// no gradient participation).
pub fn to_request(
    tape: &Tape,
    out: &InputMapOut,
    width: usize,
    alignment: Alignment,
) -> crate::calculator::CalcRequest {
    let classes = alignment.classes();
    let softmax = |v: &[f64]| -> Vec<f64> {
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect()
    };
    let block = |logits: &[NodeId]| -> DigitBlock {
        let mut probs = Vec::with_capacity(width * classes);
        for &l in logits {
            probs.extend(softmax(tape.values(l)));
        }
        DigitBlock {
            width,
            alignment,
            probs,
            hard: false,
        }
    };
    let operand_a = block(&out.slot_logits[..width]);
    let operand_b = block(&out.slot_logits[width..2 * width]);
    let op = softmax(tape.values(out.op_logits));
    crate::calculator::CalcRequest {
        operand_a,
        operand_b,
        operator: OperatorClass {
            probs: [op[0], op[1], op[2], op[3]],
        },
    }
}
