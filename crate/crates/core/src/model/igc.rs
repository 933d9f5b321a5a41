//! Full wiring of the gated calculator module inside the host transformer.
//!
//! Training runs teacher-forced: the blocks up to the insertion layer, the
//! input mapping over pre-anchor rows, the calculator (its output replaced
//! by the encoded ground truth so the output mapping trains before the
//! input mapping has converged), the gated output mapping over post-anchor
//! rows, then the remaining blocks. The language-model loss covers
//! post-anchor predictions; the auxiliary loss supervises the input
//! mapping's slot distributions directly, because the calculator blocks
//! the main-loss gradient.
//!
//! Generation executes the input mapping and calculator exactly once, on
//! the step where the anchor is the last prompt token, and caches their
//! outputs for subsequent steps; pre-anchor rows never change during
//! decoding, so a cache hit is bit-identical to recomputation.

use crate::array::checkpoint;
use crate::array::tape::{NodeId, Tape};
use crate::array::ParamStore;
use crate::calculator::{encode_signed, run_calculator, CalcRequest, CalcResult};
use crate::codec::encode;
use crate::config::{Mode, RunConfig};
use crate::data::ArithAnnotation;
use crate::tokenizer::{ANCHOR, END};
use std::collections::HashMap;
use std::path::Path;

use super::input_map::{self, InputMapIds, InputMapOut};
use super::output_map::{self, OutputMapIds};
use super::{block_forward, embed, model_rng, register_base, unembed, HostIds, ModelError};

pub struct IgcModel {
    pub store: ParamStore,
    pub cfg: RunConfig,
    pub vocab_size: usize,
    pub host: HostIds,
    pub im: InputMapIds,
    pub om: OutputMapIds,
    pub pretrained: bool,
}

/// Cached input-mapping and calculator outputs, keyed by
/// (sequence id, anchor position).
#[derive(Default)]
pub struct IgcCache {
    map: HashMap<(u64, usize), CachedIgc>,
}

#[derive(Clone)]
pub struct CachedIgc {
    pub request: CalcRequest,
    pub result: Option<CalcResult>,
    pub payload: Vec<f64>,
}

impl IgcCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Where the conditioning result comes from during a forward pass.
enum ResultSource<'a> {
    /// Encode the annotation's ground truth (teacher substitution).
    Teacher(&'a ArithAnnotation),
    /// Run the calculator on the hardened input-mapping output.
    Calculator,
}

#[derive(Debug)]
pub struct TrainForward {
    /// Logits for post-anchor predictions, [T-1-t, vocab].
    pub logits: NodeId,
    /// Mean cross entropy over post-anchor targets.
    pub lm_loss: NodeId,
    /// Summed slot cross entropy, present for annotated samples in modes
    /// with the module attached.
    pub aux_loss: Option<NodeId>,
    /// Per-token gates [n, 1] when the module ran.
    pub gates: Option<NodeId>,
    /// The hardened request the input mapping produced.
    pub request: Option<CalcRequest>,
    /// The result injected into the output mapping.
    pub result: Option<CalcResult>,
}

pub struct GenOutput {
    /// Generated ids, prompt excluded, stop token excluded.
    pub tokens: Vec<u32>,
    pub calculator_invocations: usize,
    /// One entry per actual calculator invocation.
    pub calc_log: Vec<CalcResult>,
}

struct IgcPass {
    im: Option<InputMapOut>,
    request: Option<CalcRequest>,
    result: Option<CalcResult>,
    gates: Option<NodeId>,
    calc_invoked: bool,
}

impl IgcModel {
    pub fn new(cfg: &RunConfig, vocab_size: usize, seed: u64) -> IgcModel {
        let mut rng = model_rng(seed);
        let mut store = ParamStore::new();
        let host = register_base(&mut store, cfg, vocab_size, &mut rng);
        let im = input_map::register_input_map(&mut store, cfg, &mut rng);
        let om = output_map::register_output_map(&mut store, cfg, &mut rng);
        IgcModel {
            store,
            cfg: cfg.clone(),
            vocab_size,
            host,
            im,
            om,
            pretrained: false,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        checkpoint::save(&self.store, dir)?;
        Ok(())
    }

    /// Load a full checkpoint (base and module parameters).
    pub fn load_full(&mut self, dir: &Path) -> Result<(), ModelError> {
        checkpoint::load_into(&mut self.store, dir)?;
        self.pretrained = true;
        Ok(())
    }

    /// Load only the frozen-base parameters from a pretraining checkpoint,
    /// leaving this model's module initialization untouched.
    pub fn load_base(&mut self, dir: &Path) -> Result<(), ModelError> {
        let raw = checkpoint::read_raw(dir)?;
        for id in self.store.ids().collect::<Vec<_>>() {
            let name = self.store.name(id).to_string();
            if !name.starts_with("base.") {
                continue;
            }
            let entry = raw.iter().find(|(n, _, _)| *n == name).ok_or(
                checkpoint::CheckpointError::MissingParam { name: name.clone() },
            )?;
            if entry.1 != self.store.get(id).shape {
                return Err(checkpoint::CheckpointError::ShapeMismatch {
                    name,
                    found: entry.1.clone(),
                    expected: self.store.get(id).shape.clone(),
                }
                .into());
            }
            self.store.get_mut(id).values = entry.2.clone();
        }
        self.pretrained = true;
        Ok(())
    }

    /// Freeze the base so only the module's parameters train. Rejected
    /// before a pretrained checkpoint is in place.
    pub fn freeze_base(&mut self) -> Result<(), ModelError> {
        if !self.pretrained {
            return Err(ModelError::FreezeBeforePretrain);
        }
        self.store.freeze_prefix("base.");
        Ok(())
    }

    pub fn unfreeze_base(&mut self) {
        self.store.unfreeze_prefix("base.");
    }

    pub fn trainable_params(&self) -> usize {
        self.store.count_trainable()
    }

    pub fn base_params(&self) -> usize {
        self.store.count_params("base.")
    }

    pub fn module_params(&self) -> usize {
        self.store.count_params("igc.")
    }

    fn validate_tokens(&self, tokens: &[u32]) -> Result<(), ModelError> {
        if tokens.len() > self.cfg.model.context {
            return Err(ModelError::ContextOverflow {
                len: tokens.len(),
                context: self.cfg.model.context,
            });
        }
        for &t in tokens {
            if t as usize >= self.vocab_size {
                return Err(ModelError::BadToken(t, self.vocab_size));
            }
        }
        Ok(())
    }

    /// Flatten a calculator result into the conditioning layout:
    /// magnitude one-hot, sign, operator one-hot.
    fn result_vec(&self, result: &CalcResult) -> Vec<f64> {
        let mut v = Vec::with_capacity(output_map::result_dim(&self.cfg));
        v.extend_from_slice(&result.magnitude.probs);
        v.extend_from_slice(&result.sign);
        let mut op = [0.0; 4];
        op[result.operator.index()] = 1.0;
        v.extend_from_slice(&op);
        v
    }

    /// Run the module between the lower and upper block stacks.
    #[allow(clippy::too_many_arguments)]
    fn igc_pass(
        &self,
        tape: &mut Tape,
        x: NodeId,
        t: usize,
        len: usize,
        mode: Mode,
        source: ResultSource,
        cached: Option<&CachedIgc>,
        force_zero_gates: bool,
    ) -> Result<(NodeId, IgcPass), ModelError> {
        let h_pre = tape.slice_rows(x, 0, t)?;
        let h_anchor = tape.slice_rows(x, t, t + 1)?;

        let (im_out, request, payload_node, mut calc_invoked) = match cached {
            Some(c) => {
                let payload = tape.constant(
                    vec![1, output_map::payload_dim(&self.cfg)],
                    c.payload.clone(),
                );
                (None, c.request.clone(), payload, false)
            }
            None => {
                let im_out = input_map::forward(tape, &self.im, &self.cfg, h_pre, h_anchor)?;
                let request = input_map::to_request(
                    tape,
                    &im_out,
                    self.cfg.codec.width,
                    self.cfg.codec.alignment,
                );
                let payload = im_out.payload;
                (Some(im_out), request, payload, false)
            }
        };

        // the result entering the output mapping is a constant: the
        // calculator (or the teacher) blocks every gradient through it
        let result: Option<CalcResult> = match (cached, mode.uses_calculator()) {
            (Some(c), _) => c.result.clone(),
            (None, false) => None,
            (None, true) => Some(match source {
                ResultSource::Teacher(ann) => encode_signed(
                    ann.result,
                    self.cfg.codec.width,
                    self.cfg.codec.alignment,
                    ann.operator,
                )?,
                ResultSource::Calculator => {
                    calc_invoked = true;
                    run_calculator(&request)?
                }
            }),
        };

        let result_part = match &result {
            Some(r) => {
                let v = self.result_vec(r);
                tape.constant(vec![1, v.len()], v)
            }
            None => tape.constant(
                vec![1, output_map::result_dim(&self.cfg)],
                vec![0.0; output_map::result_dim(&self.cfg)],
            ),
        };
        let payload_part = if mode.uses_shortcut() {
            payload_node
        } else {
            tape.constant(
                vec![1, output_map::payload_dim(&self.cfg)],
                vec![0.0; output_map::payload_dim(&self.cfg)],
            )
        };
        let cond = tape.concat_cols(&[result_part, payload_part])?;

        let h_post = tape.slice_rows(x, t, len)?;
        let om_out =
            output_map::forward(tape, &self.om, &self.cfg, h_post, cond, force_zero_gates)?;
        let joined = tape.concat_rows(h_pre, om_out.modified)?;
        Ok((
            joined,
            IgcPass {
                im: im_out,
                request: Some(request),
                result,
                gates: Some(om_out.gates),
                calc_invoked,
            },
        ))
    }

    /// Transformer forward with the module attached, producing logits for
    /// `logit_rows`.
    #[allow(clippy::too_many_arguments)]
    fn forward_rows(
        &self,
        tape: &mut Tape,
        tokens: &[u32],
        anchor: Option<usize>,
        mode: Mode,
        source: ResultSource,
        cached: Option<&CachedIgc>,
        force_zero_gates: bool,
        logit_rows: (usize, usize),
    ) -> Result<(NodeId, IgcPass), ModelError> {
        self.validate_tokens(tokens)?;
        let heads = self.cfg.model.heads;
        let ins = self.cfg.igc.insertion_layer;
        let mut x = embed(tape, &self.host, tokens)?;
        for b in &self.host.blocks[..ins] {
            x = block_forward(tape, x, b, heads)?;
        }
        let mut pass = IgcPass {
            im: None,
            request: None,
            result: None,
            gates: None,
            calc_invoked: false,
        };
        if mode.has_igc() {
            if let Some(t) = anchor {
                let (joined, p) = self.igc_pass(
                    tape,
                    x,
                    t,
                    tokens.len(),
                    mode,
                    source,
                    cached,
                    force_zero_gates,
                )?;
                x = joined;
                pass = p;
            }
        }
        for b in &self.host.blocks[ins..] {
            x = block_forward(tape, x, b, heads)?;
        }
        let rows = tape.slice_rows(x, logit_rows.0, logit_rows.1)?;
        let logits = unembed(tape, rows, &self.host)?;
        Ok((logits, pass))
    }

    /// Plain language-model forward over every position; used by
    /// pretraining. Returns (logits [T-1, V], mean LM loss).
    pub fn forward_lm(
        &self,
        tape: &mut Tape,
        tokens: &[u32],
    ) -> Result<(NodeId, NodeId), ModelError> {
        let t = tokens.len();
        let (logits, _) = self.forward_rows(
            tape,
            tokens,
            None,
            Mode::Plain,
            ResultSource::Calculator,
            None,
            false,
            (0, t - 1),
        )?;
        let targets: Vec<usize> = tokens[1..].iter().map(|&x| x as usize).collect();
        let ce = tape.cross_entropy_rows(logits, &targets)?;
        let loss = tape.mean_all(ce);
        Ok((logits, loss))
    }

    /// Teacher-forced training forward. The language-model loss covers
    /// post-anchor predictions; with `substitute_teacher` the calculator's
    /// output is replaced by the encoded ground truth for annotated
    /// samples. Annotated samples must carry an anchor.
    pub fn forward_train(
        &self,
        tape: &mut Tape,
        tokens: &[u32],
        anchor: Option<usize>,
        annotation: Option<&ArithAnnotation>,
        mode: Mode,
        substitute_teacher: bool,
        force_zero_gates: bool,
    ) -> Result<TrainForward, ModelError> {
        if annotation.is_some() && anchor.is_none() {
            return Err(ModelError::MissingAnchor);
        }
        let t = anchor.unwrap_or(0);
        let len = tokens.len();
        let source = match (annotation, substitute_teacher) {
            (Some(ann), true) => ResultSource::Teacher(ann),
            _ => ResultSource::Calculator,
        };
        // predictions from the anchor row onward (row p predicts p+1)
        let rows = if anchor.is_some() {
            (t, len - 1)
        } else {
            (0, len - 1)
        };
        let (logits, pass) = self.forward_rows(
            tape,
            tokens,
            anchor,
            mode,
            source,
            None,
            force_zero_gates,
            rows,
        )?;
        let targets: Vec<usize> = tokens[rows.0 + 1..].iter().map(|&x| x as usize).collect();
        let ce = tape.cross_entropy_rows(logits, &targets)?;
        let lm_loss = tape.mean_all(ce);

        let aux_loss = match (&pass.im, annotation) {
            (Some(im), Some(ann)) => Some(self.aux_loss(tape, im, ann)?),
            _ => None,
        };
        Ok(TrainForward {
            logits,
            lm_loss,
            aux_loss,
            gates: pass.gates,
            request: pass.request,
            result: pass.result,
        })
    }

    /// Summed cross entropy over every slot of the input mapping against
    /// the annotation: W slots per operand (digit classes, placeholder
    /// included when left-aligned) plus the 4-way operator.
    fn aux_loss(
        &self,
        tape: &mut Tape,
        im: &InputMapOut,
        ann: &ArithAnnotation,
    ) -> Result<NodeId, ModelError> {
        let w = self.cfg.codec.width;
        let align = self.cfg.codec.alignment;
        let a_classes = encode(ann.operand_a, w, align)?.argmax_classes();
        let b_classes = encode(ann.operand_b, w, align)?.argmax_classes();
        let mut total: Option<NodeId> = None;
        let add = |tape: &mut Tape, node: NodeId, total: &mut Option<NodeId>| {
            *total = Some(match *total {
                None => node,
                Some(acc) => tape.add(acc, node).expect("scalar add"),
            });
        };
        for (i, &cls) in a_classes.iter().enumerate() {
            let ce = tape.cross_entropy_rows(im.slot_logits[i], &[cls])?;
            let s = tape.sum_all(ce);
            add(tape, s, &mut total);
        }
        for (i, &cls) in b_classes.iter().enumerate() {
            let ce = tape.cross_entropy_rows(im.slot_logits[w + i], &[cls])?;
            let s = tape.sum_all(ce);
            add(tape, s, &mut total);
        }
        let ce = tape.cross_entropy_rows(im.op_logits, &[ann.operator.index()])?;
        let s = tape.sum_all(ce);
        add(tape, s, &mut total);
        Ok(total.expect("at least one slot"))
    }

    /// Greedy generation. The module's input mapping and calculator run
    /// once, at the step where the anchor is consumed; with `use_cache`
    /// their outputs are reused on subsequent steps, otherwise they are
    /// recomputed (which must give identical output, since pre-anchor rows
    /// are immutable during decoding).
    #[allow(clippy::too_many_arguments)]
    pub fn generate(
        &self,
        prompt: &[u32],
        mode: Mode,
        max_new: usize,
        cache: &mut IgcCache,
        seq_id: u64,
        use_cache: bool,
    ) -> Result<GenOutput, ModelError> {
        let anchor = prompt.iter().position(|&id| id == ANCHOR);
        let mut tokens = prompt.to_vec();
        let mut out = GenOutput {
            tokens: Vec::new(),
            calculator_invocations: 0,
            calc_log: Vec::new(),
        };
        for _ in 0..max_new {
            let mut tape = Tape::new(&self.store);
            let len = tokens.len();
            let key = anchor.map(|t| (seq_id, t));
            let cached = key.and_then(|k| {
                if use_cache {
                    cache.map.get(&k).cloned()
                } else {
                    None
                }
            });
            let (logits, pass) = self.forward_rows(
                &mut tape,
                &tokens,
                anchor,
                mode,
                ResultSource::Calculator,
                cached.as_ref(),
                false,
                (len - 1, len),
            )?;
            if pass.calc_invoked {
                out.calculator_invocations += 1;
                if let Some(r) = &pass.result {
                    out.calc_log.push(r.clone());
                }
            }
            if use_cache && cached.is_none() {
                if let (Some(k), Some(req)) = (key, pass.request.clone()) {
                    let payload = match &pass.im {
                        Some(im) => tape.values(im.payload).to_vec(),
                        None => vec![0.0; output_map::payload_dim(&self.cfg)],
                    };
                    cache.map.insert(
                        k,
                        CachedIgc {
                            request: req,
                            result: pass.result.clone(),
                            payload,
                        },
                    );
                }
            }
            let row = tape.values(logits);
            let mut best = 0usize;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            let next = best as u32;
            if next == END {
                break;
            }
            out.tokens.push(next);
            tokens.push(next);
            if tokens.len() >= self.cfg.model.context {
                break;
            }
        }
        Ok(out)
    }

    /// Dynamic gate value for every post-anchor token of a sequence, in
    /// evaluation conditions (no teacher substitution).
    pub fn gate_report(
        &self,
        tokens: &[u32],
        anchor: Option<usize>,
        mode: Mode,
    ) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new(&self.store);
        let len = tokens.len();
        let (_, pass) = self.forward_rows(
            &mut tape,
            tokens,
            anchor,
            mode,
            ResultSource::Calculator,
            None,
            false,
            (len - 1, len),
        )?;
        Ok(match pass.gates {
            Some(g) => tape.values(g).to_vec(),
            None => Vec::new(),
        })
    }
}
