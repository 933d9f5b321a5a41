//! Training loops and evaluation: base pretraining on the guessed-answer
//! corpus, module finetuning with teacher substitution and the auxiliary
//! loss, greedy exact-match evaluation, and the ablation matrix.

pub mod ablate;
pub mod metrics;

use crate::array::optim::Optimizer;
use crate::array::tape::Tape;
use crate::calculator::CalcResult;
use crate::config::{Mode, RunConfig};
use crate::data::{SampleRecord, Split};
use crate::model::{IgcCache, IgcModel, ModelError};
use crate::tokenizer::{TokenSequence, Vocabulary, END};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use thiserror::Error;

pub use metrics::MetricsRow;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("array error: {0}")]
    Array(#[from] crate::array::ArrayError),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("data error: {0}")]
    Data(#[from] crate::data::DataError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("no records in split {0:?}")]
    EmptySplit(Split),
}

/// Exact-match scoring: the generated answer tokens, detokenized, must
/// equal the ground-truth string exactly.
pub fn answer_matches(vocab: &Vocabulary, generated: &[u32], expected: &str) -> bool {
    let upto_end: Vec<u32> = generated
        .iter()
        .copied()
        .take_while(|&id| id != END)
        .collect();
    match vocab.detokenize(&upto_end) {
        Ok(s) => s == expected,
        Err(_) => false,
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalResult {
    /// Correct/total per operator, indexed by `Operator::index`.
    pub per_op: [(usize, usize); 4],
    pub overall_correct: usize,
    pub overall_total: usize,
    /// Mean gate over post-anchor tokens of distractor records.
    pub mean_gate_distractor: f64,
    pub n_distractors: usize,
    /// Mean auxiliary loss over annotated records (teacher targets,
    /// evaluation forward), for the metrics row.
    pub aux_loss: f64,
    pub lm_loss: f64,
}

impl EvalResult {
    pub fn accuracy(&self) -> f64 {
        if self.overall_total == 0 {
            0.0
        } else {
            self.overall_correct as f64 / self.overall_total as f64
        }
    }

    pub fn op_accuracy(&self, op: usize) -> f64 {
        let (c, t) = self.per_op[op];
        if t == 0 {
            0.0
        } else {
            c as f64 / t as f64
        }
    }
}

/// Greedy-decode every annotated record of a split and score exact match;
/// measure mean gates on the split's distractor records. `limit` truncates
/// the arithmetic records for the cheap in-training evaluations.
pub fn evaluate(
    model: &IgcModel,
    vocab: &Vocabulary,
    records: &[SampleRecord],
    split: Split,
    mode: Mode,
    limit: Option<usize>,
    mut calc_log: Option<&mut Vec<CalcResult>>,
) -> Result<EvalResult, TrainError> {
    let mut r = EvalResult::default();
    let arith: Vec<&SampleRecord> = records
        .iter()
        .filter(|x| x.split == split && !x.is_distractor())
        .collect();
    if arith.is_empty() {
        return Err(TrainError::EmptySplit(split));
    }
    let n = limit.unwrap_or(arith.len()).min(arith.len());
    let max_new = model.cfg.train.max_new_tokens;
    for (i, rec) in arith[..n].iter().enumerate() {
        let ann = rec.annotation.as_ref().expect("filtered to annotated");
        let t = rec.seq.anchor_index.expect("arith records carry anchors");
        let prompt = &rec.seq.ids[..=t];
        let mut cache = IgcCache::new();
        let out = model.generate(prompt, mode, max_new, &mut cache, i as u64, true)?;
        let ok = answer_matches(vocab, &out.tokens, &ann.result.to_string());
        let op = ann.operator.index();
        r.per_op[op].1 += 1;
        r.overall_total += 1;
        if ok {
            r.per_op[op].0 += 1;
            r.overall_correct += 1;
        }
        if let Some(log) = calc_log.as_deref_mut() {
            log.extend(out.calc_log);
        }
    }
    // gates on distractors
    let mut gate_sum = 0.0;
    let mut gate_count = 0usize;
    for rec in records
        .iter()
        .filter(|x| x.split == split && x.is_distractor())
    {
        if let Some(t) = rec.seq.anchor_index {
            let gates = model.gate_report(&rec.seq.ids, Some(t), mode)?;
            gate_sum += gates.iter().sum::<f64>();
            gate_count += gates.len();
            r.n_distractors += 1;
        }
    }
    r.mean_gate_distractor = if gate_count == 0 {
        0.0
    } else {
        gate_sum / gate_count as f64
    };
    // evaluation-condition losses on a small annotated slice
    let mut lm = 0.0;
    let mut aux = 0.0;
    let mut aux_n = 0usize;
    for rec in arith.iter().take(n.min(64)) {
        let ann = rec.annotation.as_ref().unwrap();
        let t = rec.seq.anchor_index.unwrap();
        let mut tape = Tape::new(&model.store);
        let f = model.forward_train(
            &mut tape,
            &rec.seq.ids,
            Some(t),
            Some(ann),
            mode,
            false, // no teacher substitution outside training
            false,
        )?;
        lm += tape.values(f.lm_loss)[0];
        if let Some(a) = f.aux_loss {
            aux += tape.values(a)[0];
            aux_n += 1;
        }
    }
    let slice = n.min(64).max(1);
    r.lm_loss = lm / slice as f64;
    r.aux_loss = if aux_n == 0 { 0.0 } else { aux / aux_n as f64 };
    Ok(r)
}

/// Perplexity over the template grammar's deterministic skeleton.
///
/// Free slots of a sample are excluded: digit tokens, the operator token
/// (symbol or word form) and the first token after the begin marker (the
/// template choice itself). What remains — template words, punctuation,
/// the anchor, the end marker — is determined by the prefix, so a base
/// model that has learned the grammar drives this toward 1.
pub fn structural_perplexity(
    model: &IgcModel,
    vocab: &Vocabulary,
    seqs: &[TokenSequence],
) -> Result<f64, TrainError> {
    let free: Vec<u32> = ["+", "-", "*", "/", "plus", "minus", "times", "over"]
        .iter()
        .filter_map(|t| vocab.id(t))
        .collect();
    let mut nll = 0.0;
    let mut count = 0usize;
    for seq in seqs {
        let mut tape = Tape::new(&model.store);
        let (logits, _) = model.forward_lm(&mut tape, &seq.ids)?;
        let targets: Vec<usize> = seq.ids[1..].iter().map(|&x| x as usize).collect();
        let ce = tape.cross_entropy_rows(logits, &targets)?;
        let losses = tape.values(ce);
        for (i, &t) in targets.iter().enumerate() {
            let id = t as u32;
            if i == 0 || vocab.is_number(id) || free.contains(&id) {
                continue;
            }
            nll += losses[i];
            count += 1;
        }
    }
    Ok((nll / count.max(1) as f64).exp())
}

pub struct PretrainOutcome {
    pub model: IgcModel,
    pub structural_ppl: f64,
    pub epoch_losses: Vec<f64>,
}

/// Train the base transformer on the guessed-answer corpus. All parameters
/// train; the module's parameters also see gradient but are reinitialized
/// by every finetune run, so only the base matters here.
pub fn pretrain_base(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    corpus: &[TokenSequence],
    holdout: &[TokenSequence],
) -> Result<PretrainOutcome, TrainError> {
    let mut model = IgcModel::new(cfg, vocab.len(), cfg.pretrain.seed);
    let mut opt = Optimizer::new(cfg.optimizer(cfg.pretrain.lr));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.pretrain.seed ^ 0x9E37);
    let mut epoch_losses = Vec::new();
    let mut last_good: Option<crate::array::ParamStore> = None;

    for epoch in 0..cfg.pretrain.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.pretrain.batch_size) {
            model.store.zero_grads();
            let mut batch_loss = 0.0;
            for &i in batch {
                let seq = &corpus[i];
                let grads = {
                    let mut tape = Tape::new(&model.store);
                    let (_, loss) = model.forward_lm(&mut tape, &seq.ids)?;
                    batch_loss += tape.values(loss)[0];
                    tape.backward(loss)?
                };
                model.store.absorb(grads);
            }
            if !batch_loss.is_finite() {
                if let Some(prev) = last_good {
                    model.store = prev;
                    model.pretrained = true;
                    return Err(TrainError::Diverged { epoch });
                }
                return Err(TrainError::Diverged { epoch });
            }
            opt.step(&mut model.store, 1.0 / batch.len() as f64)?;
            epoch_loss += batch_loss;
            seen += batch.len();
        }
        let mean = epoch_loss / seen as f64;
        epoch_losses.push(mean);
        log::info!("pretrain epoch {epoch}: lm loss {mean:.4}");
        last_good = Some(model.store.clone());
    }
    model.pretrained = true;
    let structural_ppl = structural_perplexity(&model, vocab, holdout)?;
    log::info!("pretrain structural perplexity: {structural_ppl:.4}");
    Ok(PretrainOutcome {
        model,
        structural_ppl,
        epoch_losses,
    })
}

pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    pub final_bigbench: EvalResult,
    pub final_alt: EvalResult,
}

/// Finetune the module on a frozen base with teacher substitution and the
/// auxiliary loss. `seed` controls the module initialization already in
/// `model` only through the caller; here it only orders the data.
#[allow(clippy::too_many_arguments)]
pub fn train_igc(
    cfg: &RunConfig,
    model: &mut IgcModel,
    vocab: &Vocabulary,
    records: &[SampleRecord],
    seed: u64,
    epochs: usize,
    mode: Mode,
) -> Result<TrainOutcome, TrainError> {
    let train_idx: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    if train_idx.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    log::info!(
        "trainable parameters: {} of {} total ({} base, {} module)",
        model.trainable_params(),
        model.base_params() + model.module_params(),
        model.base_params(),
        model.module_params()
    );
    let mut opt = Optimizer::new(cfg.optimizer(cfg.train.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x5851_F42D).wrapping_add(1));
    let mut order = train_idx.clone();
    let mut metrics = Vec::new();
    let started = Instant::now();

    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut lm_sum = 0.0;
        let mut aux_sum = 0.0;
        let mut aux_n = 0usize;
        for batch in order.chunks(cfg.train.batch_size) {
            model.store.zero_grads();
            let mut batch_finite = true;
            for &i in batch {
                let rec = &records[i];
                let grads = {
                    let mut tape = Tape::new(&model.store);
                    let f = model.forward_train(
                        &mut tape,
                        &rec.seq.ids,
                        rec.seq.anchor_index,
                        rec.annotation.as_ref(),
                        mode,
                        true,
                        false,
                    )?;
                    let lm_v = tape.values(f.lm_loss)[0];
                    lm_sum += lm_v;
                    batch_finite &= lm_v.is_finite();
                    let total = match (f.aux_loss, cfg.train.lambda_aux) {
                        (Some(aux), lambda) if lambda > 0.0 => {
                            let v = tape.values(aux)[0];
                            aux_sum += v;
                            aux_n += 1;
                            let scaled = tape.scale(aux, lambda);
                            tape.add(f.lm_loss, scaled)?
                        }
                        (Some(aux), _) => {
                            aux_sum += tape.values(aux)[0];
                            aux_n += 1;
                            f.lm_loss
                        }
                        (None, _) => f.lm_loss,
                    };
                    tape.backward(total)?
                };
                model.store.absorb(grads);
            }
            if !batch_finite {
                return Err(TrainError::Diverged { epoch });
            }
            opt.step(&mut model.store, 1.0 / batch.len() as f64)?;
        }
        let lm_mean = lm_sum / order.len() as f64;
        let aux_mean = if aux_n == 0 { 0.0 } else { aux_sum / aux_n as f64 };

        if (epoch + 1) % cfg.train.eval_cadence == 0 || epoch + 1 == epochs {
            let ev = evaluate(
                model,
                vocab,
                records,
                Split::EvalBigbench,
                mode,
                Some(cfg.train.eval_subset),
                None,
            )?;
            let row = MetricsRow::from_eval(
                epoch + 1,
                "eval-bigbench-style",
                &ev,
                aux_mean,
                lm_mean,
                started.elapsed().as_secs_f64(),
            );
            log::info!(
                "epoch {}: overall {:.3} (add {:.3} sub {:.3} mul {:.3} div {:.3}) \
                 lm {:.4} aux {:.4} gate {:.4}",
                epoch + 1,
                row.overall,
                row.acc_add,
                row.acc_sub,
                row.acc_mul,
                row.acc_div,
                lm_mean,
                aux_mean,
                row.mean_gate_distractor
            );
            metrics.push(row);
        } else {
            log::debug!("epoch {}: lm {:.4} aux {:.4}", epoch + 1, lm_mean, aux_mean);
        }
    }

    let final_bigbench = evaluate(model, vocab, records, Split::EvalBigbench, mode, None, None)?;
    let final_alt = evaluate(model, vocab, records, Split::EvalAltTemplate, mode, None, None)?;
    metrics.push(MetricsRow::from_eval(
        epochs,
        "final-bigbench-style",
        &final_bigbench,
        0.0,
        0.0,
        started.elapsed().as_secs_f64(),
    ));
    metrics.push(MetricsRow::from_eval(
        epochs,
        "final-alt-template",
        &final_alt,
        0.0,
        0.0,
        started.elapsed().as_secs_f64(),
    ));
    Ok(TrainOutcome {
        metrics,
        final_bigbench,
        final_alt,
    })
}
