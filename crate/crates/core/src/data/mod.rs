//! Synthetic data: arithmetic templates with ground-truth annotations,
//! alternate phrasings, non-arithmetic distractors, operand samplers, and
//! the pretraining corpus with guessed answers.
//!
//! Operand digit lengths follow configurable weights (short lengths
//! dominate by default; in practice almost all numbers a model meets are
//! short). Division pairs are constructed as (q*b, b) in exact mode so the
//! quotient is an integer. Subtraction includes a < b at a configured rate
//! so the sign path is exercised. Train and eval operand triples are
//! disjoint, operators are exactly balanced per split, and a frequency cap
//! on operand-region token n-grams keeps the corpus diverse.

pub mod filter;
pub mod io;

use crate::calculator::exact_result;
use crate::codec::{digit_count, Operator, OPERATORS};
use crate::config::{DivisionMode, RunConfig};
use crate::tokenizer::{TokenSequence, Vocabulary, ANCHOR, BEGIN, END};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("tokenizer error while building a sample: {0}")]
    Tokenizer(#[from] crate::tokenizer::TokenizerError),
    #[error("infeasible constraints: {0}")]
    Infeasible(String),
    #[error("could not reach {target} records after filtering; short by {missing}")]
    Shortfall { target: usize, missing: usize },
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("dataset parse error on line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("dataset file {path} has no header record")]
    MissingHeader { path: String },
    #[error("arithmetic record lacks an annotation: {text}")]
    MissingAnnotation { text: String },
}

/// Ground truth for one arithmetic sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithAnnotation {
    pub operator: Operator,
    pub operand_a: u64,
    pub operand_b: u64,
    /// Exact signed result.
    pub result: i64,
    pub anchor_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "eval-bigbench-style")]
    EvalBigbench,
    #[serde(rename = "eval-alt-template")]
    EvalAltTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub seq: TokenSequence,
    /// Absent for distractors.
    pub annotation: Option<ArithAnnotation>,
    pub split: Split,
    pub template: String,
}

impl SampleRecord {
    pub fn is_distractor(&self) -> bool {
        self.annotation.is_none()
    }

    /// The answer string the model is expected to produce.
    pub fn answer_text(&self, vocab: &Vocabulary) -> Option<String> {
        let t = self.seq.anchor_index?;
        let answer = &self.seq.ids[t + 1..];
        let answer: Vec<u32> = answer
            .iter()
            .copied()
            .take_while(|&id| id != END)
            .collect();
        vocab.detokenize(&answer).ok()
    }
}

// ── grammar ─────────────────────────────────────────────────────────

const NOUNS: [&str; 12] = [
    "apple", "book", "car", "cloud", "grass", "house", "river", "rose", "sky", "stone", "sun",
    "tree",
];
const COLOR_PAIRS: [(&str, &str); 6] = [
    ("apple", "red"),
    ("sky", "blue"),
    ("grass", "green"),
    ("sun", "yellow"),
    ("cloud", "white"),
    ("stone", "gray"),
];
const ADJECTIVES: [&str; 8] = ["big", "small", "fast", "slow", "hot", "cold", "old", "new"];
const ANTONYM_PAIRS: [(&str, &str); 4] = [
    ("big", "small"),
    ("fast", "slow"),
    ("hot", "cold"),
    ("old", "new"),
];
const VERBS: [&str; 4] = ["sees", "finds", "likes", "moves"];

/// Every word the template grammar can produce.
pub fn grammar_words() -> Vec<&'static str> {
    let mut words = vec![
        "What", "is", "Compute", "equals", "User", "what", "Assistant", "How", "much", "Please",
        "calculate", "Repeat", "the", "word", "Say", "color", "Name", "opposite", "of", "The",
        "A", "a", "plus", "minus", "times", "over",
    ];
    words.extend(NOUNS);
    words.extend(COLOR_PAIRS.iter().map(|(_, c)| *c));
    words.extend(ADJECTIVES);
    words.extend(VERBS);
    words
}

/// The vocabulary every stage shares.
pub fn build_vocab() -> Vocabulary {
    Vocabulary::build(&grammar_words())
}

pub const N_ARITH_TEMPLATES: usize = 6;
/// Template 0 is the benchmark-style phrasing; the rest are alternates.
pub fn arith_template(idx: usize, a: u64, op: Operator, b: u64) -> String {
    let sym = op.symbol();
    let word = op.word();
    match idx {
        0 => format!("What is {a} {sym} {b}?"),
        1 => format!("Compute {a} {sym} {b}."),
        2 => format!("{a} {word} {b} equals?"),
        3 => format!("User: what is {a} {sym} {b}? Assistant:"),
        4 => format!("How much is {a} {word} {b}?"),
        5 => format!("Please calculate {a} {sym} {b}."),
        _ => unreachable!("template index out of range"),
    }
}

fn distractor_template(rng: &mut ChaCha8Rng) -> (String, String, String) {
    let kind = rng.gen_range(0..4u32);
    match kind {
        0 => {
            let w = *pick(rng, &NOUNS);
            (format!("Repeat the word {w}."), w.into(), "repeat".into())
        }
        1 => {
            let w = *pick(rng, &ADJECTIVES);
            (format!("Say the word {w}."), w.into(), "say".into())
        }
        2 => {
            let (n, c) = *pick(rng, &COLOR_PAIRS);
            (format!("What color is the {n}?"), c.into(), "color".into())
        }
        _ => {
            let (x, y) = *pick(rng, &ANTONYM_PAIRS);
            let swap = rng.gen_bool(0.5);
            let (q, ans) = if swap { (x, y) } else { (y, x) };
            (
                format!("Name the opposite of {q}."),
                ans.into(),
                "opposite".into(),
            )
        }
    }
}

fn filler_sentence(rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0..3u32) {
        0 => {
            let adj = *pick(rng, &ADJECTIVES);
            let n1 = *pick(rng, &NOUNS);
            let v = *pick(rng, &VERBS);
            let n2 = *pick(rng, &NOUNS);
            format!("The {adj} {n1} {v} the {n2}.")
        }
        1 => {
            let n = *pick(rng, &NOUNS);
            let adj = *pick(rng, &ADJECTIVES);
            format!("A {n} is {adj}.")
        }
        _ => {
            let n1 = *pick(rng, &NOUNS);
            let v = *pick(rng, &VERBS);
            let adj = *pick(rng, &ADJECTIVES);
            let n2 = *pick(rng, &NOUNS);
            format!("The {n1} {v} a {adj} {n2}.")
        }
    }
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> &'a T {
    &xs[rng.gen_range(0..xs.len())]
}

// ── operand sampling ────────────────────────────────────────────────

fn sample_len(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if x < w {
            return i + 1;
        }
        x -= w;
    }
    weights.len()
}

fn sample_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> u64 {
    let len = sample_len(rng, weights);
    sample_value(rng, len)
}

fn sample_value(rng: &mut ChaCha8Rng, len: usize) -> u64 {
    if len == 1 {
        rng.gen_range(0..10)
    } else {
        let lo = 10u64.pow(len as u32 - 1);
        let hi = 10u64.pow(len as u32);
        rng.gen_range(lo..hi)
    }
}

/// Sample an operand pair for `op` honoring the division mode, the
/// negative-subtraction rate and the product-width limit.
fn sample_operands(
    rng: &mut ChaCha8Rng,
    op: Operator,
    weights: &[f64],
    division_mode: DivisionMode,
    negative_sub_frac: f64,
) -> Result<(u64, u64), DataError> {
    let max_len = weights.len();
    match op {
        Operator::Add | Operator::Mul => Ok((
            sample_weighted(rng, weights),
            sample_weighted(rng, weights),
        )),
        Operator::Sub => {
            let mut a = sample_weighted(rng, weights);
            let mut b = sample_weighted(rng, weights);
            if rng.gen_bool(negative_sub_frac) {
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
            } else if a < b {
                std::mem::swap(&mut a, &mut b);
            }
            Ok((a, b))
        }
        Operator::Div => match division_mode {
            DivisionMode::Truncating => {
                let a = sample_weighted(rng, weights);
                let mut b = sample_weighted(rng, weights);
                while b == 0 {
                    b = sample_weighted(rng, weights);
                }
                Ok((a, b))
            }
            DivisionMode::Exact => {
                for _ in 0..200 {
                    let mut b = sample_weighted(rng, weights);
                    while b == 0 {
                        b = sample_weighted(rng, weights);
                    }
                    let q = sample_weighted(rng, weights);
                    let a = q.checked_mul(b).unwrap_or(u64::MAX);
                    if digit_count(a) <= max_len {
                        return Ok((a, b));
                    }
                }
                Err(DataError::Infeasible(format!(
                    "could not construct an exact division within {max_len} digits"
                )))
            }
        },
    }
}

// ── record assembly ─────────────────────────────────────────────────

/// Build the full token sequence `[begin] user [anchor] answer [end]`.
pub fn assemble_sequence(
    vocab: &Vocabulary,
    user_text: &str,
    answer_text: &str,
) -> Result<(TokenSequence, usize), DataError> {
    let user = vocab.tokenize(user_text)?;
    let answer = vocab.tokenize(answer_text)?;
    let anchor_index = 1 + user.len();
    let mut ids = Vec::with_capacity(user.len() + answer.len() + 3);
    ids.push(BEGIN);
    ids.extend_from_slice(&user);
    ids.push(ANCHOR);
    ids.extend_from_slice(&answer);
    ids.push(END);
    let seq = TokenSequence {
        ids,
        anchor_index: Some(anchor_index),
        text: format!("{user_text} <anchor> {answer_text}"),
    };
    seq.validate().expect("anchor index is correct");
    Ok((seq, anchor_index))
}

fn make_arith_record(
    vocab: &Vocabulary,
    template_idx: usize,
    op: Operator,
    a: u64,
    b: u64,
    split: Split,
) -> Result<SampleRecord, DataError> {
    let result = exact_result(op, a, b).expect("generator never divides by zero");
    let user = arith_template(template_idx, a, op, b);
    let (seq, anchor_index) = assemble_sequence(vocab, &user, &result.to_string())?;
    Ok(SampleRecord {
        seq,
        annotation: Some(ArithAnnotation {
            operator: op,
            operand_a: a,
            operand_b: b,
            result,
            anchor_index,
        }),
        split,
        template: format!("arith-{template_idx}"),
    })
}

fn make_distractor_record(
    vocab: &Vocabulary,
    rng: &mut ChaCha8Rng,
    split: Split,
) -> Result<SampleRecord, DataError> {
    let (user, answer, name) = distractor_template(rng);
    let (seq, _) = assemble_sequence(vocab, &user, &answer)?;
    Ok(SampleRecord {
        seq,
        annotation: None,
        split,
        template: format!("distractor-{name}"),
    })
}

// ── dataset generation ──────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenStats {
    pub n_train_arith: usize,
    pub n_train_distractor: usize,
    pub n_eval_bigbench: usize,
    pub n_eval_alt: usize,
    pub n_eval_distractor: usize,
    pub dropped_by_filter: usize,
    pub topped_up: usize,
}

#[derive(Debug)]
pub struct GenOutcome {
    pub records: Vec<SampleRecord>,
    pub stats: GenStats,
}

/// Weighted template choice for the train split: benchmark phrasing
/// dominates, alternates share the rest.
fn train_template(rng: &mut ChaCha8Rng) -> usize {
    if rng.gen_bool(0.4) {
        0
    } else {
        1 + rng.gen_range(0..N_ARITH_TEMPLATES - 1)
    }
}

struct TripleSet(HashSet<(u8, u64, u64)>);

impl TripleSet {
    fn insert(&mut self, op: Operator, a: u64, b: u64) -> bool {
        self.0.insert((op.index() as u8, a, b))
    }
    fn contains(&self, op: Operator, a: u64, b: u64) -> bool {
        self.0.contains(&(op.index() as u8, a, b))
    }
}

/// Generate the full dataset: evaluation splits first (they own their
/// operand triples), then the train split filtered against the n-gram cap
/// and topped back up to the target count.
pub fn generate(cfg: &RunConfig, vocab: &Vocabulary) -> Result<GenOutcome, DataError> {
    let d = &cfg.data;
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
    let mut taken = TripleSet(HashSet::new());
    let mut records: Vec<SampleRecord> = Vec::new();

    // evaluation splits: benchmark phrasing only, then alternates
    for (split, n, templates) in [
        (Split::EvalBigbench, d.n_eval_bigbench, 0..1usize),
        (Split::EvalAltTemplate, d.n_eval_alt, 1..N_ARITH_TEMPLATES),
    ] {
        let mut count = 0;
        let mut op_cursor = 0;
        while count < n {
            let op = OPERATORS[op_cursor % 4];
            let (a, b) = sample_operands(
                &mut rng,
                op,
                &d.digit_len_weights,
                d.division_mode,
                d.negative_sub_frac,
            )?;
            if taken.contains(op, a, b) {
                continue;
            }
            taken.insert(op, a, b);
            let t = templates.start + rng.gen_range(0..templates.len());
            records.push(make_arith_record(vocab, t, op, a, b, split)?);
            count += 1;
            op_cursor += 1;
        }
    }

    // eval distractors ride along with the benchmark split; they carry no
    // annotation and only feed the gate metric
    for _ in 0..d.n_eval_distractor {
        records.push(make_distractor_record(vocab, &mut rng, Split::EvalBigbench)?);
    }

    // train split: generate, filter, top up
    let cap_count = ((d.ngram_cap * d.n_train as f64).floor() as usize).max(1);
    let mut counter = filter::NgramCounter::new(cap_count);
    let mut train: Vec<SampleRecord> = Vec::new();
    let mut dropped = 0usize;
    let mut topped_up = 0usize;
    let mut op_counts = [0usize; 4];
    let target_per_op = d.n_train / 4;
    let mut attempts = 0usize;
    let attempt_budget = d.n_train * 60;
    while train.len() < d.n_train {
        attempts += 1;
        if attempts > attempt_budget {
            return Err(DataError::Shortfall {
                target: d.n_train,
                missing: d.n_train - train.len(),
            });
        }
        // keep operators balanced: draw for the most deficient operator
        let op = OPERATORS[(0..4)
            .min_by_key(|&i| {
                if op_counts[i] >= target_per_op && d.n_train % 4 == 0 {
                    usize::MAX
                } else {
                    op_counts[i]
                }
            })
            .unwrap()];
        let (a, b) = sample_operands(
            &mut rng,
            op,
            &d.digit_len_weights,
            d.division_mode,
            d.negative_sub_frac,
        )?;
        if taken.contains(op, a, b) {
            continue;
        }
        let rec = make_arith_record(vocab, train_template(&mut rng), op, a, b, Split::Train)?;
        if !counter.try_admit(&rec) {
            dropped += 1;
            if train.len() + dropped > d.n_train {
                topped_up += 1;
            }
            continue;
        }
        taken.insert(op, a, b);
        op_counts[op.index()] += 1;
        train.push(rec);
    }

    let n_train_distractor = (d.distractor_frac * d.n_train as f64).round() as usize;
    for _ in 0..n_train_distractor {
        train.push(make_distractor_record(vocab, &mut rng, Split::Train)?);
    }

    let stats = GenStats {
        n_train_arith: d.n_train,
        n_train_distractor,
        n_eval_bigbench: d.n_eval_bigbench,
        n_eval_alt: d.n_eval_alt,
        n_eval_distractor: d.n_eval_distractor,
        dropped_by_filter: dropped,
        topped_up,
    };

    // train order: shuffle arithmetic and distractors together
    train.shuffle(&mut rng);
    records.extend(train);
    Ok(GenOutcome { records, stats })
}

// ── pretraining corpus ──────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretrainKind {
    Arith,
    Distractor,
    Filler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub seq: TokenSequence,
    #[serde(rename = "source")]
    pub kind: PretrainKind,
}

/// A pretraining sample is a raw token sequence; answers are the base
/// model's world, not ground truth, so there is no annotation.
pub fn generate_pretrain(
    cfg: &RunConfig,
    vocab: &Vocabulary,
) -> Result<Vec<PretrainRecord>, DataError> {
    let p = &cfg.pretrain;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut out = Vec::with_capacity(p.n_samples);
    for _ in 0..p.n_samples {
        let r: f64 = rng.gen();
        if r < p.filler_frac {
            let text = filler_sentence(&mut rng);
            let ids = {
                let mut ids = vec![BEGIN];
                ids.extend(vocab.tokenize(&text)?);
                ids.push(END);
                ids
            };
            out.push(PretrainRecord {
                seq: TokenSequence {
                    ids,
                    anchor_index: None,
                    text,
                },
                kind: PretrainKind::Filler,
            });
        } else if r < p.filler_frac + p.distractor_frac {
            let (user, answer, _) = distractor_template(&mut rng);
            let (seq, _) = assemble_sequence(vocab, &user, &answer)?;
            out.push(PretrainRecord {
                seq,
                kind: PretrainKind::Distractor,
            });
        } else {
            let op = OPERATORS[rng.gen_range(0..4)];
            let (a, b) = sample_operands(
                &mut rng,
                op,
                &p.digit_len_weights,
                cfg.data.division_mode,
                cfg.data.negative_sub_frac,
            )?;
            let true_result = exact_result(op, a, b).expect("b nonzero by construction");
            let answer = guess_answer(&mut rng, &p.guess, op, a, b, true_result);
            let template = rng.gen_range(0..N_ARITH_TEMPLATES);
            let user = arith_template(template, a, op, b);
            let (seq, _) = assemble_sequence(vocab, &user, &answer)?;
            out.push(PretrainRecord {
                seq,
                kind: PretrainKind::Arith,
            });
        }
    }
    Ok(out)
}

/// The pretraining label: correct with a probability that falls with
/// operand length, otherwise a format-plausible corruption of the true
/// answer. This is what gives the frozen base its partial heuristics.
fn guess_answer(
    rng: &mut ChaCha8Rng,
    guess: &crate::config::GuessConfig,
    op: Operator,
    a: u64,
    b: u64,
    true_result: i64,
) -> String {
    let len = digit_count(a).max(digit_count(b));
    let table = match op {
        Operator::Add => &guess.add,
        Operator::Sub => &guess.sub,
        Operator::Mul => &guess.mul,
        Operator::Div => &guess.div,
    };
    let p = table.get(len - 1).copied().unwrap_or(0.0);
    if rng.gen_bool(p) {
        return true_result.to_string();
    }
    // corrupt: resample digits, occasionally jitter the length
    let negative = true_result < 0;
    let mut digits: Vec<u8> = true_result
        .unsigned_abs()
        .to_string()
        .bytes()
        .map(|c| c - b'0')
        .collect();
    for d in digits.iter_mut() {
        if rng.gen_bool(0.5) {
            *d = rng.gen_range(0..10);
        }
    }
    if rng.gen_bool(0.15) && digits.len() > 1 {
        digits.pop();
    } else if rng.gen_bool(0.15) {
        digits.push(rng.gen_range(0..10));
    }
    while digits.len() > 1 && digits[0] == 0 {
        digits.remove(0);
    }
    let s: String = digits.iter().map(|&d| (b'0' + d) as char).collect();
    if negative && s != "0" {
        format!("-{s}")
    } else {
        s
    }
}

#[cfg(test)]
pub(crate) fn make_test_record(op: Operator, a: u64, b: u64, split: Split) -> SampleRecord {
    let vocab = build_vocab();
    make_arith_record(&vocab, 0, op, a, b, split).unwrap()
}

#[cfg(test)]
pub(crate) fn make_test_distractor(rng: &mut ChaCha8Rng) -> SampleRecord {
    let vocab = build_vocab();
    make_distractor_record(&vocab, rng, Split::Train).unwrap()
}
