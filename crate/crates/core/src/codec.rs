//! Fixed-width categorical encodings of non-negative integers for the
//! calculator boundary.
//!
//! Left-aligned blocks put the most significant digit at slot 0 and pad the
//! tail with an eleventh PLACEHOLDER class; this matches the tokenizer's
//! left-to-right 3-digit chunking, where slot `i` always lands in chunk
//! `i/3` at offset `i%3` regardless of the number's length. Right-aligned
//! blocks are the intuitive zero-padded layout with ten classes and exist
//! for the alignment ablation.
//!
//! Decoding depends only on the per-slot argmax, ties breaking toward the
//! lowest class index.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Class index of the placeholder in left-aligned blocks.
pub const PLACEHOLDER: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("{value} has {digits} digits, wider than the {width}-slot block")]
    TooWide {
        value: u64,
        digits: usize,
        width: usize,
    },
    #[error("slot {slot} distribution sums to {sum}, expected 1")]
    NotNormalized { slot: usize, sum: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    Left,
    Right,
}

impl Alignment {
    pub fn classes(self) -> usize {
        match self {
            Alignment::Left => 11,
            Alignment::Right => 10,
        }
    }
}

/// Per-slot categorical distributions over digit classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitBlock {
    pub width: usize,
    pub alignment: Alignment,
    /// Row-major [width, classes]; one-hot rows when `hard`.
    pub probs: Vec<f64>,
    pub hard: bool,
}

/// Result of decoding a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoded {
    Value(u64),
    /// Left-aligned block whose first slot argmax is the placeholder:
    /// there is no number here. Not an error; downstream gates decide.
    Empty,
}

impl Decoded {
    pub fn value(self) -> Option<u64> {
        match self {
            Decoded::Value(v) => Some(v),
            Decoded::Empty => None,
        }
    }
}

pub fn digit_count(n: u64) -> usize {
    if n == 0 {
        1
    } else {
        (n.ilog10() + 1) as usize
    }
}

/// One-hot encode a non-negative integer.
pub fn encode(n: u64, width: usize, alignment: Alignment) -> Result<DigitBlock, CodecError> {
    let digits = digit_count(n);
    if digits > width {
        return Err(CodecError::TooWide {
            value: n,
            digits,
            width,
        });
    }
    let classes = alignment.classes();
    let mut probs = vec![0.0; width * classes];
    let ds = decimal_digits(n); // most significant first
    match alignment {
        Alignment::Left => {
            for (slot, &d) in ds.iter().enumerate() {
                probs[slot * classes + d as usize] = 1.0;
            }
            for slot in ds.len()..width {
                probs[slot * classes + PLACEHOLDER] = 1.0;
            }
        }
        Alignment::Right => {
            let shift = width - ds.len();
            for slot in 0..shift {
                probs[slot * classes] = 1.0; // zero padding
            }
            for (i, &d) in ds.iter().enumerate() {
                probs[(shift + i) * classes + d as usize] = 1.0;
            }
        }
    }
    Ok(DigitBlock {
        width,
        alignment,
        probs,
        hard: true,
    })
}

/// Most significant digit first.
pub fn decimal_digits(n: u64) -> Vec<u8> {
    if n == 0 {
        return vec![0];
    }
    let mut ds = Vec::new();
    let mut v = n;
    while v > 0 {
        ds.push((v % 10) as u8);
        v /= 10;
    }
    ds.reverse();
    ds
}

impl DigitBlock {
    /// Uniform distributional block (for tests and loss anchors).
    pub fn uniform(width: usize, alignment: Alignment) -> DigitBlock {
        let classes = alignment.classes();
        DigitBlock {
            width,
            alignment,
            probs: vec![1.0 / classes as f64; width * classes],
            hard: false,
        }
    }

    /// Block from raw per-slot probabilities.
    pub fn from_probs(
        width: usize,
        alignment: Alignment,
        probs: Vec<f64>,
    ) -> Result<DigitBlock, CodecError> {
        let classes = alignment.classes();
        assert_eq!(probs.len(), width * classes);
        for slot in 0..width {
            let sum: f64 = probs[slot * classes..(slot + 1) * classes].iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(CodecError::NotNormalized { slot, sum });
            }
        }
        Ok(DigitBlock {
            width,
            alignment,
            probs,
            hard: false,
        })
    }

    pub fn classes(&self) -> usize {
        self.alignment.classes()
    }

    /// Per-slot argmax, ties toward the lowest class index.
    pub fn argmax_classes(&self) -> Vec<usize> {
        let classes = self.classes();
        (0..self.width)
            .map(|slot| {
                let row = &self.probs[slot * classes..(slot + 1) * classes];
                let mut best = 0;
                for (i, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// The all-placeholder block used to carry "no number" downstream.
    pub fn empty(width: usize) -> DigitBlock {
        let classes = Alignment::Left.classes();
        let mut probs = vec![0.0; width * classes];
        for slot in 0..width {
            probs[slot * classes + PLACEHOLDER] = 1.0;
        }
        DigitBlock {
            width,
            alignment: Alignment::Left,
            probs,
            hard: true,
        }
    }

    /// Whether a hard block is one `encode` could have produced.
    pub fn is_canonical_hard(&self) -> bool {
        if !self.hard {
            return false;
        }
        let c = self.argmax_classes();
        match self.alignment {
            Alignment::Left => {
                if c[0] == PLACEHOLDER {
                    return false;
                }
                let mut seen_placeholder = false;
                for &x in &c {
                    if x == PLACEHOLDER {
                        seen_placeholder = true;
                    } else if seen_placeholder {
                        return false; // digit after the first placeholder
                    }
                }
                true
            }
            Alignment::Right => c.iter().all(|&x| x < 10),
        }
    }

    /// Compact printable form of the argmax classes, e.g. `12345678**`.
    pub fn compact(&self) -> String {
        self.argmax_classes()
            .iter()
            .map(|&c| {
                if c == PLACEHOLDER {
                    '*'
                } else {
                    (b'0' + c as u8) as char
                }
            })
            .collect()
    }
}

impl std::fmt::Display for DigitBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.compact())
    }
}

/// Decode a block (distributional or hard) to its integer, per-slot argmax
/// first. Left alignment reads digits up to the first placeholder and
/// ignores everything after it; right alignment reads all slots as a
/// zero-padded number.
pub fn decode(block: &DigitBlock) -> Decoded {
    let classes = block.argmax_classes();
    match block.alignment {
        Alignment::Left => {
            if classes[0] == PLACEHOLDER {
                return Decoded::Empty;
            }
            let mut v: u64 = 0;
            for &c in &classes {
                if c == PLACEHOLDER {
                    break;
                }
                v = v * 10 + c as u64;
            }
            Decoded::Value(v)
        }
        Alignment::Right => {
            let mut v: u64 = 0;
            for &c in &classes {
                v = v * 10 + c as u64;
            }
            Decoded::Value(v)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Positive,
    Negative,
}

/// A magnitude block paired with an explicit sign class. Signed zero is
/// normalized to positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedResult {
    pub magnitude: DigitBlock,
    pub sign: Sign,
}

impl SignedResult {
    pub fn to_i64(&self) -> Option<i64> {
        let v = decode(&self.magnitude).value()? as i64;
        Some(match self.sign {
            Sign::Positive => v,
            Sign::Negative => -v,
        })
    }
}

/// Pair a magnitude block with an explicit sign, normalizing signed zero.
pub fn sign_extend(block: DigitBlock, sign: Sign) -> SignedResult {
    let sign = match decode(&block) {
        Decoded::Value(0) => Sign::Positive,
        _ => sign,
    };
    SignedResult {
        magnitude: block,
        sign,
    }
}

/// The four operators in fixed index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    Add,
    Sub,
    Mul,
    Div,
}

pub const OPERATORS: [Operator; 4] = [
    Operator::Add,
    Operator::Sub,
    Operator::Mul,
    Operator::Div,
];

impl Operator {
    pub fn index(self) -> usize {
        match self {
            Operator::Add => 0,
            Operator::Sub => 1,
            Operator::Mul => 2,
            Operator::Div => 3,
        }
    }

    pub fn from_index(i: usize) -> Operator {
        OPERATORS[i]
    }

    pub fn symbol(self) -> char {
        match self {
            Operator::Add => '+',
            Operator::Sub => '-',
            Operator::Mul => '*',
            Operator::Div => '/',
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            Operator::Add => "plus",
            Operator::Sub => "minus",
            Operator::Mul => "times",
            Operator::Div => "over",
        }
    }
}

/// Distribution over the four operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorClass {
    pub probs: [f64; 4],
}

impl OperatorClass {
    pub fn one_hot(op: Operator) -> OperatorClass {
        let mut probs = [0.0; 4];
        probs[op.index()] = 1.0;
        OperatorClass { probs }
    }

    pub fn uniform() -> OperatorClass {
        OperatorClass { probs: [0.25; 4] }
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CodecError::NotNormalized { slot: 0, sum });
        }
        Ok(())
    }

    /// Argmax operator, ties toward the lowest index (ADD first).
    pub fn argmax(&self) -> Operator {
        let mut best = 0;
        for i in 1..4 {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        Operator::from_index(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_left_matches_reference_column() {
        let b = encode(12345678, 10, Alignment::Left).unwrap();
        assert_eq!(b.compact(), "12345678**");
        assert!(b.is_canonical_hard());
    }

    #[test]
    fn encode_right_matches_reference_column() {
        let b = encode(123456789, 10, Alignment::Right).unwrap();
        assert_eq!(b.compact(), "0123456789");
        assert!(b.is_canonical_hard());
    }

    #[test]
    fn encode_zero_left() {
        let b = encode(0, 10, Alignment::Left).unwrap();
        assert_eq!(b.compact(), "0*********");
    }

    #[test]
    fn too_wide_rejected() {
        assert_eq!(
            encode(123, 2, Alignment::Left).unwrap_err(),
            CodecError::TooWide {
                value: 123,
                digits: 3,
                width: 2,
            }
        );
    }

    #[test]
    fn decode_inverts_encode_samples() {
        let b = encode(579, 10, Alignment::Left).unwrap();
        assert_eq!(decode(&b), Decoded::Value(579));
        let b = encode(579, 10, Alignment::Right).unwrap();
        assert_eq!(decode(&b), Decoded::Value(579));
    }

    #[test]
    fn roundtrip_exhaustive_small_and_random_wide() {
        for n in 0..10_000u64 {
            for align in [Alignment::Left, Alignment::Right] {
                assert_eq!(decode(&encode(n, 10, align).unwrap()), Decoded::Value(n));
            }
        }
        // deterministic wide samples
        let mut x: u64 = 0x9E3779B97F4A7C15;
        for _ in 0..2_000 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let n = x % 10_000_000_000;
            for align in [Alignment::Left, Alignment::Right] {
                assert_eq!(decode(&encode(n, 10, align).unwrap()), Decoded::Value(n));
            }
        }
    }

    #[test]
    fn left_prefix_stability() {
        // encode(n) and encode(n*10+d) share the first len(n) slots
        for &n in &[7u64, 42, 123, 9870, 10405] {
            let base = encode(n, 10, Alignment::Left).unwrap();
            let len = digit_count(n);
            for d in 0..10u64 {
                let ext = encode(n * 10 + d, 10, Alignment::Left).unwrap();
                assert_eq!(
                    base.probs[..len * 11],
                    ext.probs[..len * 11],
                    "prefix differs for {n} vs {}",
                    n * 10 + d
                );
            }
        }
    }

    #[test]
    fn decode_soft_uses_argmax_path() {
        // per-slot argmaxes 1, 2, placeholder at modest confidence
        let mut probs = vec![0.0; 10 * 11];
        let put = |probs: &mut Vec<f64>, slot: usize, class: usize| {
            for c in 0..11 {
                probs[slot * 11 + c] = if c == class { 0.6 } else { 0.04 };
            }
        };
        put(&mut probs, 0, 1);
        put(&mut probs, 1, 2);
        for slot in 2..10 {
            put(&mut probs, slot, PLACEHOLDER);
        }
        let b = DigitBlock::from_probs(10, Alignment::Left, probs).unwrap();
        assert_eq!(decode(&b), Decoded::Value(12));
    }

    #[test]
    fn decode_invariant_under_argmax_preserving_rescale() {
        let mut probs = vec![0.0; 10 * 11];
        for slot in 0..10 {
            for c in 0..11 {
                probs[slot * 11 + c] = if c == (slot % 10) { 0.5 } else { 0.05 };
            }
        }
        let b = DigitBlock::from_probs(10, Alignment::Left, probs.clone()).unwrap();
        // monotone transform preserving argmax: square then renormalize
        let mut probs2 = probs;
        for slot in 0..10 {
            let row = &mut probs2[slot * 11..(slot + 1) * 11];
            for p in row.iter_mut() {
                *p = *p * *p;
            }
            let s: f64 = row.iter().sum();
            for p in row.iter_mut() {
                *p /= s;
            }
        }
        let b2 = DigitBlock::from_probs(10, Alignment::Left, probs2).unwrap();
        assert_eq!(decode(&b), decode(&b2));
    }

    #[test]
    fn empty_left_block_decodes_to_empty() {
        let b = DigitBlock::empty(10);
        assert_eq!(decode(&b), Decoded::Empty);
        assert!(!b.is_canonical_hard());
    }

    #[test]
    fn digit_after_placeholder_not_canonical() {
        let mut probs = vec![0.0; 3 * 11];
        probs[0 * 11 + 5] = 1.0;
        probs[1 * 11 + PLACEHOLDER] = 1.0;
        probs[2 * 11 + 7] = 1.0;
        let b = DigitBlock {
            width: 3,
            alignment: Alignment::Left,
            probs,
            hard: true,
        };
        assert!(!b.is_canonical_hard());
        // slots after the first placeholder are ignored by decode
        assert_eq!(decode(&b), Decoded::Value(5));
    }

    #[test]
    fn sign_extend_examples() {
        let m = encode(333, 10, Alignment::Left).unwrap();
        let s = sign_extend(m, Sign::Negative);
        assert_eq!(s.to_i64(), Some(-333));

        let z = encode(0, 10, Alignment::Left).unwrap();
        let s = sign_extend(z, Sign::Negative);
        assert_eq!(s.sign, Sign::Positive);
        assert_eq!(s.to_i64(), Some(0));
    }

    #[test]
    fn operator_argmax_tie_breaks_to_add() {
        assert_eq!(OperatorClass::uniform().argmax(), Operator::Add);
    }

    #[test]
    fn non_normalized_rejected() {
        let probs = vec![0.5; 2 * 11];
        assert!(matches!(
            DigitBlock::from_probs(2, Alignment::Left, probs),
            Err(CodecError::NotNormalized { .. })
        ));
    }
}
