//! Shared fixtures for the benchmarks.

use igc_core::codec::{encode, Alignment, DigitBlock, Operator, OperatorClass};
use igc_core::calculator::CalcRequest;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Near-one-hot distributional block for a value.
pub fn soft_block(v: u64, width: usize, confidence: f64) -> DigitBlock {
    let hard = encode(v, width, Alignment::Left).unwrap();
    let rest = (1.0 - confidence) / 10.0;
    let probs = hard
        .probs
        .iter()
        .map(|&x| if x == 1.0 { confidence } else { rest })
        .collect();
    DigitBlock::from_probs(width, Alignment::Left, probs).unwrap()
}

/// Deterministic batch of calculator requests over the full operand range.
pub fn request_batch(n: usize, seed: u64) -> Vec<CalcRequest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a = rng.gen_range(0..10_000_000_000u64);
            let b = rng.gen_range(0..10_000_000_000u64);
            let op = match rng.gen_range(0..4u32) {
                0 => Operator::Add,
                1 => Operator::Sub,
                2 => Operator::Mul,
                _ => Operator::Div,
            };
            CalcRequest {
                operand_a: soft_block(a, 10, 0.95),
                operand_b: soft_block(b, 10, 0.95),
                operator: OperatorClass::one_hot(op),
            }
        })
        .collect()
}
