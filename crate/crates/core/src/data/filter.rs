//! Frequency filtering of operand-region token n-grams.
//!
//! "Frequently-occurring subsequences" is made precise here as: n-grams
//! (n = 2..=4) of the token span from the first to the last number token
//! before the anchor (the `A op B` region), capped at a fixed occurrence
//! count. Records without numbers have no region and always pass.

use super::SampleRecord;
use std::collections::HashMap;

use crate::tokenizer::Vocabulary;

pub const NGRAM_MIN: usize = 2;
pub const NGRAM_MAX: usize = 4;

/// The operand-region token span of a record: first number token through
/// the last number token before the anchor.
pub fn operand_region<'a>(record: &'a SampleRecord, vocab: &Vocabulary) -> &'a [u32] {
    let end = record.seq.anchor_index.unwrap_or(record.seq.ids.len());
    let pre = &record.seq.ids[..end];
    let first = pre.iter().position(|&id| vocab.is_number(id));
    let last = pre.iter().rposition(|&id| vocab.is_number(id));
    match (first, last) {
        (Some(f), Some(l)) => &pre[f..=l],
        _ => &[],
    }
}

fn ngrams(span: &[u32]) -> impl Iterator<Item = &[u32]> {
    (NGRAM_MIN..=NGRAM_MAX).flat_map(move |n| span.windows(n))
}

/// Streaming admission: a record is admitted when none of its region
/// n-grams would exceed the cap; admitted records commit their counts.
pub struct NgramCounter {
    cap: usize,
    counts: HashMap<Vec<u32>, usize>,
    vocab: Vocabulary,
}

impl NgramCounter {
    pub fn new(cap: usize) -> NgramCounter {
        NgramCounter {
            cap,
            counts: HashMap::new(),
            vocab: super::build_vocab(),
        }
    }

    pub fn try_admit(&mut self, record: &SampleRecord) -> bool {
        let region = operand_region(record, &self.vocab).to_vec();
        for g in ngrams(&region) {
            if self.counts.get(g).copied().unwrap_or(0) + 1 > self.cap {
                return false;
            }
        }
        for g in ngrams(&region) {
            *self.counts.entry(g.to_vec()).or_insert(0) += 1;
        }
        true
    }
}

/// One-shot form over a finished corpus: keeps records in order while no
/// operand-region n-gram exceeds `cap` occurrences, drops the rest.
/// Idempotent: a second pass over the kept records removes nothing.
pub fn filter_frequent_subsequences(
    records: Vec<SampleRecord>,
    cap: usize,
) -> (Vec<SampleRecord>, Vec<SampleRecord>) {
    let mut counter = NgramCounter::new(cap);
    let mut kept = Vec::with_capacity(records.len());
    let mut dropped = Vec::new();
    for r in records {
        if counter.try_admit(&r) {
            kept.push(r);
        } else {
            dropped.push(r);
        }
    }
    (kept, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Operator;
    use crate::data::{build_vocab, make_test_record, Split};

    fn record(a: u64, b: u64) -> SampleRecord {
        make_test_record(Operator::Add, a, b, Split::Train)
    }

    #[test]
    fn skewed_corpus_capped() {
        // "123 + 123" over and over: the (123,+,123) region n-grams repeat
        let mut records: Vec<SampleRecord> = (0..30).map(|_| record(123, 123)).collect();
        records.extend((0..70).map(|i| record(10_000 + 37 * i, 20_000 + 91 * i)));
        let cap = 5;
        let (kept, dropped) = filter_frequent_subsequences(records, cap);
        assert_eq!(dropped.len(), 25);
        let repeats = kept
            .iter()
            .filter(|r| r.annotation.as_ref().unwrap().operand_a == 123)
            .count();
        assert!(repeats <= cap);
    }

    #[test]
    fn diverse_corpus_unchanged() {
        let records: Vec<SampleRecord> =
            (0..100).map(|i| record(10_000 + 37 * i, 20_000 + 91 * i)).collect();
        let n = records.len();
        let (kept, dropped) = filter_frequent_subsequences(records, 5);
        assert_eq!(kept.len(), n);
        assert!(dropped.is_empty());
    }

    #[test]
    fn filtering_is_idempotent() {
        let mut records: Vec<SampleRecord> = (0..40).map(|_| record(7777, 7777)).collect();
        records.extend((0..60).map(|i| record(30_000 + 13 * i, 40_000 + 7 * i)));
        let (kept, _) = filter_frequent_subsequences(records, 8);
        let n = kept.len();
        let (kept2, dropped2) = filter_frequent_subsequences(kept, 8);
        assert_eq!(kept2.len(), n);
        assert!(dropped2.is_empty());
    }

    #[test]
    fn distractors_always_pass() {
        let vocab = build_vocab();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        use rand_chacha::rand_core::SeedableRng;
        let mut records = Vec::new();
        for _ in 0..20 {
            records.push(crate::data::make_test_distractor(&mut rng));
        }
        let n = records.len();
        let (kept, _) = filter_frequent_subsequences(records, 1);
        assert_eq!(kept.len(), n);
        let _ = vocab;
    }

    #[test]
    fn operand_region_spans_first_to_last_number() {
        let vocab = build_vocab();
        let r = record(12345, 678);
        let region = operand_region(&r, &vocab);
        // 12345 -> two tokens, 678 -> one token, plus the operator between
        let toks: Vec<&str> = region.iter().map(|&id| vocab.token(id).unwrap()).collect();
        assert_eq!(toks, ["123", "45", "+", "678"]);
    }
}
