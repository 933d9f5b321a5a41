//! Deterministic surrogate tokenizer.
//!
//! Numbers are parsed left to right and grouped into chunks of three
//! digits, with a final chunk of one or two digits when the length is not
//! a multiple of three; number chunks never mix digits with other
//! characters. Words split on whitespace, punctuation marks are their own
//! tokens. The vocabulary is closed: it is built from the template grammar
//! rather than learned merges, which reproduces the chunk-alignment
//! behavior the digit codec depends on.
//!
//! `detokenize` is the exact inverse of `tokenize` over generator-producible
//! text. Two spacing rules make that work: consecutive number tokens are
//! the chunks of one number and join without a space (the generator never
//! places two separate numbers next to each other), and a minus sign glues
//! to the following number when it does not follow a number (sign position,
//! as in a negative answer) but is spaced when it does (binary operator).

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use thiserror::Error;

pub const BEGIN: u32 = 0;
pub const END: u32 = 1;
pub const ANCHOR: u32 = 2;
const N_SPECIALS: u32 = 3;

const SPECIAL_NAMES: [&str; 3] = ["<begin>", "<end>", "<anchor>"];

/// Punctuation that attaches to the preceding token when rendering.
const CLOSING_PUNCT: [char; 5] = ['?', '.', '!', ':', ','];
/// Operator-like punctuation rendered with surrounding spaces.
const SPACED_PUNCT: [char; 4] = ['+', '-', '*', '/'];

#[derive(Debug, Error, PartialEq)]
pub enum TokenizerError {
    #[error("character {ch:?} at byte {position} is outside the tokenizer alphabet")]
    OutOfAlphabet { ch: char, position: usize },
    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),
    #[error("id {0} is not in the vocabulary")]
    UnknownId(u32),
    #[error("special token id {0} cannot be rendered as text")]
    SpecialInText(u32),
    #[error("anchor index {index} does not point at the anchor token")]
    BadAnchorIndex { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenKind {
    Special,
    Word,
    Punct,
    Number,
}

/// Closed vocabulary: specials, grammar words, punctuation, and every
/// digit string of length one to three (leading zeros included, since
/// interior and final chunks of longer numbers can carry them).
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    kinds: Vec<TokenKind>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from the grammar word list. Words are deduplicated and sorted
    /// so ids are stable across runs given the same recipe.
    pub fn build(words: &[&str]) -> Vocabulary {
        let mut tokens: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        let mut kinds = vec![TokenKind::Special; 3];

        let mut ws: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        ws.sort();
        ws.dedup();
        for w in ws {
            assert!(
                w.chars().all(|c| c.is_ascii_alphabetic()),
                "grammar words must be alphabetic, got {w:?}"
            );
            tokens.push(w);
            kinds.push(TokenKind::Word);
        }
        for p in CLOSING_PUNCT.iter().chain(SPACED_PUNCT.iter()) {
            tokens.push(p.to_string());
            kinds.push(TokenKind::Punct);
        }
        for len in 1..=3usize {
            let max = 10u32.pow(len as u32);
            for v in 0..max {
                tokens.push(format!("{v:0len$}"));
                kinds.push(TokenKind::Number);
            }
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            tokens,
            kinds,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn kind(&self, id: u32) -> Option<TokenKind> {
        self.kinds.get(id as usize).copied()
    }

    pub fn is_number(&self, id: u32) -> bool {
        self.kind(id) == Some(TokenKind::Number)
    }

    /// token -> id map in a stable order, for the JSON export.
    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, u32> = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i as u32))
            .collect();
        serde_json::to_string_pretty(&map).expect("vocabulary serializes")
    }

    pub fn from_json(json: &str) -> Result<Vocabulary, serde_json::Error> {
        let map: BTreeMap<String, u32> = serde_json::from_str(json)?;
        let mut tokens = vec![String::new(); map.len()];
        for (t, id) in &map {
            tokens[*id as usize] = t.clone();
        }
        let kinds = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i < N_SPECIALS as usize {
                    TokenKind::Special
                } else if t.chars().all(|c| c.is_ascii_digit()) {
                    TokenKind::Number
                } else if t.len() == 1 && !t.chars().next().unwrap().is_ascii_alphabetic() {
                    TokenKind::Punct
                } else {
                    TokenKind::Word
                }
            })
            .collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            tokens,
            kinds,
            index,
        })
    }

    // ── tokenization ────────────────────────────────────────────────

    /// Split text into token strings without vocabulary lookup.
    pub fn split_text(text: &str) -> Result<Vec<String>, TokenizerError> {
        let mut out = Vec::new();
        let mut word = String::new();
        let mut digits = String::new();
        let flush_word = |word: &mut String, out: &mut Vec<String>| {
            if !word.is_empty() {
                out.push(std::mem::take(word));
            }
        };
        let flush_digits = |digits: &mut String, out: &mut Vec<String>| {
            if !digits.is_empty() {
                out.extend(chunk_digit_run(digits));
                digits.clear();
            }
        };
        for (pos, ch) in text.char_indices() {
            if ch.is_ascii_digit() {
                flush_word(&mut word, &mut out);
                digits.push(ch);
            } else if ch.is_ascii_alphabetic() {
                flush_digits(&mut digits, &mut out);
                word.push(ch);
            } else if ch == ' ' {
                flush_word(&mut word, &mut out);
                flush_digits(&mut digits, &mut out);
            } else if CLOSING_PUNCT.contains(&ch) || SPACED_PUNCT.contains(&ch) {
                flush_word(&mut word, &mut out);
                flush_digits(&mut digits, &mut out);
                out.push(ch.to_string());
            } else {
                return Err(TokenizerError::OutOfAlphabet { ch, position: pos });
            }
        }
        flush_word(&mut word, &mut out);
        flush_digits(&mut digits, &mut out);
        Ok(out)
    }

    /// Tokenize generator-producible text into vocabulary ids.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>, TokenizerError> {
        Self::split_text(text)?
            .into_iter()
            .map(|t| {
                self.id(&t)
                    .ok_or(TokenizerError::UnknownToken(t))
            })
            .collect()
    }

    /// Exact inverse of [`tokenize`](Self::tokenize) on generator-producible
    /// text. Special ids are rejected.
    pub fn detokenize(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        let mut prev: Option<u32> = None;
        let mut prev_attached_minus = false;
        for &id in ids {
            let tok = self
                .token(id)
                .ok_or(TokenizerError::UnknownId(id))?;
            let kind = self.kind(id).unwrap();
            if kind == TokenKind::Special {
                return Err(TokenizerError::SpecialInText(id));
            }
            let attach = match prev {
                None => true,
                Some(p) => {
                    let prev_kind = self.kind(p).unwrap();
                    let prev_tok = self.token(p).unwrap();
                    if kind == TokenKind::Punct && CLOSING_PUNCT.contains(&tok.chars().next().unwrap()) {
                        true
                    } else if prev_kind == TokenKind::Number && kind == TokenKind::Number {
                        // chunks of one number
                        true
                    } else {
                        // minus glued to a following number in sign position
                        prev_tok == "-" && prev_attached_minus && kind == TokenKind::Number
                    }
                }
            };
            if !attach {
                out.push(' ');
            }
            // a minus is in sign position when it does not follow a number
            prev_attached_minus = tok == "-"
                && !matches!(prev.map(|p| self.kind(p).unwrap()), Some(TokenKind::Number));
            out.push_str(tok);
            prev = Some(id);
        }
        Ok(out)
    }

    /// Human-readable rendering of a full sequence, specials included.
    pub fn render_display(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        let mut chunk: Vec<u32> = Vec::new();
        for &id in ids {
            if self.kind(id) == Some(TokenKind::Special) {
                if !chunk.is_empty() {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(&self.detokenize(&chunk).unwrap_or_default());
                    chunk.clear();
                }
                if id == ANCHOR {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(SPECIAL_NAMES[ANCHOR as usize]);
                }
            } else {
                chunk.push(id);
            }
        }
        if !chunk.is_empty() {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&self.detokenize(&chunk).unwrap_or_default());
        }
        out
    }
}

/// Split a maximal digit run into chunks of three, left to right, with a
/// final chunk of one or two digits when the length is not a multiple of
/// three.
pub fn chunk_digit_run(digits: &str) -> Vec<String> {
    let bytes = digits.as_bytes();
    let mut out = Vec::with_capacity(bytes.len() / 3 + 1);
    let mut i = 0;
    while i < bytes.len() {
        let end = (i + 3).min(bytes.len());
        out.push(String::from_utf8(bytes[i..end].to_vec()).unwrap());
        i = end;
    }
    out
}

/// Tokenized sample: ids, the anchor position and the source text.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub anchor_index: Option<usize>,
    pub text: String,
}

impl TokenSequence {
    pub fn validate(&self) -> Result<(), TokenizerError> {
        if let Some(i) = self.anchor_index {
            if self.ids.get(i) != Some(&ANCHOR) {
                return Err(TokenizerError::BadAnchorIndex { index: i });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

// ── chunk distribution analysis ─────────────────────────────────────

/// Where one digit position landed: (token index within the number,
/// offset inside that token) -> occurrence count.
pub type PlacementCounts = BTreeMap<(usize, usize), u64>;

/// Distribution of digit positions over token placements for a corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChunkingReport {
    /// Indexed by digit position counted from the most significant digit.
    pub from_most_significant: Vec<PlacementCounts>,
    /// Indexed by digit position counted from the least significant digit.
    pub from_least_significant: Vec<PlacementCounts>,
    /// Total numbers analyzed.
    pub numbers: u64,
    /// True when every position counted from the most significant digit
    /// maps to exactly one (token, offset) pair: the property that makes
    /// a left-aligned digit encoding learnable against this tokenizer.
    pub msd_position_stable: bool,
}

/// Analyze how digit positions map to (token, offset) pairs across a corpus.
pub fn analyze_chunking<'a>(corpus: impl IntoIterator<Item = &'a str>) -> ChunkingReport {
    let mut from_msd: Vec<PlacementCounts> = Vec::new();
    let mut from_lsd: Vec<PlacementCounts> = Vec::new();
    let mut numbers = 0;
    for text in corpus {
        for run in digit_runs(text) {
            numbers += 1;
            let chunks = chunk_digit_run(run);
            let total = run.len();
            if from_msd.len() < total {
                from_msd.resize_with(total, PlacementCounts::new);
                from_lsd.resize_with(total, PlacementCounts::new);
            }
            let mut pos = 0usize;
            for (ti, chunk) in chunks.iter().enumerate() {
                for off in 0..chunk.len() {
                    *from_msd[pos].entry((ti, off)).or_insert(0) += 1;
                    *from_lsd[total - 1 - pos].entry((ti, off)).or_insert(0) += 1;
                    pos += 1;
                }
            }
        }
    }
    let msd_position_stable = from_msd.iter().all(|m| m.len() <= 1);
    ChunkingReport {
        from_most_significant: from_msd,
        from_least_significant: from_lsd,
        numbers,
        msd_position_stable,
    }
}

fn digit_runs(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            out.push(&text[start..i]);
        } else {
            i += 1;
        }
    }
    out
}

impl ChunkingReport {
    /// Aligned text table, one row per digit position from the most
    /// significant digit.
    pub fn to_text_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "numbers analyzed: {}", self.numbers);
        let _ = writeln!(
            s,
            "most-significant-digit mapping position-stable: {}",
            self.msd_position_stable
        );
        let _ = writeln!(s, "{:>8}  {:<30}  {:<30}", "digit", "from MSD (tok,off):count", "from LSD (tok,off):count");
        let fmt = |m: &PlacementCounts| -> String {
            m.iter()
                .map(|((t, o), c)| format!("({t},{o}):{c}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        for i in 0..self.from_most_significant.len() {
            let _ = writeln!(
                s,
                "{:>8}  {:<30}  {:<30}",
                i,
                fmt(&self.from_most_significant[i]),
                fmt(&self.from_least_significant[i])
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build(&["What", "is", "plus", "equals", "Say"])
    }

    #[test]
    fn chunking_matches_reference_rows() {
        // rows of the reference tokenization table
        assert_eq!(chunk_digit_run("1234567890"), ["123", "456", "789", "0"]);
        assert_eq!(chunk_digit_run("123456789"), ["123", "456", "789"]);
        assert_eq!(chunk_digit_run("12345678"), ["123", "456", "78"]);
        assert_eq!(chunk_digit_run("234567890"), ["234", "567", "890"]);
        assert_eq!(chunk_digit_run("34567890"), ["345", "678", "90"]);
        assert_eq!(chunk_digit_run("7"), ["7"]);
    }

    #[test]
    fn chunk_lengths_are_threes_then_remainder() {
        for len in 1..=12usize {
            let s: String = std::iter::repeat('5').take(len).collect();
            let chunks = chunk_digit_run(&s);
            for c in &chunks[..chunks.len() - 1] {
                assert_eq!(c.len(), 3);
            }
            let last = chunks.last().unwrap().len();
            assert!((1..=3).contains(&last));
            assert_eq!(chunks.iter().map(|c| c.len()).sum::<usize>(), len);
        }
    }

    #[test]
    fn tokenize_splits_numbers_and_punctuation() {
        let v = vocab();
        let ids = v.tokenize("What is 12345 + 4?").unwrap();
        let toks: Vec<&str> = ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, ["What", "is", "123", "45", "+", "4", "?"]);
    }

    #[test]
    fn out_of_alphabet_rejected_with_position() {
        let v = vocab();
        let err = v.tokenize("What is 4 ~ 4?").unwrap_err();
        assert_eq!(
            err,
            TokenizerError::OutOfAlphabet {
                ch: '~',
                position: 10
            }
        );
    }

    #[test]
    fn detokenize_inverts_tokenize() {
        let v = vocab();
        for text in [
            "What is 4 + 4?",
            "What is 12345 + 4?",
            "12 plus 7 equals?",
            "What is 123 - 45678?",
            "-333",
            "Say 10005.",
            "What is 1000000 * 99?",
        ] {
            let ids = v.tokenize(text).unwrap();
            assert_eq!(v.detokenize(&ids).unwrap(), text, "roundtrip of {text:?}");
        }
    }

    #[test]
    fn minus_spacing_distinguishes_sign_and_operator() {
        let v = vocab();
        let ids = v.tokenize("4 - 3").unwrap();
        assert_eq!(v.detokenize(&ids).unwrap(), "4 - 3");
        let ids = v.tokenize("-333").unwrap();
        assert_eq!(v.detokenize(&ids).unwrap(), "-333");
    }

    #[test]
    fn special_ids_rejected_in_text() {
        let v = vocab();
        assert_eq!(
            v.detokenize(&[ANCHOR]),
            Err(TokenizerError::SpecialInText(ANCHOR))
        );
    }

    #[test]
    fn vocabulary_ids_stable_and_json_roundtrips() {
        let a = Vocabulary::build(&["b", "a", "b"]);
        let b = Vocabulary::build(&["a", "b"]);
        assert_eq!(a.to_json(), b.to_json());
        let c = Vocabulary::from_json(&a.to_json()).unwrap();
        assert_eq!(c.id("a"), a.id("a"));
        assert_eq!(c.id("123"), a.id("123"));
        assert_eq!(c.kind(a.id("123").unwrap()), Some(TokenKind::Number));
        assert_eq!(c.kind(a.id("+").unwrap()), Some(TokenKind::Punct));
    }

    #[test]
    fn every_one_to_three_digit_string_has_one_id() {
        let v = vocab();
        let mut seen = std::collections::HashSet::new();
        for len in 1..=3usize {
            for n in 0..10usize.pow(len as u32) {
                let s = format!("{n:0len$}");
                let id = v.id(&s).unwrap_or_else(|| panic!("missing {s}"));
                assert!(seen.insert(id), "duplicate id for {s}");
            }
        }
        assert_eq!(seen.len(), 1110);
    }

    #[test]
    fn anchor_never_produced_by_text() {
        let v = vocab();
        let ids = v.tokenize("What is 4 + 4?").unwrap();
        assert!(!ids.contains(&ANCHOR));
    }

    #[test]
    fn analyze_eight_digit_numbers_msd_stable() {
        let strings: Vec<String> = (0..200u64)
            .map(|i| format!("{}", 10_000_000 + i * 317))
            .collect();
        let report = analyze_chunking(strings.iter().map(|s| s.as_str()));
        assert!(report.msd_position_stable);
        // 4th most significant digit always maps to the second token, offset 0
        let m = &report.from_most_significant[3];
        assert_eq!(m.len(), 1);
        assert_eq!(m.keys().next().unwrap(), &(1, 0));
    }

    #[test]
    fn analyze_single_digit_corpus() {
        let report = analyze_chunking(["3", "7", "9"]);
        assert!(report.msd_position_stable);
        assert_eq!(report.from_most_significant.len(), 1);
        assert_eq!(
            report.from_most_significant[0].keys().next().unwrap(),
            &(0, 0)
        );
    }

    #[test]
    fn analyze_mixed_lengths_lsd_unstable() {
        let strings = ["7", "1234", "123456789", "12", "12345"];
        let report = analyze_chunking(strings);
        assert!(report.msd_position_stable);
        // least significant digit lands in different tokens per length
        let lsd = &report.from_least_significant[0];
        assert!(lsd.len() > 1, "LSD placements: {lsd:?}");
    }

    #[test]
    fn length_monotone_token_counts() {
        let mut prev = 0;
        for len in 1..=12usize {
            let s: String = std::iter::repeat('9').take(len).collect();
            let n = chunk_digit_run(&s).len();
            assert!(n >= prev);
            prev = n;
        }
    }

    #[test]
    fn render_display_marks_anchor() {
        let v = vocab();
        let mut ids = vec![BEGIN];
        ids.extend(v.tokenize("What is 4 + 4?").unwrap());
        ids.push(ANCHOR);
        ids.extend(v.tokenize("8").unwrap());
        ids.push(END);
        assert_eq!(v.render_display(&ids), "What is 4 + 4? <anchor> 8");
    }
}
