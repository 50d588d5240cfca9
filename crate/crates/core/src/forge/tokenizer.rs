//! Byte-level tokenizer: ids `0..256` are raw bytes, followed by three
//! special tokens.

use alloc::string::String;
use alloc::vec::Vec;

pub type TokenId = u32;

pub const BOS: TokenId = 256;
pub const EOS: TokenId = 257;
pub const PAD: TokenId = 258;
pub const BYTE_VOCAB_SIZE: usize = 259;
pub const MAX_TOKENS: usize = 512;

/// Separator between a question and its answer inside a dialogue turn.
pub const TURN_SEPARATOR: u8 = b'\n';

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<TokenId>,
    pub truncated: bool,
}

/// `[BOS] bytes [EOS]`, capped at [`MAX_TOKENS`] by dropping trailing bytes.
pub fn tokenize(text: &str) -> Tokenized {
    tokenize_capped(text, MAX_TOKENS)
}

pub fn tokenize_capped(text: &str, cap: usize) -> Tokenized {
    let room = cap.saturating_sub(2);
    let bytes = text.as_bytes();
    let truncated = bytes.len() > room;
    let mut ids = Vec::with_capacity(bytes.len().min(room) + 2);
    ids.push(BOS);
    ids.extend(bytes.iter().take(room).map(|&b| TokenId::from(b)));
    ids.push(EOS);
    Tokenized { ids, truncated }
}

/// Bytes of the non-special ids, decoded lossily.
pub fn detokenize(ids: &[TokenId]) -> String {
    let bytes: Vec<u8> = ids.iter().filter(|&&t| t < 256).map(|&t| t as u8).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

/// Tokens of one question/answer turn and the index of the first answer token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub ids: Vec<TokenId>,
    pub answer_start: usize,
}

impl Turn {
    /// Prompt part: `[BOS] question \n`.
    pub fn prompt(&self) -> &[TokenId] {
        &self.ids[..self.answer_start]
    }

    /// Answer bytes and the closing EOS.
    pub fn targets(&self) -> &[TokenId] {
        &self.ids[self.answer_start..]
    }
}

/// `[BOS] question \n answer [EOS]`.
pub fn encode_turn(question: &str, answer: &str) -> Turn {
    let mut ids = encode_prompt(question);
    let answer_start = ids.len();
    ids.extend(answer.bytes().map(TokenId::from));
    ids.push(EOS);
    Turn { ids, answer_start }
}

/// Token ids with a flag per position marking loss targets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub targets: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn target_count(&self) -> usize {
        self.targets.iter().filter(|&&t| t).count()
    }
}

impl From<Turn> for TokenSequence {
    fn from(turn: Turn) -> Self {
        let targets = (0..turn.ids.len()).map(|i| i >= turn.answer_start).collect();
        TokenSequence { ids: turn.ids, targets }
    }
}

/// Consecutive turns; every answer and its EOS is a target.
pub fn encode_dialogue<Q: AsRef<str>, A: AsRef<str>>(rounds: &[(Q, A)]) -> TokenSequence {
    let mut out = TokenSequence::default();
    for (q, a) in rounds {
        let turn: TokenSequence = encode_turn(q.as_ref(), a.as_ref()).into();
        out.ids.extend(turn.ids);
        out.targets.extend(turn.targets);
    }
    out
}

pub fn encode_prompt(question: &str) -> Vec<TokenId> {
    let mut ids = Vec::with_capacity(question.len() + 2);
    ids.push(BOS);
    ids.extend(question.bytes().map(TokenId::from));
    ids.push(TokenId::from(TURN_SEPARATOR));
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::rules::rule_table;
    use proptest::prelude::*;

    #[test]
    fn byte_identity() {
        assert_eq!(tokenize("ab").ids, [BOS, 97, 98, EOS]);
        assert!(!tokenize("ab").truncated);
    }

    #[test]
    fn rule_strings_round_trip() {
        for r in rule_table() {
            assert_eq!(detokenize(&tokenize(r.text).ids), r.text);
        }
    }

    #[test]
    fn long_text_is_truncated() {
        let text: String = "x".repeat(1000);
        let t = tokenize(&text);
        assert!(t.truncated);
        assert_eq!(t.ids.len(), MAX_TOKENS);
        assert_eq!(t.ids[0], BOS);
        assert_eq!(*t.ids.last().unwrap(), EOS);
    }

    #[test]
    fn turn_layout() {
        let t = encode_turn("Q?", "A.");
        assert_eq!(t.prompt(), [BOS, b'Q' as u32, b'?' as u32, b'\n' as u32]);
        assert_eq!(t.targets(), [b'A' as u32, b'.' as u32, EOS]);
    }

    #[test]
    fn dialogue_targets_cover_answers() {
        let seq = encode_dialogue(&[("a", "b"), ("c", "de")]);
        assert_eq!(seq.len(), 3 + 2 + 3 + 3);
        assert_eq!(seq.target_count(), 2 + 3);
        assert!(!seq.targets[2] && seq.targets[3] && seq.targets[4] && !seq.targets[5]);
        assert_eq!(seq.ids[4], EOS);
    }

    proptest! {
        #[test]
        fn utf8_round_trip(s in "\\PC{0,100}") {
            let t = tokenize(&s);
            prop_assume!(!t.truncated);
            prop_assert_eq!(detokenize(&t.ids), s);
        }
    }
}
