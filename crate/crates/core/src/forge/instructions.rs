//! Instruction templates paired with caption answers in pretraining dialogues.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};

const SHORT: &str = include_str!("../../assets/instructions_short.txt");
const LONG: &str = include_str!("../../assets/instructions_long.txt");

/// Answers with at least this many words get a long-form instruction.
pub const LONG_ANSWER_WORDS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    Short,
    Long,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstructionTemplate {
    pub text: &'static str,
    pub kind: TemplateKind,
}

pub fn templates(kind: TemplateKind) -> Vec<InstructionTemplate> {
    let src = match kind {
        TemplateKind::Short => SHORT,
        TemplateKind::Long => LONG,
    };
    src.lines()
        .filter(|l| !l.is_empty())
        .map(|text| InstructionTemplate { text, kind })
        .collect()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Picks a template uniformly (under `seed`) from the pool matching the
/// answer's length.
pub fn select_instruction(answer: &str, seed: u64) -> Result<InstructionTemplate> {
    select_instruction_with(answer, seed, LONG_ANSWER_WORDS)
}

pub fn select_instruction_with(answer: &str, seed: u64, long_threshold: usize) -> Result<InstructionTemplate> {
    if answer.trim().is_empty() {
        return Err(contract("select_instruction: empty answer"));
    }
    let kind = if word_count(answer) >= long_threshold {
        TemplateKind::Long
    } else {
        TemplateKind::Short
    };
    let pool = templates(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(pool[rng.gen_range(0..pool.len())])
}
