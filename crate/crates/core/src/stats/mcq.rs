//! Four-option multiple-choice evaluation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Rate;
use crate::error::{contract, Result};

pub const OPTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqCase {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqQuestion {
    pub case_id: String,
    pub options: [String; OPTIONS],
}

pub trait Responder {
    /// Index of the chosen option; anything out of range scores as wrong.
    fn choose(&mut self, question: &McqQuestion) -> Result<usize>;
}

impl<F: FnMut(&McqQuestion) -> Result<usize>> Responder for F {
    fn choose(&mut self, question: &McqQuestion) -> Result<usize> {
        self(question)
    }
}

/// Knows every case's label.
pub struct OracleResponder {
    answers: BTreeMap<String, String>,
}

impl OracleResponder {
    pub fn new(cases: &[McqCase]) -> Self {
        Self { answers: cases.iter().map(|c| (c.id.clone(), c.label.clone())).collect() }
    }
}

impl Responder for OracleResponder {
    fn choose(&mut self, q: &McqQuestion) -> Result<usize> {
        let label = self
            .answers
            .get(&q.case_id)
            .ok_or_else(|| contract(format!("oracle: unknown case {}", q.case_id)))?;
        Ok(q.options.iter().position(|o| o == label).unwrap_or(OPTIONS))
    }
}

/// Picks uniformly at random.
pub struct RandomResponder(ChaCha8Rng);

impl RandomResponder {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl Responder for RandomResponder {
    fn choose(&mut self, _: &McqQuestion) -> Result<usize> {
        Ok(self.0.gen_range(0..OPTIONS))
    }
}

/// One question per case: the label plus three distinct distractors drawn
/// from the rest of the universe, in a seeded random order. Returns each
/// question with the index of its correct option.
pub fn build_questions(cases: &[McqCase], universe: &[String], seed: u64) -> Result<Vec<(McqQuestion, usize)>> {
    let universe: Vec<&String> = universe.iter().collect::<BTreeSet<_>>().into_iter().collect();
    if universe.len() < OPTIONS {
        return Err(contract(format!(
            "multiple choice: label universe has {} distinct labels, need {OPTIONS}",
            universe.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cases
        .iter()
        .map(|case| {
            let others: Vec<&String> = universe.iter().copied().filter(|&l| *l != case.label).collect();
            if others.len() < OPTIONS - 1 {
                return Err(contract(format!("case {}: too few distractors", case.id)));
            }
            let picks = sample(&mut rng, others.len(), OPTIONS - 1);
            let correct = rng.gen_range(0..OPTIONS);
            let mut distractors = picks.iter().map(|i| others[i].clone());
            let options = core::array::from_fn(|slot| {
                if slot == correct {
                    case.label.clone()
                } else {
                    distractors.next().unwrap_or_default()
                }
            });
            Ok((McqQuestion { case_id: case.id.clone(), options }, correct))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqReport {
    pub overall: Rate,
    pub per_disease: BTreeMap<String, Rate>,
}

pub fn multiple_choice_eval(
    cases: &[McqCase],
    universe: &[String],
    responder: &mut dyn Responder,
    seed: u64,
) -> Result<McqReport> {
    if cases.is_empty() {
        return Err(contract("multiple choice: no cases"));
    }
    let questions = build_questions(cases, universe, seed)?;
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut hits = 0;
    for (case, (q, correct)) in cases.iter().zip(&questions) {
        let ok = (responder.choose(q)? == *correct) as usize;
        hits += ok;
        let e = tally.entry(&case.label).or_default();
        e.0 += ok;
        e.1 += 1;
    }
    Ok(McqReport {
        overall: Rate::new(hits, cases.len())?,
        per_disease: tally
            .into_iter()
            .map(|(d, (k, n))| Ok((d.into(), Rate::new(k, n)?)))
            .collect::<Result<_>>()?,
    })
}
