//! Per-case clinical evaluation: judgments, relevance ranks, corrections,
//! error taxonomy and assisted-diagnosis deltas.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{bootstrap_ci, BootstrapConfig, BootstrapInterval, Proportion, Rate};
use crate::error::{contract, Error, Result};

/// Responders compared per case; relevance ranks are a permutation of 1..=4.
pub const RESPONDERS: usize = 4;

pub const HEALTHY: &str = "Healthy";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Every diagnosable disease; all must be named.
    pub required: BTreeSet<String>,
    /// Diseases that may be named without penalty.
    #[serde(default)]
    pub optional: BTreeSet<String>,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        match self.required.intersection(&self.optional).next() {
            Some(d) => Err(Error::Validation(format!("{d:?} is both required and optional"))),
            None => Ok(()),
        }
    }

    pub fn is_healthy(&self) -> bool {
        self.required.len() == 1 && self.required.contains(HEALTHY)
    }
}

/// Correct iff every required disease is named and nothing outside
/// `required ∪ optional` is.
pub fn judge_accuracy(predicted: &BTreeSet<String>, truth: &GroundTruth) -> bool {
    truth.required.is_subset(predicted)
        && predicted.iter().all(|d| truth.required.contains(d) || truth.optional.contains(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    None,
    Minor,
    Major,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::None, Severity::Minor, Severity::Major];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorLabels {
    pub missed: Option<Severity>,
    pub incorrect: Option<Severity>,
}

/// Paired unaided and model-assisted reading of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    #[serde(default)]
    pub condition: String,
    pub doctor_seconds: f64,
    pub assisted_seconds: f64,
    pub doctor_correct: bool,
    pub assisted_correct: bool,
}

/// One dialogue round: each responder's named diseases and the relevance
/// rank it received (4 = most consistent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub predictions: Vec<BTreeSet<String>>,
    pub ranks: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub id: String,
    pub truth: GroundTruth,
    pub rounds: Vec<Round>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errors: Option<ErrorLabels>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl EvalCase {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Error::Validation(format!("case {}: {msg}", self.id));
        self.truth.validate().map_err(|e| fail(e.to_string()))?;
        if self.rounds.is_empty() {
            return Err(fail("no rounds".into()));
        }
        for (r, round) in self.rounds.iter().enumerate() {
            if round.predictions.len() != RESPONDERS {
                return Err(fail(format!(
                    "round {} has {} predictions, expected {RESPONDERS}",
                    r + 1,
                    round.predictions.len()
                )));
            }
            let mut seen = [false; RESPONDERS];
            let ok = round.ranks.len() == RESPONDERS
                && round.ranks.iter().all(|&k| {
                    let i = (k as usize).wrapping_sub(1);
                    i < RESPONDERS && !core::mem::replace(&mut seen[i], true)
                });
            if !ok {
                return Err(fail(format!("round {} ranks {:?} are not a permutation of 1..=4", r + 1, round.ranks)));
            }
        }
        Ok(())
    }

    /// Whether `responder` was correct in `round` (0-based).
    pub fn correct(&self, responder: usize, round: usize) -> Result<bool> {
        let preds = self
            .rounds
            .get(round)
            .and_then(|r| r.predictions.get(responder))
            .ok_or_else(|| contract(format!("case {}: no round {} for responder {responder}", self.id, round + 1)))?;
        Ok(judge_accuracy(preds, &self.truth))
    }
}

pub fn validate_cases(cases: &[EvalCase]) -> Result<()> {
    cases.iter().try_for_each(EvalCase::validate)
}

fn check_responder(responder: usize) -> Result<()> {
    if responder < RESPONDERS {
        Ok(())
    } else {
        Err(contract(format!("responder {responder} out of range 0..{RESPONDERS}")))
    }
}

/// Diagnostic accuracy of one responder in one round (0-based).
pub fn accuracy(cases: &[EvalCase], responder: usize, round: usize, confidence: f64) -> Result<Proportion> {
    check_responder(responder)?;
    if cases.is_empty() {
        return Err(contract("accuracy: no cases"));
    }
    let mut k = 0;
    for c in cases {
        k += c.correct(responder, round)? as usize;
    }
    Proportion::new(k, cases.len(), confidence)
}

/// Accuracy per disease; a case counts toward every disease it requires.
pub fn accuracy_by_disease(
    cases: &[EvalCase],
    responder: usize,
    round: usize,
    confidence: f64,
) -> Result<BTreeMap<String, Proportion>> {
    check_responder(responder)?;
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for c in cases {
        let ok = c.correct(responder, round)? as usize;
        for d in &c.truth.required {
            let e = tally.entry(d).or_default();
            e.0 += ok;
            e.1 += 1;
        }
    }
    tally
        .into_iter()
        .map(|(d, (k, n))| Ok((d.into(), Proportion::new(k, n, confidence)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceSummary {
    pub responder: usize,
    pub mean: f64,
    pub ci: BootstrapInterval,
    /// Ranked rounds the mean covers.
    pub n: usize,
}

/// Mean relevance rank per responder over every round of every case.
pub fn relevance_stats(cases: &[EvalCase], cfg: &BootstrapConfig) -> Result<Vec<RelevanceSummary>> {
    validate_cases(cases)?;
    if cases.is_empty() {
        return Err(contract("relevance_stats: no cases"));
    }
    let mut ranks: Vec<Vec<f64>> = alloc::vec![Vec::new(); RESPONDERS];
    for round in cases.iter().flat_map(|c| &c.rounds) {
        for (who, &k) in round.ranks.iter().enumerate() {
            ranks[who].push(k as f64);
        }
    }
    ranks
        .iter()
        .enumerate()
        .map(|(responder, r)| {
            let ci = bootstrap_ci(r, cfg.resamples, cfg.confidence, cfg.seed.wrapping_add(responder as u64))?;
            Ok(RelevanceSummary { responder, mean: ci.estimate, ci, n: r.len() })
        })
        .collect()
}

/// Correction rates among cases answered wrongly in round 1.
///
/// `None` marks a rate with an empty denominator. Round 3 is counted
/// whether or not round 2 was already correct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionStats {
    pub wrong_first: usize,
    pub overall: Option<Proportion>,
    pub round2: Option<Proportion>,
    pub round3: Option<Proportion>,
    pub round3_conditional: bool,
}

pub fn correction_stats(cases: &[EvalCase], responder: usize, confidence: f64) -> Result<CorrectionStats> {
    check_responder(responder)?;
    let (mut n, mut overall, mut r2, mut r3) = (0, 0, 0, 0);
    for c in cases {
        if c.rounds.len() < 3 {
            return Err(Error::Validation(format!("case {}: {} rounds, correction needs 3", c.id, c.rounds.len())));
        }
        if c.correct(responder, 0)? {
            continue;
        }
        let (a, b) = (c.correct(responder, 1)?, c.correct(responder, 2)?);
        n += 1;
        overall += (a || b) as usize;
        r2 += a as usize;
        r3 += b as usize;
    }
    let rate = |k| if n == 0 { Ok(None) } else { Proportion::new(k, n, confidence).map(Some) };
    Ok(CorrectionStats {
        wrong_first: n,
        overall: rate(overall)?,
        round2: rate(r2)?,
        round3: rate(r3)?,
        round3_conditional: false,
    })
}

/// Share of healthy-truth cases given any wrong answer in `round`.
pub fn misdiagnosis_rate(cases: &[EvalCase], responder: usize, round: usize, confidence: f64) -> Result<Proportion> {
    check_responder(responder)?;
    let healthy: Vec<&EvalCase> = cases.iter().filter(|c| c.truth.is_healthy()).collect();
    if healthy.is_empty() {
        return Err(contract("misdiagnosis_rate: no cases with healthy ground truth"));
    }
    let mut wrong = 0;
    for c in &healthy {
        wrong += !c.correct(responder, round)? as usize;
    }
    Proportion::new(wrong, healthy.len(), confidence)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    /// Counts for none, minor, major.
    pub counts: [usize; 3],
    pub error_free: Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyReport {
    pub missed: DimensionSummary,
    pub incorrect: DimensionSummary,
    /// `cross_tab[missed][incorrect]`.
    pub cross_tab: [[usize; 3]; 3],
}

pub fn error_taxonomy(cases: &[EvalCase], confidence: f64) -> Result<TaxonomyReport> {
    if cases.is_empty() {
        return Err(contract("error_taxonomy: no cases"));
    }
    let mut tab = [[0usize; 3]; 3];
    for c in cases {
        let labels = c.errors.unwrap_or_default();
        match (labels.missed, labels.incorrect) {
            (Some(m), Some(i)) => tab[m.index()][i.index()] += 1,
            (m, _) => {
                let which = if m.is_none() { "missed" } else { "incorrect" };
                return Err(Error::Validation(format!("case {}: no {which} error label", c.id)));
            }
        }
    }
    let n = cases.len();
    let missed: [usize; 3] = core::array::from_fn(|i| tab[i].iter().sum());
    let incorrect: [usize; 3] = core::array::from_fn(|j| tab.iter().map(|row| row[j]).sum());
    let summary = |counts: [usize; 3]| -> Result<DimensionSummary> {
        Ok(DimensionSummary { counts, error_free: Proportion::new(counts[0], n, confidence)? })
    };
    Ok(TaxonomyReport { missed: summary(missed)?, incorrect: summary(incorrect)?, cross_tab: tab })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistedDelta {
    pub n: usize,
    pub doctor_mean_seconds: f64,
    pub assisted_mean_seconds: f64,
    /// `(t_doc − t_both) / t_doc` on mean times; `None` when `t_doc` is 0.
    pub time_reduction: Option<f64>,
    pub doctor_accuracy: Rate,
    pub assisted_accuracy: Rate,
    /// Percentage points.
    pub accuracy_increase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistedReport {
    pub overall: AssistedDelta,
    pub per_condition: BTreeMap<String, AssistedDelta>,
}

fn assisted_delta(records: &[&Timing]) -> Result<AssistedDelta> {
    let n = records.len();
    let t_doc = records.iter().map(|r| r.doctor_seconds).sum::<f64>() / n as f64;
    let t_both = records.iter().map(|r| r.assisted_seconds).sum::<f64>() / n as f64;
    let doctor_accuracy = Rate::new(records.iter().filter(|r| r.doctor_correct).count(), n)?;
    let assisted_accuracy = Rate::new(records.iter().filter(|r| r.assisted_correct).count(), n)?;
    Ok(AssistedDelta {
        n,
        doctor_mean_seconds: t_doc,
        assisted_mean_seconds: t_both,
        time_reduction: (t_doc != 0.0).then(|| (t_doc - t_both) / t_doc),
        doctor_accuracy,
        assisted_accuracy,
        accuracy_increase: 100.0 * (assisted_accuracy.value - doctor_accuracy.value),
    })
}

pub fn assisted_comparison(records: &[Timing]) -> Result<AssistedReport> {
    if records.is_empty() {
        return Err(contract("assisted_comparison: no records"));
    }
    if let Some(r) = records
        .iter()
        .find(|r| !(r.doctor_seconds >= 0.0 && r.assisted_seconds >= 0.0) || !r.doctor_seconds.is_finite() || !r.assisted_seconds.is_finite())
    {
        return Err(Error::Validation(format!(
            "timing for condition {:?} must be finite and non-negative",
            r.condition
        )));
    }
    let all: Vec<&Timing> = records.iter().collect();
    let mut groups: BTreeMap<&str, Vec<&Timing>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.condition).or_default().push(r);
    }
    Ok(AssistedReport {
        overall: assisted_delta(&all)?,
        per_condition: groups
            .into_iter()
            .map(|(c, rs)| Ok((c.to_string(), assisted_delta(&rs)?)))
            .collect::<Result<_>>()?,
    })
}
