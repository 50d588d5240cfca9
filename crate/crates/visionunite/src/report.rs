//! Evaluation and metrics reports in text and CSV form.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;
use visionunite_core::stats::{
    accuracy, accuracy_by_disease, assisted_comparison, correction_stats, error_taxonomy, misdiagnosis_rate,
    proportion_test, relevance_stats, t_test_two_sided, validate_cases, AssistedReport, BootstrapConfig,
    CorrectionStats, EvalCase, Proportion, RelevanceSummary, TaxonomyReport, RESPONDERS,
};
use visionunite_core::train::StepMetrics;

use crate::error::Result;

pub const CONFIDENCE: f64 = 0.95;

/// Every statistic computed over an evaluation case file. Responder 0 is
/// the one compared against the others.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub cases: usize,
    pub seed: u64,
    /// Round-1 accuracy per responder.
    pub accuracy: Vec<Proportion>,
    /// Proportion-test p-values of responder 0 against each responder.
    pub accuracy_p: Vec<f64>,
    pub per_disease: BTreeMap<String, Proportion>,
    pub misdiagnosis: Vec<Option<Proportion>>,
    pub relevance: Vec<RelevanceSummary>,
    /// Welch p-values of responder 0's ranks against each responder's.
    pub relevance_p: Vec<f64>,
    /// Per responder; `None` when some case has fewer than 3 rounds.
    pub correction: Vec<Option<CorrectionStats>>,
    pub taxonomy: Option<TaxonomyReport>,
    pub assisted: Option<AssistedReport>,
}

pub fn evaluate(cases: &[EvalCase], bootstrap: &BootstrapConfig) -> Result<EvalReport> {
    validate_cases(cases)?;
    let responders = 0..RESPONDERS;
    let acc = responders.clone().map(|r| accuracy(cases, r, 0, CONFIDENCE)).collect::<Result<Vec<_>, _>>()?;
    let accuracy_p = acc
        .iter()
        .map(|a| proportion_test(acc[0].rate.k, acc[0].rate.n, a.rate.k, a.rate.n, CONFIDENCE))
        .collect::<Result<Vec<_>, _>>()?;
    let has_healthy = cases.iter().any(|c| c.truth.is_healthy());
    let misdiagnosis = responders
        .clone()
        .map(|r| if has_healthy { misdiagnosis_rate(cases, r, 0, CONFIDENCE).map(Some) } else { Ok(None) })
        .collect::<Result<Vec<_>, _>>()?;
    let relevance = relevance_stats(cases, bootstrap)?;
    let ranks: Vec<Vec<f64>> = responders
        .clone()
        .map(|r| cases.iter().flat_map(|c| &c.rounds).map(|round| round.ranks[r] as f64).collect())
        .collect();
    let relevance_p = if ranks[0].len() >= 2 {
        ranks.iter().map(|r| t_test_two_sided(&ranks[0], r)).collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    let three_rounds = cases.iter().all(|c| c.rounds.len() >= 3);
    let correction = responders
        .map(|r| if three_rounds { correction_stats(cases, r, CONFIDENCE).map(Some) } else { Ok(None) })
        .collect::<Result<Vec<_>, _>>()?;
    let taxonomy = if cases.iter().all(|c| c.errors.is_some()) { Some(error_taxonomy(cases, CONFIDENCE)?) } else { None };
    let timings: Vec<_> = cases.iter().filter_map(|c| c.timing.clone()).collect();
    let assisted = if timings.is_empty() { None } else { Some(assisted_comparison(&timings)?) };
    Ok(EvalReport {
        cases: cases.len(),
        seed: bootstrap.seed,
        accuracy: acc,
        accuracy_p,
        per_disease: accuracy_by_disease(cases, 0, 0, CONFIDENCE)?,
        misdiagnosis,
        relevance,
        relevance_p,
        correction,
        taxonomy,
        assisted,
    })
}

fn prop(p: &Proportion) -> String {
    format!(
        "{:.4} ({}/{}), 95% CI [{:.4}, {:.4}]",
        p.rate.value, p.rate.k, p.rate.n, p.ci.lower, p.ci.upper
    )
}

fn opt_prop(p: &Option<Proportion>) -> String {
    p.as_ref().map(prop).unwrap_or_else(|| "undefined (no round-1 errors)".into())
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "cases: {}  seed: {}", self.cases, self.seed);
        let _ = writeln!(s, "\ndiagnostic accuracy (round 1)");
        for (r, a) in self.accuracy.iter().enumerate() {
            let _ = writeln!(s, "  responder {r}: {}  p vs 0 = {:.4}", prop(a), self.accuracy_p[r]);
        }
        if !self.per_disease.is_empty() {
            let _ = writeln!(s, "\nper-disease accuracy, responder 0 (round 1)");
            for (d, a) in &self.per_disease {
                let _ = writeln!(s, "  {d}: {}", prop(a));
            }
        }
        if self.misdiagnosis.iter().any(Option::is_some) {
            let _ = writeln!(s, "\nmisdiagnosis rate (healthy cases)");
            for (r, m) in self.misdiagnosis.iter().enumerate() {
                if let Some(m) = m {
                    let _ = writeln!(s, "  responder {r}: {}", prop(m));
                }
            }
        }
        let _ = writeln!(s, "\nrelevance mean rank (4 = most consistent)");
        for r in &self.relevance {
            let p = self.relevance_p.get(r.responder).map(|p| format!("  p vs 0 = {p:.4}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "  responder {}: {:.4} (n={}), bootstrap 95% CI [{:.4}, {:.4}]{p}",
                r.responder, r.mean, r.n, r.ci.lower, r.ci.upper
            );
        }
        let _ = writeln!(s, "\ncorrection of round-1 errors (round 3 counted regardless of round 2)");
        for (r, c) in self.correction.iter().enumerate() {
            match c {
                Some(c) => {
                    let _ = writeln!(s, "  responder {r}: {} wrong in round 1", c.wrong_first);
                    let _ = writeln!(s, "    overall {}", opt_prop(&c.overall));
                    let _ = writeln!(s, "    round 2 {}", opt_prop(&c.round2));
                    let _ = writeln!(s, "    round 3 {}", opt_prop(&c.round3));
                }
                None => {
                    let _ = writeln!(s, "  responder {r}: not computed, cases with fewer than 3 rounds");
                }
            }
        }
        if let Some(t) = &self.taxonomy {
            let _ = writeln!(s, "\nerror taxonomy (none/minor/major)");
            let _ = writeln!(s, "  missed    {:?}  error-free {}", t.missed.counts, prop(&t.missed.error_free));
            let _ = writeln!(s, "  incorrect {:?}  error-free {}", t.incorrect.counts, prop(&t.incorrect.error_free));
        }
        if let Some(a) = &self.assisted {
            let _ = writeln!(s, "\nassisted diagnosis");
            let mut line = |name: &str, d: &visionunite_core::stats::AssistedDelta| {
                let t = d.time_reduction.map(|t| format!("{:.2}%", 100.0 * t)).unwrap_or_else(|| "undefined".into());
                let _ = writeln!(
                    s,
                    "  {name} (n={}): time reduction {t}, accuracy {:+.2} pp ({}/{} → {}/{})",
                    d.n, d.accuracy_increase, d.doctor_accuracy.k, d.n, d.assisted_accuracy.k, d.n
                );
            };
            line("overall", &a.overall);
            for (c, d) in &a.per_condition {
                line(c, d);
            }
        }
        s
    }

    /// `metric,responder,k,n,value,lower,upper`; blank where not applicable.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,responder,k,n,value,lower,upper\n");
        let mut row = |metric: &str, who: String, p: &Proportion| {
            let _ = writeln!(
                s,
                "{metric},{who},{},{},{},{},{}",
                p.rate.k, p.rate.n, p.rate.value, p.ci.lower, p.ci.upper
            );
        };
        for (r, a) in self.accuracy.iter().enumerate() {
            row("accuracy", r.to_string(), a);
        }
        for (d, a) in &self.per_disease {
            row(&format!("accuracy:{}", d.replace(',', ";")), "0".into(), a);
        }
        for (r, m) in self.misdiagnosis.iter().enumerate() {
            if let Some(m) = m {
                row("misdiagnosis", r.to_string(), m);
            }
        }
        for (r, c) in self.correction.iter().enumerate() {
            if let Some(c) = c {
                for (name, p) in [("correction_overall", &c.overall), ("correction_round2", &c.round2), ("correction_round3", &c.round3)] {
                    if let Some(p) = p {
                        row(name, r.to_string(), p);
                    }
                }
            }
        }
        if let Some(t) = &self.taxonomy {
            row("error_free_missed", String::new(), &t.missed.error_free);
            row("error_free_incorrect", String::new(), &t.incorrect.error_free);
        }
        for r in &self.relevance {
            let _ = writeln!(s, "relevance,{},,{},{},{},{}", r.responder, r.n, r.mean, r.ci.lower, r.ci.upper);
        }
        s
    }
}

/// Trailing moving average over up to `window` values.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Per-column summary of a metrics log: count, first, last, min and the
/// mean of the first and last tenth.
pub fn summarize_metrics(metrics: &[StepMetrics]) -> String {
    let mut s = String::from("metric,count,first,last,min,mean_first_tenth,mean_last_tenth\n");
    let columns: [(&str, Vec<f64>); 5] = [
        ("lr", metrics.iter().map(|m| m.lr).collect()),
        ("clip", metrics.iter().filter_map(|m| m.clip).collect()),
        ("cls", metrics.iter().filter_map(|m| m.cls).collect()),
        ("llm", metrics.iter().map(|m| m.llm).collect()),
        ("total", metrics.iter().map(|m| m.total).collect()),
    ];
    for (name, v) in columns {
        if v.is_empty() {
            let _ = writeln!(s, "{name},0,,,,,");
            continue;
        }
        let tenth = (v.len() / 10).max(1);
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{}",
            v.len(),
            v[0],
            v[v.len() - 1],
            min,
            mean(&v[..tenth]),
            mean(&v[v.len() - tenth..])
        );
    }
    s
}
