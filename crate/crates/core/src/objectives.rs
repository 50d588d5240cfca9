//! Contrastive, sign-classification and language-model losses and their
//! weighted combination.
//!
//! Each loss is recorded on a [`Tape`] so it differentiates through the
//! model; the batch types evaluate the same graphs on plain values.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{contract, Result};
use crate::forge::tokenizer::TokenId;
use crate::Tensor;

/// Probability clamp applied before the logarithms of the sign loss.
pub const CLS_EPS: f64 = 1e-12;

/// Tolerance on the unit-norm check of contrastive embeddings.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Soft labels `(1 − s)·I + s/N`; `s = 0` gives one-hot matching.
pub fn soft_labels(n: usize, smoothing: f64) -> Result<Tensor> {
    if n == 0 {
        return Err(contract("soft_labels: empty batch"));
    }
    if !(0.0..=1.0).contains(&smoothing) {
        return Err(contract("soft_labels: smoothing outside [0, 1]"));
    }
    let off = smoothing / n as f64;
    let data = (0..n * n)
        .map(|i| if i / n == i % n { 1.0 - smoothing + off } else { off })
        .collect();
    Tensor::matrix(n, n, data)
}

fn soft_cross_entropy(tape: &mut Tape, scores: Var, labels: Var, n: usize) -> Result<Var> {
    let ls = tape.log_softmax_row(scores)?;
    let picked = tape.mul(ls, labels)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0 / n as f64)
}

/// `(L_img + L_text) / 2` over `S = temperature · img·txtᵀ`.
///
/// `img` and `txt` are `N × d` with unit rows; `temperature` is a
/// one-element var; `labels` rows sum to one.
pub fn clip_loss(tape: &mut Tape, img: Var, txt: Var, temperature: Var, labels: &Tensor) -> Result<Var> {
    let (n, _) = tape.value(img).dims2()?;
    if labels.shape() != [n, n] {
        return Err(contract(format!("clip_loss: labels {:?} for a batch of {n}", labels.shape())));
    }
    let txt_t = tape.transpose(txt)?;
    let sim = tape.matmul(img, txt_t)?;
    let s = tape.mul_scalar(sim, temperature)?;
    let s_t = tape.transpose(s)?;
    let lab = tape.constant(labels.clone());
    let lab_t = tape.transpose(lab)?;
    let l_img = soft_cross_entropy(tape, s, lab, n)?;
    let l_text = soft_cross_entropy(tape, s_t, lab_t, n)?;
    let both = tape.add(l_img, l_text)?;
    tape.scale(both, 0.5)
}

/// `Σ_k mean_i [−y ln p − (1−y) ln(1−p)]` with `p = sigmoid(logits)`
/// clamped to `[ε, 1−ε]`.
pub fn cls_loss(tape: &mut Tape, logits: Var, targets: &Tensor) -> Result<Var> {
    let (n, m) = tape.value(logits).dims2()?;
    if targets.shape() != [n, m] {
        return Err(contract(format!("cls_loss: targets {:?} for logits {n}×{m}", targets.shape())));
    }
    if targets.data().iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(contract("cls_loss: targets must be 0 or 1"));
    }
    let not_y: Vec<f64> = targets.data().iter().map(|y| 1.0 - y).collect();
    let p = tape.sigmoid(logits)?;
    let p = tape.clamp(p, CLS_EPS, 1.0 - CLS_EPS)?;
    let ln_p = tape.ln(p)?;
    let q = tape.scale(p, -1.0)?;
    let q = tape.add_scalar(q, 1.0)?;
    let ln_q = tape.ln(q)?;
    let y = tape.constant(targets.clone());
    let ny = tape.constant(Tensor::matrix(n, m, not_y)?);
    let a = tape.mul(ln_p, y)?;
    let b = tape.mul(ln_q, ny)?;
    let both = tape.add(a, b)?;
    let total = tape.sum(both)?;
    tape.scale(total, -1.0 / n as f64)
}

/// One sample's logits and the `(row, token)` pairs it is scored on.
#[derive(Debug, Clone, Copy)]
pub struct SequenceTargets<'a> {
    pub logits: Var,
    pub targets: &'a [(usize, TokenId)],
}

/// `−(1/N) Σ_i Σ_j ln softmax(logits_i[row_j])[token_j]`.
pub fn llm_loss(tape: &mut Tape, samples: &[SequenceTargets<'_>]) -> Result<Var> {
    if samples.is_empty() {
        return Err(contract("llm_loss: no samples"));
    }
    let mut sums = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if s.targets.is_empty() {
            return Err(contract(format!("llm_loss: sample {i} has an empty target mask")));
        }
        let (rows, vocab) = tape.value(s.logits).dims2()?;
        let idx: Vec<(usize, usize)> = s
            .targets
            .iter()
            .map(|&(r, t)| (r, t as usize))
            .collect();
        if let Some(&(r, t)) = idx.iter().find(|&&(r, t)| r >= rows || t >= vocab) {
            return Err(contract(format!("llm_loss: sample {i} target ({r}, {t}) outside {rows}×{vocab} logits")));
        }
        let ls = tape.log_softmax_row(s.logits)?;
        let picked = tape.pick(ls, &idx)?;
        sums.push(tape.sum(picked)?);
    }
    let mut total = sums[0];
    for &s in &sums[1..] {
        total = tape.add(total, s)?;
    }
    tape.scale(total, -1.0 / samples.len() as f64)
}

/// Weights of the clip, cls and llm terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub clip: f64,
    pub cls: f64,
    pub llm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::FINETUNE
    }
}

impl LossWeights {
    pub const FINETUNE: LossWeights = LossWeights { clip: 1.0, cls: 1.0, llm: 1.0 };
    pub const PRETRAIN: LossWeights = LossWeights { clip: 0.0, cls: 0.0, llm: 1.0 };

    pub fn as_array(&self) -> [f64; 3] {
        [self.clip, self.cls, self.llm]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(contract(format!("loss weights {w:?} must be finite and non-negative")));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(contract("loss weights are all zero"));
        }
        Ok(())
    }
}

/// `w₁·clip + w₂·cls + w₃·llm`; zero-weight terms are left out entirely.
pub fn combined_loss_on_tape(tape: &mut Tape, parts: [Option<Var>; 3], weights: LossWeights) -> Result<Var> {
    weights.validate()?;
    let mut total: Option<Var> = None;
    for (part, w) in parts.into_iter().zip(weights.as_array()) {
        if w == 0.0 {
            continue;
        }
        let part = part.ok_or_else(|| contract("combined_loss: a weighted term was not computed"))?;
        let term = if w == 1.0 { part } else { tape.scale(part, w)? };
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    total.ok_or_else(|| contract("loss weights are all zero"))
}

/// Value-level counterpart of [`combined_loss_on_tape`].
pub fn combined_loss(clip: f64, cls: f64, llm: f64, weights: LossWeights) -> Result<f64> {
    weights.validate()?;
    let mut total: Option<f64> = None;
    for (part, w) in [clip, cls, llm].into_iter().zip(weights.as_array()) {
        if w != 0.0 {
            let term = w * part;
            total = Some(total.map_or(term, |t| t + term));
        }
    }
    total.ok_or_else(|| contract("loss weights are all zero"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub img_embs: Tensor,
    pub txt_embs: Tensor,
    pub soft_labels: Tensor,
    pub temperature: f64,
}

impl ContrastiveBatch {
    /// One-hot labels.
    pub fn new(img_embs: Tensor, txt_embs: Tensor, temperature: f64) -> Result<Self> {
        let n = img_embs.dims2()?.0;
        Ok(Self {
            img_embs,
            txt_embs,
            soft_labels: soft_labels(n, 0.0)?,
            temperature,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.img_embs.dims2()?;
        if n == 0 {
            return Err(contract("contrastive batch is empty"));
        }
        if self.txt_embs.dims2()? != (n, d) {
            return Err(contract(format!(
                "contrastive batch: text {:?} vs image {:?}",
                self.txt_embs.shape(),
                self.img_embs.shape()
            )));
        }
        for (name, t) in [("image", &self.img_embs), ("text", &self.txt_embs)] {
            for i in 0..n {
                let norm = libm::sqrt(t.row(i).iter().map(|x| x * x).sum::<f64>());
                if (norm - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(contract(format!("{name} embedding row {i} has norm {norm}, expected 1")));
                }
            }
        }
        if self.soft_labels.shape() != [n, n] {
            return Err(contract("soft labels must be N × N"));
        }
        for i in 0..n {
            let row = self.soft_labels.row(i);
            if row.iter().any(|&x| x < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(contract(format!("soft label row {i} is not a distribution")));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(contract("temperature must be positive"));
        }
        Ok(())
    }

    pub fn loss(&self) -> Result<f64> {
        self.validate()?;
        let mut tape = Tape::new();
        let img = tape.constant(self.img_embs.clone());
        let txt = tape.constant(self.txt_embs.clone());
        let temp = tape.constant(Tensor::scalar(self.temperature));
        let l = clip_loss(&mut tape, img, txt, temp, &self.soft_labels)?;
        Ok(tape.value(l).item())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignBatch {
    pub logits: Tensor,
    pub targets: Tensor,
}

impl SignBatch {
    pub fn loss(&self) -> Result<f64> {
        let mut tape = Tape::new();
        let logits = tape.constant(self.logits.clone());
        let l = cls_loss(&mut tape, logits, &self.targets)?;
        Ok(tape.value(l).item())
    }
}

/// Logits of one sample; row `j` is scored against `targets[j]` where
/// `mask[j]` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub logits: Tensor,
    pub targets: Vec<TokenId>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceBatch {
    pub samples: Vec<SequenceSample>,
}

impl SequenceBatch {
    pub fn loss(&self) -> Result<f64> {
        let mut tape = Tape::new();
        let mut pairs = Vec::with_capacity(self.samples.len());
        for (i, s) in self.samples.iter().enumerate() {
            let rows = s.logits.dims2()?.0;
            if s.targets.len() != rows || s.mask.len() != rows {
                return Err(contract(format!("sequence sample {i}: targets and mask must have one entry per row")));
            }
            let t: Vec<(usize, TokenId)> = (0..rows).filter(|&j| s.mask[j]).map(|j| (j, s.targets[j])).collect();
            pairs.push((tape.constant(s.logits.clone()), t));
        }
        let samples: Vec<SequenceTargets<'_>> = pairs
            .iter()
            .map(|(v, t)| SequenceTargets { logits: *v, targets: t })
            .collect();
        let l = llm_loss(&mut tape, &samples)?;
        Ok(tape.value(l).item())
    }
}
