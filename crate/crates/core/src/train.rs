//! Learning-rate rules, batching and the pretrain/finetune loops.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::sigmoid;
use crate::autodiff::Var;
use crate::error::{contract, Result};
use crate::forge::corpus::{validate_record, CaptionDialogue, FundusRecord, Violation};
use crate::forge::image::Image;
use crate::forge::signs::{SignVector, SIGN_COUNT};
use crate::forge::tokenizer::{detokenize, encode_dialogue, encode_prompt, encode_turn, tokenize_capped, TokenId, TokenSequence};
use crate::model::{Forward, Model};
use crate::objectives::{clip_loss, cls_loss, combined_loss_on_tape, llm_loss, soft_labels, LossWeights, SequenceTargets};
use crate::optim::{adamw_step, AdamWConfig, OptimizerState};
use crate::Tensor;

/// Question paired with the description when finetuning on descriptions.
pub const DESCRIBE_PROMPT: &str = "Describe this fundus image.";

/// `base · batch / 256`.
pub fn compute_absolute_lr(base: f64, batch: usize) -> f64 {
    base * batch as f64 / 256.0
}

/// Linear warmup from 0 to `peak`, then half-cosine down to 0 at
/// `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, peak: f64) -> f64 {
    lr_with_floor(step, total_steps, warmup_steps, peak, 0.0)
}

/// [`lr_at`] decaying to `floor` instead of 0.
pub fn lr_with_floor(step: usize, total_steps: usize, warmup_steps: usize, peak: f64, floor: f64) -> f64 {
    let step = step.min(total_steps);
    if step < warmup_steps {
        return peak * step as f64 / warmup_steps as f64;
    }
    if step == total_steps {
        return floor;
    }
    let span = (total_steps - warmup_steps) as f64;
    let progress = (step - warmup_steps) as f64 / span;
    floor + (peak - floor) * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress))
}

/// Where the assembled sequence's sign tokens come from during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignSource {
    /// Thresholded adapter output, as at inference.
    #[default]
    Predicted,
    /// The record's labeled signs.
    GroundTruth,
}

/// What the language model is trained to produce for a fundus record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneTarget {
    /// All three dialogue rounds as one sequence.
    #[default]
    Dialogue,
    /// The three-level description after [`DESCRIBE_PROMPT`].
    Description,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub warmup_epochs: usize,
    pub lr_floor: f64,
    pub max_tokens: usize,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub sign_source: SignSource,
    pub label_smoothing: f64,
    pub finetune_target: FinetuneTarget,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.001,
            betas: (0.9, 0.95),
            weight_decay: 0.02,
            eps: 1e-8,
            batch_size: 8,
            pretrain_epochs: 10,
            finetune_epochs: 30,
            warmup_epochs: 1,
            lr_floor: 0.0,
            max_tokens: crate::forge::tokenizer::MAX_TOKENS,
            loss_weights: LossWeights::FINETUNE,
            seed: 42,
            sign_source: SignSource::Predicted,
            label_smoothing: 0.0,
            finetune_target: FinetuneTarget::Dialogue,
        }
    }
}

impl TrainConfig {
    pub fn absolute_lr(&self) -> f64 {
        compute_absolute_lr(self.base_lr, self.batch_size)
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            betas: self.betas,
            weight_decay: self.weight_decay,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, why: &str| Err(contract(format!("train config: {name} {why}")));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return field("base_lr", "must be positive");
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return field("betas", "must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return field("weight_decay", "must be non-negative");
        }
        if !(self.eps > 0.0) {
            return field("eps", "must be positive");
        }
        if self.batch_size == 0 {
            return field("batch_size", "must be at least 1");
        }
        if !(self.lr_floor >= 0.0) {
            return field("lr_floor", "must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.label_smoothing) {
            return field("label_smoothing", "must lie in [0, 1]");
        }
        if self.max_tokens < 3 {
            return field("max_tokens", "must be at least 3");
        }
        self.loss_weights.validate()
    }
}

/// One training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub image: Image,
    /// Text for the contrastive branch.
    pub caption: Vec<TokenId>,
    pub sequence: TokenSequence,
    pub signs: Option<SignVector>,
}

pub fn example_from_record(record: &FundusRecord, image: Image, target: FinetuneTarget, max_tokens: usize) -> TrainExample {
    let sequence = match target {
        FinetuneTarget::Description => encode_turn(DESCRIBE_PROMPT, &record.description).into(),
        FinetuneTarget::Dialogue => {
            let rounds: Vec<(&str, &str)> = record.dialogue.iter().map(|r| (r.question.as_str(), r.answer.as_str())).collect();
            encode_dialogue(&rounds)
        }
    };
    TrainExample {
        image,
        caption: tokenize_capped(&record.description, max_tokens).ids,
        sequence,
        signs: Some(record.signs),
    }
}

pub fn example_from_caption(dialogue: &CaptionDialogue, image: Image, max_tokens: usize) -> TrainExample {
    TrainExample {
        image,
        caption: tokenize_capped(&dialogue.answer, max_tokens).ids,
        sequence: encode_turn(&dialogue.question, &dialogue.answer).into(),
        signs: None,
    }
}

/// Loss terms of one batch recorded on the forward's tape.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub clip: Option<Var>,
    pub cls: Option<Var>,
    pub llm: Var,
    pub total: Var,
}

fn sign_targets(batch: &[&TrainExample]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(batch.len() * SIGN_COUNT);
    for (i, ex) in batch.iter().enumerate() {
        let s = ex.signs.ok_or_else(|| contract(format!("sign loss needs labels; batch sample {i} has none")))?;
        data.extend(s.as_f64());
    }
    Tensor::matrix(batch.len(), SIGN_COUNT, data)
}

/// Records the combined loss of `batch` on `fwd`.
pub fn batch_loss(fwd: &mut Forward<'_>, batch: &[&TrainExample], config: &TrainConfig) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(contract("batch_loss: empty batch"));
    }
    let w = config.loss_weights;
    w.validate()?;
    let mut pooled = Vec::with_capacity(batch.len());
    let mut logits = Vec::with_capacity(batch.len());
    let mut lm = Vec::with_capacity(batch.len());
    let mut targets: Vec<Vec<(usize, TokenId)>> = Vec::with_capacity(batch.len());
    for ex in batch {
        let visual = fwd.encode_image(&ex.image)?;
        let z = fwd.sign_logits(visual.pooled)?;
        let probs: [f64; SIGN_COUNT] = match (config.sign_source, ex.signs) {
            (SignSource::GroundTruth, Some(s)) => s.as_f64(),
            _ => {
                let mut p = [0.0; SIGN_COUNT];
                p.iter_mut().zip(fwd.tape.value(z).data()).for_each(|(p, &l)| *p = sigmoid(l));
                p
            }
        };
        let seq = &ex.sequence;
        let a = fwd.assemble(&visual, &probs, &seq.ids)?;
        let t: Vec<(usize, TokenId)> = (a.dropped..seq.len())
            .filter(|&i| seq.targets[i])
            .map(|i| (a.position_of(i - a.dropped) - 1, seq.ids[i]))
            .collect();
        lm.push(fwd.lm_forward(a.seq)?);
        targets.push(t);
        pooled.push(visual.pooled);
        logits.push(z);
    }
    let samples: Vec<SequenceTargets<'_>> = lm
        .iter()
        .zip(&targets)
        .map(|(&logits, t)| SequenceTargets { logits, targets: t })
        .collect();
    let llm = llm_loss(&mut fwd.tape, &samples)?;

    let cls = if w.cls != 0.0 {
        let z = fwd.tape.concat_rows(&logits)?;
        let y = sign_targets(batch)?;
        Some(cls_loss(&mut fwd.tape, z, &y)?)
    } else {
        None
    };

    let clip = if w.clip != 0.0 {
        let mut txt = Vec::with_capacity(batch.len());
        for (i, ex) in batch.iter().enumerate() {
            if ex.caption.is_empty() {
                return Err(contract(format!("contrastive loss needs a caption; batch sample {i} has none")));
            }
            txt.push(fwd.encode_text(&ex.caption)?);
        }
        let img = fwd.tape.concat_rows(&pooled)?;
        let txt = fwd.tape.concat_rows(&txt)?;
        let temp = fwd.temperature()?;
        let labels = soft_labels(batch.len(), config.label_smoothing)?;
        Some(clip_loss(&mut fwd.tape, img, txt, temp, &labels)?)
    } else {
        None
    };

    let total = combined_loss_on_tape(&mut fwd.tape, [clip, cls, Some(llm)], w)?;
    Ok(BatchLoss { clip, cls, llm, total })
}

/// Losses of one optimizer step; absent terms were not computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub clip: Option<f64>,
    pub cls: Option<f64>,
    pub llm: f64,
    pub total: f64,
}

/// Called after every epoch; checkpointing hangs off this.
pub trait EpochHook {
    fn on_epoch_end(&mut self, epoch: usize, trainer: &Trainer) -> Result<()>;
}

impl EpochHook for () {
    fn on_epoch_end(&mut self, _epoch: usize, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

/// Owns the model and optimizer state for one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub state: OptimizerState,
    pub config: TrainConfig,
    pub metrics: Vec<StepMetrics>,
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub state: OptimizerState,
    pub metrics: Vec<StepMetrics>,
    /// Records left out by validation, with their violations.
    pub skipped: Vec<Violation>,
}

/// Seeded per-epoch order of `n` examples.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = OptimizerState::new(model.params.tensors());
        Ok(Self { model, state, config, metrics: Vec::new() })
    }

    /// Resumes from saved optimizer state.
    pub fn with_state(model: Model, state: OptimizerState, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if !state.matches(model.params.tensors()) {
            return Err(contract("optimizer state does not match the model's parameters"));
        }
        Ok(Self { model, state, config, metrics: Vec::new() })
    }

    /// Gradients of the batch loss for every parameter, plus the metrics
    /// (with `lr` left at 0).
    pub fn gradients(&self, batch: &[&TrainExample]) -> Result<(Vec<Tensor>, StepMetrics)> {
        let mut fwd = Forward::new(&self.model, true);
        let loss = batch_loss(&mut fwd, batch, &self.config)?;
        let grads = fwd.tape.backward(loss.total)?;
        let value = |v: Option<Var>| v.map(|v| fwd.tape.value(v).item());
        let metrics = StepMetrics {
            step: self.state.step as usize,
            lr: 0.0,
            clip: value(loss.clip),
            cls: value(loss.cls),
            llm: fwd.tape.value(loss.llm).item(),
            total: fwd.tape.value(loss.total).item(),
        };
        let g = fwd
            .param_vars()
            .iter()
            .zip(self.model.params.tensors())
            .map(|(&v, t)| grads.or_zeros(v, t))
            .collect();
        Ok((g, metrics))
    }

    /// One AdamW step at learning rate `lr`.
    pub fn step(&mut self, batch: &[&TrainExample], lr: f64) -> Result<StepMetrics> {
        let (grads, mut metrics) = self.gradients(batch)?;
        metrics.lr = lr;
        let names: Vec<String> = self.model.params.names().to_vec();
        adamw_step(self.model.params.tensors_mut(), &names, &grads, &mut self.state, lr, &self.config.optimizer())?;
        self.metrics.push(metrics);
        Ok(metrics)
    }

    /// `epochs` passes over `examples` under the warmup-cosine schedule.
    pub fn run(&mut self, examples: &[TrainExample], epochs: usize, hook: &mut dyn EpochHook) -> Result<()> {
        if examples.is_empty() {
            return Err(contract("training corpus is empty"));
        }
        let bs = self.config.batch_size;
        let per_epoch = examples.len().div_ceil(bs);
        let total = per_epoch * epochs;
        let warmup = per_epoch * self.config.warmup_epochs;
        if total == 0 {
            return Err(contract("training needs at least one epoch"));
        }
        if warmup >= total {
            return Err(contract(format!("warmup of {warmup} steps is not shorter than the {total}-step run")));
        }
        let peak = self.config.absolute_lr();
        let mut s = 0;
        for epoch in 0..epochs {
            let order = epoch_order(examples.len(), self.config.seed, epoch);
            for chunk in order.chunks(bs) {
                let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &examples[i]).collect();
                let lr = lr_with_floor(s + 1, total, warmup, peak, self.config.lr_floor);
                self.step(&batch, lr)?;
                s += 1;
            }
            hook.on_epoch_end(epoch, self)?;
        }
        Ok(())
    }

    fn finish(self, skipped: Vec<Violation>) -> TrainOutcome {
        TrainOutcome {
            model: self.model,
            state: self.state,
            metrics: self.metrics,
            skipped,
        }
    }
}

/// Language-model-only training on caption dialogues.
pub fn run_pretrain(examples: &[TrainExample], model: Model, config: &TrainConfig, hook: &mut dyn EpochHook) -> Result<TrainOutcome> {
    let config = TrainConfig {
        loss_weights: LossWeights::PRETRAIN,
        ..config.clone()
    };
    let mut t = Trainer::new(model, config)?;
    let epochs = t.config.pretrain_epochs;
    t.run(examples, epochs, hook)?;
    Ok(t.finish(Vec::new()))
}

/// Combined-loss training on fundus records; records failing validation
/// are skipped and reported.
pub fn run_finetune(
    records: &[(FundusRecord, Image)],
    model: Model,
    config: &TrainConfig,
    hook: &mut dyn EpochHook,
) -> Result<TrainOutcome> {
    let mut skipped = Vec::new();
    let mut examples = Vec::with_capacity(records.len());
    for (i, (rec, img)) in records.iter().enumerate() {
        let v = validate_record(i, rec, config.max_tokens);
        if v.is_empty() {
            examples.push(example_from_record(rec, img.clone(), config.finetune_target, config.max_tokens));
        } else {
            skipped.extend(v);
        }
    }
    let mut t = Trainer::new(model, config.clone())?;
    let epochs = t.config.finetune_epochs;
    t.run(&examples, epochs, hook)?;
    Ok(t.finish(skipped))
}

/// Fraction of examples whose thresholded sign prediction equals the label
/// in every slot.
pub fn sign_accuracy(model: &Model, examples: &[TrainExample]) -> Result<f64> {
    let labeled: Vec<&TrainExample> = examples.iter().filter(|e| e.signs.is_some()).collect();
    if labeled.is_empty() {
        return Err(contract("sign_accuracy: no labeled examples"));
    }
    let mut hits = 0;
    for ex in &labeled {
        let (_, logits) = model.perceive(&ex.image)?;
        if Some(logits.predicted(model.config.sign_threshold)) == ex.signs {
            hits += 1;
        }
    }
    Ok(hits as f64 / labeled.len() as f64)
}

/// Greedy answer to `question` about `image`, decoded to text.
pub fn answer(model: &Model, image: &Image, question: &str, max_new: usize) -> Result<String> {
    let g = model.generate(image, &encode_prompt(question), max_new)?;
    Ok(detokenize(g.answer()))
}

/// Random examples that fit `config`: uniform images, token ids below the
/// vocabulary size, one to three signs.
pub fn synthetic_examples(config: &crate::model::ModelConfig, n: usize, seq_len: usize, seed: u64) -> Vec<TrainExample> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = config.image_size;
    let vocab = config.vocab_size as TokenId;
    (0..n)
        .map(|_| {
            let image = Image::new(side, side, (0..side * side * 3).map(|_| rng.gen()).collect()).expect("image size");
            let caption: Vec<TokenId> = (0..seq_len.max(1)).map(|_| rng.gen_range(0..vocab)).collect();
            let ids: Vec<TokenId> = (0..seq_len.max(2)).map(|_| rng.gen_range(0..vocab)).collect();
            let split = ids.len() / 2;
            let targets = (0..ids.len()).map(|i| i >= split).collect();
            let mut signs = SignVector::default();
            for k in 0..SIGN_COUNT {
                if rng.gen_bool(0.3) {
                    signs.0[k] = 1;
                }
            }
            if signs.count() == 0 {
                signs.0[rng.gen_range(0..SIGN_COUNT)] = 1;
            }
            TrainExample {
                image,
                caption,
                sequence: TokenSequence { ids, targets },
                signs: Some(signs),
            }
        })
        .collect()
}

/// Options for checking the whole model. Gradients smaller than `floor`
/// are compared on an absolute scale: with `h = 1e-5` and summed token
/// losses near 10, central differences carry errors around `1e-10`.
pub const MODEL_GRAD_CHECK: crate::autodiff::GradCheckOptions = crate::autodiff::GradCheckOptions {
    h: 1e-5,
    tol: 1e-4,
    floor: 1e-5,
};

/// Central-difference check of the batch loss gradient with respect to
/// every model parameter.
pub fn model_grad_check(
    model: &Model,
    batch: &[&TrainExample],
    config: &TrainConfig,
    opts: crate::autodiff::GradCheckOptions,
) -> Result<crate::autodiff::GradCheckReport> {
    crate::autodiff::grad_check(
        model.params.tensors(),
        |tape, vars| {
            let mut fwd = Forward::on_tape(model, core::mem::take(tape), vars.to_vec())?;
            let loss = batch_loss(&mut fwd, batch, config);
            *tape = fwd.into_tape();
            Ok(loss?.total)
        },
        opts,
    )
}

#[cfg(test)]
mod tests;
