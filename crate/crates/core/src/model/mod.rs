//! Vision encoder, contrastive text encoder, sign adapter, projector, sign
//! CLS table and causal decoder.
//!
//! Graph construction lives on [`Forward`]; [`Model`] wraps it for
//! gradient-free inference.

mod config;
mod forward;
mod params;
#[cfg(test)]
mod tests;

use alloc::format;
use alloc::vec::Vec;

pub use config::{ModelConfig, ProjectorMode};
pub use forward::{patchify, selected_signs, Assembled, Forward, VisualVars};
pub use params::{declare, param_group, BlockIds, Init, Layout, ParamId, ParamSpec, ParamStore, StackIds, PARAM_GROUPS};

use crate::autodiff::kernels::{log_sum_exp, sigmoid};
use crate::error::{contract, Result};
use crate::forge::image::Image;
use crate::forge::signs::{Sign, SignVector, SIGN_COUNT};
use crate::forge::tokenizer::{TokenId, EOS};
use crate::Tensor;

/// Patch tokens and the unit-norm pooled embedding of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualEmbedding {
    pub patch_tokens: Tensor,
    pub pooled: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignLogits(pub [f64; SIGN_COUNT]);

impl SignLogits {
    pub fn probabilities(&self) -> [f64; SIGN_COUNT] {
        self.0.map(sigmoid)
    }

    pub fn predicted(&self, threshold: f64) -> SignVector {
        SignVector::from_probs(&self.probabilities(), threshold)
    }
}

/// Value-level result of assembling a language-model input.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledSequence {
    pub embeddings: Tensor,
    pub prefix_len: usize,
    pub signs: Vec<Sign>,
    pub dropped: usize,
}

/// Greedy decoding output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    /// Prompt tokens followed by generated tokens.
    pub tokens: Vec<TokenId>,
    pub prompt_len: usize,
    pub stopped_at_eos: bool,
}

impl Generation {
    pub fn new_tokens(&self) -> &[TokenId] {
        &self.tokens[self.prompt_len..]
    }

    /// Generated tokens without the closing EOS.
    pub fn answer(&self) -> &[TokenId] {
        let new = self.new_tokens();
        if self.stopped_at_eos {
            &new[..new.len() - 1]
        } else {
            new
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: ParamStore,
}

fn to_array(t: &Tensor) -> [f64; SIGN_COUNT] {
    let mut out = [0.0; SIGN_COUNT];
    out.copy_from_slice(&t.data()[..SIGN_COUNT]);
    out
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = declare(&config);
        let params = ParamStore::init(&specs, seed);
        Ok(Self { config, layout, params })
    }

    /// Rebuilds a model from stored parameters, checking them against the
    /// config's declaration.
    pub fn from_params(config: ModelConfig, names: Vec<alloc::string::String>, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = declare(&config);
        let params = ParamStore::from_parts(&specs, names, tensors)?;
        Ok(Self { config, layout, params })
    }

    fn inference(&self) -> Forward<'_> {
        Forward::new(self, false)
    }

    pub fn encode_image(&self, image: &Image) -> Result<VisualEmbedding> {
        let mut f = self.inference();
        let v = f.encode_image(image)?;
        Ok(VisualEmbedding {
            patch_tokens: f.tape.value(v.patches).clone(),
            pooled: f.tape.value(v.pooled).data().to_vec(),
        })
    }

    pub fn encode_text(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        let mut f = self.inference();
        let t = f.encode_text(tokens)?;
        Ok(f.tape.value(t).data().to_vec())
    }

    pub fn predict_signs(&self, visual: &VisualEmbedding) -> Result<SignLogits> {
        let d = self.config.embed_dim;
        if visual.pooled.len() != d {
            return Err(contract(format!("predict_signs: pooled width {} != embed_dim {d}", visual.pooled.len())));
        }
        let mut f = self.inference();
        let pooled = f.tape.constant(Tensor::matrix(1, d, visual.pooled.clone())?);
        let z = f.sign_logits(pooled)?;
        Ok(SignLogits(to_array(f.tape.value(z))))
    }

    fn visual_constants(&self, f: &mut Forward<'_>, visual: &VisualEmbedding) -> Result<VisualVars> {
        let d = self.config.embed_dim;
        let patches = f.tape.constant(visual.patch_tokens.clone());
        let pooled = f.tape.constant(Tensor::matrix(1, d, visual.pooled.clone())?);
        Ok(VisualVars { patches, pooled })
    }

    pub fn assemble(
        &self,
        visual: &VisualEmbedding,
        sign_probs: &[f64; SIGN_COUNT],
        tokens: &[TokenId],
    ) -> Result<AssembledSequence> {
        let mut f = self.inference();
        let v = self.visual_constants(&mut f, visual)?;
        let a = f.assemble(&v, sign_probs, tokens)?;
        Ok(AssembledSequence {
            embeddings: f.tape.value(a.seq).clone(),
            prefix_len: a.prefix_len,
            signs: a.signs,
            dropped: a.dropped,
        })
    }

    /// `T × vocab` logits for a `T × d` embedded sequence.
    pub fn lm_forward(&self, embeddings: &Tensor) -> Result<Tensor> {
        let mut f = self.inference();
        let seq = f.tape.constant(embeddings.clone());
        let logits = f.lm_forward(seq)?;
        Ok(f.tape.value(logits).clone())
    }

    /// Encodes the image and predicts its signs in one pass.
    pub fn perceive(&self, image: &Image) -> Result<(VisualEmbedding, SignLogits)> {
        let visual = self.encode_image(image)?;
        let signs = self.predict_signs(&visual)?;
        Ok((visual, signs))
    }

    /// Greedy decoding with predicted signs; stops at EOS, after `max_new`
    /// tokens, or when the sequence fills `max_tokens`.
    pub fn generate(&self, image: &Image, prompt: &[TokenId], max_new: usize) -> Result<Generation> {
        if max_new == 0 {
            return Err(contract("generate: max_new must be at least 1"));
        }
        let (visual, signs) = self.perceive(image)?;
        let probs = signs.probabilities();
        let prefix = self.assemble(&visual, &probs, &[])?;
        let limit = self.config.max_tokens;
        if prefix.prefix_len + prompt.len() >= limit {
            return Err(contract(format!(
                "generate: prompt of {} tokens leaves no room under max_tokens {limit}",
                prompt.len()
            )));
        }
        let mut tokens = prompt.to_vec();
        let mut stopped_at_eos = false;
        for _ in 0..max_new {
            if prefix.prefix_len + tokens.len() >= limit {
                break;
            }
            let mut f = self.inference();
            let v = self.visual_constants(&mut f, &visual)?;
            let a = f.assemble(&v, &probs, &tokens)?;
            let logits = f.lm_forward(a.seq)?;
            let logits = f.tape.value(logits);
            let next = argmax(logits.row(logits.rows() - 1)) as TokenId;
            tokens.push(next);
            if next == EOS {
                stopped_at_eos = true;
                break;
            }
        }
        Ok(Generation {
            tokens,
            prompt_len: prompt.len(),
            stopped_at_eos,
        })
    }

    /// `Σ ln p(answer token | image, prompt, earlier answer tokens)` over the
    /// answer bytes and a closing EOS.
    pub fn answer_log_likelihood(&self, image: &Image, prompt: &[TokenId], answer: &[TokenId]) -> Result<f64> {
        let (visual, signs) = self.perceive(image)?;
        let mut tokens = prompt.to_vec();
        tokens.extend_from_slice(answer);
        tokens.push(EOS);
        let mut f = self.inference();
        let v = self.visual_constants(&mut f, &visual)?;
        let a = f.assemble(&v, &signs.probabilities(), &tokens)?;
        if a.dropped > prompt.len() {
            return Err(contract("answer_log_likelihood: answer does not fit max_tokens"));
        }
        let logits = f.lm_forward(a.seq)?;
        let logits = f.tape.value(logits);
        let first = prompt.len() - a.dropped;
        let kept = &tokens[a.dropped..];
        let mut total = 0.0;
        for (j, &tok) in kept.iter().enumerate().skip(first) {
            let row = logits.row(a.position_of(j) - 1);
            total += row[tok as usize] - log_sum_exp(row);
        }
        Ok(total)
    }
}
