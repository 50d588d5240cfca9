//! The model graph recorded on a tape.

use alloc::format;
use alloc::vec::Vec;

use super::params::{BlockIds, ParamId, StackIds};
use super::{Model, ProjectorMode};
use crate::autodiff::{scaled_dot_attention, swiglu_ffn, Tape, Var, LAYER_NORM_EPS};
use crate::error::{contract, Error, Result};
use crate::forge::image::Image;
use crate::forge::signs::{Sign, SIGN_COUNT};
use crate::forge::tokenizer::TokenId;
use crate::Tensor;

/// Patch tokens (`P × d`) and the unit pooled row (`1 × d`).
#[derive(Debug, Clone, Copy)]
pub struct VisualVars {
    pub patches: Var,
    pub pooled: Var,
}

/// A language-model input sequence and how it was put together.
#[derive(Debug, Clone)]
pub struct Assembled {
    /// `T × d` embeddings.
    pub seq: Var,
    /// Visual and sign rows before the first dialogue token.
    pub prefix_len: usize,
    pub signs: Vec<Sign>,
    /// Dialogue tokens dropped from the left to fit `max_tokens`.
    pub dropped: usize,
}

impl Assembled {
    /// Sequence position holding dialogue token `i` of the kept tokens.
    pub fn position_of(&self, kept_token: usize) -> usize {
        self.prefix_len + kept_token
    }
}

/// Patchifies an image into `P × (p·p·3)` rows, patches in raster order,
/// pixels in raster order within a patch.
pub fn patchify(image: &Image, image_size: usize, patch: usize) -> Result<Tensor> {
    if image.width != image_size || image.height != image_size {
        return Err(Error::Shape {
            op: "encode_image",
            lhs: alloc::vec![image.height, image.width, 3],
            rhs: alloc::vec![image_size, image_size, 3],
        });
    }
    let side = image_size / patch;
    let dim = patch * patch * 3;
    let mut data = Vec::with_capacity(side * side * dim);
    for py in 0..side {
        for px in 0..side {
            for y in 0..patch {
                let row = (py * patch + y) * image_size + px * patch;
                data.extend_from_slice(&image.data[row * 3..(row + patch) * 3]);
            }
        }
    }
    Tensor::matrix(side * side, dim, data)
}

/// Model parameters on a tape, with the graph-building operations.
pub struct Forward<'m> {
    pub tape: Tape,
    pub model: &'m Model,
    vars: Vec<Var>,
}

impl<'m> Forward<'m> {
    /// Records every parameter as a leaf; `track` decides whether
    /// gradients flow to them.
    pub fn new(model: &'m Model, track: bool) -> Self {
        let mut tape = Tape::new();
        let vars = model
            .params
            .tensors()
            .iter()
            .map(|t| if track { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Self { tape, model, vars }
    }

    /// Uses `vars` (one per parameter, in store order) already on `tape`.
    pub fn on_tape(model: &'m Model, tape: Tape, vars: Vec<Var>) -> Result<Self> {
        if vars.len() != model.params.len() {
            return Err(contract(format!(
                "forward: {} vars for {} parameters",
                vars.len(),
                model.params.len()
            )));
        }
        Ok(Self { tape, model, vars })
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.vars[id]
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    fn block(&mut self, x: Var, ids: &BlockIds, causal: bool) -> Result<Var> {
        let model = self.model;
        let cfg = &model.config;
        let p = |id: ParamId| self.vars[id];
        let t = &mut self.tape;
        let h = t.layer_norm(x, p(ids.ln1_g), p(ids.ln1_b), LAYER_NORM_EPS)?;
        let q = t.matmul(h, p(ids.wq))?;
        let k = t.matmul(h, p(ids.wk))?;
        let v = t.matmul(h, p(ids.wv))?;
        let hd = cfg.head_dim();
        let heads = (0..cfg.heads)
            .map(|i| {
                let qi = t.slice_cols(q, i * hd, hd)?;
                let ki = t.slice_cols(k, i * hd, hd)?;
                let vi = t.slice_cols(v, i * hd, hd)?;
                scaled_dot_attention(t, qi, ki, vi, causal)
            })
            .collect::<Result<Vec<_>>>()?;
        let attn = if heads.len() == 1 { heads[0] } else { t.concat_cols(&heads)? };
        let attn = t.matmul(attn, p(ids.wo))?;
        let x = t.add(x, attn)?;
        let h = t.layer_norm(x, p(ids.ln2_g), p(ids.ln2_b), LAYER_NORM_EPS)?;
        let f = swiglu_ffn(t, h, p(ids.gate), p(ids.up), p(ids.down))?;
        t.add(x, f)
    }

    fn stack(&mut self, mut x: Var, ids: &StackIds, causal: bool) -> Result<Var> {
        for b in &ids.blocks {
            x = self.block(x, b, causal)?;
        }
        let (g, b) = (self.vars[ids.ln_g], self.vars[ids.ln_b]);
        self.tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }

    /// First `n` rows of a positional table.
    fn positions(&mut self, table: ParamId, n: usize) -> Result<Var> {
        let table = self.vars[table];
        if self.tape.value(table).rows() == n {
            Ok(table)
        } else {
            self.tape.slice_rows(table, 0, n)
        }
    }

    fn embed_tokens(&mut self, table: ParamId, tokens: &[TokenId]) -> Result<Var> {
        let vocab = self.model.config.vocab_size;
        if let Some(bad) = tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(contract(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        let idx: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        self.tape.gather_rows(self.vars[table], &idx)
    }

    pub fn encode_image(&mut self, image: &Image) -> Result<VisualVars> {
        let model = self.model;
        let cfg = &model.config;
        let layout = &model.layout;
        let patches = patchify(image, cfg.image_size, cfg.patch_size)?;
        let x = self.tape.constant(patches);
        let x = self.tape.matmul(x, self.vars[layout.patch_w])?;
        let x = self.tape.add_row(x, self.vars[layout.patch_b])?;
        let pos = self.positions(layout.vision_pos, cfg.num_patches())?;
        let x = self.tape.add(x, pos)?;
        let patches = self.stack(x, &layout.vision, false)?;
        let mean = self.tape.mean_rows(patches)?;
        let pooled = self.tape.normalize_rows(mean)?;
        Ok(VisualVars { patches, pooled })
    }

    /// Unit-norm `1 × d` text embedding.
    pub fn encode_text(&mut self, tokens: &[TokenId]) -> Result<Var> {
        let model = self.model;
        let cfg = &model.config;
        if tokens.is_empty() {
            return Err(contract("encode_text: empty token sequence"));
        }
        if tokens.len() > cfg.max_tokens {
            return Err(contract(format!(
                "encode_text: {} tokens exceed max_tokens {}",
                tokens.len(),
                cfg.max_tokens
            )));
        }
        let layout = &model.layout;
        let x = self.embed_tokens(layout.text_tok, tokens)?;
        let pos = self.positions(layout.text_pos, tokens.len())?;
        let x = self.tape.add(x, pos)?;
        let x = self.stack(x, &layout.text, false)?;
        let mean = self.tape.mean_rows(x)?;
        self.tape.normalize_rows(mean)
    }

    /// `1 × 6` sign logits from the pooled embedding.
    pub fn sign_logits(&mut self, pooled: Var) -> Result<Var> {
        let model = self.model;
        let layout = &model.layout;
        let z = self.tape.matmul(pooled, self.vars[layout.adapter_w])?;
        self.tape.add_row(z, self.vars[layout.adapter_b])
    }

    /// `exp(logit_scale)`, a one-element var.
    pub fn temperature(&mut self) -> Result<Var> {
        let s = self.vars[self.model.layout.logit_scale];
        self.tape.exp(s)
    }

    /// `[projected visual rows] ++ [sign CLS rows] ++ [token embeddings]`.
    pub fn assemble(&mut self, visual: &VisualVars, sign_probs: &[f64; SIGN_COUNT], tokens: &[TokenId]) -> Result<Assembled> {
        let model = self.model;
        let cfg = &model.config;
        let layout = &model.layout;
        let visual_in = match cfg.projector {
            ProjectorMode::Patches => visual.patches,
            ProjectorMode::Pooled => visual.pooled,
        };
        let proj = self.tape.matmul(visual_in, self.vars[layout.projector_w])?;
        let proj = self.tape.add_row(proj, self.vars[layout.projector_b])?;
        let signs = selected_signs(sign_probs, cfg.sign_threshold);
        let idx: Vec<usize> = signs.iter().map(|s| s.index()).collect();
        let cls = self.tape.gather_rows(self.vars[layout.sign_cls], &idx)?;
        let prefix_len = cfg.visual_tokens() + signs.len();
        let room = cfg.max_tokens.saturating_sub(prefix_len);
        let dropped = tokens.len().saturating_sub(room);
        let kept = &tokens[dropped..];
        let mut parts = alloc::vec![proj, cls];
        if !kept.is_empty() {
            parts.push(self.embed_tokens(layout.decoder_tok, kept)?);
        }
        let seq = self.tape.concat_rows(&parts)?;
        Ok(Assembled { seq, prefix_len, signs, dropped })
    }

    /// Causal decoder over `T × d` embeddings; returns `T × vocab` logits.
    pub fn lm_forward(&mut self, seq: Var) -> Result<Var> {
        let model = self.model;
        let cfg = &model.config;
        let layout = &model.layout;
        let (t, _) = self.tape.value(seq).dims2()?;
        if t > cfg.max_tokens {
            return Err(contract(format!("lm_forward: {t} positions exceed max_tokens {}", cfg.max_tokens)));
        }
        let pos = self.positions(layout.decoder_pos, t)?;
        let x = self.tape.add(seq, pos)?;
        let x = self.stack(x, &layout.decoder, true)?;
        self.tape.matmul(x, self.vars[layout.head])
    }
}

/// Signs whose probability reaches `threshold`, in canonical order, or
/// `[Other]` when none does.
pub fn selected_signs(probs: &[f64; SIGN_COUNT], threshold: f64) -> Vec<Sign> {
    let picked: Vec<Sign> = Sign::ALL.into_iter().filter(|s| probs[s.index()] >= threshold).collect();
    if picked.is_empty() {
        alloc::vec![Sign::Other]
    } else {
        picked
    }
}
