use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{contract, Result};
use crate::Tensor;

/// Index into a [`ParamStore`].
pub type ParamId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform with variance `1 / fan_in`.
    FanIn(usize),
    /// Uniform with the given standard deviation.
    Std(f64),
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockIds {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub gate: ParamId,
    pub up: ParamId,
    pub down: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackIds {
    pub blocks: Vec<BlockIds>,
    pub ln_g: ParamId,
    pub ln_b: ParamId,
}

/// Where each named parameter lives in the store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub patch_w: ParamId,
    pub patch_b: ParamId,
    pub vision_pos: ParamId,
    pub vision: StackIds,
    pub text_tok: ParamId,
    pub text_pos: ParamId,
    pub text: StackIds,
    pub adapter_w: ParamId,
    pub adapter_b: ParamId,
    pub projector_w: ParamId,
    pub projector_b: ParamId,
    pub sign_cls: ParamId,
    pub decoder_tok: ParamId,
    pub decoder_pos: ParamId,
    pub decoder: StackIds,
    pub head: ParamId,
    pub logit_scale: ParamId,
}

/// Parameter groups used when reporting gradient flow.
pub const PARAM_GROUPS: [&str; 7] = ["vision", "text", "adapter", "projector", "signs", "decoder", "logit_scale"];

pub fn param_group(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> ParamId {
        self.specs.push(ParamSpec { name, shape: shape.to_vec(), init });
        self.specs.len() - 1
    }

    fn stack(&mut self, prefix: &str, layers: usize, d: usize, hidden: usize) -> StackIds {
        let blocks = (0..layers)
            .map(|i| {
                let p = format!("{prefix}.block{i}");
                BlockIds {
                    ln1_g: self.add(format!("{p}.ln1.gamma"), &[d], Init::Ones),
                    ln1_b: self.add(format!("{p}.ln1.beta"), &[d], Init::Zeros),
                    wq: self.add(format!("{p}.attn.wq"), &[d, d], Init::FanIn(d)),
                    wk: self.add(format!("{p}.attn.wk"), &[d, d], Init::FanIn(d)),
                    wv: self.add(format!("{p}.attn.wv"), &[d, d], Init::FanIn(d)),
                    wo: self.add(format!("{p}.attn.wo"), &[d, d], Init::FanIn(d)),
                    ln2_g: self.add(format!("{p}.ln2.gamma"), &[d], Init::Ones),
                    ln2_b: self.add(format!("{p}.ln2.beta"), &[d], Init::Zeros),
                    gate: self.add(format!("{p}.ffn.gate"), &[d, hidden], Init::FanIn(d)),
                    up: self.add(format!("{p}.ffn.up"), &[d, hidden], Init::FanIn(d)),
                    down: self.add(format!("{p}.ffn.down"), &[hidden, d], Init::FanIn(hidden)),
                }
            })
            .collect();
        StackIds {
            blocks,
            ln_g: self.add(format!("{prefix}.ln_f.gamma"), &[d], Init::Ones),
            ln_b: self.add(format!("{prefix}.ln_f.beta"), &[d], Init::Zeros),
        }
    }
}

/// Declares every parameter in its fixed order.
pub fn declare(config: &ModelConfig) -> (Layout, Vec<ParamSpec>) {
    let d = config.embed_dim;
    let v = config.vocab_size;
    let h = config.ffn_hidden;
    let n = String::from;
    let mut b = Builder { specs: Vec::new() };
    let patch_w = b.add(n("vision.patch.w"), &[config.patch_dim(), d], Init::FanIn(config.patch_dim()));
    let patch_b = b.add(n("vision.patch.b"), &[d], Init::Zeros);
    let vision_pos = b.add(n("vision.pos"), &[config.num_patches(), d], Init::Std(0.1));
    let vision = b.stack("vision", config.encoder_layers, d, h);
    let text_tok = b.add(n("text.tok"), &[v, d], Init::Std(0.5));
    let text_pos = b.add(n("text.pos"), &[config.max_tokens, d], Init::Std(0.1));
    let text = b.stack("text", config.text_layers, d, h);
    let adapter_w = b.add(n("adapter.w"), &[d, config.sign_count], Init::FanIn(d));
    let adapter_b = b.add(n("adapter.b"), &[config.sign_count], Init::Zeros);
    let projector_w = b.add(n("projector.w"), &[d, d], Init::FanIn(d));
    let projector_b = b.add(n("projector.b"), &[d], Init::Zeros);
    let sign_cls = b.add(n("signs.cls"), &[config.sign_count, d], Init::Std(0.5));
    let decoder_tok = b.add(n("decoder.tok"), &[v, d], Init::Std(0.5));
    let decoder_pos = b.add(n("decoder.pos"), &[config.max_tokens, d], Init::Std(0.1));
    let decoder = b.stack("decoder", config.decoder_layers, d, h);
    let head = b.add(n("decoder.head"), &[d, v], Init::Std(0.02));
    let logit_scale = b.add(n("logit_scale"), &[1], Init::Constant(libm::log(1.0 / 0.07)));
    let layout = Layout {
        patch_w,
        patch_b,
        vision_pos,
        vision,
        text_tok,
        text_pos,
        text,
        adapter_w,
        adapter_b,
        projector_w,
        projector_b,
        sign_cls,
        decoder_tok,
        decoder_pos,
        decoder,
        head,
        logit_scale,
    };
    (layout, b.specs)
}

/// Named parameter tensors in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    /// Seeded initialization of every declared parameter.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|s| {
                let numel = s.shape.iter().product();
                let half_width = |std: f64| std * libm::sqrt(3.0);
                let data = match s.init {
                    Init::Zeros => vec![0.0; numel],
                    Init::Ones => vec![1.0; numel],
                    Init::Constant(c) => vec![c; numel],
                    Init::FanIn(fan) => {
                        let a = half_width(1.0 / libm::sqrt(fan as f64));
                        (0..numel).map(|_| rng.gen_range(-a..a)).collect()
                    }
                    Init::Std(std) => {
                        let a = half_width(std);
                        (0..numel).map(|_| rng.gen_range(-a..a)).collect()
                    }
                };
                Tensor::new(s.shape.clone(), data).expect("declared shape")
            })
            .collect();
        Self {
            names: specs.iter().map(|s| s.name.clone()).collect(),
            tensors,
        }
    }

    /// Checks names and shapes against `specs`.
    pub fn from_parts(specs: &[ParamSpec], names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        if names.len() != specs.len() || tensors.len() != specs.len() {
            return Err(contract(format!(
                "parameter count {} does not match the {} declared by the config",
                names.len(),
                specs.len()
            )));
        }
        for ((spec, name), t) in specs.iter().zip(&names).zip(&tensors) {
            if &spec.name != name || spec.shape != t.shape() {
                return Err(contract(format!(
                    "parameter {name} {:?} does not match declared {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(Self { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}
