use super::*;
use crate::forge::corpus::forge_corpus;
use crate::forge::dialogue::TemplateDialogueGenerator;
use crate::model::{param_group, ModelConfig, PARAM_GROUPS};
use alloc::vec;
use proptest::prelude::*;

fn tiny_config(weights: LossWeights) -> TrainConfig {
    TrainConfig {
        loss_weights: weights,
        sign_source: SignSource::GroundTruth,
        batch_size: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn absolute_lr_rule() {
    assert_eq!(compute_absolute_lr(0.001, 32), 1.25e-4);
    assert_eq!(compute_absolute_lr(0.001, 256), 0.001);
    for k in [1, 3, 8, 100] {
        assert_eq!(compute_absolute_lr(0.003, 2 * k), 2.0 * compute_absolute_lr(0.003, k));
    }
}

#[test]
fn schedule_endpoints() {
    assert_eq!(lr_at(0, 100, 10, 0.5), 0.0);
    assert_eq!(lr_at(10, 100, 10, 0.5), 0.5);
    assert_eq!(lr_at(100, 100, 10, 0.5), 0.0);
    assert_eq!(lr_at(0, 100, 0, 0.5), 0.5);
    assert!((lr_at(55, 100, 10, 0.5) - 0.25).abs() < 1e-15);
    assert_eq!(lr_with_floor(100, 100, 10, 0.5, 0.1), 0.1);
}

proptest! {
    #[test]
    fn schedule_is_continuous_with_one_peak(total in 2usize..400, warm_frac in 0.0f64..0.9, peak in 1e-5f64..1.0) {
        let warmup = ((total as f64 * warm_frac) as usize).min(total - 1);
        let lrs: Vec<f64> = (0..=total).map(|s| lr_at(s, total, warmup, peak)).collect();
        prop_assert_eq!(lrs[total], 0.0);
        if warmup > 0 {
            prop_assert_eq!(lrs[0], 0.0);
        }
        let argmax = crate::model::argmax(&lrs);
        prop_assert_eq!(argmax, warmup);
        prop_assert_eq!(lrs[warmup], peak);
        for w in lrs.windows(2).take(warmup) {
            prop_assert!(w[1] > w[0]);
        }
        for w in lrs[warmup..].windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        let max_jump = lrs.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        let step_bound = peak * (1.0 / warmup.max(1) as f64).max(core::f64::consts::PI / 2.0 / (total - warmup) as f64);
        prop_assert!(max_jump <= step_bound * (1.0 + 1e-9));
    }
}

fn grad_check_loss(weights: LossWeights) -> crate::autodiff::GradCheckReport {
    let cfg = ModelConfig::tiny();
    let model = Model::init(cfg.clone(), 21).unwrap();
    let examples = synthetic_examples(&cfg, 2, 5, 3);
    let batch: Vec<&TrainExample> = examples.iter().collect();
    model_grad_check(&model, &batch, &tiny_config(weights), MODEL_GRAD_CHECK).unwrap()
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for w in [
        LossWeights { clip: 1.0, cls: 0.0, llm: 0.0 },
        LossWeights { clip: 0.0, cls: 1.0, llm: 0.0 },
        LossWeights::PRETRAIN,
        LossWeights::FINETUNE,
    ] {
        let r = grad_check_loss(w);
        assert!(r.passed, "{w:?}: {r:?}");
        assert!(r.entries_checked > 3000);
    }
}

#[test]
fn every_parameter_group_receives_gradient() {
    let cfg = ModelConfig::tiny();
    for seed in 0..10 {
        let model = Model::init(cfg.clone(), seed).unwrap();
        let examples = synthetic_examples(&cfg, 2, 6, seed + 100);
        let batch: Vec<&TrainExample> = examples.iter().collect();
        let t = Trainer::new(model, tiny_config(LossWeights::FINETUNE)).unwrap();
        let (grads, _) = t.gradients(&batch).unwrap();
        for group in PARAM_GROUPS {
            let norm: f64 = t
                .model
                .params
                .names()
                .iter()
                .zip(&grads)
                .filter(|(n, _)| param_group(n) == group)
                .flat_map(|(_, g)| g.data())
                .map(|x| x * x)
                .sum();
            assert!(norm > 0.0, "seed {seed}: no gradient reaches {group}");
        }
    }
}

#[test]
fn batch_gradient_is_the_mean_over_shards() {
    let cfg = ModelConfig::tiny();
    let model = Model::init(cfg.clone(), 2).unwrap();
    let examples = synthetic_examples(&cfg, 4, 5, 9);
    let weights = LossWeights { clip: 0.0, cls: 1.0, llm: 1.0 };
    let t = Trainer::new(model, tiny_config(weights)).unwrap();
    let all: Vec<&TrainExample> = examples.iter().collect();
    let (full, _) = t.gradients(&all).unwrap();
    let (a, _) = t.gradients(&all[..2]).unwrap();
    let (b, _) = t.gradients(&all[2..]).unwrap();
    for ((f, a), b) in full.iter().zip(&a).zip(&b) {
        for ((f, a), b) in f.data().iter().zip(a.data()).zip(b.data()) {
            assert!((f - 0.5 * (a + b)).abs() <= 1e-12 * (1.0 + f.abs()));
        }
    }
}

#[test]
fn step_applies_unclipped_adamw_update() {
    let cfg = ModelConfig::tiny();
    let model = Model::init(cfg.clone(), 4).unwrap();
    let examples = synthetic_examples(&cfg, 2, 5, 4);
    let batch: Vec<&TrainExample> = examples.iter().collect();
    let mut t = Trainer::new(model, tiny_config(LossWeights::FINETUNE)).unwrap();
    let (mut grads, _) = t.gradients(&batch).unwrap();
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|x| *x *= 1e6);
    }
    let mut params = t.model.params.tensors().to_vec();
    let mut state = t.state.clone();
    let names = t.model.params.names().to_vec();
    let (raw, _) = t.gradients(&batch).unwrap();
    adamw_step(&mut params, &names, &raw, &mut state, 0.01, &t.config.optimizer()).unwrap();
    t.step(&batch, 0.01).unwrap();
    assert_eq!(t.model.params.tensors(), &params[..]);
    // Scaling gradients by 1e6 moves Adam's first step by the same lr-sized amount.
    let mut scaled = t.model.params.tensors().to_vec();
    let mut s2 = OptimizerState::new(&scaled);
    adamw_step(&mut scaled, &names, &grads, &mut s2, 0.01, &AdamWConfig { weight_decay: 0.0, ..t.config.optimizer() }).unwrap();
    let moved = scaled
        .iter()
        .zip(t.model.params.tensors())
        .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    assert!(moved <= 0.01 * (1.0 + 1e-6));
}

fn smoke_records(n: usize) -> Vec<(crate::forge::corpus::FundusRecord, Image)> {
    forge_corpus(n, 5, 16, &mut TemplateDialogueGenerator).unwrap()
}

fn smoke_model() -> Model {
    Model::init(
        ModelConfig {
            image_size: 16,
            patch_size: 8,
            embed_dim: 16,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            ffn_hidden: 32,
            ..ModelConfig::default()
        },
        1,
    )
    .unwrap()
}

fn smoke_config() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        finetune_epochs: 2,
        pretrain_epochs: 2,
        warmup_epochs: 1,
        base_lr: 0.05,
        finetune_target: FinetuneTarget::Description,
        ..TrainConfig::default()
    }
}

#[test]
fn finetune_runs_are_bit_identical() {
    let records = smoke_records(4);
    let a = run_finetune(&records, smoke_model(), &smoke_config(), &mut ()).unwrap();
    let b = run_finetune(&records, smoke_model(), &smoke_config(), &mut ()).unwrap();
    assert_eq!(a.metrics.len(), 4);
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.model, b.model);
    assert_eq!(a.state, b.state);
    assert!(a.metrics.iter().all(|m| m.clip.is_some() && m.cls.is_some()));
    assert_eq!(a.metrics[0].step, 0);
    assert_eq!(a.metrics[3].lr, 0.0);
}

#[test]
fn pretrain_matches_finetune_with_llm_only_weights() {
    let records = smoke_records(4);
    let examples: Vec<TrainExample> = records
        .iter()
        .map(|(r, i)| example_from_record(r, i.clone(), FinetuneTarget::Description, 512))
        .collect();
    let pre = run_pretrain(&examples, smoke_model(), &smoke_config(), &mut ()).unwrap();
    let cfg = TrainConfig { loss_weights: LossWeights::PRETRAIN, ..smoke_config() };
    let fine = run_finetune(&records, smoke_model(), &cfg, &mut ()).unwrap();
    assert_eq!(pre.metrics, fine.metrics);
    assert!(pre.metrics.iter().all(|m| m.clip.is_none() && m.cls.is_none() && m.total == m.llm));
}

#[test]
fn initial_loss_is_near_uniform() {
    let records = smoke_records(2);
    let examples: Vec<TrainExample> = records
        .iter()
        .map(|(r, i)| example_from_record(r, i.clone(), FinetuneTarget::Description, 512))
        .collect();
    let t = Trainer::new(smoke_model(), TrainConfig { loss_weights: LossWeights::PRETRAIN, ..smoke_config() }).unwrap();
    let batch: Vec<&TrainExample> = examples.iter().collect();
    let (_, m) = t.gradients(&batch).unwrap();
    let tokens: usize = examples.iter().map(|e| e.sequence.target_count()).sum::<usize>();
    let per_token = m.llm * batch.len() as f64 / tokens as f64;
    assert!((per_token - libm::log(259.0)).abs() < 0.1, "{per_token}");
}

#[test]
fn invalid_records_are_skipped() {
    let mut records = smoke_records(3);
    records[1].0.dialogue.pop();
    let out = run_finetune(&records, smoke_model(), &smoke_config(), &mut ()).unwrap();
    assert!(out.skipped.iter().all(|v| v.record == 1));
    assert!(!out.skipped.is_empty());
    assert_eq!(out.metrics.len(), 2);
}

#[test]
fn empty_corpus_is_rejected() {
    assert!(run_pretrain(&[], smoke_model(), &smoke_config(), &mut ()).is_err());
}

struct Count(Vec<usize>);

impl EpochHook for Count {
    fn on_epoch_end(&mut self, epoch: usize, trainer: &Trainer) -> Result<()> {
        assert_eq!(trainer.metrics.len(), (epoch + 1) * 2);
        self.0.push(epoch);
        Ok(())
    }
}

#[test]
fn hook_runs_after_each_epoch() {
    let mut hook = Count(Vec::new());
    run_finetune(&smoke_records(4), smoke_model(), &smoke_config(), &mut hook).unwrap();
    assert_eq!(hook.0, [0, 1]);
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { betas: (1.0, 0.9), ..TrainConfig::default() }.validate().is_err());
    let zero = LossWeights { clip: 0.0, cls: 0.0, llm: 0.0 };
    assert!(TrainConfig { loss_weights: zero, ..TrainConfig::default() }.validate().is_err());
    assert_eq!(TrainConfig::default().absolute_lr(), 0.001 * 8.0 / 256.0);
}

#[test]
fn epoch_order_is_seeded() {
    assert_eq!(epoch_order(10, 1, 0), epoch_order(10, 1, 0));
    assert_ne!(epoch_order(10, 1, 0), epoch_order(10, 1, 1));
    let mut o = epoch_order(10, 1, 3);
    o.sort();
    assert_eq!(o, (0..10).collect::<Vec<_>>());
    let _ = vec![0u8];
}
