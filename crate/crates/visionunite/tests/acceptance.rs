//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use visionunite::run::{finetune_records, CHECKPOINT_DIR, METRICS_FILE, MODEL_FILE};
use visionunite::config::RunConfig;
use visionunite_core::forge::caption::{clean_caption, NOISE_WORDS};
use visionunite_core::forge::corpus::{build_record, forge_corpus, validate_corpus, ImageRef};
use visionunite_core::forge::dialogue::{prompt_template, TemplateDialogueGenerator};
use visionunite_core::forge::image::{hsv_to_rgb_pixel, rgb_to_hsv_pixel};
use visionunite_core::forge::instructions::{templates, TemplateKind};
use visionunite_core::forge::rules::{disease_vocabulary, rule_table};
use visionunite_core::forge::{enhance_contrast, synthetic_fundus, FundusRecord, Image};
use visionunite_core::model::{Model, ModelConfig};
use visionunite_core::objectives::{ContrastiveBatch, LossWeights, SequenceBatch, SequenceSample, SignBatch};
use visionunite_core::stats::{
    bootstrap_ci, build_questions, judge_accuracy, multiple_choice_eval, t_test_two_sided, wilson_interval,
    GroundTruth, McqCase, OracleResponder, RandomResponder,
};
use visionunite_core::train::{
    answer, compute_absolute_lr, example_from_record, model_grad_check, run_finetune, sign_accuracy,
    synthetic_examples, FinetuneTarget, SignSource, TrainConfig, TrainExample, DESCRIBE_PROMPT, MODEL_GRAD_CHECK,
};
use visionunite_core::Tensor;

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::tiny();
    ensure!(cfg.embed_dim == 8 && cfg.encoder_layers == 1 && cfg.decoder_layers == 1 && cfg.vocab_size == 64, "tiny config drifted: {cfg:?}");
    let model = Model::init(cfg.clone(), 21).map_err(|e| e.to_string())?;
    let examples = synthetic_examples(&cfg, 2, 5, 3);
    let batch: Vec<&TrainExample> = examples.iter().collect();
    let mut worst: f64 = 0.0;
    for (name, w) in [
        ("clip", LossWeights { clip: 1.0, cls: 0.0, llm: 0.0 }),
        ("cls", LossWeights { clip: 0.0, cls: 1.0, llm: 0.0 }),
        ("llm", LossWeights::PRETRAIN),
        ("combined", LossWeights::FINETUNE),
    ] {
        let tc = TrainConfig { loss_weights: w, sign_source: SignSource::GroundTruth, batch_size: 2, ..TrainConfig::default() };
        let r = model_grad_check(&model, &batch, &tc, MODEL_GRAD_CHECK).map_err(|e| e.to_string())?;
        ensure!(MODEL_GRAD_CHECK.h == 1e-5 && MODEL_GRAD_CHECK.tol == 1e-4, "check options drifted");
        ensure!(r.passed && r.max_rel_error < 1e-4, "{name}: max rel error {:e} at {:?}", r.max_rel_error, r.worst);
        worst = worst.max(r.max_rel_error);
    }
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(60), "took {took:?}");
    Ok(format!("max rel error {worst:.2e}, {:.1}s", took.as_secs_f64()))
}

fn closed_form_losses() -> Outcome {
    let eye = Tensor::identity(2);
    let clip = ContrastiveBatch::new(eye.clone(), eye, 1.0).and_then(|b| b.loss()).map_err(|e| e.to_string())?;
    ensure!((clip - 0.313262).abs() <= 1e-6, "clip {clip}");
    let cls = SignBatch {
        logits: Tensor::zeros(&[1, 6]),
        targets: Tensor::matrix(1, 6, vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap(),
    }
    .loss()
    .map_err(|e| e.to_string())?;
    ensure!((cls - 6.0 * std::f64::consts::LN_2).abs() <= 1e-9, "cls {cls}");
    let llm = SequenceBatch {
        samples: vec![SequenceSample { logits: Tensor::zeros(&[3, 256]), targets: vec![5, 77, 200], mask: vec![true; 3] }],
    }
    .loss()
    .map_err(|e| e.to_string())?;
    ensure!((llm - 3.0 * 256f64.ln()).abs() <= 1e-9, "llm {llm}");
    Ok(format!("clip {clip:.6}, cls {cls:.9}, llm {llm:.9}"))
}

fn lr_rule() -> Outcome {
    let lr = compute_absolute_lr(0.001, 32);
    ensure!(lr == 1.25e-4, "{lr:e}");
    Ok(format!("{lr:e}"))
}

/// Healthy plus fifteen single-disease records at a fixed stride through
/// the disease list.
fn smoke_records() -> Vec<(FundusRecord, Image)> {
    let vocab = disease_vocabulary();
    (0..16)
        .map(|i| {
            let diseases: Vec<String> = if i == 0 { vec![] } else { vec![vocab[(i * 7) % vocab.len()].to_string()] };
            let rec = build_record(ImageRef::Path(format!("{i}")), &diseases, &mut TemplateDialogueGenerator).unwrap();
            let img = synthetic_fundus(32, &rec.signs, 1000 + i as u64);
            (rec, img)
        })
        .collect()
}

fn smoke_configs() -> (ModelConfig, TrainConfig) {
    let model = ModelConfig {
        embed_dim: 32,
        heads: 4,
        ffn_hidden: 64,
        encoder_layers: 1,
        text_layers: 1,
        decoder_layers: 2,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        batch_size: 16,
        base_lr: 0.15,
        finetune_epochs: 500,
        warmup_epochs: 25,
        weight_decay: 0.0,
        finetune_target: FinetuneTarget::Description,
        loss_weights: LossWeights::FINETUNE,
        ..TrainConfig::default()
    };
    (model, train)
}

fn overfit_smoke_run() -> Outcome {
    let start = Instant::now();
    let records = smoke_records();
    let distinct: BTreeSet<&str> = records.iter().map(|(r, _)| r.description.as_str()).collect();
    ensure!(records.len() == 16 && distinct.len() == 16, "smoke corpus is not 16 distinct records");
    let (mc, tc) = smoke_configs();
    let model = Model::init(mc, 42).map_err(|e| e.to_string())?;
    let out = run_finetune(&records, model, &tc, &mut ()).map_err(|e| e.to_string())?;
    let steps = out.metrics.len();
    let llm = out.metrics.last().map(|m| m.llm).unwrap_or(f64::INFINITY);
    let examples: Vec<TrainExample> = records
        .iter()
        .map(|(r, img)| example_from_record(r, img.clone(), FinetuneTarget::Description, tc.max_tokens))
        .collect();
    let acc = sign_accuracy(&out.model, &examples).map_err(|e| e.to_string())?;
    let mut exact = 0;
    let mut first_miss = None;
    for (rec, img) in &records {
        let got = answer(&out.model, img, DESCRIBE_PROMPT, 400).map_err(|e| e.to_string())?;
        if got == rec.description {
            exact += 1;
        } else if first_miss.is_none() {
            first_miss = Some(format!("{:?} → {got:?}", rec.description));
        }
    }
    let took = start.elapsed();
    let detail = format!(
        "{steps} steps, final llm {llm:.4}, sign accuracy {acc}, exact {exact}/16, {:.0}s",
        took.as_secs_f64()
    );
    ensure!(steps <= 500, "{detail}");
    ensure!(llm < 0.05, "{detail}");
    ensure!(acc == 1.0, "{detail}");
    ensure!(exact == 16, "{detail}; first miss {}", first_miss.unwrap_or_default());
    ensure!(took < Duration::from_secs(300), "{detail}");
    Ok(detail)
}

#[derive(Deserialize)]
struct Golden {
    rules: Vec<String>,
    short_instructions: Vec<String>,
    long_instructions: Vec<String>,
    dialogue_prompt: String,
}

fn forge_fidelity() -> Outcome {
    let golden: Golden = serde_json::from_str(include_str!("fixtures/forge_golden.json")).map_err(|e| e.to_string())?;
    let rules: Vec<&str> = rule_table().iter().filter(|r| r.number.is_some()).map(|r| r.text).collect();
    ensure!(rules.len() == 61 && golden.rules.len() == 61, "{} rules", rules.len());
    for (i, (a, b)) in rules.iter().zip(&golden.rules).enumerate() {
        ensure!(a == b, "rule {}: {a:?} != {b:?}", i + 1);
    }
    for (kind, want) in [(TemplateKind::Short, &golden.short_instructions), (TemplateKind::Long, &golden.long_instructions)] {
        let got: Vec<&str> = templates(kind).iter().map(|t| t.text).collect();
        ensure!(got.len() == 10 && got == *want, "{kind:?} templates differ");
    }
    ensure!(prompt_template() == golden.dialogue_prompt, "dialogue prompt differs");
    let mut corpora = 0;
    for (n, seed) in [(1, 1), (37, 2), (200, 3)] {
        let records: Vec<FundusRecord> = forge_corpus(n, seed, 16, &mut TemplateDialogueGenerator)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|(r, _)| r)
            .collect();
        let report = validate_corpus(&records, 512);
        ensure!(report.is_clean() && report.rounds == 3 * report.records && report.records == n, "corpus {n}/{seed}: {report:?}");
        corpora += 1;
    }
    Ok(format!("61 rules, 20 templates, prompt byte-exact; rounds = 3 x records on {corpora} corpora"))
}

fn preprocessing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = Image::new(9, 7, (0..9 * 7 * 3).map(|_| rng.gen()).collect()).unwrap();
    let same = enhance_contrast(&img, 1.0).map_err(|e| e.to_string())?;
    ensure!(same.data.iter().zip(&img.data).all(|(a, b)| a.to_bits() == b.to_bits()), "factor 1 changed pixels");
    let flat = enhance_contrast(&img, 0.0).map_err(|e| e.to_string())?;
    ensure!(flat.data.iter().all(|&x| x == flat.data[0]), "factor 0 is not constant");
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let p: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let back = hsv_to_rgb_pixel(rgb_to_hsv_pixel(p));
        worst = worst.max((0..3).map(|c| (back[c] - p[c]).abs()).fold(0.0, f64::max));
    }
    ensure!(worst <= 1.0 / 255.0, "HSV round trip error {worst}");
    for w in NOISE_WORDS {
        for variant in [w.to_string(), w.to_uppercase()] {
            let cleaned = clean_caption(&format!("a {variant} optic {variant}, disc {variant}"));
            let words: Vec<String> = cleaned
                .split(|c: char| !c.is_alphanumeric() && c != '_')
                .map(str::to_lowercase)
                .collect();
            ensure!(!words.iter().any(|x| x == w), "{w:?} survived in {cleaned:?}");
            ensure!(clean_caption(&cleaned) == cleaned, "not idempotent on {cleaned:?}");
        }
    }
    Ok(format!("HSV max error {worst:.1e}; {} noise words removed", NOISE_WORDS.len()))
}

const WELCH: [(&[f64], &[f64], f64); 5] = [
    (&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 5.0, 6.0], 0.07098765432098755),
    (&[2.1, 3.4, 1.9, 5.6, 4.4], &[6.2, 7.1, 5.5, 8.0], 0.008439421970589146),
    (&[10.0, 12.0, 9.0, 11.0, 13.0, 10.0], &[10.5, 11.5, 12.0, 9.5], 0.9606406452931733),
    (&[0.1, 0.2, 0.15], &[0.9, 1.4, 0.3, 2.2, 1.1, 0.7, 1.8], 0.005215577707690252),
    (&[100.0, 101.0, 103.0, 98.0, 99.0, 102.0, 100.0, 97.0], &[100.5, 99.5, 101.5, 100.2, 98.9], 0.8883345406822203),
];

fn statistics() -> Outcome {
    let w = wilson_interval(90, 180, 0.95).map_err(|e| e.to_string())?;
    ensure!((w.lower - 0.4277).abs() <= 1e-3 && (w.upper - 0.5723).abs() <= 1e-3, "wilson {w:?}");
    for n in [1, 5, 180, 2233] {
        let lo = wilson_interval(0, n, 0.95).unwrap();
        let hi = wilson_interval(n, n, 0.95).unwrap();
        ensure!(lo.lower == 0.0 && hi.upper == 1.0, "boundary identity at n={n}");
    }
    let values: Vec<f64> = (0..40).map(|i| ((i * 31) % 17) as f64 / 3.0).collect();
    let a = bootstrap_ci(&values, 10_000, 0.95, 5).map_err(|e| e.to_string())?;
    let b = bootstrap_ci(&values, 10_000, 0.95, 5).map_err(|e| e.to_string())?;
    ensure!(a.lower.to_bits() == b.lower.to_bits() && a.upper.to_bits() == b.upper.to_bits(), "bootstrap not deterministic");
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut covered = 0;
    for t in 0..500u64 {
        let draws: Vec<f64> = (0..200).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let ci = bootstrap_ci(&draws, 1000, 0.95, t).map_err(|e| e.to_string())?;
        ensure!(ci.lower <= ci.estimate && ci.estimate <= ci.upper, "interval misses its sample mean");
        covered += (ci.lower <= 1.0 && 1.0 <= ci.upper) as usize;
    }
    let coverage = covered as f64 / 500.0;
    ensure!((coverage - 0.95).abs() <= 0.03, "coverage {coverage}");
    let mut worst: f64 = 0.0;
    for (x, y, p) in WELCH {
        let got = t_test_two_sided(x, y).map_err(|e| e.to_string())?;
        worst = worst.max((got - p).abs());
    }
    ensure!(worst <= 1e-6, "Welch p error {worst:e}");
    Ok(format!(
        "wilson [{:.4}, {:.4}], coverage {:.3}, Welch max error {worst:.1e}",
        w.lower, w.upper, coverage
    ))
}

fn multiple_choice() -> Outcome {
    let universe: Vec<String> = disease_vocabulary().iter().map(|s| s.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2233);
    let cases: Vec<McqCase> = (0..2233)
        .map(|i| McqCase { id: format!("case{i}"), label: universe[rng.gen_range(0..universe.len())].clone() })
        .collect();
    let oracle = multiple_choice_eval(&cases, &universe, &mut OracleResponder::new(&cases), 42).map_err(|e| e.to_string())?;
    ensure!(oracle.overall.value == 1.0, "oracle {}", oracle.overall.value);
    let random = multiple_choice_eval(&cases, &universe, &mut RandomResponder::new(43), 42).map_err(|e| e.to_string())?;
    ensure!((0.22..=0.28).contains(&random.overall.value), "random {}", random.overall.value);
    for ((q, correct), case) in build_questions(&cases, &universe, 42).map_err(|e| e.to_string())?.iter().zip(&cases) {
        let distinct: BTreeSet<&String> = q.options.iter().collect();
        ensure!(q.options.iter().filter(|o| **o == case.label).count() == 1, "{}: label count", case.id);
        ensure!(q.options[*correct] == case.label && distinct.len() == 4, "{}: bad options {:?}", case.id, q.options);
    }
    Ok(format!("oracle 1.0, random {:.4} over 2233 cases", random.overall.value))
}

fn judgment_rules() -> Outcome {
    let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<String>>();
    let truth = GroundTruth { required: set(&["Glaucoma", "Cataract"]), optional: set(&["Drusen", "Myopia"]) };
    ensure!(judge_accuracy(&set(&["Glaucoma", "Cataract"]), &truth), "exact match judged incorrect");
    ensure!(!judge_accuracy(&set(&["Glaucoma", "Cataract", "Macular Hole"]), &truth), "extra answer judged correct");
    ensure!(judge_accuracy(&set(&["Glaucoma", "Cataract", "Drusen"]), &truth), "optional-only addition judged incorrect");
    Ok("exact match correct; extra answer incorrect; optional-only addition correct".into())
}

fn determinism() -> Outcome {
    let (mut records, _) = (smoke_records(), ());
    records.truncate(6);
    let cfg = RunConfig {
        model: ModelConfig { embed_dim: 16, heads: 2, ffn_hidden: 32, encoder_layers: 1, text_layers: 1, decoder_layers: 1, ..ModelConfig::default() },
        train: TrainConfig { batch_size: 4, finetune_epochs: 3, base_lr: 0.2, ..TrainConfig::default() },
    };
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for d in &dirs {
        finetune_records(&cfg, &records, d.path(), None).map_err(|e| e.to_string())?;
    }
    let read = |d: &tempfile::TempDir, name: &str| std::fs::read(d.path().join(name)).map_err(|e| format!("{name}: {e}"));
    let mut files = vec![METRICS_FILE.to_string(), MODEL_FILE.to_string()];
    for e in ["epoch-0001.vukp", "epoch-0002.vukp"] {
        files.push(format!("{CHECKPOINT_DIR}/{e}"));
    }
    for f in &files {
        ensure!(read(&dirs[0], f)? == read(&dirs[1], f)?, "{f} differs between runs");
    }
    ensure!(!dirs[0].path().join(CHECKPOINT_DIR).join("epoch-0000.vukp").exists(), "retention kept more than 2 epochs");
    Ok(format!("{} artifacts bit-identical", files.len()))
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("gradient fidelity", gradient_fidelity),
        ("closed-form losses", closed_form_losses),
        ("learning-rate rule", lr_rule),
        ("overfit smoke run", overfit_smoke_run),
        ("forge fidelity", forge_fidelity),
        ("preprocessing", preprocessing),
        ("statistics oracles", statistics),
        ("multiple-choice harness", multiple_choice),
        ("judgment rules", judgment_rules),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
