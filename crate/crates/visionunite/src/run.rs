//! Corpus forging and training runs with their on-disk artifacts.

use std::path::{Path, PathBuf};

use visionunite_core::forge::corpus::{build_caption_dialogues, forge_corpus, validate_corpus, CorpusReport};
use visionunite_core::forge::{CaptionDialogue, DialogueGenerator, FundusRecord, ImageRef, Modality, PretrainPair};
use visionunite_core::model::Model;
use visionunite_core::train::{example_from_caption, run_finetune, run_pretrain, TrainOutcome};

use crate::checkpoint::{self, EpochCheckpoints};
use crate::config::RunConfig;
use crate::error::Result;
use crate::io;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MODEL_FILE: &str = "model.vukp";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const KEEP_CHECKPOINTS: usize = 2;

#[derive(Debug, Clone)]
pub struct ForgeSummary {
    pub corpus: PathBuf,
    pub captions: PathBuf,
    pub report: CorpusReport,
}

/// Writes `corpus.jsonl`, `captions.jsonl` and `images/*.ppm` under `out`.
///
/// Caption dialogues pair each image with its description as a fundus
/// caption, for the language-only pretraining stage.
pub fn forge_to_dir(
    out: &Path,
    n: usize,
    seed: u64,
    image_size: usize,
    max_tokens: usize,
    generator: &mut dyn DialogueGenerator,
) -> Result<ForgeSummary> {
    let forged = forge_corpus(n, seed, image_size, generator)?;
    let mut records = Vec::with_capacity(forged.len());
    for (rec, img) in &forged {
        if let ImageRef::Path(p) = &rec.image {
            io::write_ppm(&out.join(p), img)?;
        }
        records.push(rec.clone());
    }
    let report = validate_corpus(&records, max_tokens);
    let corpus = out.join(CORPUS_FILE);
    io::write_jsonl(&corpus, &records)?;
    let pairs: Vec<PretrainPair> = records
        .iter()
        .filter_map(|r| match &r.image {
            ImageRef::Path(p) => Some(PretrainPair {
                image: p.clone(),
                caption: r.description.clone(),
                modality: Modality::Fundus,
                confidence: 1.0,
            }),
            ImageRef::Inline(_) => None,
        })
        .collect();
    let captions = out.join(CAPTIONS_FILE);
    io::write_jsonl(&captions, &build_caption_dialogues(&pairs, 0.5, seed)?)?;
    Ok(ForgeSummary { corpus, captions, report })
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub outcome: TrainOutcome,
    pub metrics: PathBuf,
    pub model: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

fn initial_model(cfg: &RunConfig, init: Option<&Path>) -> Result<Model> {
    match init {
        Some(p) => Ok(checkpoint::load(p)?.model),
        None => Ok(Model::init(cfg.model.clone(), cfg.train.seed)?),
    }
}

fn finish(out: &Path, outcome: TrainOutcome, hook: EpochCheckpoints) -> Result<TrainRun> {
    let metrics = out.join(METRICS_FILE);
    io::write_string(&metrics, &io::metrics_csv(&outcome.metrics))?;
    let model = out.join(MODEL_FILE);
    checkpoint::save(&model, &outcome.model, Some(&outcome.state), None)?;
    Ok(TrainRun { outcome, metrics, model, checkpoints: hook.retained().to_vec() })
}

/// Combined-objective training on a record corpus.
pub fn finetune_run(cfg: &RunConfig, corpus: &Path, out: &Path, init: Option<&Path>) -> Result<TrainRun> {
    let records = io::load_corpus(corpus)?;
    finetune_records(cfg, &records, out, init)
}

pub fn finetune_records(
    cfg: &RunConfig,
    records: &[(FundusRecord, visionunite_core::forge::Image)],
    out: &Path,
    init: Option<&Path>,
) -> Result<TrainRun> {
    let model = initial_model(cfg, init)?;
    let mut hook = EpochCheckpoints::new(out.join(CHECKPOINT_DIR), KEEP_CHECKPOINTS);
    let outcome = run_finetune(records, model, &cfg.train, &mut hook)?;
    if !outcome.skipped.is_empty() {
        log::warn!("skipped {} corpus violations", outcome.skipped.len());
        for v in &outcome.skipped {
            log::warn!("{v}");
        }
    }
    finish(out, outcome, hook)
}

/// Language-only training on caption dialogues.
pub fn pretrain_run(cfg: &RunConfig, captions: &Path, out: &Path, init: Option<&Path>) -> Result<TrainRun> {
    let base = io::parent_dir(captions);
    let examples = io::read_jsonl::<CaptionDialogue>(captions)?
        .iter()
        .map(|d| Ok(example_from_caption(d, io::load_image(&d.image, &base)?, cfg.train.max_tokens)))
        .collect::<Result<Vec<_>>>()?;
    let model = initial_model(cfg, init)?;
    let mut hook = EpochCheckpoints::new(out.join(CHECKPOINT_DIR), KEEP_CHECKPOINTS);
    let outcome = run_pretrain(&examples, model, &cfg.train, &mut hook)?;
    finish(out, outcome, hook)
}
