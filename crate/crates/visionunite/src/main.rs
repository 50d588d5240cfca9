use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use visionunite::checkpoint;
use visionunite::config::RunConfig;
use visionunite::http::{HttpDialogueGenerator, ENDPOINT_ENV};
use visionunite::io;
use visionunite::manifest::RunManifest;
use visionunite::report::{evaluate, summarize_metrics};
use visionunite::run::{self, TrainRun};
use visionunite_core::forge::rules::disease_vocabulary;
use visionunite_core::forge::tokenizer::{encode_prompt, tokenize};
use visionunite_core::forge::{DialogueGenerator, TemplateDialogueGenerator};
use visionunite_core::stats::{
    multiple_choice_eval, BootstrapConfig, EvalCase, McqCase, McqQuestion, OracleResponder, RandomResponder,
    Responder, HEALTHY,
};
use visionunite_core::train::answer;

#[derive(Parser)]
#[command(name = "visionunite", version, about = "Fundus vision-language model: data forge, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for every random choice in the run.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory; receives manifest.json and the command's artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build and validate a synthetic record corpus.
    Forge {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Description rule set; only the built-in table exists.
        #[arg(long, default_value = "default")]
        rules: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Language-only training on caption dialogues.
    Pretrain(TrainArgs),
    /// Combined-objective training on a record corpus.
    Finetune(TrainArgs),
    /// Evaluation statistics over an EvalCase JSON-lines file.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cases: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        resamples: usize,
    },
    /// Four-option multiple-choice evaluation.
    Mcq {
        #[command(flatten)]
        common: Common,
        /// McqCase JSON lines (`{"id", "label"}`); not needed with `--responder model`.
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "model")]
        responder: ResponderKind,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Record corpus whose images and first labels become the cases.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Answer questions from stdin about one image with greedy decoding.
    /// A developer demonstration, not a clinical tool.
    Chat {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// PPM image to discuss.
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = 200)]
        max_new: usize,
    },
    /// Summarize a metrics CSV.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        metrics: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    /// Start from this checkpoint's weights instead of a fresh init.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ResponderKind {
    Model,
    Oracle,
    Random,
}

fn out_dir(common: &Common, command: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command))
}

fn load_config(path: Option<&Path>, seed: u64) -> anyhow::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.train.seed = seed;
    Ok(cfg)
}

fn manifest(command: &str, seed: u64, config: serde_json::Value, inputs: &[&Path]) -> anyhow::Result<RunManifest> {
    let mut m = RunManifest::new(command, std::env::args().skip(1).collect(), seed, config);
    for p in inputs {
        m.add_input(p)?;
    }
    Ok(m)
}

fn report_train(run: &TrainRun) {
    let last = run.outcome.metrics.last();
    println!("steps: {}", run.outcome.metrics.len());
    if let Some(m) = last {
        println!("final losses: llm {} total {}", m.llm, m.total);
    }
    if !run.outcome.skipped.is_empty() {
        println!("skipped records: {} violations", run.outcome.skipped.len());
    }
    println!("metrics: {}", run.metrics.display());
    println!("model: {}", run.model.display());
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Forge { common, n, rules, config } => {
            if rules != "default" {
                bail!("unknown rule set {rules:?}; available: default");
            }
            let cfg = load_config(config.as_deref(), common.seed)?;
            let out = out_dir(&common, "forge");
            println!("seed: {}", common.seed);
            let mut http = HttpDialogueGenerator::from_env();
            let generator: &mut dyn DialogueGenerator = match http.as_mut() {
                Some(h) => {
                    println!("dialogue generator: {} (from {ENDPOINT_ENV})", h.endpoint());
                    h
                }
                None => &mut TemplateDialogueGenerator,
            };
            let summary = run::forge_to_dir(&out, n, common.seed, cfg.model.image_size, cfg.train.max_tokens, generator)?;
            let inputs: Vec<&Path> = config.iter().map(PathBuf::as_path).collect();
            manifest("forge", common.seed, serde_json::to_value(&cfg)?, &inputs)?.finish(&out)?;
            let r = &summary.report;
            println!("records: {}  dialogue rounds: {}", r.records, r.rounds);
            println!("corpus: {}", summary.corpus.display());
            println!("captions: {}", summary.captions.display());
            for v in &r.violations {
                println!("violation: {v}");
            }
            Ok(r.is_clean())
        }
        Command::Pretrain(args) => train("pretrain", args),
        Command::Finetune(args) => train("finetune", args),
        Command::Eval { common, cases, resamples } => {
            println!("seed: {}", common.seed);
            let items: Vec<EvalCase> = io::read_jsonl(&cases)?;
            let report = evaluate(&items, &BootstrapConfig { resamples, confidence: 0.95, seed: common.seed })?;
            let out = out_dir(&common, "eval");
            let text = report.to_text();
            print!("{text}");
            io::write_string(&out.join("report.txt"), &text)?;
            io::write_string(&out.join("report.csv"), &report.to_csv())?;
            io::write_string(&out.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
            let config = serde_json::json!({ "resamples": resamples, "confidence": 0.95 });
            manifest("eval", common.seed, config, &[&cases])?.finish(&out)?;
            Ok(true)
        }
        Command::Mcq { common, cases, responder, checkpoint, corpus, threshold } => {
            println!("seed: {}", common.seed);
            let mut universe: Vec<String> = disease_vocabulary().iter().map(|s| s.to_string()).collect();
            universe.push(HEALTHY.into());
            let mut inputs: Vec<&Path> = Vec::new();
            let report = match responder {
                ResponderKind::Model => {
                    let (Some(ck), Some(corpus)) = (checkpoint.as_ref(), corpus.as_ref()) else {
                        bail!("--responder model needs --checkpoint and --corpus");
                    };
                    inputs.extend([ck.as_path(), corpus.as_path()]);
                    let mut model = checkpoint::load(ck)?.model;
                    if let Some(t) = threshold {
                        model.config.sign_threshold = t;
                    }
                    let records = io::load_corpus(corpus)?;
                    let mcq: Vec<McqCase> = records
                        .iter()
                        .enumerate()
                        .map(|(i, (r, _))| McqCase {
                            id: i.to_string(),
                            label: r.diseases.first().cloned().unwrap_or_else(|| HEALTHY.into()),
                        })
                        .collect();
                    let images: BTreeMap<String, _> = records.into_iter().enumerate().map(|(i, (_, img))| (i.to_string(), img)).collect();
                    let prompt = encode_prompt("Which disease does this fundus image show?");
                    let mut pick = |q: &McqQuestion| -> visionunite_core::Result<usize> {
                        let img = &images[&q.case_id];
                        let mut best = (f64::NEG_INFINITY, 0);
                        for (i, option) in q.options.iter().enumerate() {
                            let ids = tokenize(option).ids;
                            let ll = model.answer_log_likelihood(img, &prompt, &ids[1..ids.len() - 1])?;
                            if ll > best.0 {
                                best = (ll, i);
                            }
                        }
                        Ok(best.1)
                    };
                    multiple_choice_eval(&mcq, &universe, &mut pick, common.seed)?
                }
                kind => {
                    let Some(path) = cases.as_ref() else { bail!("--cases is required for this responder") };
                    inputs.push(path);
                    let mcq: Vec<McqCase> = io::read_jsonl(path)?;
                    let mut responder: Box<dyn Responder> = match kind {
                        ResponderKind::Oracle => Box::new(OracleResponder::new(&mcq)),
                        _ => Box::new(RandomResponder::new(common.seed.wrapping_add(1))),
                    };
                    multiple_choice_eval(&mcq, &universe, responder.as_mut(), common.seed)?
                }
            };
            let out = out_dir(&common, "mcq");
            let mut csv = String::from("disease,k,n,accuracy\n");
            for (d, r) in &report.per_disease {
                csv.push_str(&format!("{},{},{},{}\n", d.replace(',', ";"), r.k, r.n, r.value));
            }
            csv.push_str(&format!("overall,{},{},{}\n", report.overall.k, report.overall.n, report.overall.value));
            io::write_string(&out.join("mcq.csv"), &csv)?;
            println!("accuracy: {:.4} ({}/{})", report.overall.value, report.overall.k, report.overall.n);
            manifest("mcq", common.seed, serde_json::json!({ "threshold": threshold }), &inputs)?.finish(&out)?;
            Ok(true)
        }
        Command::Chat { common, checkpoint, image, threshold, max_new } => {
            let mut model = checkpoint::load(&checkpoint)?.model;
            if let Some(t) = threshold {
                model.config.sign_threshold = t;
            }
            let img = io::read_ppm(&image)?;
            eprintln!("seed: {} (decoding is greedy)", common.seed);
            eprintln!("demonstration only, not for clinical use; one question per line, EOF to quit");
            let mut transcript = String::new();
            let stdout = std::io::stdout();
            for line in std::io::stdin().lock().lines() {
                let q = line?;
                if q.trim().is_empty() {
                    continue;
                }
                let a = answer(&model, &img, q.trim(), max_new)?;
                writeln!(stdout.lock(), "{a}")?;
                transcript.push_str(&format!("Q: {q}\nA: {a}\n"));
            }
            let out = out_dir(&common, "chat");
            io::write_string(&out.join("transcript.txt"), &transcript)?;
            let config = serde_json::json!({ "threshold": model.config.sign_threshold, "max_new": max_new });
            manifest("chat", common.seed, config, &[&checkpoint, &image])?.finish(&out)?;
            Ok(true)
        }
        Command::Report { common, metrics } => {
            let text = std::fs::read_to_string(&metrics).with_context(|| metrics.display().to_string())?;
            let parsed = io::parse_metrics_csv(&text).map_err(|e| anyhow::anyhow!("{}: {e}", metrics.display()))?;
            let summary = summarize_metrics(&parsed);
            print!("{summary}");
            let out = out_dir(&common, "report");
            io::write_string(&out.join("report.csv"), &summary)?;
            manifest("report", common.seed, serde_json::Value::Null, &[&metrics])?.finish(&out)?;
            Ok(true)
        }
    }
}

fn train(command: &str, args: TrainArgs) -> anyhow::Result<bool> {
    let cfg = load_config(args.config.as_deref(), args.common.seed)?;
    let out = out_dir(&args.common, command);
    println!("seed: {}", args.common.seed);
    let mut inputs: Vec<&Path> = vec![&args.corpus];
    inputs.extend(args.config.as_deref());
    inputs.extend(args.checkpoint.as_deref());
    let m = manifest(command, args.common.seed, serde_json::to_value(&cfg)?, &inputs)?;
    let init = args.checkpoint.as_deref();
    let result = if command == "pretrain" {
        run::pretrain_run(&cfg, &args.corpus, &out, init)?
    } else {
        run::finetune_run(&cfg, &args.corpus, &out, init)?
    };
    report_train(&result);
    m.finish(&out)?;
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
