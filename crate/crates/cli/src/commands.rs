//! One thin adapter per subcommand.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use glassguard_core::corpus::{
    encode_records, load_jsonl, save_jsonl, tokenize, CountMode, PolarizationTable, Vocabulary,
};
use glassguard_core::eval::{
    default_threshold_grid, faithfulness, grouped_f1, latency_harness, lexical_overlap,
    lime_explain, lime_threshold, model_subset_value, prompt_f1_encoded, shapley_explain,
    word_f1_encoded, LimeConfig, MaskMode, NGram, ShapleyMode, EXACT_LIMIT,
};
use glassguard_core::labeler::{generate_labels, write_outcomes_jsonl, LabelingConfig, MockClient};
use glassguard_core::net::{self, forward, predict_with_details, unsafe_prob};
use glassguard_core::trainer::{attach_weak_supervision, train, tune_threshold};
use glassguard_core::{GuardrailModel, Result, SafetyLabel};

use crate::config::AppConfig;
use crate::server::{self, ServeOptions};

fn write_json_report(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(path) => std::fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn print_table(title: &str, rows: &[(String, String)]) {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    eprintln!("{title}");
    for (key, value) in rows {
        eprintln!("  {key:<width$}  {value}");
    }
}

pub struct LabelArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub outcomes: Option<PathBuf>,
    pub lexicon: PathBuf,
    pub bias_rate: f64,
    pub seed: u64,
}

pub fn label(args: &LabelArgs) -> Result<()> {
    let mut records = load_jsonl(&args.input)?;
    let client = MockClient::from_file(&args.lexicon, args.bias_rate, args.seed)?;
    let report = generate_labels(&mut records, &client, &LabelingConfig::default())?;
    save_jsonl(&args.output, &records)?;
    if let Some(path) = &args.outcomes {
        write_outcomes_jsonl(path, &report.outcomes)?;
    }
    let summary = json!({
        "total": report.total,
        "labeled": report.labeled,
        "coverage": report.coverage,
        "transport_failures": report.transport_failures,
    });
    write_json_report(None, &summary)?;
    Ok(())
}

pub struct BuildStatsArgs {
    pub train: PathBuf,
    pub output: PathBuf,
    pub count_mode: CountMode,
    pub epsilon: f64,
    pub min_freq: usize,
}

pub fn build_stats(args: &BuildStatsArgs) -> Result<()> {
    let records = load_jsonl(&args.train)?;
    let vocab = Vocabulary::from_records(&records, args.min_freq);
    let table = PolarizationTable::build(&records, &vocab, args.count_mode, args.epsilon)?;
    table.save(&args.output, &vocab)?;
    print_table(
        "polarization table",
        &[
            ("records".into(), records.len().to_string()),
            ("vocab".into(), vocab.size().to_string()),
            ("output".into(), args.output.display().to_string()),
        ],
    );
    Ok(())
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let app = AppConfig::load(&args.config)?;
    let records = load_jsonl(&app.data.train)?;
    let dev_records = match &app.data.dev {
        Some(path) => load_jsonl(path)?,
        None => Vec::new(),
    };

    let vocab = Vocabulary::from_records(&records, app.tokenizer.min_freq);
    let table = PolarizationTable::build(
        &records,
        &vocab,
        app.tokenizer.count_mode,
        app.tokenizer.epsilon,
    )?;
    let (mut train_set, stats) = encode_records(&records, &vocab)?;
    attach_weak_supervision(&mut train_set, &table);
    let (dev_set, _) = encode_records(&dev_records, &vocab)?;

    let mut train_config = app.train.resolve(app.loss)?;
    if let Some(seed) = args.seed {
        train_config.seed = seed;
    }
    let model = GuardrailModel::new(
        app.model.encoder_config(vocab.size()),
        train_config.seed,
    )?;

    std::fs::create_dir_all(&app.paths.checkpoints)?;
    std::fs::create_dir_all(&app.paths.reports)?;
    let log_path = app.paths.reports.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path)?);
    let (trained, report) = train(&train_set, &dev_set, model, &train_config, Some(&mut log))?;
    log.flush()?;

    let checkpoint_path = app.paths.checkpoints.join("model.ckpt");
    net::save(&trained, &vocab, &checkpoint_path)?;
    table.save(app.paths.checkpoints.join("polarization.json"), &vocab)?;
    write_json_report(Some(&app.paths.reports.join("train_report.json")), &report)?;

    print_table(
        "training run",
        &[
            ("examples".into(), format!("{} ({} supervised)", stats.total, stats.supervised)),
            ("dropped phrases".into(), stats.dropped_phrases.to_string()),
            ("steps".into(), report.steps.to_string()),
            ("selected epoch".into(), report.selected_epoch.to_string()),
            (
                "tuned threshold".into(),
                format!("{:?} (dev F1 {:?})", report.tuned_threshold, report.tuned_dev_f1),
            ),
            ("wall clock ms".into(), format!("{:.0}", report.wall_clock_ms)),
            ("checkpoint".into(), checkpoint_path.display().to_string()),
        ],
    );
    write_json_report(None, &report)?;
    Ok(())
}

pub struct EvalArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub threshold: f64,
    pub by_category: bool,
    pub output: Option<PathBuf>,
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let (model, vocab) = net::load(&args.model)?;
    let records = load_jsonl(&args.data)?;
    let (encoded, stats) = encode_records(&records, &vocab)?;
    let (prompt_f1, prompt_counts) = prompt_f1_encoded(&model, &encoded, args.threshold)?;
    let (word_f1, word_counts) = word_f1_encoded(&model, &encoded)?;
    let groups = if args.by_category {
        Some(grouped_f1(&model, &records, &vocab, args.threshold)?)
    } else {
        None
    };
    let report = json!({
        "config": {
            "model": args.model.display().to_string(),
            "data": args.data.display().to_string(),
            "threshold": args.threshold,
        },
        "n_records": records.len(),
        "n_supervised": stats.supervised,
        "prompt": {"f1": prompt_f1, "counts": prompt_counts},
        "word": {"f1": word_f1, "counts": word_counts},
        "groups": groups,
    });
    print_table(
        "evaluation",
        &[
            ("records".into(), records.len().to_string()),
            ("prompt unsafe-F1".into(), format!("{prompt_f1:.4}")),
            ("word unsafe-F1".into(), format!("{word_f1:.4}")),
        ],
    );
    write_json_report(args.output.as_deref(), &report)
}

pub struct FaithfulnessArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub k_values: Vec<usize>,
    pub mask_mode: MaskMode,
    pub threshold: f64,
    pub output: Option<PathBuf>,
}

pub fn faithfulness_cmd(args: &FaithfulnessArgs) -> Result<()> {
    let (model, vocab) = net::load(&args.model)?;
    let records = load_jsonl(&args.data)?;
    let (encoded, _) = encode_records(&records, &vocab)?;
    let curve = faithfulness(&model, &encoded, &args.k_values, args.mask_mode, args.threshold)?;
    let mut rows = vec![("full input".to_string(), format!("{:.4}", curve.f1_full))];
    for (k, f1) in &curve.f1_at_k {
        rows.push((format!("mask top {k}"), format!("{f1:.4}")));
    }
    print_table("faithfulness (prompt unsafe-F1)", &rows);
    let report = json!({
        "config": {
            "model": args.model.display().to_string(),
            "data": args.data.display().to_string(),
            "k_values": args.k_values,
            "mask_mode": curve.mask_mode,
            "threshold": args.threshold,
        },
        "curve": curve,
    });
    write_json_report(args.output.as_deref(), &report)
}

pub struct OverlapArgs {
    pub train: PathBuf,
    pub test: PathBuf,
    pub ngram: NGram,
    pub output: Option<PathBuf>,
}

pub fn overlap(args: &OverlapArgs) -> Result<()> {
    let train_records = load_jsonl(&args.train)?;
    let test_records = load_jsonl(&args.test)?;
    let histogram = lexical_overlap(&train_records, &test_records, args.ngram)?;
    let rows: Vec<(String, String)> =
        glassguard_core::eval::OverlapHistogram::bucket_labels()
            .iter()
            .zip(histogram.bucket_pct.iter())
            .map(|(label, pct)| (label.to_string(), format!("{pct:.1}%")))
            .collect();
    print_table("max-Jaccard overlap", &rows);
    let report = json!({
        "config": {
            "train": args.train.display().to_string(),
            "test": args.test.display().to_string(),
            "ngram": args.ngram,
            "stopword_filtered": histogram.stopword_filtered,
        },
        "histogram": histogram,
    });
    write_json_report(args.output.as_deref(), &report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplainMethod {
    Lime,
    Shapley,
}

pub struct ExplainArgs {
    pub method: ExplainMethod,
    pub model: PathBuf,
    pub data: PathBuf,
    pub n_samples: usize,
    pub top_k: usize,
    pub n_perm: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

pub fn explain_baseline(args: &ExplainArgs) -> Result<()> {
    let (model, vocab) = net::load(&args.model)?;
    let records = load_jsonl(&args.data)?;
    let (encoded, _) = encode_records(&records, &vocab)?;

    let mut per_record = Vec::new();
    let mut weights_per_record = Vec::new();
    let mut golds_per_record = Vec::new();
    for (i, (record, example)) in records.iter().zip(&encoded).enumerate() {
        let tok = tokenize(&record.text, &vocab)?;
        let weights = match args.method {
            ExplainMethod::Lime => {
                let blackbox = |text: &str| -> f64 {
                    if text.trim().is_empty() {
                        forward(&model, &[glassguard_core::corpus::MASK_ID], None)
                            .map(|o| o.prompt_probs[1])
                            .unwrap_or(0.5)
                    } else {
                        unsafe_prob(&model, text, &vocab).unwrap_or(0.5)
                    }
                };
                lime_explain(
                    &tok.words,
                    &blackbox,
                    &LimeConfig {
                        n_samples: args.n_samples,
                        top_k: args.top_k,
                        seed: args.seed.wrapping_add(i as u64),
                        ..LimeConfig::default()
                    },
                )?
            }
            ExplainMethod::Shapley => {
                let n = example.word_spans.len();
                let mut value = model_subset_value(&model, example);
                let mode = if n <= EXACT_LIMIT {
                    ShapleyMode::Exact
                } else {
                    ShapleyMode::Permutation {
                        n_perm: args.n_perm,
                        seed: args.seed.wrapping_add(i as u64),
                    }
                };
                shapley_explain(n, &mut value, mode)?
            }
        };
        if let Some(gold) = word_gold(example) {
            weights_per_record.push(weights.clone());
            golds_per_record.push(gold);
        }
        per_record.push(json!({
            "id": record.id,
            "words": tok.surfaces,
            "weights": weights,
        }));
    }

    let grid = default_threshold_grid();
    let (tuned_threshold, tuned_f1) = if golds_per_record.is_empty() {
        (None, None)
    } else {
        let (t, f1) = lime_threshold(&weights_per_record, &golds_per_record, &grid)?;
        (Some(t), Some(f1))
    };

    let method = match args.method {
        ExplainMethod::Lime => "lime",
        ExplainMethod::Shapley => "shapley",
    };
    print_table(
        "post-hoc explanation baseline",
        &[
            ("method".into(), method.to_string()),
            ("records".into(), records.len().to_string()),
            ("tuned threshold".into(), format!("{tuned_threshold:?}")),
            ("word F1 at threshold".into(), format!("{tuned_f1:?}")),
        ],
    );
    let report = json!({
        "config": {
            "method": method,
            "model": args.model.display().to_string(),
            "data": args.data.display().to_string(),
            "n_samples": args.n_samples,
            "top_k": args.top_k,
            "n_perm": args.n_perm,
            "seed": args.seed,
            "kernel": "exp(-D^2/sigma^2), sigma = 0.75*sqrt(n_words), cosine distance",
            "ridge_lambda": 1e-3,
        },
        "tuned_threshold": tuned_threshold,
        "word_f1": tuned_f1,
        "records": per_record,
    });
    write_json_report(args.output.as_deref(), &report)
}

/// Word-level gold flags (any token in the span unsafe), when supervised.
fn word_gold(example: &glassguard_core::EncodedExample) -> Option<Vec<bool>> {
    let labels = example.token_labels.as_ref()?;
    Some(
        example
            .word_spans
            .iter()
            .map(|&(start, end)| labels[start..end].contains(&SafetyLabel::Unsafe))
            .collect(),
    )
}

pub struct TuneThresholdArgs {
    pub model: PathBuf,
    pub dev: PathBuf,
    pub grid: Option<Vec<f64>>,
    pub output: Option<PathBuf>,
}

pub fn tune_threshold_cmd(args: &TuneThresholdArgs) -> Result<()> {
    let (model, vocab) = net::load(&args.model)?;
    let records = load_jsonl(&args.dev)?;
    let (encoded, _) = encode_records(&records, &vocab)?;
    let grid = args.grid.clone().unwrap_or_else(default_threshold_grid);
    let (threshold, dev_f1) = tune_threshold(&model, &encoded, &grid)?;
    write_json_report(
        args.output.as_deref(),
        &json!({"threshold": threshold, "dev_f1": dev_f1}),
    )
}

pub struct CheckArgs {
    pub model: PathBuf,
    pub text: String,
    pub threshold: f64,
    pub verbose: bool,
    pub merge_phrases: bool,
}

pub fn check(args: &CheckArgs) -> Result<()> {
    let (model, vocab) = net::load(&args.model)?;
    let detail = predict_with_details(&model, &args.text, &vocab, args.threshold)?;
    let mut verdict = if args.verbose {
        detail.verdict.clone()
    } else {
        detail.verdict.concise()
    };
    if args.merge_phrases && verdict.safety_label.is_unsafe() {
        verdict.explanation = merge_adjacent(&detail.words, &detail.word_unsafe);
    }
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer(&mut stdout, &verdict)?;
    stdout.write_all(b"\n")?;
    Ok(())
}

/// Joins runs of adjacent unsafe words into phrases.
fn merge_adjacent(words: &[String], word_unsafe: &[bool]) -> Vec<String> {
    let mut phrases = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for (word, &flag) in words.iter().zip(word_unsafe) {
        if flag {
            current.push(word);
        } else if !current.is_empty() {
            phrases.push(current.join(" "));
            current.clear();
        }
    }
    if !current.is_empty() {
        phrases.push(current.join(" "));
    }
    phrases
}

pub struct BenchArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub output: Option<PathBuf>,
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let (model, vocab) = net::load(&args.model)?;
    let records = load_jsonl(&args.data)?;
    let (encoded, _) = encode_records(&records, &vocab)?;
    let report = latency_harness(&model, &encoded)?;
    print_table(
        "latency (sequential, no batching)",
        &[
            ("inputs".into(), report.n_timed.to_string()),
            ("mean ms/input".into(), format!("{:.3}", report.mean_ms)),
            (
                "peak rss kb".into(),
                report
                    .peak_rss_kb
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "unavailable".to_string()),
            ),
        ],
    );
    write_json_report(args.output.as_deref(), &report)
}

pub struct ServeArgs {
    pub model: PathBuf,
    pub bind: String,
    pub request_cap_bytes: usize,
    pub threads: usize,
    pub threshold: f64,
    pub verbose: bool,
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let (model, vocab) = net::load(&args.model)?;
    server::run_blocking(
        model,
        vocab,
        ServeOptions {
            bind: args.bind.clone(),
            request_cap_bytes: args.request_cap_bytes,
            threads: args.threads,
            threshold: args.threshold,
            verbose: args.verbose,
        },
    )
}

