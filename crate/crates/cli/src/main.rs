//! `glassguard` — explainable prompt-safety guardrail CLI.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use glassguard_core::corpus::CountMode;
use glassguard_core::eval::{MaskMode, NGram};
use glassguard_core::Error;

use glassguard_cli::commands::*;

#[derive(Parser)]
#[command(
    name = "glassguard",
    version,
    about = "Explainable prompt-safety guardrail: joint safe/unsafe classification with word-level rationales"
)]
struct Cli {
    /// Seed governing all randomness (overrides config seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CountModeArg {
    PromptLabel,
    TokenLabel,
}

impl From<CountModeArg> for CountMode {
    fn from(v: CountModeArg) -> Self {
        match v {
            CountModeArg::PromptLabel => CountMode::PromptLabel,
            CountModeArg::TokenLabel => CountMode::TokenLabel,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskModeArg {
    Replace,
    Remove,
}

impl From<MaskModeArg> for MaskMode {
    fn from(v: MaskModeArg) -> Self {
        match v {
            MaskModeArg::Replace => MaskMode::ReplaceWithMask,
            MaskModeArg::Remove => MaskMode::Remove,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NGramArg {
    Unigram,
    Bigram,
}

impl From<NGramArg> for NGram {
    fn from(v: NGramArg) -> Self {
        match v {
            NGramArg::Unigram => NGram::Unigram,
            NGramArg::Bigram => NGram::Bigram,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Lime,
    Shapley,
}

#[derive(Subcommand)]
enum Command {
    /// Generate explanation phrases for a dataset via dual biased queries
    /// against the offline mock client.
    Label {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Optional JSONL sidecar with per-record gate decisions.
        #[arg(long)]
        outcomes: Option<PathBuf>,
        /// Lexicon file: one unsafe phrase per line.
        #[arg(long)]
        lexicon: PathBuf,
        /// Probability a mock response capitulates to its embedded bias.
        #[arg(long, default_value_t = 0.0)]
        bias_rate: f64,
    },
    /// Build the token polarization table from a training split.
    BuildStats {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "prompt-label")]
        count_mode: CountModeArg,
        #[arg(long, default_value_t = 1e-8)]
        epsilon: f64,
        #[arg(long, default_value_t = 2)]
        min_freq: usize,
    },
    /// Train a guardrail model from a JSON config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint: prompt and word unsafe-F1, optionally per
    /// category.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        by_category: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Word-masking faithfulness curve.
    Faithfulness {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated k values.
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3])]
        ks: Vec<usize>,
        #[arg(long, value_enum, default_value = "replace")]
        mask_mode: MaskModeArg,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Max-Jaccard lexical overlap histogram between two datasets.
    Overlap {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum, default_value = "unigram")]
        ngram: NGramArg,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Post-hoc explanation baseline over the model as a black box.
    ExplainBaseline {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Perturbation samples (lime).
        #[arg(long, default_value_t = 1500)]
        n_samples: usize,
        /// Surrogate feature budget (lime).
        #[arg(long, default_value_t = 25)]
        top_k: usize,
        /// Sampled permutations for long inputs (shapley).
        #[arg(long, default_value_t = 200)]
        n_perm: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Tune the prompt decision threshold on a dev set.
    TuneThreshold {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        /// Comma-separated grid; default 0.05..0.95 step 0.05.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Classify one prompt and print the structured verdict.
    Check {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Add per-word scores and the prompt score to the output.
        #[arg(long)]
        verbose: bool,
        /// Merge adjacent unsafe words into phrases.
        #[arg(long)]
        merge_phrases: bool,
    },
    /// Sequential single-input latency measurement.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Serve POST /v1/check and GET /v1/health over HTTP.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8787")]
        bind: String,
        #[arg(long, default_value_t = 65536)]
        request_cap_bytes: usize,
        #[arg(long, default_value_t = 4)]
        threads: usize,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        verbose: bool,
    },
}

/// Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::InvalidArg(_) => 1,
        Error::NonFinite(_) | Error::Client(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let seed = cli.seed;
    let is_serve = matches!(cli.command, Command::Serve { .. });
    let result = run(cli.command, seed);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if is_serve {
                // A service that cannot start is a runtime failure.
                ExitCode::from(3)
            } else {
                ExitCode::from(exit_code_for(&e))
            }
        }
    }
}

fn run(command: Command, seed: Option<u64>) -> glassguard_core::Result<()> {
    match command {
        Command::Label {
            input,
            output,
            outcomes,
            lexicon,
            bias_rate,
        } => label(&LabelArgs {
            input,
            output,
            outcomes,
            lexicon,
            bias_rate,
            seed: seed.unwrap_or(42),
        }),
        Command::BuildStats {
            train,
            output,
            count_mode,
            epsilon,
            min_freq,
        } => build_stats(&BuildStatsArgs {
            train,
            output,
            count_mode: count_mode.into(),
            epsilon,
            min_freq,
        }),
        Command::Train { config } => train_cmd(&TrainArgs { config, seed }),
        Command::Eval {
            model,
            data,
            threshold,
            by_category,
            output,
        } => eval(&EvalArgs {
            model,
            data,
            threshold,
            by_category,
            output,
        }),
        Command::Faithfulness {
            model,
            data,
            ks,
            mask_mode,
            threshold,
            output,
        } => faithfulness_cmd(&FaithfulnessArgs {
            model,
            data,
            k_values: ks,
            mask_mode: mask_mode.into(),
            threshold,
            output,
        }),
        Command::Overlap {
            train,
            test,
            ngram,
            output,
        } => overlap(&OverlapArgs {
            train,
            test,
            ngram: ngram.into(),
            output,
        }),
        Command::ExplainBaseline {
            method,
            model,
            data,
            n_samples,
            top_k,
            n_perm,
            output,
        } => explain_baseline(&ExplainArgs {
            method: match method {
                MethodArg::Lime => ExplainMethod::Lime,
                MethodArg::Shapley => ExplainMethod::Shapley,
            },
            model,
            data,
            n_samples,
            top_k,
            n_perm,
            seed: seed.unwrap_or(42),
            output,
        }),
        Command::TuneThreshold {
            model,
            dev,
            grid,
            output,
        } => tune_threshold_cmd(&TuneThresholdArgs {
            model,
            dev,
            grid,
            output,
        }),
        Command::Check {
            model,
            text,
            threshold,
            verbose,
            merge_phrases,
        } => check(&CheckArgs {
            model,
            text,
            threshold,
            verbose,
            merge_phrases,
        }),
        Command::Bench {
            model,
            data,
            output,
        } => bench(&BenchArgs {
            model,
            data,
            output,
        }),
        Command::Serve {
            model,
            bind,
            request_cap_bytes,
            threads,
            threshold,
            verbose,
        } => serve(&ServeArgs {
            model,
            bind,
            request_cap_bytes,
            threads,
            threshold,
            verbose,
        }),
    }
}
