use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use relgram::corpus::{encode_and_pad, load_dataset, Vocabulary};
use relgram::error::{Error, Result};
use relgram::explain::{annotate_features, select_ngrams, word_relevances};
use relgram::lrp::{propagate, RatioRule};
use relgram::oracle::{compare_distributions, occlusion_scores, Agreement};
use relgram::report::{explain_text, render_ansi, render_html, render_json, ExplanationReport};
use relgram::storage::{load_model, save_model};
use relgram::train::{
    encode_dataset, evaluate_encoded, history_to_csv, init_model, train, ArchSpec, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "relgram",
    version,
    about = "Train small CNN text classifiers and explain their predictions\n\
             as relevance over the n-grams the filters selected"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RuleArg {
    /// Plain ratio rule; the denominator is the signed preactivation.
    Lrp0,
    /// Signed stabilizer added to the denominator.
    Eps,
    /// Absolute-value denominator; ratios form a distribution.
    Adapted,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Ansi,
    Html,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON job description.
    Train {
        /// Job file: dataset, model_out, optional log_out and
        /// class_names, arch {...}, train {...}.
        #[arg(long)]
        config: PathBuf,
    },
    /// Explain one sentence or every line of a file.
    Explain {
        #[arg(long)]
        model: PathBuf,
        /// Sentence to explain (conflicts with --input).
        #[arg(long)]
        sentence: Option<String>,
        /// File with one sentence per line (conflicts with --sentence).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = RuleArg::Adapted)]
        rule: RuleArg,
        /// Stabilizer for --rule eps; must be positive.
        #[arg(long, allow_negative_numbers = true)]
        epsilon: Option<f64>,
        #[arg(long, value_enum, default_value_t = FormatArg::Ansi)]
        format: FormatArg,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Rank words by relevance and by occlusion over a dataset and
    /// report how well the two orders agree.
    Compare {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = RuleArg::Adapted)]
        rule: RuleArg,
        #[arg(long, allow_negative_numbers = true)]
        epsilon: Option<f64>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Accuracy and confusion matrix of a model on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
}

#[derive(Deserialize)]
struct TrainJob {
    dataset: PathBuf,
    model_out: PathBuf,
    #[serde(default)]
    log_out: Option<PathBuf>,
    #[serde(default)]
    class_names: Option<Vec<String>>,
    arch: ArchSpec,
    train: TrainConfig,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 = bad input or configuration, 3 = nothing to explain, 1 = the rest.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. }
        | Error::Json { .. }
        | Error::MalformedLine { .. }
        | Error::UnknownLabel { .. }
        | Error::InvalidModel(_)
        | Error::FormatVersion { .. }
        | Error::InvalidConfig(_)
        | Error::EmptyDataset => 2,
        Error::DegenerateInput => 3,
        _ => 1,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config } => cmd_train(&config),
        Command::Explain {
            model,
            sentence,
            input,
            rule,
            epsilon,
            format,
            output,
        } => cmd_explain(&model, sentence, input, rule, epsilon, format, output),
        Command::Compare {
            model,
            dataset,
            rule,
            epsilon,
            output,
        } => cmd_compare(&model, &dataset, rule, epsilon, output),
        Command::Eval { model, dataset } => cmd_eval(&model, &dataset),
    }
}

fn make_rule(rule: RuleArg, epsilon: Option<f64>) -> Result<RatioRule> {
    match rule {
        RuleArg::Lrp0 => Ok(RatioRule::Lrp0),
        RuleArg::Adapted => Ok(RatioRule::LrpAdapted),
        RuleArg::Eps => {
            let epsilon = epsilon.unwrap_or(RatioRule::DEFAULT_EPSILON);
            if epsilon.is_nan() || epsilon <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "--epsilon must be positive, got {epsilon}"
                )));
            }
            Ok(RatioRule::LrpEps { epsilon })
        }
    }
}

fn write_or_print(output: Option<&Path>, content: &str) -> Result<()> {
    match output {
        Some(path) => fs::write(path, content).map_err(|e| Error::io(path, e)),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_train(config_path: &Path) -> Result<()> {
    let raw = fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
    let job: TrainJob = serde_json::from_str(&raw).map_err(|e| Error::json(config_path, e))?;

    let mut dataset = load_dataset(&job.dataset)?;
    if let Some(names) = job.class_names {
        if names.len() < dataset.class_count() {
            return Err(Error::InvalidConfig(format!(
                "{} class names given but the dataset has {} classes",
                names.len(),
                dataset.class_count()
            )));
        }
        dataset.class_names = names;
    }
    if !(job.train.split_ratio > 0.0 && job.train.split_ratio < 1.0) {
        return Err(Error::InvalidConfig(
            "split_ratio must be inside (0, 1)".into(),
        ));
    }
    if dataset.samples.len() < 2 {
        return Err(Error::InvalidConfig(
            "need at least two samples to split for validation".into(),
        ));
    }

    // The vocabulary comes from the training side only; the same
    // (ratio, seed) split happens again inside `train`, so validation
    // words the training side never saw stay unknown.
    let (train_part, _) = dataset.split(job.train.split_ratio, job.train.seed);
    let vocab = Vocabulary::build(
        train_part
            .samples
            .iter()
            .flat_map(|(tokens, _)| tokens.iter().map(String::as_str)),
    );
    log::info!(
        "{} samples, {} classes, vocabulary of {} tokens",
        dataset.samples.len(),
        dataset.class_count(),
        vocab.len()
    );

    let model = init_model(
        &job.arch,
        vocab,
        dataset.class_count(),
        job.train.seed,
        job.train.init_scale,
    )?;
    let (model, history) = train(model, &dataset, &job.train)?;

    save_model(&model, &job.model_out)?;
    if let Some(log_path) = &job.log_out {
        fs::write(log_path, history_to_csv(&history)).map_err(|e| Error::io(log_path, e))?;
    }
    let best = history
        .iter()
        .map(|s| s.val_acc)
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "trained {} epochs; best validation accuracy {:.4}; model written to {}",
        history.len(),
        best,
        job.model_out.display()
    );
    Ok(())
}

fn cmd_explain(
    model_path: &Path,
    sentence: Option<String>,
    input: Option<PathBuf>,
    rule: RuleArg,
    epsilon: Option<f64>,
    format: FormatArg,
    output: Option<PathBuf>,
) -> Result<()> {
    let model = load_model(model_path)?;
    let rule = make_rule(rule, epsilon)?;

    let (sentences, batch) = match (sentence, input) {
        (Some(s), None) => (vec![s], false),
        (None, Some(path)) => {
            let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let lines: Vec<String> = raw
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            if lines.is_empty() {
                return Err(Error::DegenerateInput);
            }
            (lines, true)
        }
        _ => {
            return Err(Error::InvalidConfig(
                "give exactly one of --sentence and --input".into(),
            ))
        }
    };

    let reports: Vec<ExplanationReport> = sentences
        .iter()
        .map(|s| explain_text(&model, s, rule))
        .collect::<Result<_>>()?;

    let rendered = match format {
        FormatArg::Json if batch => {
            let mut s =
                serde_json::to_string_pretty(&reports).expect("report serialization cannot fail");
            s.push('\n');
            s
        }
        FormatArg::Json => render_json(&reports[0]),
        FormatArg::Ansi => reports
            .iter()
            .map(render_ansi)
            .collect::<Vec<_>>()
            .join("\n"),
        FormatArg::Html => reports
            .iter()
            .map(render_html)
            .collect::<Vec<_>>()
            .join("\n"),
    };
    write_or_print(output.as_deref(), &rendered)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn cmd_compare(
    model_path: &Path,
    dataset_path: &Path,
    rule: RuleArg,
    epsilon: Option<f64>,
    output: Option<PathBuf>,
) -> Result<()> {
    let model = load_model(model_path)?;
    let dataset = load_dataset(dataset_path)?;
    if dataset.samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rule = make_rule(rule, epsilon)?;

    let mut csv = String::from("sentence_id,spearman,cosine,n_words\n");
    let mut spearmans = Vec::new();
    for (i, (tokens, _)) in dataset.samples.iter().enumerate() {
        let ids = encode_and_pad(tokens, &model.vocab, model.pad_length);
        let trace = model.forward(&ids)?;
        let relevance = propagate(&model, &trace, rule)?;
        let mut features = select_ngrams(&trace, &model);
        annotate_features(
            &mut features,
            &relevance,
            trace.predicted_class,
            model.output_activation,
        );
        let n_words = tokens.len().min(model.pad_length);
        let ours = word_relevances(&features, n_words);
        let occlusion = occlusion_scores(&model, &ids)?;
        match compare_distributions(&ours, &occlusion) {
            Agreement::Defined { spearman, cosine } => {
                csv.push_str(&format!("{i},{spearman},{cosine},{n_words}\n"));
                spearmans.push(spearman);
            }
            Agreement::Degenerate => {
                csv.push_str(&format!("{i},degenerate,degenerate,{n_words}\n"));
            }
        }
    }
    write_or_print(output.as_deref(), &csv)?;

    if spearmans.is_empty() {
        eprintln!("no defined rows out of {}", dataset.samples.len());
    } else {
        spearmans.sort_by(f64::total_cmp);
        eprintln!(
            "median spearman {:.4} over {} defined rows ({} total)",
            median(&spearmans),
            spearmans.len(),
            dataset.samples.len()
        );
    }
    Ok(())
}

fn cmd_eval(model_path: &Path, dataset_path: &Path) -> Result<()> {
    let model = load_model(model_path)?;
    let dataset = load_dataset(dataset_path)?;
    let encoded = encode_dataset(&model, &dataset)?;
    let summary = evaluate_encoded(&model, &encoded)?;

    println!(
        "accuracy: {:.4} ({}/{})",
        summary.accuracy, summary.correct, summary.total
    );
    let names: Vec<&str> = (0..model.class_count())
        .map(|c| {
            dataset
                .class_names
                .get(c)
                .map(String::as_str)
                .unwrap_or("?")
        })
        .collect();
    let width = names.iter().map(|n| n.len()).max().unwrap_or(1).max(6);
    println!("confusion (rows = true class, columns = predicted):");
    let header: Vec<String> = names.iter().map(|n| format!("{n:>width$}")).collect();
    println!("{:>width$}  {}", "", header.join("  "));
    for (true_class, row) in summary.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>width$}")).collect();
        println!("{:>width$}  {}", names[true_class], cells.join("  "));
    }
    Ok(())
}
