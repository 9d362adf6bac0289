//! End-to-end tests of the command-line interface: every subcommand, the
//! exit-code contract, and the stability guarantees of the rendered
//! output.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::{json, Value};

use relgram::corpus::{save_dataset, synthetic_sentiment};
use relgram::matrix::Matrix;
use relgram::model::{Activation, CnnModel, ConvChannel, DenseLayer, OutputActivation};
use relgram::report::ExplanationReport;
use relgram::storage::save_model;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_relgram"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).expect("utf-8 stdout")
}

fn stderr(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).expect("utf-8 stderr")
}

struct Artifacts {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    model: PathBuf,
    dataset: PathBuf,
    log: PathBuf,
}

/// Trains one small model through the real CLI and shares it across the
/// tests below.
fn artifacts() -> &'static Artifacts {
    static ARTIFACTS: OnceLock<Artifacts> = OnceLock::new();
    ARTIFACTS.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let dataset = dir.path().join("toy.tsv");
        save_dataset(&synthetic_sentiment(150, 7), &dataset).expect("write corpus");

        let model = dir.path().join("model.json");
        let log = dir.path().join("history.csv");
        let config = dir.path().join("train.json");
        write_train_config(&config, &dataset, &model, Some(&log));

        let started = std::time::Instant::now();
        let output = run(&["train", "--config", config.to_str().unwrap()]);
        assert!(
            output.status.success(),
            "training failed: {}",
            stderr(&output)
        );
        assert!(
            started.elapsed().as_secs() < 60,
            "toy training exceeded a minute"
        );
        assert!(stdout(&output).contains("best validation accuracy"));
        Artifacts {
            dir,
            model,
            dataset,
            log,
        }
    })
}

fn write_train_config(path: &Path, dataset: &Path, model_out: &Path, log_out: Option<&Path>) {
    let mut config = json!({
        "dataset": dataset,
        "model_out": model_out,
        "class_names": ["negative", "positive"],
        "arch": {
            "embedding_dim": 8,
            "channels": [
                {"kernel_size": 1, "filters": 4},
                {"kernel_size": 2, "filters": 4}
            ],
            "pad_length": 20,
            "output_activation": "softmax"
        },
        "train": {
            "learning_rate": 0.1,
            "epochs": 10,
            "batch_size": 8,
            "seed": 3,
            "init_scale": 0.1,
            "split_ratio": 0.8
        }
    });
    if let Some(log) = log_out {
        config["log_out"] = json!(log);
    }
    std::fs::write(path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
}

#[test]
fn training_writes_model_and_history() {
    let artifacts = artifacts();
    assert!(artifacts.model.exists());
    let history = std::fs::read_to_string(&artifacts.log).unwrap();
    assert!(history.starts_with("epoch,train_loss,train_acc,val_acc\n"));
    assert_eq!(history.lines().count(), 11, "header plus one row per epoch");
}

#[test]
fn training_is_reproducible_byte_for_byte() {
    let artifacts = artifacts();
    let dir = tempfile::tempdir().unwrap();
    let model_again = dir.path().join("again.json");
    let config = dir.path().join("train.json");
    write_train_config(&config, &artifacts.dataset, &model_again, None);

    let output = run(&["train", "--config", config.to_str().unwrap()]);
    assert!(output.status.success(), "{}", stderr(&output));
    assert_eq!(
        std::fs::read(&artifacts.model).unwrap(),
        std::fs::read(&model_again).unwrap(),
        "same seed and data must give identical model files"
    );
}

#[test]
fn explain_json_is_schema_complete_and_byte_stable() {
    let artifacts = artifacts();
    let args = [
        "explain",
        "--model",
        artifacts.model.to_str().unwrap(),
        "--sentence",
        "boring plot but not bad at all",
        "--format",
        "json",
    ];
    let first = run(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let second = run(&args);
    assert_eq!(first.stdout, second.stdout, "reports must be byte-stable");

    let report: ExplanationReport = serde_json::from_str(&stdout(&first)).unwrap();
    assert_eq!(report.output.len(), 2);
    assert!(!report.ngrams.is_empty());
    let raw: Value = serde_json::from_str(&stdout(&first)).unwrap();
    let ngram = &raw["ngrams"][0];
    for key in [
        "span",
        "text",
        "contribution",
        "relevance",
        "polarity",
        "in_S",
        "in_N",
    ] {
        assert!(!ngram[key].is_null(), "missing key {key}");
    }
}

#[test]
fn explain_file_mode_emits_one_report_per_line() {
    let artifacts = artifacts();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("batch.txt");
    std::fs::write(&input, "a good movie\n\nnot a good movie\n").unwrap();
    let output = run(&[
        "explain",
        "--model",
        artifacts.model.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    let reports: Vec<ExplanationReport> = serde_json::from_str(&stdout(&output)).unwrap();
    assert_eq!(reports.len(), 2, "blank lines are skipped");
    assert_eq!(reports[0].text, "a good movie");
}

#[test]
fn explain_renders_ansi_and_html_highlights() {
    let artifacts = artifacts();
    let ansi = run(&[
        "explain",
        "--model",
        artifacts.model.to_str().unwrap(),
        "--sentence",
        "a truly great and wonderful film",
    ]);
    assert!(ansi.status.success(), "{}", stderr(&ansi));
    let text = stdout(&ansi);
    assert!(text.contains("predicted class:"));
    assert!(text.contains("rank"));

    let html = run(&[
        "explain",
        "--model",
        artifacts.model.to_str().unwrap(),
        "--sentence",
        "a truly great and wonderful film",
        "--format",
        "html",
    ]);
    assert!(html.status.success());
    let page = stdout(&html);
    assert!(page.starts_with("<!DOCTYPE html>"));
    assert!(page.contains("</table>"));
}

#[test]
fn explain_rejects_empty_sentences_with_exit_3() {
    let artifacts = artifacts();
    let output = run(&[
        "explain",
        "--model",
        artifacts.model.to_str().unwrap(),
        "--sentence",
        "!!! ... ???",
    ]);
    assert_eq!(output.status.code(), Some(3));
    assert!(stderr(&output).contains("no tokens"));
}

#[test]
fn explain_requires_exactly_one_input_source() {
    let artifacts = artifacts();
    let model = artifacts.model.to_str().unwrap();
    let output = run(&["explain", "--model", model]);
    assert_eq!(output.status.code(), Some(2));

    let output = run(&[
        "explain",
        "--model",
        model,
        "--sentence",
        "a",
        "--input",
        "b.txt",
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn bad_epsilon_is_a_usage_error() {
    let artifacts = artifacts();
    let output = run(&[
        "explain",
        "--model",
        artifacts.model.to_str().unwrap(),
        "--sentence",
        "fine",
        "--rule",
        "eps",
        "--epsilon",
        "-1.0",
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("positive"));
}

#[test]
fn missing_dataset_fails_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("train.json");
    write_train_config(
        &config,
        &dir.path().join("absent.tsv"),
        &dir.path().join("out.json"),
        None,
    );
    let output = run(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("absent.tsv"));
}

#[test]
fn unreadable_model_version_fails_with_exit_2() {
    let artifacts = artifacts();
    let dir = tempfile::tempdir().unwrap();
    let future = dir.path().join("future.json");
    let mut value: Value =
        serde_json::from_str(&std::fs::read_to_string(&artifacts.model).unwrap()).unwrap();
    value["format_version"] = json!(99);
    std::fs::write(&future, serde_json::to_string(&value).unwrap()).unwrap();

    let output = run(&[
        "explain",
        "--model",
        future.to_str().unwrap(),
        "--sentence",
        "fine",
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("version"));
}

#[test]
fn compare_emits_csv_and_a_median_summary() {
    let artifacts = artifacts();
    let output = run(&[
        "compare",
        "--model",
        artifacts.model.to_str().unwrap(),
        "--dataset",
        artifacts.dataset.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    let csv = stdout(&output);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "sentence_id,spearman,cosine,n_words");
    assert_eq!(csv.lines().count(), 151, "header plus one row per sentence");
    assert!(stderr(&output).contains("median spearman"));
}

#[test]
fn eval_prints_accuracy_and_confusion() {
    let artifacts = artifacts();
    let output = run(&[
        "eval",
        "--model",
        artifacts.model.to_str().unwrap(),
        "--dataset",
        artifacts.dataset.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("accuracy:"));
    assert!(text.contains("confusion"));
    assert!(text.contains("negative"));
    assert!(text.contains("positive"));
}

fn e(i: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; 4];
    v[i] = scale;
    v
}

/// Four orthogonal words pooled to (3, 2, 1, 1), then a two-class head
/// whose first class sees the products (-3, 2, 1, -1). The two ratio
/// rules disagree on the sign of those contributions.
fn sign_flip_model() -> CnnModel {
    CnnModel {
        vocab: relgram::corpus::Vocabulary::build(["w0", "w1", "w2", "w3"]),
        embedding: Matrix::from_rows(&[
            vec![0.0; 4],
            vec![0.0; 4],
            e(0, 3.0),
            e(1, 2.0),
            e(2, 1.0),
            e(3, 1.0),
        ]),
        channels: vec![ConvChannel {
            kernel_size: 1,
            filters: (0..4).map(|i| Matrix::from_rows(&[e(i, 1.0)])).collect(),
        }],
        dense: vec![DenseLayer {
            weights: Matrix::from_rows(&[vec![-1.0, 1.0, 1.0, -1.0], vec![1.0, -1.0, -1.0, 1.0]]),
            biases: vec![0.0, 0.0],
            activation: Activation::Identity,
        }],
        output_activation: OutputActivation::Softmax,
        pad_length: 4,
        pad_token_id: 0,
    }
}

#[test]
fn ratio_rules_disagree_on_contribution_signs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.json");
    save_model(&sign_flip_model(), &path).unwrap();

    let contribution_w0 = |rule: &str| -> Vec<f64> {
        let output = run(&[
            "explain",
            "--model",
            path.to_str().unwrap(),
            "--sentence",
            "w0 w1 w2 w3",
            "--rule",
            rule,
            "--format",
            "json",
        ]);
        assert!(output.status.success(), "{}", stderr(&output));
        let report: ExplanationReport = serde_json::from_str(&stdout(&output)).unwrap();
        report
            .ngrams
            .iter()
            .find(|g| g.text == "w0")
            .expect("w0 feature present")
            .contribution
            .clone()
    };

    let plain = contribution_w0("lrp0");
    let adapted = contribution_w0("adapted");
    // The w0 product is negative for class 0: the plain rule flips it to
    // a positive share (negative denominator), the adapted rule keeps it
    // negative.
    assert!(plain[0] > 0.0, "plain rule: {plain:?}");
    assert!(adapted[0] < 0.0, "adapted rule: {adapted:?}");
}

#[test]
fn sufficient_and_necessary_words_are_marked_in_ansi() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.json");
    save_model(&sign_flip_model(), &path).unwrap();

    let output = run(&[
        "explain",
        "--model",
        path.to_str().unwrap(),
        "--sentence",
        "w0 w1 w2 w3",
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    let text = stdout(&output);
    // For this input S = N = {w0, w3}: dropping either one alone flips
    // the prediction, so both words are red and individually bracketed.
    assert!(text.contains("[\x1b[31mw0\x1b[0m]"), "got: {text}");
    assert!(text.contains("[\x1b[31mw3\x1b[0m]"), "got: {text}");
    assert!(
        !text.contains("[w1"),
        "w1 is neither sufficient nor necessary"
    );
}
