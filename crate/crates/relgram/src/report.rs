//! End-to-end explanation reports and their three renderings. The JSON
//! form is the source of truth; the ANSI and HTML views are derived from
//! it, so highlighted spans always equal the sets in the report.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{encode_and_pad, tokenize};
use crate::error::{Error, Result};
use crate::explain::{annotate_features, select_ngrams, FeatureSets, NgramFeature};
use crate::lrp::{propagate, RatioRule};
use crate::model::CnnModel;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Span {
    pub channel: usize,
    pub start: usize,
    pub length: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportNgram {
    pub span: Span,
    pub text: String,
    /// Per-class relevance.
    pub contribution: Vec<f64>,
    /// Relevance to the predicted class.
    pub relevance: f64,
    pub polarity: String,
    #[serde(rename = "in_S")]
    pub in_sufficient: bool,
    #[serde(rename = "in_N")]
    pub in_necessary: bool,
}

/// One explained sentence. `ngrams` is ranked by relevance to the
/// predicted class, descending.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub text: String,
    pub predicted_class: usize,
    pub output: Vec<f64>,
    pub ngrams: Vec<ReportNgram>,
}

fn ranked_indices(features: &[NgramFeature]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (&features[a], &features[b]);
        fb.relevance
            .total_cmp(&fa.relevance)
            .then(fa.adjacency[0].cmp(&fb.adjacency[0]))
            .then(fa.channel.cmp(&fb.channel))
            .then(fa.start.cmp(&fb.start))
    });
    order
}

/// Runs the whole pipeline on one sentence: tokenize, forward, propagate
/// relevance, bind it to n-grams, and extract the sufficient and
/// necessary sets. A sentence with no tokens cannot be explained.
pub fn explain_text(model: &CnnModel, text: &str, rule: RatioRule) -> Result<ExplanationReport> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::DegenerateInput);
    }
    let ids = encode_and_pad(&tokens, &model.vocab, model.pad_length);
    let trace = model.forward(&ids)?;
    let relevance = propagate(model, &trace, rule)?;
    let mut features = select_ngrams(&trace, model);
    annotate_features(
        &mut features,
        &relevance,
        trace.predicted_class,
        model.output_activation,
    );
    let sets = FeatureSets::compute(model, &trace, &features)?;

    let mut in_sufficient = vec![false; features.len()];
    for &i in &sets.sufficient {
        in_sufficient[i] = true;
    }
    let mut in_necessary = vec![false; features.len()];
    for &i in &sets.necessary {
        in_necessary[i] = true;
    }

    let ngrams = ranked_indices(&features)
        .into_iter()
        .map(|i| {
            let f = &features[i];
            ReportNgram {
                span: Span {
                    channel: f.channel,
                    start: f.start,
                    length: f.length,
                },
                text: f.text.join(" "),
                contribution: f.contribution.clone(),
                relevance: f.relevance,
                polarity: f.polarity.as_str().to_string(),
                in_sufficient: in_sufficient[i],
                in_necessary: in_necessary[i],
            }
        })
        .collect();

    Ok(ExplanationReport {
        text: tokens.join(" "),
        predicted_class: trace.predicted_class,
        output: trace.output,
        ngrams,
    })
}

/// Pretty-printed JSON with a trailing newline. Key order and float
/// formatting are fixed, so equal reports give byte-equal output.
pub fn render_json(report: &ExplanationReport) -> String {
    let mut out = serde_json::to_string_pretty(report).expect("report serialization cannot fail");
    out.push('\n');
    out
}

/// Word positions covered by the flagged n-grams, clipped to the real
/// words of the sentence.
fn flagged_positions(
    report: &ExplanationReport,
    pick: fn(&ReportNgram) -> bool,
) -> BTreeSet<usize> {
    let n_words = report.text.split(' ').count();
    report
        .ngrams
        .iter()
        .filter(|g| pick(g))
        .flat_map(|g| g.span.start..g.span.start + g.span.length)
        .filter(|&t| t < n_words)
        .collect()
}

/// Maximal runs of consecutive positions, as half-open intervals.
fn merged_runs(positions: &BTreeSet<usize>) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &p in positions {
        match runs.last_mut() {
            Some((_, end)) if *end == p => *end = p + 1,
            _ => runs.push((p, p + 1)),
        }
    }
    runs
}

const RED: &str = "\x1b[31m";
const RESET: &str = "\x1b[0m";

/// Terminal rendering: sufficient words in red, necessary spans in
/// brackets, then the ranked n-gram table.
pub fn render_ansi(report: &ExplanationReport) -> String {
    let sufficient = flagged_positions(report, |g| g.in_sufficient);
    let necessary = merged_runs(&flagged_positions(report, |g| g.in_necessary));

    let words: Vec<String> = report
        .text
        .split(' ')
        .enumerate()
        .map(|(i, w)| {
            let mut piece = String::new();
            if necessary.iter().any(|&(s, _)| s == i) {
                piece.push('[');
            }
            if sufficient.contains(&i) {
                let _ = write!(piece, "{RED}{w}{RESET}");
            } else {
                piece.push_str(w);
            }
            if necessary.iter().any(|&(_, e)| e == i + 1) {
                piece.push(']');
            }
            piece
        })
        .collect();

    let mut out = String::new();
    let _ = writeln!(out, "predicted class: {}", report.predicted_class);
    let outputs: Vec<String> = report.output.iter().map(|v| format!("{v:.6}")).collect();
    let _ = writeln!(out, "output: [{}]", outputs.join(", "));
    let _ = writeln!(out, "{}", words.join(" "));
    let _ = writeln!(out, "(red = sufficient, [brackets] = necessary)");
    out.push('\n');
    let _ = writeln!(
        out,
        "{:>4}  {:>12}  {:<8}  {:>7}  {:>5}  {:>3}  S  N  text",
        "rank", "relevance", "polarity", "channel", "start", "len"
    );
    for (rank, g) in report.ngrams.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:>4}  {:>12.6}  {:<8}  {:>7}  {:>5}  {:>3}  {}  {}  {}",
            rank + 1,
            g.relevance,
            g.polarity,
            g.span.channel,
            g.span.start,
            g.span.length,
            if g.in_sufficient { "*" } else { "." },
            if g.in_necessary { "*" } else { "." },
            g.text,
        );
    }
    out
}

fn escape_html(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(ch),
        }
    }
    out
}

/// Standalone HTML page with the same highlighting as the ANSI view.
pub fn render_html(report: &ExplanationReport) -> String {
    let sufficient = flagged_positions(report, |g| g.in_sufficient);
    let necessary = merged_runs(&flagged_positions(report, |g| g.in_necessary));

    let words: Vec<String> = report
        .text
        .split(' ')
        .enumerate()
        .map(|(i, w)| {
            let mut piece = String::new();
            if necessary.iter().any(|&(s, _)| s == i) {
                piece.push_str("<span class=\"necessary\">");
            }
            if sufficient.contains(&i) {
                let _ = write!(
                    piece,
                    "<span class=\"sufficient\">{}</span>",
                    escape_html(w)
                );
            } else {
                piece.push_str(&escape_html(w));
            }
            if necessary.iter().any(|&(_, e)| e == i + 1) {
                piece.push_str("</span>");
            }
            piece
        })
        .collect();

    let mut out = String::from(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n\
         <title>explanation</title>\n<style>\n\
         body { font-family: sans-serif; margin: 2rem; max-width: 60rem; }\n\
         .sufficient { color: #c0392b; font-weight: bold; }\n\
         .necessary { outline: 1px solid #2c3e50; padding: 0 0.15rem; }\n\
         table { border-collapse: collapse; margin-top: 1rem; }\n\
         th, td { border: 1px solid #bbb; padding: 0.25rem 0.6rem; text-align: left; }\n\
         </style>\n</head>\n<body>\n",
    );
    let outputs: Vec<String> = report.output.iter().map(|v| format!("{v:.6}")).collect();
    let _ = writeln!(
        out,
        "<p>predicted class <strong>{}</strong>, output [{}]</p>",
        report.predicted_class,
        outputs.join(", ")
    );
    let _ = writeln!(out, "<p class=\"sentence\">{}</p>", words.join(" "));
    let _ = writeln!(
        out,
        "<p>(<span class=\"sufficient\">red</span> = sufficient, \
         <span class=\"necessary\">outlined</span> = necessary)</p>"
    );
    out.push_str(
        "<table>\n<tr><th>rank</th><th>relevance</th><th>polarity</th><th>channel</th>\
         <th>start</th><th>length</th><th>S</th><th>N</th><th>text</th></tr>\n",
    );
    for (rank, g) in report.ngrams.iter().enumerate() {
        let _ = writeln!(
            out,
            "<tr><td>{}</td><td>{:.6}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td>\
             <td>{}</td><td>{}</td><td>{}</td></tr>",
            rank + 1,
            g.relevance,
            g.polarity,
            g.span.channel,
            g.span.start,
            g.span.length,
            if g.in_sufficient { "yes" } else { "" },
            if g.in_necessary { "yes" } else { "" },
            escape_html(&g.text),
        );
    }
    out.push_str("</table>\n</body>\n</html>\n");
    out
}
