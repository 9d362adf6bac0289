//! Writes a seeded synthetic sentiment corpus as TSV, ready for the
//! `train` subcommand.
//!
//! Usage: generate_corpus <path> [sentences] [seed]

use std::path::PathBuf;
use std::process::exit;

use relgram::corpus::{save_dataset, synthetic_sentiment};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(path) = args.first().map(PathBuf::from) else {
        eprintln!("usage: generate_corpus <path> [sentences] [seed]");
        exit(2);
    };
    let sentences: usize = args
        .get(1)
        .map_or(Ok(1000), |v| v.parse())
        .unwrap_or_else(|_| {
            eprintln!("sentences must be a number");
            exit(2);
        });
    let seed: u64 = args
        .get(2)
        .map_or(Ok(2024), |v| v.parse())
        .unwrap_or_else(|_| {
            eprintln!("seed must be a number");
            exit(2);
        });

    let dataset = synthetic_sentiment(sentences, seed);
    if let Err(e) = save_dataset(&dataset, &path) {
        eprintln!("error: {e}");
        exit(1);
    }
    println!(
        "wrote {} sentences over {} classes to {}",
        dataset.samples.len(),
        dataset.class_count(),
        path.display()
    );
}
