//! Tokenization, vocabulary building, and TSV dataset handling.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercases, splits on whitespace, trims leading and trailing ASCII
/// punctuation from each piece, and drops anything left empty. Idempotent:
/// re-tokenizing the joined output is a fixed point.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|ch: char| ch.is_ascii_punctuation())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Token table with two reserved slots: id 0 pads, id 1 absorbs unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds from a word stream in first-seen order, after the two
    /// reserved entries. Words equal to a reserved marker are skipped so
    /// the markers never alias real vocabulary.
    pub fn build<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut index = HashMap::new();
        for word in words {
            let word = word.as_ref();
            if word == PAD_TOKEN || word == UNK_TOKEN {
                continue;
            }
            if !index.contains_key(word) {
                index.insert(word.to_string(), tokens.len() as u32);
                tokens.push(word.to_string());
            }
        }
        Vocabulary { tokens, index }
    }

    /// Rebuilds from a full token list (position = id), as read from a
    /// model file. The first two entries are treated as pad and unknown
    /// regardless of their spelling.
    pub fn from_token_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::InvalidModel(
                "vocabulary needs at least the pad and unknown entries".into(),
            ));
        }
        let mut index = HashMap::new();
        for (id, token) in tokens.iter().enumerate().skip(2) {
            index.entry(token.clone()).or_insert(id as u32);
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Id for a word; unknown words and the reserved marker strings map to
    /// the unknown id.
    pub fn encode(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }
}

/// Encodes tokens and right-pads (or truncates, keeping the prefix) to
/// exactly `pad_length` ids.
pub fn encode_and_pad(tokens: &[String], vocab: &Vocabulary, pad_length: usize) -> Vec<u32> {
    assert!(pad_length >= 1, "pad_length must be at least 1");
    let mut ids: Vec<u32> = tokens
        .iter()
        .take(pad_length)
        .map(|t| vocab.encode(t))
        .collect();
    ids.resize(pad_length, PAD_ID);
    ids
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    /// Tokenized sentences with class indices.
    pub samples: Vec<(Vec<String>, usize)>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    /// Deterministic seeded shuffle-and-cut. The train part gets
    /// round(n * train_fraction) samples, clamped so neither side is empty
    /// when n >= 2.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        assert!(
            train_fraction > 0.0 && train_fraction < 1.0,
            "split fraction must be inside (0, 1)"
        );
        let n = self.samples.len();
        if n == 0 {
            return (self.clone(), self.clone());
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = (((n as f64) * train_fraction).round() as usize).clamp(1, n.max(2) - 1);
        let pick = |ix: &[usize]| Dataset {
            samples: ix.iter().map(|&i| self.samples[i].clone()).collect(),
            class_names: self.class_names.clone(),
        };
        (pick(&order[..cut]), pick(&order[cut..]))
    }
}

/// Reads a UTF-8 TSV dataset: one `sentence<TAB>label` pair per line, where
/// the label is a class index. An optional `#classes<TAB>name...` first
/// line declares class names; without it, names default to the indices
/// seen. Sentences that tokenize to nothing are dropped with a warning.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let shown = path.display().to_string();
    let mut class_names: Option<Vec<String>> = None;
    let mut samples = Vec::new();
    let mut max_label = None;

    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#classes\t") {
            class_names = Some(rest.split('\t').map(str::to_string).collect());
            continue;
        }
        let Some((text, label)) = line.rsplit_once('\t') else {
            return Err(Error::MalformedLine {
                path: shown,
                line: line_no,
                message: "expected sentence<TAB>label".into(),
            });
        };
        let label: usize = label.trim().parse().map_err(|_| Error::UnknownLabel {
            path: shown.clone(),
            line: line_no,
            label: label.to_string(),
        })?;
        if let Some(names) = &class_names {
            if label >= names.len() {
                return Err(Error::UnknownLabel {
                    path: shown,
                    line: line_no,
                    label: label.to_string(),
                });
            }
        }
        let tokens = tokenize(text);
        if tokens.is_empty() {
            log::warn!("{shown}:{line_no}: dropping sentence with no tokens");
            continue;
        }
        max_label = Some(max_label.map_or(label, |m: usize| m.max(label)));
        samples.push((tokens, label));
    }

    let class_names = class_names.unwrap_or_else(|| {
        (0..=max_label.unwrap_or(0))
            .map(|i| i.to_string())
            .collect()
    });
    Ok(Dataset {
        samples,
        class_names,
    })
}

/// Writes the TSV form read by [`load_dataset`], including the class-name
/// header. Tokens are joined with single spaces, which reload exactly.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("#classes");
    for name in &dataset.class_names {
        out.push('\t');
        out.push_str(name);
    }
    out.push('\n');
    for (tokens, label) in &dataset.samples {
        let _ = writeln!(out, "{}\t{}", tokens.join(" "), label);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

const POSITIVE_WORDS: &[&str] = &[
    "good",
    "great",
    "excellent",
    "fantastic",
    "wonderful",
    "amazing",
    "superb",
    "delightful",
    "charming",
    "solid",
];
const NEGATIVE_WORDS: &[&str] = &[
    "bad",
    "terrible",
    "awful",
    "horrible",
    "boring",
    "dreadful",
    "poor",
    "lousy",
    "disappointing",
    "weak",
];
const FILLER_WORDS: &[&str] = &[
    "the", "a", "this", "that", "movie", "film", "plot", "acting", "scene", "story", "ending",
    "was", "is", "it", "and", "very", "really", "quite", "pretty", "rather",
];

/// Generates a seeded two-class sentiment corpus. Each sentence carries one
/// or two opinion cues for its label; a cue is either a plain opinion word
/// or "not" plus a word of the opposite polarity, so bigram context matters
/// for some sentences.
pub fn synthetic_sentiment(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.gen_range(0..2usize);
        let same: &[&str] = if label == 1 {
            POSITIVE_WORDS
        } else {
            NEGATIVE_WORDS
        };
        let opposite: &[&str] = if label == 1 {
            NEGATIVE_WORDS
        } else {
            POSITIVE_WORDS
        };
        let n_units = rng.gen_range(4..=9);
        let n_cues = rng.gen_range(1..=2usize);
        let mut units: Vec<Vec<&str>> = Vec::with_capacity(n_units);
        for _ in 0..n_cues {
            if rng.gen_bool(0.3) {
                units.push(vec!["not", opposite[rng.gen_range(0..opposite.len())]]);
            } else {
                units.push(vec![same[rng.gen_range(0..same.len())]]);
            }
        }
        while units.len() < n_units {
            units.push(vec![FILLER_WORDS[rng.gen_range(0..FILLER_WORDS.len())]]);
        }
        units.shuffle(&mut rng);
        let tokens: Vec<String> = units.concat().iter().map(|s| s.to_string()).collect();
        samples.push((tokens, label));
    }
    Dataset {
        samples,
        class_names: vec!["negative".into(), "positive".into()],
    }
}
