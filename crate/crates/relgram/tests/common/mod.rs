//! Shared machinery for the integration suite: seeded random models and
//! inputs, and one trained sentiment model reused by several checks.

use std::sync::OnceLock;
use std::time::Duration;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use relgram::corpus::{load_dataset, save_dataset, synthetic_sentiment, Dataset, Vocabulary};
use relgram::matrix::Matrix;
use relgram::model::{
    Activation, CnnModel, ConvChannel, DenseLayer, ForwardTrace, OutputActivation,
};
use relgram::train::{init_model, train, ArchSpec, ChannelSpec, Loss, TrainConfig};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let dist = Uniform::new_inclusive(-scale, scale);
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = dist.sample(rng);
    }
    m
}

/// A small random model: 1 to 3 channels, 2 or 3 dense layers, at most
/// 24 filters and 6 classes. Biases are zeroed when asked, so relevance
/// conservation holds exactly.
pub fn random_model(rng: &mut ChaCha8Rng, zero_bias: bool) -> CnnModel {
    let d = rng.gen_range(2..=5);
    let pad_length = rng.gen_range(4..=10);
    let vocab_size = rng.gen_range(6..=16);
    let classes = rng.gen_range(2..=6);

    let tokens: Vec<String> = ["<pad>", "<unk>"]
        .into_iter()
        .map(String::from)
        .chain((2..vocab_size).map(|i| format!("w{i}")))
        .collect();
    let vocab = Vocabulary::from_token_list(tokens).unwrap();

    let mut embedding = random_matrix(rng, vocab_size, d, 1.0);
    for v in embedding.row_mut(0) {
        *v = 0.0;
    }

    let channels: Vec<ConvChannel> = (0..rng.gen_range(1..=3))
        .map(|_| {
            let kernel_size = rng.gen_range(1..=3usize.min(pad_length));
            ConvChannel {
                kernel_size,
                filters: (0..rng.gen_range(1..=8))
                    .map(|_| random_matrix(rng, kernel_size, d, 1.0))
                    .collect(),
            }
        })
        .collect();
    let m: usize = channels.iter().map(|c| c.filters.len()).sum();

    let depth = rng.gen_range(2..=3);
    let mut widths = vec![m];
    for _ in 0..depth - 1 {
        widths.push(rng.gen_range(2..=8));
    }
    widths.push(classes);
    let dense: Vec<DenseLayer> = widths
        .windows(2)
        .enumerate()
        .map(|(k, w)| DenseLayer {
            weights: random_matrix(rng, w[1], w[0], 1.0),
            biases: if zero_bias {
                vec![0.0; w[1]]
            } else {
                (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect()
            },
            activation: if k == depth - 1 {
                Activation::Identity
            } else {
                Activation::Relu
            },
        })
        .collect();

    let model = CnnModel {
        vocab,
        embedding,
        channels,
        dense,
        output_activation: if rng.gen_bool(0.7) {
            OutputActivation::Softmax
        } else {
            OutputActivation::Logistic
        },
        pad_length,
        pad_token_id: 0,
    };
    model.validate().expect("generated model is valid");
    model
}

/// A padded input with at least one real token.
pub fn random_input(rng: &mut ChaCha8Rng, model: &CnnModel) -> Vec<u32> {
    let n_real = rng.gen_range(1..=model.pad_length);
    let vocab_size = model.vocab.len() as u32;
    (0..model.pad_length)
        .map(|t| {
            if t < n_real {
                rng.gen_range(1..vocab_size)
            } else {
                0
            }
        })
        .collect()
}

/// True when every dense unit's relevance denominators are comfortably
/// away from zero at this trace, for both the plain and the
/// absolute-value rule.
pub fn denominators_healthy(model: &CnnModel, trace: &ForwardTrace) -> bool {
    for (k, layer) in model.dense.iter().enumerate() {
        let h = &trace.dense_activations[k];
        for j in 0..layer.weights.rows() {
            let mut signed = layer.biases[j];
            let mut absolute = 0.0;
            for (i, &hi) in h.iter().enumerate() {
                let z = hi * layer.weights.get(j, i);
                signed += z;
                absolute += z.abs();
            }
            if signed.abs() < 0.05 || absolute < 0.05 {
                return false;
            }
        }
    }
    true
}

/// Samples zero-bias models and inputs until the denominators are
/// healthy; degenerate draws are discarded, not patched.
pub fn healthy_zero_bias_probe(rng: &mut ChaCha8Rng) -> (CnnModel, Vec<u32>, ForwardTrace) {
    for _ in 0..10_000 {
        let model = random_model(rng, true);
        let input = random_input(rng, &model);
        let trace = model.forward(&input).expect("forward succeeds");
        if denominators_healthy(&model, &trace) {
            return (model, input, trace);
        }
    }
    panic!("could not sample a healthy model in 10000 attempts");
}

pub struct Fixture {
    pub model: CnnModel,
    pub test_part: Dataset,
    pub best_val_acc: f64,
    pub train_seconds: Duration,
}

const SPLIT_SEED: u64 = 42;
const SPLIT_RATIO: f64 = 0.8;

/// Trains the shared sentiment model once: 1000 synthetic sentences
/// written to and read back from TSV, 80/20 split, 3 channels with
/// kernels 1/2/3 and 8 filters each, 16-dim embeddings.
pub fn trained() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let tsv = dir.path().join("sentiment.tsv");
        save_dataset(&synthetic_sentiment(1000, 2024), &tsv).expect("write corpus");
        let dataset = load_dataset(&tsv).expect("read corpus");

        let arch = ArchSpec {
            embedding_dim: 16,
            channels: vec![
                ChannelSpec {
                    kernel_size: 1,
                    filters: 8,
                },
                ChannelSpec {
                    kernel_size: 2,
                    filters: 8,
                },
                ChannelSpec {
                    kernel_size: 3,
                    filters: 8,
                },
            ],
            hidden: vec![],
            pad_length: 20,
            output_activation: OutputActivation::Softmax,
        };
        let config = TrainConfig {
            learning_rate: 0.1,
            epochs: 80,
            batch_size: 16,
            seed: SPLIT_SEED,
            init_scale: 0.1,
            loss: Loss::CrossEntropy,
            split_ratio: SPLIT_RATIO,
        };

        let (train_part, test_part) = dataset.split(SPLIT_RATIO, SPLIT_SEED);
        let vocab = Vocabulary::build(
            train_part
                .samples
                .iter()
                .flat_map(|(tokens, _)| tokens.iter().map(String::as_str)),
        );
        let model = init_model(
            &arch,
            vocab,
            dataset.class_count(),
            config.seed,
            config.init_scale,
        )
        .expect("init");

        let started = std::time::Instant::now();
        let (model, history) = train(model, &dataset, &config).expect("training succeeds");
        let train_seconds = started.elapsed();
        let best_val_acc = history
            .iter()
            .map(|s| s.val_acc)
            .fold(f64::NEG_INFINITY, f64::max);

        Fixture {
            model,
            test_part,
            best_val_acc,
            train_seconds,
        }
    })
}
