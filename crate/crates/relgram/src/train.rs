//! Mini-batch SGD trainer plus a finite-difference gradient checker, so
//! that desk-scale models exist to explain. Determinism is a design goal:
//! the same seed gives the same split, the same initialization, the same
//! shuffles, and therefore the same model.

use std::fmt::Write as _;

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{encode_and_pad, Dataset, Vocabulary};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Activation, CnnModel, ConvChannel, DenseLayer, OutputActivation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    CrossEntropy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
    #[serde(default)]
    pub loss: Loss,
    /// Fraction of samples that go to the training side, in (0, 1).
    pub split_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub kernel_size: usize,
    pub filters: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchSpec {
    pub embedding_dim: usize,
    pub channels: Vec<ChannelSpec>,
    /// Hidden dense widths between the pooled vector and the classes.
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub pad_length: usize,
    pub output_activation: OutputActivation,
}

/// Builds a model with uniformly sampled weights in [-init_scale,
/// init_scale], zero biases, and a zeroed pad embedding row. The same seed
/// always produces the same parameters.
pub fn init_model(
    arch: &ArchSpec,
    vocab: Vocabulary,
    classes: usize,
    seed: u64,
    init_scale: f64,
) -> Result<CnnModel> {
    let invalid = |msg: &str| Err(Error::InvalidConfig(msg.into()));
    if arch.embedding_dim == 0 {
        return invalid("embedding_dim must be positive");
    }
    if arch.pad_length == 0 {
        return invalid("pad_length must be positive");
    }
    if arch.channels.is_empty() {
        return invalid("at least one channel is required");
    }
    if arch
        .channels
        .iter()
        .any(|c| c.filters == 0 || c.kernel_size == 0 || c.kernel_size > arch.pad_length)
    {
        return invalid("every channel needs filters and a kernel within the pad length");
    }
    if arch.hidden.contains(&0) {
        return invalid("hidden layer widths must be positive");
    }
    if classes < 2 {
        return invalid("at least two classes are required");
    }
    if init_scale.is_nan() || init_scale < 0.0 {
        return invalid("init_scale must be non-negative");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-init_scale, init_scale);
    let d = arch.embedding_dim;

    let mut embedding = Matrix::zeros(vocab.len(), d);
    for v in embedding.data_mut() {
        *v = dist.sample(&mut rng);
    }
    for v in embedding.row_mut(crate::corpus::PAD_ID as usize) {
        *v = 0.0;
    }

    let channels = arch
        .channels
        .iter()
        .map(|spec| ConvChannel {
            kernel_size: spec.kernel_size,
            filters: (0..spec.filters)
                .map(|_| {
                    let mut f = Matrix::zeros(spec.kernel_size, d);
                    for v in f.data_mut() {
                        *v = dist.sample(&mut rng);
                    }
                    f
                })
                .collect(),
        })
        .collect::<Vec<_>>();

    let m: usize = arch.channels.iter().map(|c| c.filters).sum();
    let mut widths = vec![m];
    widths.extend_from_slice(&arch.hidden);
    widths.push(classes);
    let dense = widths
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let (input, output) = (w[0], w[1]);
            let mut weights = Matrix::zeros(output, input);
            for v in weights.data_mut() {
                *v = dist.sample(&mut rng);
            }
            DenseLayer {
                weights,
                biases: vec![0.0; output],
                activation: if k + 1 == widths.len() - 1 {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            }
        })
        .collect();

    let model = CnnModel {
        vocab,
        embedding,
        channels,
        dense,
        output_activation: arch.output_activation,
        pad_length: arch.pad_length,
        pad_token_id: crate::corpus::PAD_ID,
    };
    model.validate()?;
    Ok(model)
}

/// Gradient of one dense layer, shaped like the layer.
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

/// Gradients for every trainable parameter, shaped like the model. The
/// pad embedding row always stays zero.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub embedding: Matrix,
    pub filters: Vec<Vec<Matrix>>,
    pub dense: Vec<DenseGrads>,
}

impl Gradients {
    fn zeros_like(model: &CnnModel) -> Gradients {
        Gradients {
            embedding: Matrix::zeros(model.embedding.rows(), model.embedding.cols()),
            filters: model
                .channels
                .iter()
                .map(|c| {
                    c.filters
                        .iter()
                        .map(|f| Matrix::zeros(f.rows(), f.cols()))
                        .collect()
                })
                .collect(),
            dense: model
                .dense
                .iter()
                .map(|l| DenseGrads {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    fn scale(&mut self, factor: f64) {
        for v in self.embedding.data_mut() {
            *v *= factor;
        }
        for channel in &mut self.filters {
            for f in channel {
                for v in f.data_mut() {
                    *v *= factor;
                }
            }
        }
        for layer in &mut self.dense {
            for v in layer.weights.data_mut() {
                *v *= factor;
            }
            for v in &mut layer.biases {
                *v *= factor;
            }
        }
    }
}

fn logsumexp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Cross-entropy from the top-layer preactivations. Softmax outputs use
/// the categorical form, logistic outputs the per-unit binary form; both
/// share the gradient output minus one-hot.
fn loss_from_preactivations(z: &[f64], label: usize, activation: OutputActivation) -> f64 {
    match activation {
        OutputActivation::Softmax => logsumexp(z) - z[label],
        OutputActivation::Logistic => z.iter().map(|&zj| softplus(zj)).sum::<f64>() - z[label],
    }
}

/// Cross-entropy loss of one padded sample.
pub fn sample_loss(model: &CnnModel, token_ids: &[u32], label: usize) -> Result<f64> {
    let trace = model.forward(token_ids)?;
    Ok(loss_from_preactivations(
        trace.preactivations.last().unwrap(),
        label,
        model.output_activation,
    ))
}

/// Adds one sample's gradients into `grads` and returns (loss, correct).
fn accumulate_sample(
    model: &CnnModel,
    token_ids: &[u32],
    label: usize,
    grads: &mut Gradients,
) -> Result<(f64, bool)> {
    let c = model.class_count();
    if label >= c {
        return Err(Error::InvalidConfig(format!(
            "label {label} outside the {c} model classes"
        )));
    }
    let trace = model.forward(token_ids)?;
    let embedded = model.embed(token_ids)?;
    let loss = loss_from_preactivations(
        trace.preactivations.last().unwrap(),
        label,
        model.output_activation,
    );
    let correct = trace.predicted_class == label;

    // Softmax plus categorical CE and elementwise logistic plus binary CE
    // both differentiate to output minus one-hot at the top.
    let mut delta: Vec<f64> = trace
        .output
        .iter()
        .enumerate()
        .map(|(j, &o)| o - if j == label { 1.0 } else { 0.0 })
        .collect();

    for k in (0..model.dense.len()).rev() {
        let h_in = &trace.dense_activations[k];
        let layer_grads = &mut grads.dense[k];
        for (j, &dj) in delta.iter().enumerate() {
            layer_grads.biases[j] += dj;
            for (g, &h) in layer_grads.weights.row_mut(j).iter_mut().zip(h_in) {
                *g += dj * h;
            }
        }
        let dh = model.dense[k].weights.mul_vec_transposed(&delta);
        if k == 0 {
            backprop_into_conv(model, &trace, &embedded, token_ids, &dh, grads);
        } else {
            let act = model.dense[k - 1].activation;
            delta = dh
                .iter()
                .zip(&trace.preactivations[k - 1])
                .map(|(&g, &z)| g * act.derivative(z))
                .collect();
        }
    }
    Ok((loss, correct))
}

/// Routes the pooled gradient to each filter's winning n-gram block. Pools
/// that rectified to zero pass nothing (ReLU subgradient 0 at the kink),
/// and the pad embedding row is frozen.
fn backprop_into_conv(
    model: &CnnModel,
    trace: &crate::model::ForwardTrace,
    embedded: &Matrix,
    token_ids: &[u32],
    dpooled: &[f64],
    grads: &mut Gradients,
) {
    for (j, &g) in dpooled.iter().enumerate() {
        if g == 0.0 || trace.pooled[j] <= 0.0 {
            continue;
        }
        let (ch, local) = model.filter_channel(j);
        let start = trace.argmax_index[j];
        let filter = &model.channels[ch].filters[local];
        let l = model.channels[ch].kernel_size;
        for r in 0..l {
            let word = embedded.row(start + r);
            for (gf, &e) in grads.filters[ch][local].row_mut(r).iter_mut().zip(word) {
                *gf += g * e;
            }
            let id = token_ids[start + r];
            if id != model.pad_token_id {
                let target = grads.embedding.row_mut(id as usize);
                for (ge, &f) in target.iter_mut().zip(filter.row(r)) {
                    *ge += g * f;
                }
            }
        }
    }
}

/// Mean cross-entropy gradients over a batch of encoded samples.
pub fn backprop_grads(model: &CnnModel, batch: &[(Vec<u32>, usize)]) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut grads = Gradients::zeros_like(model);
    for (ids, label) in batch {
        accumulate_sample(model, ids, *label, &mut grads)?;
    }
    grads.scale(1.0 / batch.len() as f64);
    Ok(grads)
}

/// One plain SGD step; only parameter values change.
pub fn sgd_step(model: &mut CnnModel, grads: &Gradients, learning_rate: f64) {
    model.embedding.add_scaled(&grads.embedding, -learning_rate);
    for (channel, channel_grads) in model.channels.iter_mut().zip(&grads.filters) {
        for (filter, fg) in channel.filters.iter_mut().zip(channel_grads) {
            filter.add_scaled(fg, -learning_rate);
        }
    }
    for (layer, lg) in model.dense.iter_mut().zip(&grads.dense) {
        layer.weights.add_scaled(&lg.weights, -learning_rate);
        for (b, &g) in layer.biases.iter_mut().zip(&lg.biases) {
            *b -= learning_rate * g;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

pub fn history_to_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_acc\n");
    for s in history {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            s.epoch, s.train_loss, s.train_acc, s.val_acc
        );
    }
    out
}

/// Encodes a tokenized dataset against the model's vocabulary and pad
/// length, validating the labels.
pub fn encode_dataset(model: &CnnModel, dataset: &Dataset) -> Result<Vec<(Vec<u32>, usize)>> {
    let c = model.class_count();
    dataset
        .samples
        .iter()
        .map(|(tokens, label)| {
            if *label >= c {
                return Err(Error::InvalidConfig(format!(
                    "label {label} outside the {c} model classes"
                )));
            }
            Ok((
                encode_and_pad(tokens, &model.vocab, model.pad_length),
                *label,
            ))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub accuracy: f64,
    /// confusion[true_class][predicted_class] = count.
    pub confusion: Vec<Vec<usize>>,
    pub correct: usize,
    pub total: usize,
}

pub fn evaluate_encoded(model: &CnnModel, samples: &[(Vec<u32>, usize)]) -> Result<EvalSummary> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let c = model.class_count();
    let mut confusion = vec![vec![0usize; c]; c];
    let mut correct = 0;
    for (ids, label) in samples {
        let trace = model.forward(ids)?;
        confusion[*label][trace.predicted_class] += 1;
        if trace.predicted_class == *label {
            correct += 1;
        }
    }
    Ok(EvalSummary {
        accuracy: correct as f64 / samples.len() as f64,
        confusion,
        correct,
        total: samples.len(),
    })
}

/// Plain SGD over a seeded split of the dataset. The vocabulary and
/// architecture never change, only parameter values. Returns the snapshot
/// with the best validation accuracy together with the full history.
pub fn train(
    mut model: CnnModel,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(CnnModel, Vec<EpochStats>)> {
    if dataset.samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.samples.len() < 2 {
        return Err(Error::InvalidConfig(
            "need at least two samples to split for validation".into(),
        ));
    }
    if !(config.split_ratio > 0.0 && config.split_ratio < 1.0) {
        return Err(Error::InvalidConfig(
            "split_ratio must be inside (0, 1)".into(),
        ));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    if config.epochs == 0 {
        return Err(Error::InvalidConfig("epochs must be positive".into()));
    }
    if config.learning_rate.is_nan() || config.learning_rate < 0.0 {
        return Err(Error::InvalidConfig(
            "learning_rate must not be negative".into(),
        ));
    }
    let Loss::CrossEntropy = config.loss;

    let (train_part, val_part) = dataset.split(config.split_ratio, config.seed);
    let train_samples = encode_dataset(&model, &train_part)?;
    let val_samples = encode_dataset(&model, &val_part)?;

    // The epoch shuffler gets its own stream so it does not replay the
    // split permutation.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_model = model.clone();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut grads = Gradients::zeros_like(&model);
            for &i in chunk {
                let (ids, label) = &train_samples[i];
                let (loss, ok) = accumulate_sample(&model, ids, *label, &mut grads)?;
                loss_sum += loss;
                correct += ok as usize;
            }
            grads.scale(1.0 / chunk.len() as f64);
            sgd_step(&mut model, &grads, config.learning_rate);
        }
        let train_loss = loss_sum / train_samples.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let train_acc = correct as f64 / train_samples.len() as f64;
        let val_acc = evaluate_encoded(&model, &val_samples)?.accuracy;
        history.push(EpochStats {
            epoch,
            train_loss,
            train_acc,
            val_acc,
        });
        if val_acc > best_acc {
            best_acc = val_acc;
            best_model = model.clone();
        }
    }
    Ok((best_model, history))
}

/// Addresses one trainable scalar in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRef {
    Embedding {
        row: usize,
        col: usize,
    },
    Filter {
        channel: usize,
        filter: usize,
        row: usize,
        col: usize,
    },
    DenseWeight {
        layer: usize,
        row: usize,
        col: usize,
    },
    DenseBias {
        layer: usize,
        index: usize,
    },
}

/// Every trainable parameter; the frozen pad embedding row is excluded.
pub fn trainable_params(model: &CnnModel) -> Vec<ParamRef> {
    let mut out = Vec::new();
    let pad = model.pad_token_id as usize;
    for row in 0..model.embedding.rows() {
        if row == pad {
            continue;
        }
        for col in 0..model.embedding.cols() {
            out.push(ParamRef::Embedding { row, col });
        }
    }
    for (channel, ch) in model.channels.iter().enumerate() {
        for (filter, f) in ch.filters.iter().enumerate() {
            for row in 0..f.rows() {
                for col in 0..f.cols() {
                    out.push(ParamRef::Filter {
                        channel,
                        filter,
                        row,
                        col,
                    });
                }
            }
        }
    }
    for (layer, l) in model.dense.iter().enumerate() {
        for row in 0..l.weights.rows() {
            for col in 0..l.weights.cols() {
                out.push(ParamRef::DenseWeight { layer, row, col });
            }
        }
        for index in 0..l.biases.len() {
            out.push(ParamRef::DenseBias { layer, index });
        }
    }
    out
}

pub fn param_get(model: &CnnModel, p: ParamRef) -> f64 {
    match p {
        ParamRef::Embedding { row, col } => model.embedding.get(row, col),
        ParamRef::Filter {
            channel,
            filter,
            row,
            col,
        } => model.channels[channel].filters[filter].get(row, col),
        ParamRef::DenseWeight { layer, row, col } => model.dense[layer].weights.get(row, col),
        ParamRef::DenseBias { layer, index } => model.dense[layer].biases[index],
    }
}

pub fn param_set(model: &mut CnnModel, p: ParamRef, value: f64) {
    match p {
        ParamRef::Embedding { row, col } => model.embedding.set(row, col, value),
        ParamRef::Filter {
            channel,
            filter,
            row,
            col,
        } => model.channels[channel].filters[filter].set(row, col, value),
        ParamRef::DenseWeight { layer, row, col } => {
            model.dense[layer].weights.set(row, col, value)
        }
        ParamRef::DenseBias { layer, index } => model.dense[layer].biases[index] = value,
    }
}

pub fn gradient_entry(grads: &Gradients, p: ParamRef) -> f64 {
    match p {
        ParamRef::Embedding { row, col } => grads.embedding.get(row, col),
        ParamRef::Filter {
            channel,
            filter,
            row,
            col,
        } => grads.filters[channel][filter].get(row, col),
        ParamRef::DenseWeight { layer, row, col } => grads.dense[layer].weights.get(row, col),
        ParamRef::DenseBias { layer, index } => grads.dense[layer].biases[index],
    }
}

/// Central finite difference of the sample loss along one parameter.
pub fn numeric_gradient(
    model: &CnnModel,
    token_ids: &[u32],
    label: usize,
    p: ParamRef,
    epsilon: f64,
) -> Result<f64> {
    let base = param_get(model, p);
    let mut probe = model.clone();
    param_set(&mut probe, p, base + epsilon);
    let plus = sample_loss(&probe, token_ids, label)?;
    param_set(&mut probe, p, base - epsilon);
    let minus = sample_loss(&probe, token_ids, label)?;
    Ok((plus - minus) / (2.0 * epsilon))
}

/// Which nondifferentiable branches the forward pass took: pool winners,
/// pool positivity, and hidden ReLU activity. Two traces with equal
/// signatures lie on one smooth piece of the loss.
#[derive(PartialEq, Eq)]
struct BranchSignature {
    argmax: Vec<usize>,
    pool_active: Vec<bool>,
    relu_active: Vec<Vec<bool>>,
}

fn branch_signature(model: &CnnModel, trace: &crate::model::ForwardTrace) -> BranchSignature {
    let relu_active = model
        .dense
        .iter()
        .take(model.dense.len() - 1)
        .enumerate()
        .filter(|(_, l)| l.activation == Activation::Relu)
        .map(|(k, _)| trace.preactivations[k].iter().map(|&z| z > 0.0).collect())
        .collect();
    BranchSignature {
        argmax: trace.argmax_index.clone(),
        pool_active: trace.pooled.iter().map(|&v| v > 0.0).collect(),
        relu_active,
    }
}

/// Compares analytic gradients against central finite differences on up
/// to 200 randomly subsampled parameters (seeded, so reruns agree) and
/// returns the maximum relative error. Parameters whose nudge crosses a
/// pool-argmax or ReLU branch are skipped; the loss is not differentiable
/// there.
pub fn grad_check(
    model: &CnnModel,
    token_ids: &[u32],
    label: usize,
    epsilon_fd: f64,
) -> Result<f64> {
    assert!(epsilon_fd > 0.0, "step must be positive");
    let batch = vec![(token_ids.to_vec(), label)];
    let grads = backprop_grads(model, &batch)?;

    let mut params = trainable_params(model);
    if params.len() > 200 {
        params.shuffle(&mut ChaCha8Rng::seed_from_u64(0xC0FFEE));
        params.truncate(200);
    }

    let base_trace = model.forward(token_ids)?;
    let base_sig = branch_signature(model, &base_trace);

    let mut max_rel = 0.0f64;
    let mut probe = model.clone();
    for &p in &params {
        let base = param_get(model, p);
        param_set(&mut probe, p, base + epsilon_fd);
        let trace_plus = probe.forward(token_ids)?;
        param_set(&mut probe, p, base - epsilon_fd);
        let trace_minus = probe.forward(token_ids)?;
        param_set(&mut probe, p, base);

        if branch_signature(&probe, &trace_plus) != base_sig
            || branch_signature(&probe, &trace_minus) != base_sig
        {
            continue;
        }
        let loss_plus = loss_from_preactivations(
            trace_plus.preactivations.last().unwrap(),
            label,
            model.output_activation,
        );
        let loss_minus = loss_from_preactivations(
            trace_minus.preactivations.last().unwrap(),
            label,
            model.output_activation,
        );
        let numeric = (loss_plus - loss_minus) / (2.0 * epsilon_fd);
        let analytic = gradient_entry(&grads, p);
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
