//! Multi-channel 1D-CNN text classifier: embedding lookup, rectified
//! convolution per channel, global max-pooling, then a dense stack. The
//! forward pass records every intermediate the explanation pipeline reads,
//! including which n-gram position won each filter's pool.

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::matrix::{argmax, dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative as a function of the preactivation; the ReLU kink at 0
    /// takes subgradient 0.
    pub fn derivative(self, preactivation: f64) -> f64 {
        match self {
            Activation::Relu => {
                if preactivation > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Softmax,
    Logistic,
}

impl OutputActivation {
    pub fn apply(self, z: &[f64]) -> Vec<f64> {
        match self {
            OutputActivation::Softmax => {
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                exps.iter().map(|&e| e / sum).collect()
            }
            OutputActivation::Logistic => z.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// out_dim x in_dim, row per output unit.
    pub weights: Matrix,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct ConvChannel {
    pub kernel_size: usize,
    /// Each filter is kernel_size x d and spans the full embedding width.
    pub filters: Vec<Matrix>,
}

#[derive(Debug, Clone)]
pub struct CnnModel {
    pub vocab: Vocabulary,
    /// |V| x d; the pad row is all zeros and stays frozen in training.
    pub embedding: Matrix,
    pub channels: Vec<ConvChannel>,
    pub dense: Vec<DenseLayer>,
    pub output_activation: OutputActivation,
    pub pad_length: usize,
    pub pad_token_id: u32,
}

/// Everything one prediction computed, kept for explanation. Inhibition
/// masks live here, never in the model.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub token_ids: Vec<u32>,
    /// Per channel, an (n - l + 1) x m_ch matrix of rectified scores.
    pub feature_maps: Vec<Matrix>,
    /// Per global filter, the position whose n-gram won the pool.
    pub argmax_index: Vec<usize>,
    pub pooled: Vec<f64>,
    /// true = active, false = inhibited. All active after a plain forward.
    pub pooled_mask: Vec<bool>,
    /// z^k per dense layer, in layer order.
    pub preactivations: Vec<Vec<f64>>,
    /// h^k fed into dense layer k; index 0 is the masked pooled vector.
    pub dense_activations: Vec<Vec<f64>>,
    pub output: Vec<f64>,
    pub predicted_class: usize,
}

/// Dense-stack intermediates of one masked re-run.
#[derive(Debug, Clone)]
pub struct FcnnPass {
    pub preactivations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl CnnModel {
    pub fn embedding_dim(&self) -> usize {
        self.embedding.cols()
    }

    /// Total filter count across channels; the dense input width.
    pub fn filter_count(&self) -> usize {
        self.channels.iter().map(|c| c.filters.len()).sum()
    }

    pub fn class_count(&self) -> usize {
        self.dense.last().map_or(0, |l| l.weights.rows())
    }

    /// First global filter index belonging to the channel.
    pub fn channel_offset(&self, channel: usize) -> usize {
        self.channels[..channel]
            .iter()
            .map(|c| c.filters.len())
            .sum()
    }

    /// Maps a global filter index to (channel, index within channel).
    pub fn filter_channel(&self, global: usize) -> (usize, usize) {
        let mut rest = global;
        for (ch, channel) in self.channels.iter().enumerate() {
            if rest < channel.filters.len() {
                return (ch, rest);
            }
            rest -= channel.filters.len();
        }
        panic!("filter index {global} out of range");
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        let d = self.embedding_dim();
        if self.vocab.len() != self.embedding.rows() {
            return bad(format!(
                "vocabulary has {} entries but embedding has {} rows",
                self.vocab.len(),
                self.embedding.rows()
            ));
        }
        if d == 0 {
            return bad("embedding dimension is zero".into());
        }
        if self.pad_length == 0 {
            return bad("pad_length is zero".into());
        }
        if self.pad_token_id as usize >= self.vocab.len() {
            return bad(format!(
                "pad token id {} outside vocabulary",
                self.pad_token_id
            ));
        }
        if self
            .embedding
            .row(self.pad_token_id as usize)
            .iter()
            .any(|&v| v != 0.0)
        {
            return bad("pad embedding row must be all zeros".into());
        }
        if !self.embedding.data().iter().all(|v| v.is_finite()) {
            return bad("non-finite embedding parameter".into());
        }
        if self.channels.is_empty() {
            return bad("model has no convolution channels".into());
        }
        for (ci, ch) in self.channels.iter().enumerate() {
            if ch.kernel_size == 0 || ch.kernel_size > self.pad_length {
                return bad(format!(
                    "channel {ci}: kernel size {} outside 1..={}",
                    ch.kernel_size, self.pad_length
                ));
            }
            if ch.filters.is_empty() {
                return bad(format!("channel {ci} has no filters"));
            }
            for (fi, f) in ch.filters.iter().enumerate() {
                if f.rows() != ch.kernel_size || f.cols() != d {
                    return bad(format!(
                        "channel {ci} filter {fi}: shape {}x{} does not match kernel {} x dim {}",
                        f.rows(),
                        f.cols(),
                        ch.kernel_size,
                        d
                    ));
                }
                if !f.data().iter().all(|v| v.is_finite()) {
                    return bad(format!("channel {ci} filter {fi}: non-finite parameter"));
                }
            }
        }
        if self.dense.is_empty() {
            return bad("model has no dense layers".into());
        }
        let mut width = self.filter_count();
        for (li, layer) in self.dense.iter().enumerate() {
            if layer.weights.cols() != width {
                return bad(format!(
                    "dense layer {li}: expects {} inputs, previous stage provides {width}",
                    layer.weights.cols()
                ));
            }
            if layer.biases.len() != layer.weights.rows() {
                return bad(format!(
                    "dense layer {li}: {} biases for {} units",
                    layer.biases.len(),
                    layer.weights.rows()
                ));
            }
            if !layer.weights.data().iter().all(|v| v.is_finite())
                || !layer.biases.iter().all(|v| v.is_finite())
            {
                return bad(format!("dense layer {li}: non-finite parameter"));
            }
            width = layer.weights.rows();
        }
        let last = self.dense.last().unwrap();
        if last.activation != Activation::Identity {
            return bad(
                "final dense layer must use the identity activation; the output \
                 activation is applied on top of it"
                    .into(),
            );
        }
        if width < 2 {
            return bad(format!("class count {width} is below 2"));
        }
        Ok(())
    }

    /// Embeds a padded id sequence into an n x d matrix.
    pub fn embed(&self, token_ids: &[u32]) -> Result<Matrix> {
        let mut out = Matrix::zeros(token_ids.len(), self.embedding_dim());
        for (r, &id) in token_ids.iter().enumerate() {
            let row = self
                .embedding
                .data()
                .get(id as usize * self.embedding_dim()..(id as usize + 1) * self.embedding_dim())
                .ok_or(Error::OutOfVocabularyId {
                    id,
                    vocab_size: self.vocab.len(),
                })?;
            out.row_mut(r).copy_from_slice(row);
        }
        Ok(out)
    }

    /// Runs the dense stack on a pooled vector, zeroing inhibited entries
    /// first. The model itself is never modified by inhibition.
    pub fn fcnn_forward(&self, pooled: &[f64], mask: &[bool]) -> Result<FcnnPass> {
        assert_eq!(pooled.len(), self.filter_count(), "pooled width mismatch");
        assert_eq!(mask.len(), pooled.len(), "mask width mismatch");
        let h0: Vec<f64> = pooled
            .iter()
            .zip(mask)
            .map(|(&v, &active)| if active { v } else { 0.0 })
            .collect();

        let layers = self.dense.len();
        let mut activations = vec![h0];
        let mut preactivations = Vec::with_capacity(layers);
        let mut output = Vec::new();
        for (k, layer) in self.dense.iter().enumerate() {
            let mut z = layer.weights.mul_vec(activations.last().unwrap());
            for (zi, &b) in z.iter_mut().zip(&layer.biases) {
                *zi += b;
            }
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::NumericOverflow {
                    context: "dense preactivation",
                });
            }
            if k + 1 == layers {
                output = self.output_activation.apply(&z);
            } else {
                activations.push(z.iter().map(|&v| layer.activation.apply(v)).collect());
            }
            preactivations.push(z);
        }
        if !output.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericOverflow { context: "output" });
        }
        Ok(FcnnPass {
            preactivations,
            activations,
            output,
        })
    }

    /// Full forward pass over a padded id sequence of exactly pad_length.
    pub fn forward(&self, token_ids: &[u32]) -> Result<ForwardTrace> {
        assert_eq!(
            token_ids.len(),
            self.pad_length,
            "input must be padded to pad_length"
        );
        let embedded = self.embed(token_ids)?;
        let mut feature_maps = Vec::with_capacity(self.channels.len());
        for channel in &self.channels {
            feature_maps.push(convolve(&embedded, channel)?);
        }
        let (pooled, argmax_index) = global_max_pool(&feature_maps);
        if !pooled.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericOverflow {
                context: "convolution",
            });
        }
        let mask = vec![true; pooled.len()];
        let pass = self.fcnn_forward(&pooled, &mask)?;
        let predicted_class = argmax(&pass.output);
        Ok(ForwardTrace {
            token_ids: token_ids.to_vec(),
            feature_maps,
            argmax_index,
            pooled,
            pooled_mask: mask,
            preactivations: pass.preactivations,
            dense_activations: pass.activations,
            output: pass.output,
            predicted_class,
        })
    }
}

/// Slides every filter of the channel over the embedded sentence. Entry
/// (i, j) is the rectified inner product of filter j with the embedding
/// rows i..i+l. Rectification happens here, before pooling.
pub fn convolve(embedded: &Matrix, channel: &ConvChannel) -> Result<Matrix> {
    let n = embedded.rows();
    let l = channel.kernel_size;
    if n < l {
        return Err(Error::SequenceShorterThanKernel {
            length: n,
            kernel: l,
        });
    }
    let positions = n - l + 1;
    let mut out = Matrix::zeros(positions, channel.filters.len());
    for (j, filter) in channel.filters.iter().enumerate() {
        for i in 0..positions {
            let mut score = 0.0;
            for r in 0..l {
                score += dot(embedded.row(i + r), filter.row(r));
            }
            out.set(i, j, score.max(0.0));
        }
    }
    Ok(out)
}

/// Per filter, the maximum rectified score and the position reaching it.
/// Ties go to the lowest position, which keeps pad-tail ties at the first
/// occurrence.
pub fn global_max_pool(feature_maps: &[Matrix]) -> (Vec<f64>, Vec<usize>) {
    let m: usize = feature_maps.iter().map(Matrix::cols).sum();
    let mut pooled = Vec::with_capacity(m);
    let mut argmax_index = Vec::with_capacity(m);
    for map in feature_maps {
        assert!(map.rows() > 0, "feature map with no positions");
        for j in 0..map.cols() {
            let mut best = 0usize;
            for i in 1..map.rows() {
                if map.get(i, j) > map.get(best, j) {
                    best = i;
                }
            }
            pooled.push(map.get(best, j));
            argmax_index.push(best);
        }
    }
    (pooled, argmax_index)
}
