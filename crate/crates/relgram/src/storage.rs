//! Versioned JSON model files. Parameters are written as decimal literals
//! with full round-trip precision, so save followed by load reproduces
//! bit-identical 64-bit values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Activation, CnnModel, ConvChannel, DenseLayer, OutputActivation};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    pad_length: usize,
    pad_token: u32,
    vocab: Vec<String>,
    embedding: Vec<Vec<f64>>,
    channels: Vec<ChannelFile>,
    dense: Vec<DenseLayerFile>,
    output_activation: OutputActivation,
}

#[derive(Serialize, Deserialize)]
struct ChannelFile {
    kernel_size: usize,
    filters: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct DenseLayerFile {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    activation: Activation,
}

fn rectangular(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::InvalidModel(format!("{what} has ragged rows")));
    }
    Ok(Matrix::from_rows(rows))
}

pub fn model_to_json(model: &CnnModel) -> String {
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        pad_length: model.pad_length,
        pad_token: model.pad_token_id,
        vocab: model.vocab.tokens().to_vec(),
        embedding: model.embedding.to_nested(),
        channels: model
            .channels
            .iter()
            .map(|c| ChannelFile {
                kernel_size: c.kernel_size,
                filters: c.filters.iter().map(Matrix::to_nested).collect(),
            })
            .collect(),
        dense: model
            .dense
            .iter()
            .map(|l| DenseLayerFile {
                weights: l.weights.to_nested(),
                biases: l.biases.clone(),
                activation: l.activation,
            })
            .collect(),
        output_activation: model.output_activation,
    };
    let mut json = serde_json::to_string_pretty(&file).expect("model serialization cannot fail");
    json.push('\n');
    json
}

pub fn model_from_json(json: &str) -> Result<CnnModel> {
    let file: ModelFile = serde_json::from_str(json).map_err(|e| Error::Json {
        path: "<inline>".into(),
        source: e,
    })?;
    build(file)
}

fn build(file: ModelFile) -> Result<CnnModel> {
    if file.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: file.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let mut channels = Vec::with_capacity(file.channels.len());
    for (ci, ch) in file.channels.into_iter().enumerate() {
        let mut filters = Vec::with_capacity(ch.filters.len());
        for (fi, f) in ch.filters.into_iter().enumerate() {
            filters.push(rectangular(&f, &format!("channel {ci} filter {fi}"))?);
        }
        channels.push(ConvChannel {
            kernel_size: ch.kernel_size,
            filters,
        });
    }
    let mut dense = Vec::with_capacity(file.dense.len());
    for (li, layer) in file.dense.into_iter().enumerate() {
        dense.push(DenseLayer {
            weights: rectangular(&layer.weights, &format!("dense layer {li} weights"))?,
            biases: layer.biases,
            activation: layer.activation,
        });
    }
    let model = CnnModel {
        vocab: Vocabulary::from_token_list(file.vocab)?,
        embedding: rectangular(&file.embedding, "embedding")?,
        channels,
        dense,
        output_activation: file.output_activation,
        pad_length: file.pad_length,
        pad_token_id: file.pad_token,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &CnnModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_json(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<CnnModel> {
    let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&json).map_err(|e| Error::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    build(file)
}
