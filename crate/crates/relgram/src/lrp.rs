//! Relevance propagation through the dense stack, from the output units
//! back to the max-pooled filter vector.
//!
//! For a unit j receiving products z_ij = h_i * w_ij, a ratio rule assigns
//! each input a share of j's value. Three rules are provided:
//!
//! * `Lrp0` divides by the full preactivation, sum of products plus bias.
//!   Shares can exceed 1 in magnitude and flip sign when the denominator
//!   is negative.
//! * `LrpEps` is `Lrp0` with a stabilizer pushing the denominator away
//!   from zero, so tiny preactivations cannot blow up the shares.
//! * `LrpAdapted` divides by the sum of absolute products, bias excluded.
//!   Every share keeps the sign of its own product and the shares' absolute
//!   values sum to 1, at the price of exact conservation.
//!
//! Relevance starts at the output as ratio times post-activation output,
//! then folds backwards layer by layer as a matrix product until the
//! pooled vector is reached.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{CnnModel, ForwardTrace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioRule {
    Lrp0,
    LrpEps { epsilon: f64 },
    LrpAdapted,
}

impl RatioRule {
    pub const DEFAULT_EPSILON: f64 = 1e-6;

    pub fn eps_default() -> Self {
        RatioRule::LrpEps {
            epsilon: Self::DEFAULT_EPSILON,
        }
    }
}

/// Contribution of each max-pooled component (row) to each output class
/// (column), together with the rule and output vector that seeded it.
#[derive(Debug, Clone)]
pub struct RelevanceMatrix {
    pub values: Matrix,
    pub rule: RatioRule,
    /// The output vector used at the top of the propagation.
    pub seed: Vec<f64>,
}

impl RelevanceMatrix {
    /// CSV with one row per filter and one column per class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("filter");
        for j in 0..self.values.cols() {
            let _ = write!(out, ",class_{j}");
        }
        out.push('\n');
        for i in 0..self.values.rows() {
            let _ = write!(out, "{i}");
            for j in 0..self.values.cols() {
                let _ = write!(out, ",{}", self.values.get(i, j));
            }
            out.push('\n');
        }
        out
    }
}

/// Ratio matrix for one layer transition: entry (i, j) is input i's share
/// of unit j. A denominator of exactly zero yields an all-zero column
/// rather than an error; dead units carry no relevance.
pub fn layer_ratios(
    activations: &[f64],
    weights: &Matrix,
    biases: &[f64],
    rule: RatioRule,
) -> Matrix {
    let (out_dim, in_dim) = (weights.rows(), weights.cols());
    assert_eq!(activations.len(), in_dim, "activation width mismatch");
    assert_eq!(biases.len(), out_dim, "bias width mismatch");
    if let RatioRule::LrpEps { epsilon } = rule {
        assert!(epsilon > 0.0, "stabilizer must be positive");
    }

    let mut ratios = Matrix::zeros(in_dim, out_dim);
    let mut products = vec![0.0; in_dim];
    for (j, &bias) in biases.iter().enumerate() {
        let w = weights.row(j);
        for (p, (&h, &wij)) in products.iter_mut().zip(activations.iter().zip(w)) {
            *p = h * wij;
        }
        let denominator = match rule {
            RatioRule::Lrp0 => products.iter().sum::<f64>() + bias,
            RatioRule::LrpEps { epsilon } => {
                let z = products.iter().sum::<f64>() + bias;
                if z >= 0.0 {
                    z + epsilon
                } else {
                    z - epsilon
                }
            }
            RatioRule::LrpAdapted => products.iter().map(|p| p.abs()).sum(),
        };
        if denominator == 0.0 {
            continue;
        }
        for (i, &p) in products.iter().enumerate() {
            ratios.set(i, j, p / denominator);
        }
    }
    ratios
}

/// Relevance entering the top dense layer: the top-layer ratio matrix with
/// column j scaled by the post-activation output of class j.
pub fn seed_output(model: &CnnModel, trace: &ForwardTrace, rule: RatioRule) -> Matrix {
    let top = model.dense.len() - 1;
    let layer = &model.dense[top];
    let mut seeded = layer_ratios(
        &trace.dense_activations[top],
        &layer.weights,
        &layer.biases,
        rule,
    );
    for i in 0..seeded.rows() {
        for (j, &f) in trace.output.iter().enumerate() {
            seeded.set(i, j, seeded.get(i, j) * f);
        }
    }
    seeded
}

/// Propagates output relevance down to the pooled vector, producing the
/// filter-by-class relevance matrix.
pub fn propagate(
    model: &CnnModel,
    trace: &ForwardTrace,
    rule: RatioRule,
) -> Result<RelevanceMatrix> {
    if trace.dense_activations.len() != model.dense.len() {
        return Err(Error::LayerMismatch {
            trace_layers: trace.dense_activations.len(),
            model_layers: model.dense.len(),
        });
    }
    let mut relevance = seed_output(model, trace, rule);
    for k in (0..model.dense.len() - 1).rev() {
        let layer = &model.dense[k];
        let ratios = layer_ratios(
            &trace.dense_activations[k],
            &layer.weights,
            &layer.biases,
            rule,
        );
        relevance = ratios.matmul(&relevance);
    }
    debug_assert_eq!(relevance.rows(), model.filter_count());
    debug_assert_eq!(relevance.cols(), model.class_count());
    Ok(RelevanceMatrix {
        values: relevance,
        rule,
        seed: trace.output.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use crate::model::{Activation, ConvChannel, DenseLayer, OutputActivation};

    fn matrix(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    /// One hidden unit fed by four inputs whose products are -3, 2, 1, -1.
    fn four_product_setup() -> (Vec<f64>, Matrix, Vec<f64>) {
        let activations = vec![3.0, 2.0, 1.0, 1.0];
        let weights = matrix(&[&[-1.0, 1.0, 1.0, -1.0]]);
        (activations, weights, vec![0.0])
    }

    #[test]
    fn lrp0_ratios_divide_by_signed_sum() {
        let (h, w, b) = four_product_setup();
        let r = layer_ratios(&h, &w, &b, RatioRule::Lrp0);
        // Sum of products is -1, so shares flip sign and exceed 1.
        assert_eq!(
            (r.get(0, 0), r.get(1, 0), r.get(2, 0), r.get(3, 0)),
            (3.0, -2.0, -1.0, 1.0)
        );
    }

    #[test]
    fn adapted_ratios_keep_sign_and_normalize() {
        let (h, w, b) = four_product_setup();
        let r = layer_ratios(&h, &w, &b, RatioRule::LrpAdapted);
        let expected = [-3.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0, -1.0 / 7.0];
        for (i, &e) in expected.iter().enumerate() {
            assert!((r.get(i, 0) - e).abs() < 1e-15, "ratio {i}");
        }
        let abs_sum: f64 = (0..4).map(|i| r.get(i, 0).abs()).sum();
        assert!((abs_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_input_zero_bias_lrp0_ratio_is_one() {
        let r = layer_ratios(&[0.42], &matrix(&[&[1.7]]), &[0.0], RatioRule::Lrp0);
        assert_eq!(r.get(0, 0), 1.0);
    }

    #[test]
    fn zero_denominator_yields_zero_column() {
        // Products 1 and -1 cancel; bias 0.
        let r = layer_ratios(
            &[1.0, 1.0],
            &matrix(&[&[1.0, -1.0]]),
            &[0.0],
            RatioRule::Lrp0,
        );
        assert_eq!((r.get(0, 0), r.get(1, 0)), (0.0, 0.0));
        // Dead unit: all-zero activations under the adapted rule.
        let r = layer_ratios(
            &[0.0, 0.0],
            &matrix(&[&[1.0, -1.0]]),
            &[0.0],
            RatioRule::LrpAdapted,
        );
        assert_eq!((r.get(0, 0), r.get(1, 0)), (0.0, 0.0));
    }

    #[test]
    fn eps_rule_pushes_denominator_away_from_zero() {
        let h = [1.0, 1.0];
        let w = matrix(&[&[1.0, -0.999999999]]);
        let r0 = layer_ratios(&h, &w, &[0.0], RatioRule::Lrp0);
        let re = layer_ratios(&h, &w, &[0.0], RatioRule::LrpEps { epsilon: 1e-3 });
        assert!(r0.get(0, 0).abs() > 1e8);
        assert!(re.get(0, 0).abs() < 1e3);
    }

    #[test]
    fn eps_approaches_lrp0_when_denominator_is_healthy() {
        let h = [0.5, 2.0, 1.0];
        let w = matrix(&[&[1.0, 0.3, -0.2], &[0.4, 0.4, 0.4]]);
        let b = [0.25, -0.1];
        let r0 = layer_ratios(&h, &w, &b, RatioRule::Lrp0);
        let re = layer_ratios(&h, &w, &b, RatioRule::LrpEps { epsilon: 1e-12 });
        for i in 0..3 {
            for j in 0..2 {
                assert!((r0.get(i, j) - re.get(i, j)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn eps_sign_follows_the_preactivation() {
        // Negative preactivation: stabilizer subtracts, pushing further
        // from zero rather than across it.
        let r = layer_ratios(
            &[1.0],
            &matrix(&[&[-2.0]]),
            &[0.0],
            RatioRule::LrpEps { epsilon: 0.5 },
        );
        assert!((r.get(0, 0) - (-2.0 / -2.5)).abs() < 1e-15);
        let r = layer_ratios(
            &[1.0],
            &matrix(&[&[2.0]]),
            &[0.0],
            RatioRule::LrpEps { epsilon: 0.5 },
        );
        assert!((r.get(0, 0) - (2.0 / 2.5)).abs() < 1e-15);
    }

    /// Minimal model whose dense stack is fully hand-specified; the conv
    /// stage exists only to satisfy shape checks.
    fn dense_only_model(dense: Vec<DenseLayer>) -> CnnModel {
        let m = dense[0].weights.cols();
        CnnModel {
            vocab: Vocabulary::build(["w"]),
            embedding: matrix(&[&[0.0], &[0.0], &[1.0]]),
            channels: vec![ConvChannel {
                kernel_size: 1,
                filters: (0..m).map(|_| matrix(&[&[1.0]])).collect(),
            }],
            dense,
            output_activation: OutputActivation::Softmax,
            pad_length: 4,
            pad_token_id: 0,
        }
    }

    fn trace_for(model: &CnnModel, pooled: Vec<f64>) -> ForwardTrace {
        let mask = vec![true; pooled.len()];
        let pass = model.fcnn_forward(&pooled, &mask).unwrap();
        ForwardTrace {
            token_ids: vec![2; model.pad_length],
            feature_maps: Vec::new(),
            argmax_index: vec![0; pooled.len()],
            pooled: pooled.clone(),
            pooled_mask: mask,
            preactivations: pass.preactivations,
            dense_activations: pass.activations,
            output: pass.output.clone(),
            predicted_class: crate::matrix::argmax(&pass.output),
        }
    }

    #[test]
    fn seed_scales_top_ratios_by_output() {
        // Products 0.75 / 0.25 of unit 0; output column 0 is 0.6.
        let model = dense_only_model(vec![DenseLayer {
            weights: matrix(&[&[1.5, 0.5], &[1.0, 1.0]]),
            biases: vec![0.0, 0.0],
            activation: Activation::Identity,
        }]);
        let mut trace = trace_for(&model, vec![0.5, 0.5]);
        trace.output = vec![0.6, 0.4];
        let seeded = seed_output(&model, &trace, RatioRule::Lrp0);
        assert!((seeded.get(0, 0) - 0.45).abs() < 1e-15);
        assert!((seeded.get(1, 0) - 0.15).abs() < 1e-15);
        // Zero output means a zero column regardless of ratios.
        trace.output = vec![0.6, 0.0];
        let seeded = seed_output(&model, &trace, RatioRule::Lrp0);
        assert_eq!((seeded.get(0, 1), seeded.get(1, 1)), (0.0, 0.0));
    }

    #[test]
    fn single_layer_propagation_equals_seed() {
        let model = dense_only_model(vec![DenseLayer {
            weights: matrix(&[&[0.8, -0.3], &[0.2, 0.9]]),
            biases: vec![0.1, -0.2],
            activation: Activation::Identity,
        }]);
        let trace = trace_for(&model, vec![1.0, 2.0]);
        let rel = propagate(&model, &trace, RatioRule::Lrp0).unwrap();
        let seeded = seed_output(&model, &trace, RatioRule::Lrp0);
        assert_eq!(rel.values, seeded);
        assert_eq!(rel.seed, trace.output);
    }

    #[test]
    fn two_layer_propagation_matches_direct_composition() {
        let model = dense_only_model(vec![
            DenseLayer {
                weights: matrix(&[&[0.6, -0.4], &[0.3, 0.8]]),
                biases: vec![0.0, 0.0],
                activation: Activation::Relu,
            },
            DenseLayer {
                weights: matrix(&[&[1.1, 0.2], &[-0.5, 0.7]]),
                biases: vec![0.0, 0.0],
                activation: Activation::Identity,
            },
        ]);
        let trace = trace_for(&model, vec![1.5, 0.5]);
        let rel = propagate(&model, &trace, RatioRule::Lrp0).unwrap();

        // Direct composition, written independently of the matmul path:
        // R0[i][j] = sum_k ratio0[i][k] * ratio1[k][j] * f_j.
        let r0 = layer_ratios(
            &trace.dense_activations[0],
            &model.dense[0].weights,
            &model.dense[0].biases,
            RatioRule::Lrp0,
        );
        let r1 = layer_ratios(
            &trace.dense_activations[1],
            &model.dense[1].weights,
            &model.dense[1].biases,
            RatioRule::Lrp0,
        );
        for i in 0..2 {
            for j in 0..2 {
                let mut want = 0.0;
                for k in 0..2 {
                    want += r0.get(i, k) * r1.get(k, j) * trace.output[j];
                }
                assert!((rel.values.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_bias_lrp0_conserves_the_output() {
        let model = dense_only_model(vec![
            DenseLayer {
                weights: matrix(&[&[0.6, -0.4], &[0.3, 0.8]]),
                biases: vec![0.0, 0.0],
                activation: Activation::Relu,
            },
            DenseLayer {
                weights: matrix(&[&[1.1, 0.2], &[-0.5, 0.7]]),
                biases: vec![0.0, 0.0],
                activation: Activation::Identity,
            },
        ]);
        let trace = trace_for(&model, vec![1.5, 0.5]);
        let rel = propagate(&model, &trace, RatioRule::Lrp0).unwrap();
        for j in 0..2 {
            let col: f64 = (0..2).map(|i| rel.values.get(i, j)).sum();
            assert!(
                (col - trace.output[j]).abs() < 1e-9,
                "column {j}: {col} vs {}",
                trace.output[j]
            );
        }
    }

    #[test]
    fn scaling_the_seed_scales_the_column_exactly() {
        let model = dense_only_model(vec![
            DenseLayer {
                weights: matrix(&[&[0.6, -0.4], &[0.3, 0.8]]),
                biases: vec![0.2, 0.1],
                activation: Activation::Relu,
            },
            DenseLayer {
                weights: matrix(&[&[1.1, 0.2], &[-0.5, 0.7]]),
                biases: vec![-0.3, 0.4],
                activation: Activation::Identity,
            },
        ]);
        let trace = trace_for(&model, vec![1.5, 0.5]);
        let base = propagate(&model, &trace, RatioRule::LrpAdapted).unwrap();
        let mut scaled_trace = trace.clone();
        scaled_trace.output[1] *= 4.0;
        let scaled = propagate(&model, &scaled_trace, RatioRule::LrpAdapted).unwrap();
        for i in 0..2 {
            assert_eq!(scaled.values.get(i, 0), base.values.get(i, 0));
            assert_eq!(scaled.values.get(i, 1), 4.0 * base.values.get(i, 1));
        }
    }

    #[test]
    fn layer_mismatch_is_reported() {
        let model = dense_only_model(vec![DenseLayer {
            weights: matrix(&[&[0.8, -0.3], &[0.2, 0.9]]),
            biases: vec![0.0, 0.0],
            activation: Activation::Identity,
        }]);
        let mut trace = trace_for(&model, vec![1.0, 2.0]);
        trace.dense_activations.push(vec![0.0, 0.0]);
        assert!(matches!(
            propagate(&model, &trace, RatioRule::Lrp0),
            Err(Error::LayerMismatch { .. })
        ));
    }

    #[test]
    fn csv_export_has_one_row_per_filter() {
        let model = dense_only_model(vec![DenseLayer {
            weights: matrix(&[&[0.8, -0.3], &[0.2, 0.9]]),
            biases: vec![0.0, 0.0],
            activation: Activation::Identity,
        }]);
        let trace = trace_for(&model, vec![1.0, 2.0]);
        let rel = propagate(&model, &trace, RatioRule::Lrp0).unwrap();
        let csv = rel.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "filter,class_0,class_1");
        assert!(lines[1].starts_with("0,"));
        assert!(lines[2].starts_with("1,"));
    }

    #[test]
    #[should_panic(expected = "stabilizer must be positive")]
    fn eps_rule_rejects_nonpositive_epsilon() {
        layer_ratios(
            &[1.0],
            &matrix(&[&[1.0]]),
            &[0.0],
            RatioRule::LrpEps { epsilon: 0.0 },
        );
    }
}
