//! From filter relevance to explanations: maps pooled filters onto the
//! n-gram spans that won their pools, aggregates relevance per span,
//! assigns polarity, and extracts sufficient and necessary feature sets by
//! re-running the dense stack with pooled entries masked to zero.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lrp::RelevanceMatrix;
use crate::matrix::argmax;
use crate::model::{CnnModel, ForwardTrace, OutputActivation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
    Null,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Null => "null",
        }
    }
}

/// An n-gram selected by at least one filter's max-pool, with the
/// relevance its filters carried. Spans that reach into the pad tail are
/// kept; their text shows the pad marker.
#[derive(Debug, Clone)]
pub struct NgramFeature {
    pub channel: usize,
    /// Word position where the span starts.
    pub start: usize,
    /// Span length in words, the channel's kernel size.
    pub length: usize,
    pub text: Vec<String>,
    /// Global indices of the filters whose pool selected this span,
    /// ascending. Each filter appears in exactly one feature.
    pub adjacency: Vec<usize>,
    /// Per-class relevance, the sum of this feature's adjacency rows.
    pub contribution: Vec<f64>,
    /// Relevance to the predicted class.
    pub relevance: f64,
    pub polarity: Polarity,
    /// Class this feature contributes most to.
    pub explained_class: usize,
}

impl NgramFeature {
    /// Lowest filter index, the deterministic tie-breaker for sorts.
    fn min_filter(&self) -> usize {
        self.adjacency[0]
    }
}

/// Groups filters by the (channel, start) span their pool selected. Every
/// filter lands in exactly one feature; contributions are left zeroed for
/// [`aggregate_contributions`].
pub fn select_ngrams(trace: &ForwardTrace, model: &CnnModel) -> Vec<NgramFeature> {
    let mut spans: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for global in 0..model.filter_count() {
        let (channel, _) = model.filter_channel(global);
        let start = trace.argmax_index[global];
        spans.entry((channel, start)).or_default().push(global);
    }
    let classes = model.class_count();
    spans
        .into_iter()
        .map(|((channel, start), adjacency)| {
            let length = model.channels[channel].kernel_size;
            let text = trace.token_ids[start..start + length]
                .iter()
                .map(|&id| model.vocab.token(id).unwrap_or("?").to_string())
                .collect();
            NgramFeature {
                channel,
                start,
                length,
                text,
                adjacency,
                contribution: vec![0.0; classes],
                relevance: 0.0,
                polarity: Polarity::Null,
                explained_class: 0,
            }
        })
        .collect()
}

/// Sums each feature's adjacency rows of the relevance matrix into its
/// contribution vector.
pub fn aggregate_contributions(features: &mut [NgramFeature], relevance: &RelevanceMatrix) {
    for feature in features.iter_mut() {
        feature.contribution = vec![0.0; relevance.values.cols()];
        for &filter in &feature.adjacency {
            for (c, v) in feature.contribution.iter_mut().enumerate() {
                *v += relevance.values.get(filter, c);
            }
        }
    }
}

/// Relevance of a contribution vector to the predicted class. Softmax
/// outputs compete, so the other classes' mean is subtracted; logistic
/// outputs are independent and the predicted entry stands alone.
pub fn class_relevance(
    contribution: &[f64],
    predicted: usize,
    output_activation: OutputActivation,
) -> f64 {
    let c = contribution.len();
    assert!(c >= 2, "need at least two classes");
    match output_activation {
        OutputActivation::Softmax => {
            let others: f64 = contribution
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != predicted)
                .map(|(_, &v)| v)
                .sum();
            contribution[predicted] - others / (c as f64 - 1.0)
        }
        OutputActivation::Logistic => contribution[predicted],
    }
}

/// Polarity of the relevance sign plus the class the contribution vector
/// favors most.
pub fn polarity_and_explained_class(contribution: &[f64], relevance: f64) -> (Polarity, usize) {
    let polarity = if relevance > 0.0 {
        Polarity::Positive
    } else if relevance < 0.0 {
        Polarity::Negative
    } else {
        Polarity::Null
    };
    (polarity, argmax(contribution))
}

/// Fills contribution, relevance, polarity, and explained class for every
/// feature in one pass.
pub fn annotate_features(
    features: &mut [NgramFeature],
    relevance: &RelevanceMatrix,
    predicted: usize,
    output_activation: OutputActivation,
) {
    aggregate_contributions(features, relevance);
    for feature in features.iter_mut() {
        feature.relevance = class_relevance(&feature.contribution, predicted, output_activation);
        let (polarity, explained) =
            polarity_and_explained_class(&feature.contribution, feature.relevance);
        feature.polarity = polarity;
        feature.explained_class = explained;
    }
}

/// Re-runs the dense stack with the given pooled entries masked to zero
/// (on top of any mask already in the trace) and returns the new
/// prediction. Convolution is not recomputed; parameters are untouched.
pub fn inhibit_and_predict(
    model: &CnnModel,
    trace: &ForwardTrace,
    filters: &[usize],
) -> Result<usize> {
    let mut mask = trace.pooled_mask.clone();
    for &f in filters {
        mask[f] = false;
    }
    let pass = model.fcnn_forward(&trace.pooled, &mask)?;
    Ok(argmax(&pass.output))
}

fn positive_indices(features: &[NgramFeature]) -> Vec<usize> {
    (0..features.len())
        .filter(|&i| features[i].relevance > 0.0)
        .collect()
}

fn sort_by_relevance(features: &[NgramFeature], indices: &mut [usize], ascending: bool) {
    indices.sort_by(|&a, &b| {
        let fa = &features[a];
        let fb = &features[b];
        let ord = fa
            .relevance
            .total_cmp(&fb.relevance)
            .then(fb.min_filter().cmp(&fa.min_filter()));
        if ascending {
            ord
        } else {
            ord.reverse()
        }
    });
}

/// Greedy sufficient set: walks the positive features in ascending
/// relevance order, cumulatively inhibiting each one's filters; a feature
/// is dropped when the prediction survives the accumulated mask, and the
/// walk stops at the first flip. The survivors S (most relevant first) are
/// re-verified as a set before returning: inhibiting every positive
/// feature outside S must preserve the prediction.
pub fn sufficient_set(
    model: &CnnModel,
    trace: &ForwardTrace,
    features: &[NgramFeature],
) -> Result<Vec<usize>> {
    let p = trace.predicted_class;
    let baseline = inhibit_and_predict(model, trace, &[])?;
    if baseline != p {
        return Err(Error::InconsistentTrace {
            stored: p,
            reevaluated: baseline,
        });
    }

    let mut order = positive_indices(features);
    sort_by_relevance(features, &mut order, true);

    let mut dropped: Vec<usize> = Vec::new();
    let mut mask_filters: Vec<usize> = Vec::new();
    for &candidate in &order {
        let mut attempt = mask_filters.clone();
        attempt.extend_from_slice(&features[candidate].adjacency);
        if inhibit_and_predict(model, trace, &attempt)? == p {
            dropped.push(candidate);
            mask_filters = attempt;
        } else {
            break;
        }
    }

    let mut survivors: Vec<usize> = order
        .iter()
        .copied()
        .filter(|i| !dropped.contains(i))
        .collect();
    sort_by_relevance(features, &mut survivors, false);

    let verify = inhibit_and_predict(model, trace, &mask_filters)?;
    if verify != p {
        return Err(Error::InconsistentTrace {
            stored: p,
            reevaluated: verify,
        });
    }
    Ok(survivors)
}

/// Necessary set: each positive feature is inhibited alone, in descending
/// relevance order; it is necessary exactly when the prediction flips.
pub fn necessary_set(
    model: &CnnModel,
    trace: &ForwardTrace,
    features: &[NgramFeature],
) -> Result<Vec<usize>> {
    let p = trace.predicted_class;
    let mut order = positive_indices(features);
    sort_by_relevance(features, &mut order, false);

    let mut necessary = Vec::new();
    for &candidate in &order {
        if inhibit_and_predict(model, trace, &features[candidate].adjacency)? != p {
            necessary.push(candidate);
        }
    }
    Ok(necessary)
}

/// The positive/negative partition plus both extracted sets, all as
/// indices into the feature slice, each ordered by descending relevance.
#[derive(Debug, Clone)]
pub struct FeatureSets {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub sufficient: Vec<usize>,
    pub necessary: Vec<usize>,
    /// Total relevance carried by the sufficient set.
    pub sufficient_relevance: f64,
}

impl FeatureSets {
    pub fn compute(
        model: &CnnModel,
        trace: &ForwardTrace,
        features: &[NgramFeature],
    ) -> Result<FeatureSets> {
        let mut positives = positive_indices(features);
        sort_by_relevance(features, &mut positives, false);
        let mut negatives: Vec<usize> = (0..features.len())
            .filter(|&i| features[i].relevance < 0.0)
            .collect();
        sort_by_relevance(features, &mut negatives, false);

        let sufficient = sufficient_set(model, trace, features)?;
        let necessary = necessary_set(model, trace, features)?;
        let sufficient_relevance = sufficient.iter().map(|&i| features[i].relevance).sum();
        Ok(FeatureSets {
            positives,
            negatives,
            sufficient,
            necessary,
            sufficient_relevance,
        })
    }
}

/// Per-word relevance over the first `n_words` positions: each word gets
/// the summed relevance of the selected spans covering it. Words no
/// filter selected stay at exactly zero.
pub fn word_relevances(features: &[NgramFeature], n_words: usize) -> Vec<f64> {
    let mut scores = vec![0.0; n_words];
    for feature in features {
        let lo = feature.start.min(n_words);
        let hi = (feature.start + feature.length).min(n_words);
        for slot in &mut scores[lo..hi] {
            *slot += feature.relevance;
        }
    }
    scores
}
