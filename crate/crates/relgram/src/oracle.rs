//! Independent baselines used to validate the analytic pipeline: a direct
//! rescan of all convolution scores, an exhaustive minimal-sufficient-set
//! search, and a word-occlusion scorer with rank/cosine agreement metrics.

use crate::error::{Error, Result};
use crate::explain::{inhibit_and_predict, NgramFeature};
use crate::model::{CnnModel, ForwardTrace};

/// Winning span and score per global filter, recomputed position by
/// position without the pooling code path. Ties go to the lowest start,
/// matching the pool.
pub fn brute_force_ngram_selection(
    model: &CnnModel,
    token_ids: &[u32],
) -> Result<Vec<(usize, usize, f64)>> {
    let embedded = model.embed(token_ids)?;
    let n = token_ids.len();
    let mut winners = Vec::with_capacity(model.filter_count());
    for (channel_idx, channel) in model.channels.iter().enumerate() {
        let l = channel.kernel_size;
        if n < l {
            return Err(Error::SequenceShorterThanKernel {
                length: n,
                kernel: l,
            });
        }
        for filter in &channel.filters {
            let mut best_start = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for start in 0..=(n - l) {
                // Row sums are accumulated separately and then added, the
                // same association the measured path uses, so equal
                // scores are bit-equal and near-ties cannot diverge.
                let mut raw = 0.0;
                for r in 0..l {
                    let mut row = 0.0;
                    for (e, f) in embedded.row(start + r).iter().zip(filter.row(r)) {
                        row += e * f;
                    }
                    raw += row;
                }
                let score = raw.max(0.0);
                if score > best_score {
                    best_score = score;
                    best_start = start;
                }
            }
            winners.push((channel_idx, best_start, best_score));
        }
    }
    Ok(winners)
}

/// Exhaustive search over subsets of the positive features: the smallest
/// size whose kept subset (everything else inhibited) preserves the
/// prediction, plus every witness of that size. Witnesses are indices
/// into the feature slice.
pub fn brute_force_min_sufficient(
    model: &CnnModel,
    trace: &ForwardTrace,
    features: &[NgramFeature],
    cap: usize,
) -> Result<(usize, Vec<Vec<usize>>)> {
    let positives: Vec<usize> = (0..features.len())
        .filter(|&i| features[i].relevance > 0.0)
        .collect();
    let k = positives.len();
    if k > cap {
        return Err(Error::TooLargeForOracle { size: k, cap });
    }
    let p = trace.predicted_class;

    for size in 0..=k {
        let mut witnesses = Vec::new();
        for kept in combinations(k, size) {
            let inhibited: Vec<usize> = positives
                .iter()
                .enumerate()
                .filter(|(slot, _)| !kept.contains(slot))
                .flat_map(|(_, &fi)| features[fi].adjacency.iter().copied())
                .collect();
            if inhibit_and_predict(model, trace, &inhibited)? == p {
                witnesses.push(kept.iter().map(|&slot| positives[slot]).collect());
            }
        }
        if !witnesses.is_empty() {
            return Ok((size, witnesses));
        }
    }
    // Keeping all positives inhibits nothing, which preserves p, so the
    // loop always returns by size = k.
    unreachable!("full positive set must be sufficient");
}

/// All size-`r` subsets of 0..n in lexicographic order.
fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(r);
    fn walk(n: usize, r: usize, next: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == r {
            out.push(current.clone());
            return;
        }
        for i in next..n {
            if n - i < r - current.len() {
                break;
            }
            current.push(i);
            walk(n, r, i + 1, current, out);
            current.pop();
        }
    }
    walk(n, r, 0, &mut current, &mut out);
    out
}

/// Importance of each real (non-pad) word as the prediction drop when
/// that word is replaced by pad: f_p(x) minus f_p(x with word t padded),
/// with p fixed to the unperturbed prediction.
pub fn occlusion_scores(model: &CnnModel, token_ids: &[u32]) -> Result<Vec<f64>> {
    let base = model.forward(token_ids)?;
    let p = base.predicted_class;
    let n_real = token_ids
        .iter()
        .take_while(|&&id| id != model.pad_token_id)
        .count();
    let mut scores = Vec::with_capacity(n_real);
    for t in 0..n_real {
        let mut perturbed = token_ids.to_vec();
        perturbed[t] = model.pad_token_id;
        let out = model.forward(&perturbed)?;
        scores.push(base.output[p] - out.output[p]);
    }
    Ok(scores)
}

/// Agreement between two per-word score vectors, or a marker when either
/// metric is undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Agreement {
    Defined { spearman: f64, cosine: f64 },
    Degenerate,
}

impl Agreement {
    pub fn spearman(&self) -> Option<f64> {
        match self {
            Agreement::Defined { spearman, .. } => Some(*spearman),
            Agreement::Degenerate => None,
        }
    }
}

/// Max-normalizes both vectors (dividing by the maximum absolute value,
/// signs kept) and compares them by Spearman rank correlation and cosine
/// similarity. All-zero or constant inputs, or fewer than two entries,
/// are degenerate: the correlation has no defined value there.
pub fn compare_distributions(a: &[f64], b: &[f64]) -> Agreement {
    assert_eq!(a.len(), b.len(), "score vectors must align");
    if a.len() < 2 {
        return Agreement::Degenerate;
    }
    let norm = |v: &[f64]| -> Option<Vec<f64>> {
        let max = v.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        (max > 0.0).then(|| v.iter().map(|&x| x / max).collect())
    };
    let (Some(na), Some(nb)) = (norm(a), norm(b)) else {
        return Agreement::Degenerate;
    };

    let (Some(spearman), Some(cosine)) =
        (spearman_correlation(&na, &nb), cosine_similarity(&na, &nb))
    else {
        return Agreement::Degenerate;
    };
    Agreement::Defined { spearman, cosine }
}

/// Ranks with ties averaged, starting at 1.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn spearman_correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (ma, mb) = (mean(a), mean(b));
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}
