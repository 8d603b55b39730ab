//! k-nearest-neighbor regression on binary fingerprints.
//!
//! With `k = 1` and the Tanimoto metric this is fingerprint similarity
//! search (FSS).

use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::chem::{hamming_distance, tanimoto, Fingerprint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KnnMetric {
    /// popcount(a XOR b); ranking-equivalent to squared Euclidean distance
    /// on binary vectors.
    Hamming,
    /// 1 - Tanimoto similarity.
    Tanimoto,
}

impl KnnMetric {
    fn distance(self, a: &Fingerprint, b: &Fingerprint) -> Result<f64, BaselineError> {
        Ok(match self {
            KnnMetric::Hamming => f64::from(hamming_distance(a, b)?),
            KnnMetric::Tanimoto => 1.0 - tanimoto(a, b)?,
        })
    }
}

/// Mean label of the `k` nearest training points per query; ties on
/// distance break by ascending training index.
pub fn knn_fit_predict(
    train_x: &[&Fingerprint],
    train_y: &[f64],
    query_x: &[&Fingerprint],
    k: usize,
    metric: KnnMetric,
) -> Result<Vec<f64>, BaselineError> {
    if train_x.is_empty() {
        return Err(BaselineError::EmptyTrainingSet);
    }
    if train_x.len() != train_y.len() {
        return Err(BaselineError::LengthMismatch {
            x: train_x.len(),
            y: train_y.len(),
        });
    }
    if k == 0 || k > train_x.len() {
        return Err(BaselineError::KTooLarge {
            k,
            n: train_x.len(),
        });
    }
    let mut out = Vec::with_capacity(query_x.len());
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(train_x.len());
    for query in query_x {
        scored.clear();
        for (i, fp) in train_x.iter().enumerate() {
            scored.push((metric.distance(query, fp)?, i));
        }
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mean = scored[..k].iter().map(|&(_, i)| train_y[i]).sum::<f64>() / k as f64;
        out.push(mean);
    }
    Ok(out)
}
