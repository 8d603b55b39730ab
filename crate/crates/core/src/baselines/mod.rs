//! Supervised QSAR reference models: k-nearest neighbors, fingerprint
//! similarity search, random forest regression, a plain feed-forward
//! regressor, and the pretrain-then-fine-tune multi-output network.
//!
//! All fitting is deterministic under explicit seeds, and every tie
//! (neighbor distances, tree split gains) breaks by ascending stable index,
//! so repeated runs are bit-identical.

mod forest;
mod knn;
mod mlp;

pub use forest::{rf_fit, rf_predict, ForestConfig, ForestModel};
pub use knn::{knn_fit_predict, KnnMetric};
pub use mlp::{
    finetune_predict, nn_fit_predict, pretrain_finetune, pretrain_trunk, MlpConfig,
    MultiOutputNet, PretrainConfig,
};

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::chem::ChemError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("k = {k} exceeds the {n} training points")]
    KTooLarge { k: usize, n: usize },
    #[error("training inputs and labels differ in length: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("unknown function `{name}`")]
    UnknownFunction { name: String },
    #[error("molecule `{id}` has no fingerprint")]
    MissingFingerprint { id: String },
    #[error("loss became non-finite")]
    NonFiniteLoss,
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// One row of the shared predictions CSV
/// (`function_id,molecule_id,model,n_train_or_context,prediction,variance`).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub function_id: String,
    pub molecule_id: String,
    pub model: String,
    pub n_train_or_context: usize,
    pub prediction: f64,
    pub variance: Option<f64>,
}

pub fn format_predictions_csv(rows: &[PredictionRow]) -> String {
    let mut out = String::from("function_id,molecule_id,model,n_train_or_context,prediction,variance\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.function_id,
            r.molecule_id,
            r.model,
            r.n_train_or_context,
            r.prediction,
            r.variance.map(|v| v.to_string()).unwrap_or_default()
        ));
    }
    out
}

pub fn write_predictions_csv(path: &Path, rows: &[PredictionRow]) -> std::io::Result<()> {
    fs::write(path, format_predictions_csv(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_csv_schema() {
        let rows = vec![PredictionRow {
            function_id: "F2".into(),
            molecule_id: "m1".into(),
            model: "fss".into(),
            n_train_or_context: 10,
            prediction: -8.25,
            variance: None,
        }];
        let text = format_predictions_csv(&rows);
        assert_eq!(
            text,
            "function_id,molecule_id,model,n_train_or_context,prediction,variance\nF2,m1,fss,10,-8.25,\n"
        );
    }
}
