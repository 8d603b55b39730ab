//! The benchmark harness: regression/calibration tracking over training
//! epochs, few-shot sweeps against the QSAR baselines, cross-class
//! generalization grids, and pool-based Bayesian optimization, with shared
//! metrics and deterministic CSV/JSON/SVG reporting.
//!
//! Runners parallelize across independent (function, seed, size) cells;
//! every cell draws randomness from an RNG stream derived from the master
//! seed and the cell coordinates, so reports are bit-identical across runs
//! and thread counts.

mod bo;
mod calibration;
mod fewshot;
mod generalization;
mod metrics;
mod report;

pub use bo::{
    bo_pool, iterations_to_minimum, run_bo, AcquisitionConfig, BoPoolItem, BoTraceRow, Strategy,
};
pub use calibration::{run_calibration, CalibrationConfig, CalibrationOutput};
pub use fewshot::{run_fewshot, FewshotConfig, FewshotModel};
pub use generalization::{
    format_grid_csv, run_generalization, GeneralizationConfig, GeneralizationOutput,
};
pub use metrics::{avg_log_prob, r2, rmse};
pub use report::{
    emit_report, format_bo_trace_csv, format_report_csv, parse_report_json, write_bo_trace_csv,
    write_svg_lines, ReportFormat,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::BaselineError;
use crate::chem::Fingerprint;
use crate::cnp::{predict, CnpError, CnpModel, PredictiveDistribution};
use crate::data::DataError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("y_true is constant; r2 is undefined")]
    ConstantTruth,
    #[error("pool of {have} molecules cannot cover {need} selections")]
    PoolExhausted { need: usize, have: usize },
    #[error("unknown function `{name}`")]
    UnknownFunction { name: String },
    #[error("no records to report")]
    EmptyReport,
    #[error("{path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid experiment config: {detail}")]
    InvalidConfig { detail: String },
    #[error(transparent)]
    Cnp(#[from] CnpError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Closed metric vocabulary of the report schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    R2,
    AvgLogProb,
    Rmse,
    BestSoFar,
}

impl std::fmt::Display for MetricName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MetricName::R2 => "r2",
            MetricName::AvgLogProb => "avg_log_prob",
            MetricName::Rmse => "rmse",
            MetricName::BestSoFar => "best_so_far",
        };
        f.write_str(s)
    }
}

/// One experiment measurement.
///
/// `value` is `None` when the measurement diverged (non-finite); finite
/// values are stored as-is. Aggregated records carry the dispersion
/// (standard deviation across functions, seeds or resamples, depending on
/// the experiment) and a synthetic `function_id` of `"all"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub experiment: String,
    pub function_id: String,
    pub model: String,
    /// Epoch, context size, or iteration, depending on the experiment.
    pub x: f64,
    pub metric: MetricName,
    pub value: Option<f64>,
    pub dispersion: Option<f64>,
    pub seed: u64,
}

impl MetricRecord {
    /// Flag non-finite measurements as divergent (`value = None`).
    pub fn checked_value(v: f64) -> Option<f64> {
        v.is_finite().then_some(v)
    }

    pub fn is_divergent(&self) -> bool {
        self.value.is_none()
    }

    /// Total order used by the report writers: experiment, function, model,
    /// x, metric, seed.
    pub(crate) fn sort_key(&self) -> impl Ord + '_ {
        (
            self.experiment.as_str(),
            self.function_id.as_str(),
            self.model.as_str(),
            OrdF64(self.x),
            self.metric.to_string(),
            self.seed,
        )
    }
}

/// Finite-float ordering helper for sort keys.
#[derive(PartialEq, PartialOrd)]
pub(crate) struct OrdF64(pub f64);

impl Eq for OrdF64 {}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.partial_cmp(&other.0).expect("finite x values")
    }
}

/// Anything that maps (context, targets) to a Gaussian predictive
/// distribution. The conditional neural process is the production
/// implementation; tests substitute oracles.
pub trait SurrogateModel: Sync {
    fn predict(
        &self,
        context_x: &[&Fingerprint],
        context_y: &[f64],
        target_x: &[&Fingerprint],
    ) -> Result<PredictiveDistribution, ExperimentError>;
}

impl SurrogateModel for CnpModel {
    fn predict(
        &self,
        context_x: &[&Fingerprint],
        context_y: &[f64],
        target_x: &[&Fingerprint],
    ) -> Result<PredictiveDistribution, ExperimentError> {
        Ok(predict(self, context_x, context_y, target_x)?)
    }
}

/// Mean and (population) standard deviation of a sample; the dispersion
/// statistic used for all error bars.
pub(crate) fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-function observation view used by the runners: parallel fingerprint
/// and score slices, in stable molecule order.
pub(crate) struct FunctionSlice<'a> {
    pub fps: Vec<&'a Fingerprint>,
    pub ys: Vec<f64>,
}

impl<'a> FunctionSlice<'a> {
    pub fn from_table(
        table: &'a crate::data::TaskTable,
        function: &str,
        mask: &[bool],
    ) -> Result<Self, ExperimentError> {
        let f = table
            .function_index(function)
            .ok_or_else(|| ExperimentError::UnknownFunction {
                name: function.to_string(),
            })?;
        let mut fps = Vec::new();
        let mut ys = Vec::new();
        for (m, y) in table.observations_masked(f, mask) {
            let mol = &table.molecules()[m];
            let fp = mol.fingerprint.as_ref().ok_or(ExperimentError::Cnp(
                CnpError::MissingFingerprint { id: mol.id.clone() },
            ))?;
            fps.push(fp);
            ys.push(y);
        }
        Ok(FunctionSlice { fps, ys })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    /// Subset by indices.
    pub fn select(&self, idx: &[usize]) -> (Vec<&'a Fingerprint>, Vec<f64>) {
        (
            idx.iter().map(|&i| self.fps[i]).collect(),
            idx.iter().map(|&i| self.ys[i]).collect(),
        )
    }
}

/// Draw `m` distinct indices out of `0..n` (all of them when `m >= n`),
/// in draw order.
pub(crate) fn sample_indices(
    rng: &mut rand_chacha::ChaCha8Rng,
    n: usize,
    m: usize,
) -> Vec<usize> {
    if m >= n {
        return (0..n).collect();
    }
    rand::seq::index::sample(rng, n, m).into_vec()
}
