//! Few-shot sweep: for each held-out function and context size `m`, the
//! trained CNP conditions on `m` points from the function's dtrain pool and
//! predicts dtest, while each baseline trains on the same `m` points and
//! predicts dtest.
//!
//! CNP error bars come from resampling the context; baseline error bars
//! come from reseeding model-internal randomness on a fixed canonical point
//! set, so deterministic baselines (KNN, FSS) report exactly zero
//! dispersion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    mean_sd, r2, sample_indices, ExperimentError, FunctionSlice, MetricName, MetricRecord,
    SurrogateModel,
};
use crate::baselines::{
    finetune_predict, knn_fit_predict, nn_fit_predict, pretrain_trunk, rf_fit, rf_predict,
    ForestConfig, KnnMetric, MlpConfig, PretrainConfig,
};
use crate::chem::Fingerprint;
use crate::cnp::CnpModel;
use crate::data::{SplitSpec, TaskTable};
use crate::seeding::{derive_rng, derive_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FewshotModel {
    Cnp,
    Knn,
    Fss,
    Rf,
    Nn,
    FinetunedNn,
}

impl std::fmt::Display for FewshotModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FewshotModel::Cnp => "cnp",
            FewshotModel::Knn => "knn",
            FewshotModel::Fss => "fss",
            FewshotModel::Rf => "rf",
            FewshotModel::Nn => "nn",
            FewshotModel::FinetunedNn => "finetuned_nn",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FewshotConfig {
    pub context_sizes: Vec<usize>,
    pub models: Vec<FewshotModel>,
    /// Context resamples (CNP) / reseeded training runs (stochastic
    /// baselines) per cell.
    pub n_repeats: usize,
    pub seed: u64,
    /// Neighbor count for the KNN baseline (clamped to the training size).
    pub knn_k: usize,
    pub rf: ForestConfig,
    pub mlp: MlpConfig,
    pub pretrain: PretrainConfig,
}

impl FewshotConfig {
    pub fn new(seed: u64) -> Self {
        FewshotConfig {
            context_sizes: vec![5, 10, 25, 100, 250, 1000],
            models: vec![
                FewshotModel::Cnp,
                FewshotModel::Knn,
                FewshotModel::Fss,
                FewshotModel::Rf,
                FewshotModel::Nn,
            ],
            n_repeats: 10,
            seed,
            knn_k: 5,
            rf: ForestConfig::default(),
            mlp: MlpConfig::default_for_depth(),
            pretrain: PretrainConfig::default_for_depth(),
        }
    }
}

const TAG_CNP: u64 = 1;
const TAG_BASE_POINTS: u64 = 2;
const TAG_RF: u64 = 3;
const TAG_NN: u64 = 4;
const TAG_FT: u64 = 5;

/// One aggregated r2 record per (held-out function, context size, model).
pub fn run_fewshot(
    table: &TaskTable,
    split: &SplitSpec,
    cnp: &CnpModel,
    config: &FewshotConfig,
) -> Result<Vec<MetricRecord>, ExperimentError> {
    if config.n_repeats == 0 || config.context_sizes.is_empty() {
        return Err(ExperimentError::InvalidConfig {
            detail: "need at least one repeat and one context size".into(),
        });
    }
    let dtrain_mask = table.molecule_mask(&split.dtrain)?;
    let dtest_mask = table.molecule_mask(&split.dtest)?;

    // the transfer baseline shares one pretrained trunk across all cells
    let trunk = if config.models.contains(&FewshotModel::FinetunedNn) {
        let mut rng = derive_rng(config.seed, &[TAG_FT]);
        Some(pretrain_trunk(table, split, &config.pretrain, &mut rng)?)
    } else {
        None
    };

    let mut records = Vec::new();
    for (f_idx, function) in split.ftest.iter().enumerate() {
        let pool = FunctionSlice::from_table(table, function, &dtrain_mask)?;
        let eval = FunctionSlice::from_table(table, function, &dtest_mask)?;
        for &m in &config.context_sizes {
            if m == 0 || m > pool.len() {
                return Err(ExperimentError::InvalidConfig {
                    detail: format!(
                        "context size {m} outside 1..={} for `{function}`",
                        pool.len()
                    ),
                });
            }
            // one canonical training set per cell, shared by all baselines
            let canonical = sample_indices(
                &mut derive_rng(config.seed, &[TAG_BASE_POINTS, f_idx as u64, m as u64]),
                pool.len(),
                m,
            );
            let (train_fps, train_ys) = pool.select(&canonical);

            for &model in &config.models {
                let scores: Vec<f64> = match model {
                    FewshotModel::Cnp => {
                        // resampled contexts; a full-pool context is a
                        // single deterministic resample
                        let repeats = if m == pool.len() { 1 } else { config.n_repeats };
                        (0..repeats)
                            .into_par_iter()
                            .map(|rep| {
                                let mut rng = derive_rng(
                                    config.seed,
                                    &[TAG_CNP, f_idx as u64, m as u64, rep as u64],
                                );
                                let idx = sample_indices(&mut rng, pool.len(), m);
                                let (ctx_fps, ctx_ys) = pool.select(&idx);
                                let dist = cnp.predict(&ctx_fps, &ctx_ys, &eval.fps)?;
                                r2(&eval.ys, &dist.means)
                            })
                            .collect::<Result<_, _>>()?
                    }
                    FewshotModel::Knn | FewshotModel::Fss => {
                        let (k, metric) = match model {
                            FewshotModel::Knn => (config.knn_k.min(m), KnnMetric::Hamming),
                            _ => (1, KnnMetric::Tanimoto),
                        };
                        let preds = knn_fit_predict(&train_fps, &train_ys, &eval.fps, k, metric)?;
                        let value = r2(&eval.ys, &preds)?;
                        vec![value; config.n_repeats]
                    }
                    FewshotModel::Rf => (0..config.n_repeats)
                        .into_par_iter()
                        .map(|rep| {
                            let tree_seed = derive_seed(
                                config.seed,
                                &[TAG_RF, f_idx as u64, m as u64, rep as u64],
                            );
                            let forest = rf_fit(&train_fps, &train_ys, &config.rf, tree_seed)?;
                            r2(&eval.ys, &rf_predict(&forest, &eval.fps))
                        })
                        .collect::<Result<_, _>>()?,
                    FewshotModel::Nn => (0..config.n_repeats)
                        .into_par_iter()
                        .map(|rep| {
                            let mut rng = derive_rng(
                                config.seed,
                                &[TAG_NN, f_idx as u64, m as u64, rep as u64],
                            );
                            let preds = nn_fit_predict(
                                &train_fps,
                                &train_ys,
                                &eval.fps,
                                &config.mlp,
                                &mut rng,
                            )?;
                            r2(&eval.ys, &preds)
                        })
                        .collect::<Result<_, _>>()?,
                    FewshotModel::FinetunedNn => {
                        let trunk = trunk.as_ref().expect("trunk pretrained above");
                        let points: Vec<(&Fingerprint, f64)> = train_fps
                            .iter()
                            .copied()
                            .zip(train_ys.iter().copied())
                            .collect();
                        (0..config.n_repeats)
                            .into_par_iter()
                            .map(|rep| {
                                let mut rng = derive_rng(
                                    config.seed,
                                    &[TAG_FT, f_idx as u64, m as u64, rep as u64],
                                );
                                let preds = finetune_predict(
                                    trunk,
                                    &points,
                                    &eval.fps,
                                    &config.pretrain,
                                    &mut rng,
                                )?;
                                r2(&eval.ys, &preds)
                            })
                            .collect::<Result<_, _>>()?
                    }
                };
                let (mean, sd) = mean_sd(&scores);
                records.push(MetricRecord {
                    experiment: "fewshot".to_string(),
                    function_id: function.clone(),
                    model: model.to_string(),
                    x: m as f64,
                    metric: MetricName::R2,
                    value: MetricRecord::checked_value(mean),
                    dispersion: Some(sd),
                    seed: config.seed,
                });
            }
        }
    }
    Ok(records)
}
