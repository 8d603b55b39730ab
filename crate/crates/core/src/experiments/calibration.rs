//! Regression and calibration tracking as training length grows.
//!
//! Trains the CNP on `(ftrain, dtrain)` episodes and, at each checkpoint
//! epoch, records r2 and average log-probability on the four split
//! quadrants. Context always comes from the function's dtrain observations
//! (what a user of the model would condition on); dtrain-quadrant targets
//! exclude the context points. Aggregate records carry the standard
//! deviation across functions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    avg_log_prob, mean_sd, r2, sample_indices, ExperimentError, FunctionSlice, MetricName,
    MetricRecord,
};
use crate::chem::Fingerprint;
use crate::cnp::{
    function_tasks, predict, train, CnpConfig, CnpModel, EpochRecord, TrainConfig,
};
use crate::data::{SplitSpec, TaskTable};
use crate::seeding::derive_rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Epochs at which quadrant metrics are recorded; 0 measures the
    /// untrained model. Checkpoints beyond the training schedule are
    /// rejected.
    pub checkpoints: Vec<usize>,
    /// Context points drawn (without replacement) from each function's
    /// dtrain observations; fixed per function across checkpoints.
    pub eval_context_size: usize,
    /// Cap on evaluation targets per quadrant cell (0 = use all).
    pub eval_max_targets: usize,
    /// Clone the model at this epoch (e.g. the selection epoch for
    /// downstream experiments).
    pub keep_model_at: Option<usize>,
    pub seed: u64,
}

pub struct CalibrationOutput {
    pub records: Vec<MetricRecord>,
    pub final_model: CnpModel,
    /// Model snapshot at `keep_model_at`, when requested and reached.
    pub kept_model: Option<CnpModel>,
    pub train_log: Vec<EpochRecord>,
}

const TAG_INIT: u64 = 0xCA11;
const TAG_CTX: u64 = 0xCA12;
const TAG_TGT: u64 = 0xCA13;
const TAG_TRAIN: u64 = 0xCA14;

struct EvalCell<'a> {
    function_id: String,
    in_ftrain: bool,
    ctx_fps: Vec<&'a Fingerprint>,
    ctx_ys: Vec<f64>,
    /// (quadrant d-split name, target fps, target ys)
    quadrants: Vec<(&'static str, Vec<&'a Fingerprint>, Vec<f64>)>,
}

pub fn run_calibration(
    table: &TaskTable,
    split: &SplitSpec,
    cnp_config: &CnpConfig,
    train_config: &TrainConfig,
    config: &CalibrationConfig,
) -> Result<CalibrationOutput, ExperimentError> {
    let max_checkpoint = config.checkpoints.iter().copied().max().unwrap_or(0);
    if max_checkpoint > train_config.epochs {
        return Err(ExperimentError::InvalidConfig {
            detail: format!(
                "checkpoint {max_checkpoint} beyond the {}-epoch schedule",
                train_config.epochs
            ),
        });
    }
    let dtrain_mask = table.molecule_mask(&split.dtrain)?;
    let dtest_mask = table.molecule_mask(&split.dtest)?;

    // fixed evaluation cells: context and target subsets per function
    let mut cells: Vec<EvalCell> = Vec::new();
    for (pos, (function, in_ftrain)) in split
        .ftrain
        .iter()
        .map(|f| (f, true))
        .chain(split.ftest.iter().map(|f| (f, false)))
        .enumerate()
    {
        let pool = FunctionSlice::from_table(table, function, &dtrain_mask)?;
        let held = FunctionSlice::from_table(table, function, &dtest_mask)?;
        if pool.len() <= config.eval_context_size {
            return Err(ExperimentError::InvalidConfig {
                detail: format!(
                    "`{function}` has {} dtrain observations, need more than the context size {}",
                    pool.len(),
                    config.eval_context_size
                ),
            });
        }
        let ctx_idx = sample_indices(
            &mut derive_rng(config.seed, &[TAG_CTX, pos as u64]),
            pool.len(),
            config.eval_context_size,
        );
        let (ctx_fps, ctx_ys) = pool.select(&ctx_idx);

        let in_ctx: std::collections::HashSet<usize> = ctx_idx.iter().copied().collect();
        let dtrain_rest: Vec<usize> =
            (0..pool.len()).filter(|i| !in_ctx.contains(i)).collect();
        let cap = |all: Vec<usize>, tag: u64| -> Vec<usize> {
            if config.eval_max_targets == 0 || all.len() <= config.eval_max_targets {
                all
            } else {
                let mut rng = derive_rng(config.seed, &[TAG_TGT, tag, pos as u64]);
                let picked = sample_indices(&mut rng, all.len(), config.eval_max_targets);
                picked.into_iter().map(|i| all[i]).collect()
            }
        };
        let dtrain_tgt = cap(dtrain_rest, 0);
        let dtest_tgt = cap((0..held.len()).collect(), 1);
        let (tr_fps, tr_ys) = pool.select(&dtrain_tgt);
        let (te_fps, te_ys) = held.select(&dtest_tgt);
        cells.push(EvalCell {
            function_id: function.clone(),
            in_ftrain,
            ctx_fps,
            ctx_ys,
            quadrants: vec![("dtrain", tr_fps, tr_ys), ("dtest", te_fps, te_ys)],
        });
    }

    let evaluate = |model: &CnpModel, epoch: usize| -> Result<Vec<MetricRecord>, ExperimentError> {
        let per_cell: Vec<Result<Vec<MetricRecord>, ExperimentError>> = cells
            .par_iter()
            .map(|cell| {
                let mut out = Vec::new();
                for (dsplit, fps, ys) in &cell.quadrants {
                    let dist = predict(model, &cell.ctx_fps, &cell.ctx_ys, fps)?;
                    let fsplit = if cell.in_ftrain { "ftrain" } else { "ftest" };
                    let experiment = format!("calibrate:{fsplit},{dsplit}");
                    let r2v = r2(ys, &dist.means)?;
                    let lpv = avg_log_prob(&dist, ys)?;
                    for (metric, value) in [(MetricName::R2, r2v), (MetricName::AvgLogProb, lpv)] {
                        out.push(MetricRecord {
                            experiment: experiment.clone(),
                            function_id: cell.function_id.clone(),
                            model: "cnp".to_string(),
                            x: epoch as f64,
                            metric,
                            value: MetricRecord::checked_value(value),
                            dispersion: None,
                            seed: config.seed,
                        });
                    }
                }
                Ok(out)
            })
            .collect();
        let mut records = Vec::new();
        for r in per_cell {
            records.extend(r?);
        }
        // aggregate across functions per quadrant and metric
        let mut aggregates = Vec::new();
        for fsplit in ["ftrain", "ftest"] {
            for dsplit in ["dtrain", "dtest"] {
                let experiment = format!("calibrate:{fsplit},{dsplit}");
                for metric in [MetricName::R2, MetricName::AvgLogProb] {
                    let values: Vec<f64> = records
                        .iter()
                        .filter(|r| r.experiment == experiment && r.metric == metric)
                        .filter_map(|r| r.value)
                        .collect();
                    if values.is_empty() {
                        continue;
                    }
                    let (mean, sd) = mean_sd(&values);
                    aggregates.push(MetricRecord {
                        experiment: experiment.clone(),
                        function_id: "all".to_string(),
                        model: "cnp".to_string(),
                        x: epoch as f64,
                        metric,
                        value: MetricRecord::checked_value(mean),
                        dispersion: Some(sd),
                        seed: config.seed,
                    });
                }
            }
        }
        records.extend(aggregates);
        Ok(records)
    };

    let mut model = CnpModel::init(cnp_config, &mut derive_rng(config.seed, &[TAG_INIT]));
    let tasks = function_tasks(table, &split.ftrain, &dtrain_mask)?;

    let mut records = Vec::new();
    if config.checkpoints.contains(&0) {
        records.extend(evaluate(&model, 0)?);
    }

    let mut kept: Option<CnpModel> = None;
    let mut eval_error: Option<ExperimentError> = None;
    let mut train_rng = derive_rng(config.seed, &[TAG_TRAIN]);
    let checkpoint_set: std::collections::HashSet<usize> =
        config.checkpoints.iter().copied().collect();
    let train_log = train(
        &mut model,
        &tasks,
        train_config,
        &mut train_rng,
        |epoch, m, _loss| {
            if eval_error.is_some() {
                return;
            }
            if checkpoint_set.contains(&epoch) {
                match evaluate(m, epoch) {
                    Ok(batch) => records.extend(batch),
                    Err(e) => eval_error = Some(e),
                }
            }
            if config.keep_model_at == Some(epoch) {
                kept = Some(m.clone());
            }
        },
    )
    .map_err(ExperimentError::Cnp)?;
    if let Some(e) = eval_error {
        return Err(e);
    }

    Ok(CalibrationOutput {
        records,
        final_model: model,
        kept_model: kept,
        train_log,
    })
}
