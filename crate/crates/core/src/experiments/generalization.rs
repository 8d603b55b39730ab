//! Cross-class generalization grid: train on plain scores alone or on
//! plain plus drug-likeness-modified scores, evaluate both models on plain
//! and modified versions of selected held-out functions.
//!
//! Output is the 2x2 grid (training class x evaluation class) of mean r2
//! with standard deviation across the evaluated functions.

use serde::{Deserialize, Serialize};

use super::{
    mean_sd, r2, sample_indices, ExperimentError, FunctionSlice, MetricName, MetricRecord,
};
use crate::cnp::{function_tasks, predict, train, CnpConfig, CnpModel, TrainConfig};
use crate::data::{derive_modified_functions, SplitSpec, TaskTable, QED_SUFFIX};
use crate::seeding::derive_rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneralizationConfig {
    /// Held-out functions whose plain and modified versions are evaluated;
    /// must be a subset of ftest.
    pub eval_functions: Vec<String>,
    pub eval_context_size: usize,
    pub seed: u64,
}

pub struct GeneralizationOutput {
    pub records: Vec<MetricRecord>,
    /// Rows: trained on [plain, plain+modified]; columns: evaluated on
    /// [plain, modified]. Mean r2 across the evaluated functions.
    pub grid_mean: [[f64; 2]; 2],
    pub grid_sd: [[f64; 2]; 2],
    pub row_labels: [String; 2],
    pub col_labels: [String; 2],
    pub plain_model: CnpModel,
    pub mixed_model: CnpModel,
}

const TAG_PLAIN_INIT: u64 = 0x6E1;
const TAG_MIXED_INIT: u64 = 0x6E2;
const TAG_PLAIN_TRAIN: u64 = 0x6E3;
const TAG_MIXED_TRAIN: u64 = 0x6E4;
const TAG_CTX: u64 = 0x6E5;

pub fn run_generalization(
    table: &TaskTable,
    split: &SplitSpec,
    cnp_config: &CnpConfig,
    train_config: &TrainConfig,
    config: &GeneralizationConfig,
) -> Result<GeneralizationOutput, ExperimentError> {
    if config.eval_functions.is_empty() {
        return Err(ExperimentError::InvalidConfig {
            detail: "need at least one evaluation function".into(),
        });
    }
    for f in &config.eval_functions {
        if !split.ftest.contains(f) {
            return Err(ExperimentError::InvalidConfig {
                detail: format!("evaluation function `{f}` is not in ftest"),
            });
        }
    }

    // modified columns for the training functions (mixed training set) and
    // for the evaluated functions (modified evaluation class)
    let mut to_derive = split.ftrain.clone();
    to_derive.extend(config.eval_functions.iter().cloned());
    let derived = derive_modified_functions(table, &to_derive)?;

    let dtrain_mask = derived.molecule_mask(&split.dtrain)?;
    let dtest_mask = derived.molecule_mask(&split.dtest)?;

    let plain_tasks = function_tasks(&derived, &split.ftrain, &dtrain_mask)?;
    let mut mixed_names = split.ftrain.clone();
    mixed_names.extend(split.ftrain.iter().map(|f| format!("{f}{QED_SUFFIX}")));
    let mixed_tasks = function_tasks(&derived, &mixed_names, &dtrain_mask)?;

    let mut plain_model =
        CnpModel::init(cnp_config, &mut derive_rng(config.seed, &[TAG_PLAIN_INIT]));
    train(
        &mut plain_model,
        &plain_tasks,
        train_config,
        &mut derive_rng(config.seed, &[TAG_PLAIN_TRAIN]),
        |_, _, _| {},
    )?;
    let mut mixed_model =
        CnpModel::init(cnp_config, &mut derive_rng(config.seed, &[TAG_MIXED_INIT]));
    train(
        &mut mixed_model,
        &mixed_tasks,
        train_config,
        &mut derive_rng(config.seed, &[TAG_MIXED_TRAIN]),
        |_, _, _| {},
    )?;

    let mut records = Vec::new();
    let mut per_cell: [[Vec<f64>; 2]; 2] = Default::default();
    for (f_idx, base_name) in config.eval_functions.iter().enumerate() {
        for (col, name) in [
            (0usize, base_name.clone()),
            (1usize, format!("{base_name}{QED_SUFFIX}")),
        ] {
            let pool = FunctionSlice::from_table(&derived, &name, &dtrain_mask)?;
            let eval = FunctionSlice::from_table(&derived, &name, &dtest_mask)?;
            if pool.len() < config.eval_context_size {
                return Err(ExperimentError::InvalidConfig {
                    detail: format!("`{name}` has too few dtrain observations"),
                });
            }
            let ctx_idx = sample_indices(
                &mut derive_rng(config.seed, &[TAG_CTX, f_idx as u64, col as u64]),
                pool.len(),
                config.eval_context_size,
            );
            let (ctx_fps, ctx_ys) = pool.select(&ctx_idx);
            for (row, model, model_name) in [
                (0usize, &plain_model, "cnp_plain"),
                (1usize, &mixed_model, "cnp_mixed"),
            ] {
                let dist = predict(model, &ctx_fps, &ctx_ys, &eval.fps)?;
                let value = r2(&eval.ys, &dist.means)?;
                per_cell[row][col].push(value);
                records.push(MetricRecord {
                    experiment: format!(
                        "generalize:{}",
                        if col == 0 { "plain" } else { "qed" }
                    ),
                    function_id: base_name.clone(),
                    model: model_name.to_string(),
                    x: config.eval_context_size as f64,
                    metric: MetricName::R2,
                    value: MetricRecord::checked_value(value),
                    dispersion: None,
                    seed: config.seed,
                });
            }
        }
    }

    let mut grid_mean = [[0.0; 2]; 2];
    let mut grid_sd = [[0.0; 2]; 2];
    for row in 0..2 {
        for col in 0..2 {
            let (mean, sd) = mean_sd(&per_cell[row][col]);
            grid_mean[row][col] = mean;
            grid_sd[row][col] = sd;
            records.push(MetricRecord {
                experiment: format!("generalize:{}", if col == 0 { "plain" } else { "qed" }),
                function_id: "all".to_string(),
                model: if row == 0 { "cnp_plain" } else { "cnp_mixed" }.to_string(),
                x: config.eval_context_size as f64,
                metric: MetricName::R2,
                value: MetricRecord::checked_value(mean),
                dispersion: Some(sd),
                seed: config.seed,
            });
        }
    }

    Ok(GeneralizationOutput {
        records,
        grid_mean,
        grid_sd,
        row_labels: ["plain".to_string(), "plain+qed".to_string()],
        col_labels: ["plain".to_string(), "qed".to_string()],
        plain_model,
        mixed_model,
    })
}

/// Render the grid as a small CSV (`trained_on` rows, eval columns).
pub fn format_grid_csv(out: &GeneralizationOutput) -> String {
    let mut text = String::from("trained_on,eval_plain_mean,eval_plain_sd,eval_qed_mean,eval_qed_sd\n");
    for row in 0..2 {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            out.row_labels[row],
            out.grid_mean[row][0],
            out.grid_sd[row][0],
            out.grid_mean[row][1],
            out.grid_sd[row][1]
        ));
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_task_family, SynthConfig};

    fn tiny_setup() -> (TaskTable, SplitSpec) {
        let table = synthetic_task_family(&SynthConfig {
            seed: 31,
            n_functions: 6,
            n_molecules: 80,
            nbits: 32,
            latent_dim: 3,
            noise_sd: 0.05,
        });
        let ids: Vec<String> = table.molecules().iter().map(|m| m.id.clone()).collect();
        let split = SplitSpec {
            dtrain: ids[..50].to_vec(),
            dtest: ids[50..].to_vec(),
            ftrain: table.functions()[..4].to_vec(),
            ftest: table.functions()[4..].to_vec(),
        };
        (table, split)
    }

    fn tiny_configs() -> (CnpConfig, TrainConfig) {
        (
            CnpConfig {
                nbits: 32,
                encoder_hidden: vec![12, 12],
                repr_dim: 6,
                decoder_hidden: vec![12, 12],
                variance_floor: 1e-6,
            },
            TrainConfig {
                epochs: 40,
                c_range: (3, 12),
                t_range: (12, 12),
                learning_rate: 3e-3,
                normalize: true,
            },
        )
    }

    #[test]
    fn grid_has_expected_shape_and_labels() {
        let (table, split) = tiny_setup();
        let (cnp, tc) = tiny_configs();
        let config = GeneralizationConfig {
            eval_functions: split.ftest.clone(),
            eval_context_size: 10,
            seed: 3,
        };
        let out = run_generalization(&table, &split, &cnp, &tc, &config).unwrap();
        assert_eq!(out.row_labels[0], "plain");
        assert_eq!(out.col_labels[1], "qed");
        // per-function records: 2 functions x 2 cols x 2 models, plus 4 aggregates
        assert_eq!(out.records.len(), 2 * 2 * 2 + 4);
        let csv = format_grid_csv(&out);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("trained_on,"));
    }

    #[test]
    fn eval_function_must_be_in_ftest() {
        let (table, split) = tiny_setup();
        let (cnp, tc) = tiny_configs();
        let config = GeneralizationConfig {
            eval_functions: vec![split.ftrain[0].clone()],
            eval_context_size: 10,
            seed: 3,
        };
        assert!(matches!(
            run_generalization(&table, &split, &cnp, &tc, &config),
            Err(ExperimentError::InvalidConfig { .. })
        ));
    }

    #[test]
    fn deterministic_under_seed() {
        let (table, split) = tiny_setup();
        let (cnp, tc) = tiny_configs();
        let config = GeneralizationConfig {
            eval_functions: vec![split.ftest[0].clone()],
            eval_context_size: 8,
            seed: 17,
        };
        let a = run_generalization(&table, &split, &cnp, &tc, &config).unwrap();
        let b = run_generalization(&table, &split, &cnp, &tc, &config).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.grid_mean, b.grid_mean);
    }
}
