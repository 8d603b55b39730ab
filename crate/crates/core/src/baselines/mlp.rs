//! Feed-forward regression baselines: a plain six-linear-layer net (same
//! depth as the encoder+decoder stack) and the transfer-learning variant
//! that pretrains a multi-output trunk on the training functions and
//! fine-tunes per target function.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::chem::Fingerprint;
use crate::cnp::Normalizer;
use crate::data::TaskTable;
use crate::data::SplitSpec;
use crate::nn::{adam_step, AdamState, DenseNet, Layer};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Hidden layer widths; with the output layer this gives
    /// `hidden.len() + 1` linear layers.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl MlpConfig {
    /// Six linear layers mirroring the encoder+decoder depth.
    pub fn default_for_depth() -> Self {
        MlpConfig {
            hidden: vec![256; 5],
            epochs: 400,
            learning_rate: 1e-3,
        }
    }
}

fn batch_rows(xs: &[&Fingerprint], nbits: usize) -> Result<Vec<f64>, BaselineError> {
    let mut rows = vec![0.0; xs.len() * nbits];
    for (i, fp) in xs.iter().enumerate() {
        if fp.nbits() != nbits {
            return Err(BaselineError::LengthMismatch {
                x: nbits,
                y: fp.nbits(),
            });
        }
        fp.write_reals(&mut rows[i * nbits..(i + 1) * nbits]);
    }
    Ok(rows)
}

/// Full-batch Adam on mean squared error; labels are standardized
/// internally and predictions returned in original units.
pub fn nn_fit_predict(
    train_x: &[&Fingerprint],
    train_y: &[f64],
    query_x: &[&Fingerprint],
    config: &MlpConfig,
    rng: &mut ChaCha8Rng,
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
    let nbits = train_x[0].nbits();
    let mut dims = vec![nbits];
    dims.extend(&config.hidden);
    dims.push(1);
    let mut net = DenseNet::new(&dims, rng);
    let normalizer = Normalizer::fit(train_y.iter().copied());

    let n = train_x.len();
    let rows = batch_rows(train_x, nbits)?;
    let targets: Vec<f64> = train_y.iter().map(|&y| normalizer.forward(y)).collect();
    let mut state = AdamState::new(&net, config.learning_rate);
    for _ in 0..config.epochs {
        let trace = net.forward_batch(&rows, n)?;
        let mut loss = 0.0;
        let mut upstream = vec![0.0; n];
        for (i, (&pred, &y)) in trace.output().iter().zip(&targets).enumerate() {
            let resid = pred - y;
            loss += resid * resid / n as f64;
            upstream[i] = 2.0 * resid / n as f64;
        }
        if !loss.is_finite() {
            return Err(BaselineError::NonFiniteLoss);
        }
        let (grads, _) = net.backward_batch(&rows, &trace, &upstream)?;
        adam_step(&mut net, &grads, &mut state)?;
    }

    let q_rows = batch_rows(query_x, nbits)?;
    let trace = net.forward_batch(&q_rows, query_x.len())?;
    Ok(trace
        .output()
        .iter()
        .map(|&p| normalizer.inverse_mean(p))
        .collect())
}

/// Pretrained multi-output trunk: one output per training function, plus
/// the label normalizer it was fit with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiOutputNet {
    pub net: DenseNet,
    pub function_ids: Vec<String>,
    pub normalizer: Normalizer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    /// Trunk hidden widths; the head adds the final linear layer.
    pub hidden: Vec<usize>,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Pretraining rate; fine-tuning runs at a tenth of it.
    pub learning_rate: f64,
}

impl PretrainConfig {
    pub fn default_for_depth() -> Self {
        PretrainConfig {
            hidden: vec![256; 5],
            pretrain_epochs: 400,
            finetune_epochs: 400,
            learning_rate: 1e-3,
        }
    }
}

/// Phase 1: train a multi-output net on `(dtrain x ftrain)` with masked
/// squared error (missing cells contribute no gradient; the loss divides by
/// the observed-cell count).
pub fn pretrain_trunk(
    table: &TaskTable,
    split: &SplitSpec,
    config: &PretrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MultiOutputNet, BaselineError> {
    let mask = table
        .molecule_mask(&split.dtrain)
        .map_err(|_| BaselineError::EmptyTrainingSet)?;
    let mol_rows: Vec<usize> = (0..table.molecules().len()).filter(|&m| mask[m]).collect();
    if mol_rows.is_empty() {
        return Err(BaselineError::EmptyTrainingSet);
    }
    let fps: Vec<&Fingerprint> = mol_rows
        .iter()
        .map(|&m| {
            table.molecules()[m]
                .fingerprint
                .as_ref()
                .ok_or_else(|| BaselineError::MissingFingerprint {
                    id: table.molecules()[m].id.clone(),
                })
        })
        .collect::<Result<_, _>>()?;
    let func_cols: Vec<usize> = split
        .ftrain
        .iter()
        .map(|name| {
            table
                .function_index(name)
                .ok_or_else(|| BaselineError::UnknownFunction { name: name.clone() })
        })
        .collect::<Result<_, _>>()?;

    let n = mol_rows.len();
    let width = func_cols.len();
    let mut labels: Vec<Option<f64>> = Vec::with_capacity(n * width);
    for &m in &mol_rows {
        for &f in &func_cols {
            labels.push(table.score(m, f));
        }
    }
    let normalizer = Normalizer::fit(labels.iter().flatten().copied());
    let observed = labels.iter().flatten().count();
    if observed == 0 {
        return Err(BaselineError::EmptyTrainingSet);
    }

    let nbits = fps[0].nbits();
    let mut dims = vec![nbits];
    dims.extend(&config.hidden);
    dims.push(width);
    let mut net = DenseNet::new(&dims, rng);
    let rows = batch_rows(&fps, nbits)?;
    let mut state = AdamState::new(&net, config.learning_rate);
    let inv = 1.0 / observed as f64;
    for _ in 0..config.pretrain_epochs {
        let trace = net.forward_batch(&rows, n)?;
        let mut loss = 0.0;
        let mut upstream = vec![0.0; n * width];
        for (cell, (&label, &pred)) in labels.iter().zip(trace.output()).enumerate() {
            if let Some(y) = label {
                let resid = pred - normalizer.forward(y);
                loss += resid * resid * inv;
                upstream[cell] = 2.0 * resid * inv;
            }
        }
        if !loss.is_finite() {
            return Err(BaselineError::NonFiniteLoss);
        }
        let (grads, _) = net.backward_batch(&rows, &trace, &upstream)?;
        adam_step(&mut net, &grads, &mut state)?;
    }
    Ok(MultiOutputNet {
        net,
        function_ids: split.ftrain.clone(),
        normalizer,
    })
}

/// Phase 2: swap the head for a fresh single output and continue training
/// all layers on the given points at a tenth of the pretraining rate.
pub fn finetune_predict(
    trunk: &MultiOutputNet,
    points: &[(&Fingerprint, f64)],
    query_x: &[&Fingerprint],
    config: &PretrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, BaselineError> {
    if points.is_empty() {
        return Err(BaselineError::EmptyTrainingSet);
    }
    let mut layers: Vec<Layer> = trunk.net.layers().to_vec();
    let head_in = layers
        .last()
        .map(|l| l.in_dim)
        .ok_or(BaselineError::EmptyTrainingSet)?;
    layers.pop();
    let fresh_head = DenseNet::new(&[head_in, 1], rng);
    layers.push(fresh_head.layers()[0].clone());
    let mut net = DenseNet::from_layers(layers);

    let nbits = net.input_dim();
    let fps: Vec<&Fingerprint> = points.iter().map(|&(fp, _)| fp).collect();
    let rows = batch_rows(&fps, nbits)?;
    let targets: Vec<f64> = points
        .iter()
        .map(|&(_, y)| trunk.normalizer.forward(y))
        .collect();
    let n = points.len();
    let mut state = AdamState::new(&net, config.learning_rate / 10.0);
    for _ in 0..config.finetune_epochs {
        let trace = net.forward_batch(&rows, n)?;
        let mut loss = 0.0;
        let mut upstream = vec![0.0; n];
        for (i, (&pred, &y)) in trace.output().iter().zip(&targets).enumerate() {
            let resid = pred - y;
            loss += resid * resid / n as f64;
            upstream[i] = 2.0 * resid / n as f64;
        }
        if !loss.is_finite() {
            return Err(BaselineError::NonFiniteLoss);
        }
        let (grads, _) = net.backward_batch(&rows, &trace, &upstream)?;
        adam_step(&mut net, &grads, &mut state)?;
    }

    let q_rows = batch_rows(query_x, nbits)?;
    let trace = net.forward_batch(&q_rows, query_x.len())?;
    Ok(trace
        .output()
        .iter()
        .map(|&p| trunk.normalizer.inverse_mean(p))
        .collect())
}

/// The full transfer baseline: pretrain on `(dtrain x ftrain)`, fine-tune
/// on the target function's dtrain observations, predict its dtest
/// molecules. Returns `(molecule_id, prediction)` pairs in dtest order.
pub fn pretrain_finetune(
    table: &TaskTable,
    split: &SplitSpec,
    target_function: &str,
    config: &PretrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(String, f64)>, BaselineError> {
    if !split.ftest.iter().any(|f| f == target_function) {
        return Err(BaselineError::UnknownFunction {
            name: target_function.to_string(),
        });
    }
    let func = table
        .function_index(target_function)
        .ok_or_else(|| BaselineError::UnknownFunction {
            name: target_function.to_string(),
        })?;
    let trunk = pretrain_trunk(table, split, config, rng)?;

    let dtrain_mask = table
        .molecule_mask(&split.dtrain)
        .map_err(|_| BaselineError::EmptyTrainingSet)?;
    let points: Vec<(&Fingerprint, f64)> = table
        .observations_masked(func, &dtrain_mask)
        .into_iter()
        .map(|(m, y)| {
            table.molecules()[m]
                .fingerprint
                .as_ref()
                .map(|fp| (fp, y))
                .ok_or_else(|| BaselineError::MissingFingerprint {
                    id: table.molecules()[m].id.clone(),
                })
        })
        .collect::<Result<_, _>>()?;

    let mut query_ids = Vec::new();
    let mut query_fps = Vec::new();
    for id in &split.dtest {
        let m = table
            .molecule_index(id)
            .ok_or_else(|| BaselineError::UnknownFunction { name: id.clone() })?;
        let fp = table.molecules()[m]
            .fingerprint
            .as_ref()
            .ok_or_else(|| BaselineError::MissingFingerprint { id: id.clone() })?;
        query_ids.push(id.clone());
        query_fps.push(fp);
    }
    let preds = finetune_predict(&trunk, &points, &query_fps, config, rng)?;
    Ok(query_ids.into_iter().zip(preds).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_task_family, SynthConfig};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_config(epochs: usize) -> MlpConfig {
        MlpConfig {
            hidden: vec![16; 5],
            epochs,
            learning_rate: 1e-2,
        }
    }

    fn random_fps(n: usize, nbits: usize, seed: u64) -> Vec<Fingerprint> {
        use rand::Rng;
        let mut r = rng(seed);
        (0..n)
            .map(|_| {
                let mut fp = Fingerprint::zeros(nbits, 0);
                for b in 0..nbits {
                    if r.gen_bool(0.5) {
                        fp.set(b);
                    }
                }
                fp
            })
            .collect()
    }

    #[test]
    fn constant_labels_are_learned() {
        let fps = random_fps(20, 32, 1);
        let refs: Vec<&Fingerprint> = fps.iter().collect();
        let labels = vec![4.2; 20];
        let preds =
            nn_fit_predict(&refs, &labels, &refs, &small_config(200), &mut rng(2)).unwrap();
        for p in preds {
            assert!((p - 4.2).abs() < 0.1, "prediction {p} too far from 4.2");
        }
    }

    #[test]
    fn zero_epochs_is_deterministic_initialization() {
        let fps = random_fps(10, 32, 3);
        let refs: Vec<&Fingerprint> = fps.iter().collect();
        let labels: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let a = nn_fit_predict(&refs, &labels, &refs, &small_config(0), &mut rng(5)).unwrap();
        let b = nn_fit_predict(&refs, &labels, &refs, &small_config(0), &mut rng(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn duplicate_queries_get_duplicate_predictions() {
        let fps = random_fps(8, 32, 7);
        let refs: Vec<&Fingerprint> = fps.iter().collect();
        let labels: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let queries = vec![&fps[0], &fps[3], &fps[0]];
        let preds =
            nn_fit_predict(&refs, &labels, &queries, &small_config(50), &mut rng(8)).unwrap();
        assert_eq!(preds[0], preds[2]);
    }

    fn synthetic_split(seed: u64) -> (TaskTable, SplitSpec) {
        let table = synthetic_task_family(&SynthConfig {
            seed,
            n_functions: 4,
            n_molecules: 60,
            nbits: 32,
            latent_dim: 3,
            noise_sd: 0.05,
        });
        let ids: Vec<String> = table.molecules().iter().map(|m| m.id.clone()).collect();
        let split = SplitSpec {
            dtrain: ids[..40].to_vec(),
            dtest: ids[40..].to_vec(),
            ftrain: table.functions()[..3].to_vec(),
            ftest: table.functions()[3..].to_vec(),
        };
        (table, split)
    }

    fn small_pretrain(pre: usize, fine: usize) -> PretrainConfig {
        PretrainConfig {
            hidden: vec![16; 5],
            pretrain_epochs: pre,
            finetune_epochs: fine,
            learning_rate: 1e-2,
        }
    }

    #[test]
    fn pretrain_finetune_runs_and_is_deterministic() {
        let (table, split) = synthetic_split(11);
        let target = split.ftest[0].clone();
        let config = small_pretrain(30, 30);
        let a = pretrain_finetune(&table, &split, &target, &config, &mut rng(1)).unwrap();
        let b = pretrain_finetune(&table, &split, &target, &config, &mut rng(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), split.dtest.len());
        assert!(a.iter().all(|(_, p)| p.is_finite()));
    }

    #[test]
    fn zero_finetune_epochs_uses_pretrained_trunk_and_fresh_head() {
        let (table, split) = synthetic_split(13);
        let config = small_pretrain(20, 0);
        let trunk = pretrain_trunk(&table, &split, &config, &mut rng(3)).unwrap();
        let fps: Vec<&Fingerprint> = table.molecules()[..5]
            .iter()
            .map(|m| m.fingerprint.as_ref().unwrap())
            .collect();
        let points: Vec<(&Fingerprint, f64)> = fps.iter().map(|&fp| (fp, 1.0)).collect();
        let a = finetune_predict(&trunk, &points, &fps, &config, &mut rng(4)).unwrap();
        let b = finetune_predict(&trunk, &points, &fps, &config, &mut rng(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn finetune_learns_constant_target() {
        let (table, split) = synthetic_split(17);
        let config = small_pretrain(20, 300);
        let trunk = pretrain_trunk(&table, &split, &config, &mut rng(5)).unwrap();
        let fps: Vec<&Fingerprint> = table.molecules()[..8]
            .iter()
            .map(|m| m.fingerprint.as_ref().unwrap())
            .collect();
        let constant = -2.75;
        let points: Vec<(&Fingerprint, f64)> = fps.iter().map(|&fp| (fp, constant)).collect();
        let preds = finetune_predict(&trunk, &points, &fps, &config, &mut rng(6)).unwrap();
        for p in preds {
            assert!((p - constant).abs() < 0.2, "prediction {p}");
        }
    }

    #[test]
    fn fully_masked_function_equals_removed_function() {
        // masking removes the gradient: pretraining with the LAST ftrain
        // function fully missing matches pretraining without that function,
        // as observed through identical fine-tune predictions
        let (table, split) = synthetic_split(19);
        let n_mols = table.molecules().len();

        // variant A: last ftrain function has all cells missing
        let mut scores_a = Vec::new();
        for m in 0..n_mols {
            for f in 0..table.functions().len() {
                let last_ftrain = table.function_index(&split.ftrain[2]).unwrap();
                if f == last_ftrain {
                    scores_a.push(None);
                } else {
                    scores_a.push(table.score(m, f));
                }
            }
        }
        let table_a = TaskTable::new(
            table.molecules().to_vec(),
            table.functions().to_vec(),
            scores_a,
        )
        .unwrap();

        // variant B: that function dropped from ftrain entirely
        let mut split_b = split.clone();
        split_b.ftrain = split.ftrain[..2].to_vec();

        let config = small_pretrain(25, 10);
        let trunk_a = pretrain_trunk(&table_a, &split, &config, &mut rng(7)).unwrap();
        let trunk_b = pretrain_trunk(&table, &split_b, &config, &mut rng(7)).unwrap();

        let fps: Vec<&Fingerprint> = table.molecules()[..6]
            .iter()
            .map(|m| m.fingerprint.as_ref().unwrap())
            .collect();
        let points: Vec<(&Fingerprint, f64)> =
            fps.iter().enumerate().map(|(i, &fp)| (fp, i as f64)).collect();
        let pa = finetune_predict(&trunk_a, &points, &fps, &config, &mut rng(8)).unwrap();
        let pb = finetune_predict(&trunk_b, &points, &fps, &config, &mut rng(8)).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn unknown_target_function_rejected() {
        let (table, split) = synthetic_split(23);
        let config = small_pretrain(1, 1);
        assert!(matches!(
            pretrain_finetune(&table, &split, "nope", &config, &mut rng(0)),
            Err(BaselineError::UnknownFunction { .. })
        ));
        // a real function that is not in ftest is also rejected
        let in_ftrain = split.ftrain[0].clone();
        assert!(matches!(
            pretrain_finetune(&table, &split, &in_ftrain, &config, &mut rng(0)),
            Err(BaselineError::UnknownFunction { .. })
        ));
    }
}
