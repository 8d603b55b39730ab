//! The conditional neural process: encode context pairs, mean-aggregate,
//! decode target inputs into Gaussian predictive distributions; episode
//! sampling and the episodic training loop.
//!
//! The predictive distribution over targets is a product of per-point
//! Gaussians whose mean and variance come from decoding `[x ; r]`, where `r`
//! is the arithmetic mean of the encoded context pairs. Mean aggregation
//! makes predictions invariant to context order and to whole-set
//! replication.
//!
//! Scores are standardized with pooled statistics of the training tasks
//! (stored on the model and inverse-applied at prediction time), so losses
//! and metrics are always reported in original score units.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

use crate::chem::Fingerprint;
use crate::data::TaskTable;
use crate::nn::{adam_step, gaussian_nll, AdamState, DenseNet, Gradients, NnError};
use crate::seeding::derive_rng;

#[derive(Debug, Error)]
pub enum CnpError {
    #[error("context is empty")]
    EmptyContext,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("function has {have} observations, need at least {need}")]
    InsufficientObservations { have: usize, need: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("molecule `{id}` has no fingerprint")]
    MissingFingerprint { id: String },
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: String, detail: String },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// One sampled context/target partition of a single function's observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub function_id: String,
    pub context_x: Vec<Fingerprint>,
    pub context_y: Vec<f64>,
    pub target_x: Vec<Fingerprint>,
    pub target_y: Vec<f64>,
}

/// Per-target-point means and variances, in original score units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

/// Affine standardization of scores, fit on the training pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: f64,
    pub scale: f64,
}

impl Normalizer {
    pub fn identity() -> Self {
        Normalizer {
            mean: 0.0,
            scale: 1.0,
        }
    }

    pub fn fit(values: impl Iterator<Item = f64>) -> Self {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for v in values {
            n += 1;
            sum += v;
            sumsq += v * v;
        }
        if n == 0 {
            return Normalizer::identity();
        }
        let mean = sum / n as f64;
        let var = (sumsq / n as f64 - mean * mean).max(0.0);
        Normalizer {
            mean,
            scale: var.sqrt().max(1e-12),
        }
    }

    #[inline]
    pub fn forward(&self, y: f64) -> f64 {
        (y - self.mean) / self.scale
    }

    #[inline]
    pub fn inverse_mean(&self, y: f64) -> f64 {
        y * self.scale + self.mean
    }

    #[inline]
    pub fn inverse_var(&self, v: f64) -> f64 {
        v * self.scale * self.scale
    }
}

/// Encoder/decoder parameter sets plus architecture hyperparameters.
///
/// The encoder maps `[x bits ; y]` (nbits + 1 inputs) to a `repr_dim`
/// representation; the decoder maps `[x bits ; r]` to `(mean, raw variance)`.
/// Raw variances pass through softplus and are lifted by `variance_floor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnpModel {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub nbits: usize,
    pub repr_dim: usize,
    pub variance_floor: f64,
    pub normalizer: Normalizer,
}

/// Architecture hyperparameters for [`CnpModel::init`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CnpConfig {
    pub nbits: usize,
    pub encoder_hidden: Vec<usize>,
    pub repr_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub variance_floor: f64,
}

impl CnpConfig {
    /// Three linear layers on each side: encoder 256/256 hidden into a
    /// 128-wide representation, decoder 256/256 hidden into (mean, raw var).
    pub fn default_for(nbits: usize) -> Self {
        CnpConfig {
            nbits,
            encoder_hidden: vec![256, 256],
            repr_dim: 128,
            decoder_hidden: vec![256, 256],
            variance_floor: 1e-6,
        }
    }
}

impl CnpModel {
    pub fn init(config: &CnpConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut enc_dims = vec![config.nbits + 1];
        enc_dims.extend(&config.encoder_hidden);
        enc_dims.push(config.repr_dim);
        let mut dec_dims = vec![config.nbits + config.repr_dim];
        dec_dims.extend(&config.decoder_hidden);
        dec_dims.push(2);
        let encoder = DenseNet::new(&enc_dims, rng);
        let decoder = DenseNet::new(&dec_dims, rng);
        CnpModel {
            encoder,
            decoder,
            nbits: config.nbits,
            repr_dim: config.repr_dim,
            variance_floor: config.variance_floor,
            normalizer: Normalizer::identity(),
        }
    }

    pub fn from_parts(
        encoder: DenseNet,
        decoder: DenseNet,
        variance_floor: f64,
    ) -> Result<Self, CnpError> {
        let repr_dim = encoder.output_dim();
        let nbits = encoder
            .input_dim()
            .checked_sub(1)
            .ok_or(CnpError::DimensionMismatch {
                expected: 2,
                got: encoder.input_dim(),
            })?;
        if decoder.input_dim() != nbits + repr_dim {
            return Err(CnpError::DimensionMismatch {
                expected: nbits + repr_dim,
                got: decoder.input_dim(),
            });
        }
        if decoder.output_dim() != 2 {
            return Err(CnpError::DimensionMismatch {
                expected: 2,
                got: decoder.output_dim(),
            });
        }
        Ok(CnpModel {
            encoder,
            decoder,
            nbits,
            repr_dim,
            variance_floor,
            normalizer: Normalizer::identity(),
        })
    }
}

fn check_fp_len(fp: &Fingerprint, nbits: usize) -> Result<(), CnpError> {
    if fp.nbits() != nbits {
        return Err(CnpError::DimensionMismatch {
            expected: nbits,
            got: fp.nbits(),
        });
    }
    Ok(())
}

/// Encode every context pair into a representation vector: the encoder
/// applied to `[x_j bits ; y_j]` (y standardized by the model's normalizer).
pub fn encode(
    model: &CnpModel,
    context_x: &[&Fingerprint],
    context_y: &[f64],
) -> Result<Vec<Vec<f64>>, CnpError> {
    if context_x.is_empty() {
        return Err(CnpError::EmptyContext);
    }
    if context_x.len() != context_y.len() {
        return Err(CnpError::DimensionMismatch {
            expected: context_x.len(),
            got: context_y.len(),
        });
    }
    let c = context_x.len();
    let width = model.nbits + 1;
    let mut rows = vec![0.0; c * width];
    for (j, (fp, &y)) in context_x.iter().zip(context_y).enumerate() {
        check_fp_len(fp, model.nbits)?;
        let row = &mut rows[j * width..(j + 1) * width];
        fp.write_reals(&mut row[..model.nbits]);
        row[model.nbits] = model.normalizer.forward(y);
    }
    let trace = model.encoder.forward_batch(&rows, c)?;
    Ok(trace
        .output()
        .chunks_exact(model.repr_dim)
        .map(|r| r.to_vec())
        .collect())
}

/// Coordinate-wise arithmetic mean of representation vectors (the
/// commutative aggregation).
pub fn aggregate(reps: &[Vec<f64>]) -> Result<Vec<f64>, CnpError> {
    let first = reps.first().ok_or(CnpError::EmptyContext)?;
    let dim = first.len();
    let mut mean = vec![0.0; dim];
    for rep in reps {
        if rep.len() != dim {
            return Err(CnpError::DimensionMismatch {
                expected: dim,
                got: rep.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(rep) {
            *m += v;
        }
    }
    let inv = 1.0 / reps.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    Ok(mean)
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Decode one target input against an aggregated representation, returning
/// `(mean, variance)` in original score units; the raw variance output maps
/// through softplus plus the variance floor, so variance is always at least
/// `variance_floor` (times the squared normalization scale).
pub fn decode(model: &CnpModel, x: &Fingerprint, r: &[f64]) -> Result<(f64, f64), CnpError> {
    let dist = decode_batch(model, &[x], r)?;
    Ok((dist.means[0], dist.variances[0]))
}

/// Batch decode of many target inputs against one representation.
pub fn decode_batch(
    model: &CnpModel,
    targets: &[&Fingerprint],
    r: &[f64],
) -> Result<PredictiveDistribution, CnpError> {
    if r.len() != model.repr_dim {
        return Err(CnpError::DimensionMismatch {
            expected: model.repr_dim,
            got: r.len(),
        });
    }
    let t = targets.len();
    let width = model.nbits + model.repr_dim;
    let mut rows = vec![0.0; t * width];
    for (j, fp) in targets.iter().enumerate() {
        check_fp_len(fp, model.nbits)?;
        let row = &mut rows[j * width..(j + 1) * width];
        fp.write_reals(&mut row[..model.nbits]);
        row[model.nbits..].copy_from_slice(r);
    }
    let trace = model.decoder.forward_batch(&rows, t)?;
    let mut means = Vec::with_capacity(t);
    let mut variances = Vec::with_capacity(t);
    for out in trace.output().chunks_exact(2) {
        let var_n = softplus(out[1]) + model.variance_floor;
        means.push(model.normalizer.inverse_mean(out[0]));
        variances.push(model.normalizer.inverse_var(var_n));
    }
    Ok(PredictiveDistribution { means, variances })
}

/// encode -> aggregate -> decode for every target point.
pub fn predict(
    model: &CnpModel,
    context_x: &[&Fingerprint],
    context_y: &[f64],
    target_x: &[&Fingerprint],
) -> Result<PredictiveDistribution, CnpError> {
    if target_x.is_empty() {
        return Err(CnpError::EmptyContext);
    }
    let reps = encode(model, context_x, context_y)?;
    let r = aggregate(&reps)?;
    decode_batch(model, target_x, &r)
}

/// Mean Gaussian negative log-likelihood of the episode's targets given its
/// context, in original score units.
pub fn episode_loss(model: &CnpModel, episode: &Episode) -> Result<f64, CnpError> {
    let context: Vec<&Fingerprint> = episode.context_x.iter().collect();
    let targets: Vec<&Fingerprint> = episode.target_x.iter().collect();
    if targets.len() != episode.target_y.len() {
        return Err(CnpError::DimensionMismatch {
            expected: targets.len(),
            got: episode.target_y.len(),
        });
    }
    let dist = predict(model, &context, &episode.context_y, &targets)?;
    let mut acc = 0.0;
    for ((&mu, &var), &y) in dist.means.iter().zip(&dist.variances).zip(&episode.target_y) {
        acc += gaussian_nll(mu, var, y)?;
    }
    Ok(acc / episode.target_y.len() as f64)
}

/// Draw a context/target partition of one function's observations.
///
/// `c` is uniform over `c_range` (upper end narrowed so at least
/// `t_range.0` observations remain); `t` is uniform over `t_range`, capped
/// at the remaining observations. Context and target index sets are
/// disjoint by construction. Seed-deterministic through `rng`.
pub fn sample_episode(
    function_id: &str,
    points: &[(&Fingerprint, f64)],
    rng: &mut ChaCha8Rng,
    c_range: (usize, usize),
    t_range: (usize, usize),
) -> Result<Episode, CnpError> {
    let o = points.len();
    let (c_lo, c_hi) = c_range;
    let (t_lo, t_hi) = t_range;
    assert!(c_lo >= 1 && t_lo >= 1 && c_hi >= c_lo && t_hi >= t_lo);
    if o < c_lo + t_lo {
        return Err(CnpError::InsufficientObservations {
            have: o,
            need: c_lo + t_lo,
        });
    }
    let c_max = c_hi.min(o - t_lo);
    let c = rng.gen_range(c_lo..=c_max);
    let t_draw = rng.gen_range(t_lo..=t_hi);
    let t = t_draw.min(o - c);

    let mut order: Vec<usize> = (0..o).collect();
    // Fisher-Yates; only the first c+t entries are consumed
    for i in 0..(c + t).min(o - 1) {
        let j = rng.gen_range(i..o);
        order.swap(i, j);
    }
    let take = |idx: &[usize]| -> (Vec<Fingerprint>, Vec<f64>) {
        idx.iter()
            .map(|&i| (points[i].0.clone(), points[i].1))
            .unzip()
    };
    let (context_x, context_y) = take(&order[..c]);
    let (target_x, target_y) = take(&order[c..c + t]);
    Ok(Episode {
        function_id: function_id.to_string(),
        context_x,
        context_y,
        target_x,
        target_y,
    })
}

/// One training function's observations (fingerprint, raw score).
#[derive(Debug, Clone)]
pub struct FunctionTask {
    pub function_id: String,
    pub points: Vec<(Fingerprint, f64)>,
}

/// Extract per-function observation lists from a table, restricted to the
/// molecules flagged in `mask`. Fails if any selected molecule lacks a
/// fingerprint.
pub fn function_tasks(
    table: &TaskTable,
    functions: &[String],
    mask: &[bool],
) -> Result<Vec<FunctionTask>, CnpError> {
    let mut tasks = Vec::with_capacity(functions.len());
    for name in functions {
        let f = table
            .function_index(name)
            .ok_or_else(|| CnpError::Checkpoint {
                path: String::new(),
                detail: format!("unknown function `{name}`"),
            })?;
        let mut points = Vec::new();
        for (m, y) in table.observations_masked(f, mask) {
            let mol = &table.molecules()[m];
            let fp = mol
                .fingerprint
                .clone()
                .ok_or_else(|| CnpError::MissingFingerprint { id: mol.id.clone() })?;
            points.push((fp, y));
        }
        tasks.push(FunctionTask {
            function_id: name.clone(),
            points,
        });
    }
    Ok(tasks)
}

/// Episode sampling and optimization schedule for [`train`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Context size range, inclusive.
    pub c_range: (usize, usize),
    /// Target size range, inclusive; drawn size is capped at the remaining
    /// observations.
    pub t_range: (usize, usize),
    pub learning_rate: f64,
    /// Standardize scores with pooled training statistics before the first
    /// epoch (stored on the model, inverse-applied at prediction time).
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            c_range: (5, 256),
            t_range: (256, 256),
            learning_rate: 1e-3,
            normalize: true,
        }
    }
}

/// Loss trajectory entry: mean episode NLL across training functions, in
/// original score units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
}

/// Episodic training: per epoch, one sampled episode per training function,
/// losses averaged over functions, one Adam step over the full parameter
/// set (gradients flow decoder -> aggregated representation -> every
/// encoder application). `callback` runs after each step with the epoch
/// number (1-based), the updated model, and the epoch's mean loss.
///
/// Episode gradients are computed in parallel across functions from derived
/// per-(epoch, function) RNG streams and summed in fixed function order, so
/// training is bit-reproducible regardless of thread count.
pub fn train(
    model: &mut CnpModel,
    tasks: &[FunctionTask],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut callback: impl FnMut(usize, &CnpModel, f64),
) -> Result<Vec<EpochRecord>, CnpError> {
    for task in tasks {
        let need = config.c_range.0 + config.t_range.0;
        if task.points.len() < need {
            return Err(CnpError::InsufficientObservations {
                have: task.points.len(),
                need,
            });
        }
    }
    if config.normalize && config.epochs > 0 {
        model.normalizer = Normalizer::fit(
            tasks
                .iter()
                .flat_map(|t| t.points.iter().map(|&(_, y)| y)),
        );
    }
    let mut enc_state = AdamState::new(&model.encoder, config.learning_rate);
    let mut dec_state = AdamState::new(&model.decoder, config.learning_rate);
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let base: u64 = rng.gen();
        let results: Vec<Result<(f64, Gradients, Gradients), CnpError>> = tasks
            .par_iter()
            .enumerate()
            .map(|(i, task)| {
                let mut task_rng = derive_rng(base, &[i as u64]);
                let points: Vec<(&Fingerprint, f64)> =
                    task.points.iter().map(|(fp, y)| (fp, *y)).collect();
                let episode = sample_episode(
                    &task.function_id,
                    &points,
                    &mut task_rng,
                    config.c_range,
                    config.t_range,
                )?;
                episode_grads(model, &episode)
            })
            .collect();

        let mut enc_grads = Gradients::zeros_like(&model.encoder);
        let mut dec_grads = Gradients::zeros_like(&model.decoder);
        let mut loss_sum = 0.0;
        for result in results {
            let (loss, enc, dec) = result?;
            loss_sum += loss;
            enc_grads.add_assign(&enc);
            dec_grads.add_assign(&dec);
        }
        let inv_n = 1.0 / tasks.len() as f64;
        enc_grads.scale(inv_n);
        dec_grads.scale(inv_n);
        let mean_loss_normalized = loss_sum * inv_n;
        if !mean_loss_normalized.is_finite() {
            return Err(CnpError::NonFiniteLoss { epoch });
        }
        adam_step(&mut model.encoder, &enc_grads, &mut enc_state)?;
        adam_step(&mut model.decoder, &dec_grads, &mut dec_state)?;

        // report in original units: mean NLL shifts by ln(scale)
        let loss = mean_loss_normalized + model.normalizer.scale.ln();
        callback(epoch, model, loss);
        log.push(EpochRecord { epoch, loss });
    }
    Ok(log)
}

/// Loss (normalized space) and parameter gradients for one episode.
fn episode_grads(
    model: &CnpModel,
    episode: &Episode,
) -> Result<(f64, Gradients, Gradients), CnpError> {
    let c = episode.context_x.len();
    let t = episode.target_x.len();
    if c == 0 || t == 0 {
        return Err(CnpError::EmptyContext);
    }
    let nbits = model.nbits;
    let repr = model.repr_dim;

    // encoder forward over the context
    let enc_width = nbits + 1;
    let mut enc_rows = vec![0.0; c * enc_width];
    for (j, (fp, &y)) in episode.context_x.iter().zip(&episode.context_y).enumerate() {
        check_fp_len(fp, nbits)?;
        let row = &mut enc_rows[j * enc_width..(j + 1) * enc_width];
        fp.write_reals(&mut row[..nbits]);
        row[nbits] = model.normalizer.forward(y);
    }
    let enc_trace = model.encoder.forward_batch(&enc_rows, c)?;

    // mean-aggregate the representations
    let mut r = vec![0.0; repr];
    for rep in enc_trace.output().chunks_exact(repr) {
        for (ri, v) in r.iter_mut().zip(rep) {
            *ri += v;
        }
    }
    let inv_c = 1.0 / c as f64;
    for ri in &mut r {
        *ri *= inv_c;
    }

    // decoder forward over the targets
    let dec_width = nbits + repr;
    let mut dec_rows = vec![0.0; t * dec_width];
    for (j, fp) in episode.target_x.iter().enumerate() {
        check_fp_len(fp, nbits)?;
        let row = &mut dec_rows[j * dec_width..(j + 1) * dec_width];
        fp.write_reals(&mut row[..nbits]);
        row[nbits..].copy_from_slice(&r);
    }
    let dec_trace = model.decoder.forward_batch(&dec_rows, t)?;

    // per-target NLL in normalized space, and its gradient wrt (mean, raw)
    let inv_t = 1.0 / t as f64;
    let mut loss = 0.0;
    let mut upstream = vec![0.0; t * 2];
    for (j, out) in dec_trace.output().chunks_exact(2).enumerate() {
        let (mu, raw) = (out[0], out[1]);
        let var = softplus(raw) + model.variance_floor;
        let y = model.normalizer.forward(episode.target_y[j]);
        loss += gaussian_nll(mu, var, y)? * inv_t;
        let resid = mu - y;
        upstream[2 * j] = resid / var * inv_t;
        upstream[2 * j + 1] =
            (0.5 / var - resid * resid / (2.0 * var * var)) * sigmoid(raw) * inv_t;
    }

    let (dec_grads, d_dec_rows) = model.decoder.backward_batch(&dec_rows, &dec_trace, &upstream)?;

    // gradient wrt the aggregated representation: sum the r-slice over targets
    let mut dr = vec![0.0; repr];
    for row in d_dec_rows.chunks_exact(dec_width) {
        for (g, v) in dr.iter_mut().zip(&row[nbits..]) {
            *g += v;
        }
    }
    // mean aggregation spreads dr/c to every encoder application
    let mut enc_upstream = vec![0.0; c * repr];
    for row in enc_upstream.chunks_exact_mut(repr) {
        for (u, g) in row.iter_mut().zip(&dr) {
            *u = g * inv_c;
        }
    }
    let (enc_grads, _) = model
        .encoder
        .backward_batch(&enc_rows, &enc_trace, &enc_upstream)?;

    Ok((loss, enc_grads, dec_grads))
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    model: CnpModel,
}

/// Serialize the model (JSON, bit-exact float round-trip).
pub fn save_checkpoint(path: &Path, model: &CnpModel) -> Result<(), CnpError> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    };
    let text = serde_json::to_string(&ckpt).map_err(|e| CnpError::Checkpoint {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| CnpError::Checkpoint {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

pub fn load_checkpoint(path: &Path) -> Result<CnpModel, CnpError> {
    let text = fs::read_to_string(path).map_err(|e| CnpError::Checkpoint {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| CnpError::Checkpoint {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(CnpError::Checkpoint {
            path: path.display().to_string(),
            detail: format!("unsupported checkpoint version {}", ckpt.version),
        });
    }
    Ok(ckpt.model)
}
