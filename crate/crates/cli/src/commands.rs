//! Command implementations. Each command is a pure function of the config
//! file and the dataset files: outputs land in
//! `out/<command>/<config-hash>/` and identical inputs produce
//! byte-identical outputs (manifests carry no timestamps).

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use molcnp::chem::{read_fingerprint_cache, write_fingerprint_cache, Fingerprint};
use molcnp::cnp::{
    function_tasks, load_checkpoint, save_checkpoint, CnpConfig, CnpModel, TrainConfig,
};
use molcnp::data::{
    load_task_table, make_splits, read_id_list, save_task_table, synthetic_task_family,
    write_id_list, SplitConfig, SplitSpec, SynthConfig, TaskTable, DEFAULT_FTEST,
};
use molcnp::experiments::{
    bo_pool, emit_report, format_bo_trace_csv, run_bo, run_calibration, run_fewshot,
    run_generalization, write_svg_lines, AcquisitionConfig, BoTraceRow, CalibrationConfig,
    CalibrationOutput, FewshotConfig, GeneralizationConfig, MetricRecord, ReportFormat,
};

use crate::config::RunConfig;
use crate::CliError;

// Deterministic, documented seed streams per concern.
const SALT_SPLIT: u64 = 0x5917;
const SALT_MODEL: u64 = 0x30D1;
const SALT_TRAIN: u64 = 0x7219;

fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(salt))
}

/// Load the dataset, attach cached fingerprints where available, and
/// compute the rest from SMILES.
fn load_table(config: &RunConfig) -> Result<TaskTable, CliError> {
    let mut table = load_task_table(&config.dataset.path, config.fingerprint.radius)
        .map_err(CliError::from)?;
    if let Some(cache) = &config.fingerprint.cache {
        if cache.exists() {
            let (radius, nbits, entries) =
                read_fingerprint_cache(cache).map_err(CliError::from)?;
            if radius != config.fingerprint.radius || nbits != config.fingerprint.nbits {
                return Err(CliError::Data(format!(
                    "cache {} was built with radius={radius} nbits={nbits}, config wants radius={} nbits={}",
                    cache.display(),
                    config.fingerprint.radius,
                    config.fingerprint.nbits
                )));
            }
            table.attach_fingerprints(&entries);
        }
    }
    table
        .ensure_fingerprints(config.fingerprint.radius, config.fingerprint.nbits)
        .map_err(CliError::from)?;
    Ok(table)
}

fn build_split(config: &RunConfig, table: &TaskTable) -> Result<SplitSpec, CliError> {
    let s = &config.splits;
    let split_config = if s.dtrain_file.is_some() || s.dtest_file.is_some() {
        let (Some(dtrain_file), Some(dtest_file)) = (&s.dtrain_file, &s.dtest_file) else {
            return Err(CliError::Config(
                "explicit splits need both dtrain_file and dtest_file".into(),
            ));
        };
        let ftest = s
            .ftest
            .clone()
            .unwrap_or_else(|| DEFAULT_FTEST.iter().map(|f| f.to_string()).collect());
        let ftrain = match &s.ftrain {
            Some(list) => list.clone(),
            None => table
                .functions()
                .iter()
                .filter(|f| !ftest.contains(f))
                .cloned()
                .collect(),
        };
        SplitConfig::Explicit {
            dtrain: read_id_list(dtrain_file).map_err(CliError::from)?,
            dtest: read_id_list(dtest_file).map_err(CliError::from)?,
            ftrain,
            ftest,
        }
    } else {
        SplitConfig::Sampled {
            n_dtrain: s.n_dtrain.unwrap_or(2500),
            n_dtest: s.n_dtest.unwrap_or(2500),
            dtrain_pool: None,
            dtest_pool: None,
            ftest: s
                .ftest
                .clone()
                .unwrap_or_else(|| DEFAULT_FTEST.iter().map(|f| f.to_string()).collect()),
        }
    };
    let mut rng = stream(config.seed, SALT_SPLIT);
    make_splits(table, &split_config, &mut rng).map_err(CliError::from)
}

fn cnp_config(config: &RunConfig) -> CnpConfig {
    CnpConfig {
        nbits: config.fingerprint.nbits,
        encoder_hidden: config.model.encoder_hidden.clone(),
        repr_dim: config.model.repr_dim,
        decoder_hidden: config.model.decoder_hidden.clone(),
        variance_floor: config.model.variance_floor,
    }
}

fn train_config(config: &RunConfig) -> TrainConfig {
    TrainConfig {
        epochs: config.training.epochs,
        c_range: (config.training.c_min, config.training.c_max),
        t_range: (config.training.t_min, config.training.t_max),
        learning_rate: config.training.learning_rate,
        normalize: config.training.normalize,
    }
}

/// Create `out/<command>/<hash>/`, write the manifest, return the dir.
fn prepare_outdir(config: &RunConfig, hash: &str, command: &str) -> Result<PathBuf, CliError> {
    let dir = config.output_dir.join(command).join(hash);
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let manifest = serde_json::json!({
        "command": command,
        "config_hash": hash,
        "seed": config.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
    });
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Data(format!("manifest: {e}")))?;
    fs::write(dir.join("manifest.json"), text)
        .map_err(|e| CliError::Data(format!("manifest: {e}")))?;
    Ok(dir)
}

fn write_split_files(dir: &Path, split: &SplitSpec) -> Result<(), CliError> {
    write_id_list(&dir.join("dtrain.txt"), &split.dtrain).map_err(CliError::from)?;
    write_id_list(&dir.join("dtest.txt"), &split.dtest).map_err(CliError::from)?;
    write_id_list(&dir.join("ftrain.txt"), &split.ftrain).map_err(CliError::from)?;
    write_id_list(&dir.join("ftest.txt"), &split.ftest).map_err(CliError::from)
}

fn report_format(config: &RunConfig) -> ReportFormat {
    if config.report_format == "json" {
        ReportFormat::Json
    } else {
        ReportFormat::Csv
    }
}

fn write_report(
    config: &RunConfig,
    dir: &Path,
    records: &[MetricRecord],
) -> Result<PathBuf, CliError> {
    let format = report_format(config);
    let name = match format {
        ReportFormat::Csv => "report.csv",
        ReportFormat::Json => "report.json",
    };
    let path = dir.join(name);
    emit_report(records, &path, format).map_err(CliError::from)?;
    Ok(path)
}

/// Compute or validate the fingerprint cache. A cache that already covers
/// every molecule with matching parameters is left untouched.
pub fn cmd_fingerprint(config: &RunConfig, hash: &str) -> Result<(), CliError> {
    let table = load_task_table(&config.dataset.path, config.fingerprint.radius)
        .map_err(CliError::from)?;
    let cache_path = match &config.fingerprint.cache {
        Some(path) => path.clone(),
        None => prepare_outdir(config, hash, "fingerprint")?.join("fingerprints.tsv"),
    };
    if cache_path.exists() {
        let (radius, nbits, entries) =
            read_fingerprint_cache(&cache_path).map_err(CliError::from)?;
        if radius == config.fingerprint.radius && nbits == config.fingerprint.nbits {
            let cached: std::collections::HashSet<&str> =
                entries.iter().map(|(id, _)| id.as_str()).collect();
            if table.molecules().iter().all(|m| cached.contains(m.id.as_str())) {
                println!(
                    "fingerprint cache {} is up to date ({} records)",
                    cache_path.display(),
                    entries.len()
                );
                return Ok(());
            }
        } else {
            return Err(CliError::Data(format!(
                "cache {} was built with radius={radius} nbits={nbits}, config wants radius={} nbits={}",
                cache_path.display(),
                config.fingerprint.radius,
                config.fingerprint.nbits
            )));
        }
    }
    let mut table = table;
    table
        .ensure_fingerprints(config.fingerprint.radius, config.fingerprint.nbits)
        .map_err(CliError::from)?;
    let entries: Vec<(String, Fingerprint)> = table
        .molecules()
        .iter()
        .map(|m| (m.id.clone(), m.fingerprint.clone().expect("just computed")))
        .collect();
    if let Some(parent) = cache_path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    write_fingerprint_cache(
        &cache_path,
        config.fingerprint.radius,
        config.fingerprint.nbits,
        &entries,
    )
    .map_err(CliError::from)?;
    println!(
        "wrote {} fingerprint records to {}",
        entries.len(),
        cache_path.display()
    );
    Ok(())
}

/// Train the CNP on `(ftrain, dtrain)`, writing checkpoints at the
/// configured epochs and the training log.
pub fn cmd_train(config: &RunConfig, hash: &str) -> Result<(), CliError> {
    let table = load_table(config)?;
    let split = build_split(config, &table)?;
    let dir = prepare_outdir(config, hash, "train")?;
    write_split_files(&dir, &split)?;

    let mask = table.molecule_mask(&split.dtrain).map_err(CliError::from)?;
    let tasks = function_tasks(&table, &split.ftrain, &mask).map_err(CliError::from)?;

    let mut model = CnpModel::init(&cnp_config(config), &mut stream(config.seed, SALT_MODEL));
    let mut checkpoints = config.training.checkpoints.clone();
    if checkpoints.is_empty() {
        checkpoints.push(config.training.epochs);
    }
    let checkpoint_set: std::collections::HashSet<usize> = checkpoints.into_iter().collect();

    let mut ckpt_error: Option<CliError> = None;
    let log = molcnp::cnp::train(
        &mut model,
        &tasks,
        &train_config(config),
        &mut stream(config.seed, SALT_TRAIN),
        |epoch, m, _loss| {
            if ckpt_error.is_none() && checkpoint_set.contains(&epoch) {
                let path = dir.join(format!("checkpoint_{epoch}.json"));
                if let Err(e) = save_checkpoint(&path, m) {
                    ckpt_error = Some(CliError::from(e));
                }
            }
        },
    )
    .map_err(CliError::from)?;
    if let Some(e) = ckpt_error {
        return Err(e);
    }

    let mut log_text = String::from("epoch,split,metric,value\n");
    for rec in &log {
        log_text.push_str(&format!(
            "{},\"ftrain,dtrain\",episode_nll,{}\n",
            rec.epoch, rec.loss
        ));
    }
    fs::write(dir.join("train_log.csv"), log_text)
        .map_err(|e| CliError::Data(format!("train_log: {e}")))?;
    println!("trained {} epochs; outputs in {}", log.len(), dir.display());
    Ok(())
}

fn load_required_checkpoint(path: &Option<PathBuf>, what: &str) -> Result<CnpModel, CliError> {
    let path = path.as_ref().ok_or_else(|| {
        CliError::Config(format!("{what}.checkpoint is required for this command"))
    })?;
    if !path.exists() {
        return Err(CliError::Config(format!(
            "missing checkpoint `{}`",
            path.display()
        )));
    }
    load_checkpoint(path).map_err(CliError::from)
}

pub enum Experiment {
    Calibrate,
    Fewshot,
    Generalize,
    Bo,
}

pub fn cmd_experiment(config: &RunConfig, hash: &str, which: Experiment) -> Result<(), CliError> {
    match which {
        Experiment::Calibrate => cmd_calibrate(config, hash),
        Experiment::Fewshot => cmd_fewshot(config, hash),
        Experiment::Generalize => cmd_generalize(config, hash),
        Experiment::Bo => cmd_bo(config, hash),
    }
}

fn cmd_calibrate(config: &RunConfig, hash: &str) -> Result<(), CliError> {
    let table = load_table(config)?;
    let split = build_split(config, &table)?;
    let dir = prepare_outdir(config, hash, "calibrate")?;
    write_split_files(&dir, &split)?;

    let cal = CalibrationConfig {
        checkpoints: config.calibrate.checkpoints.clone(),
        eval_context_size: config.calibrate.eval_context_size,
        eval_max_targets: config.calibrate.eval_max_targets,
        keep_model_at: config.calibrate.keep_model_at,
        seed: config.seed,
    };
    let out: CalibrationOutput =
        run_calibration(&table, &split, &cnp_config(config), &train_config(config), &cal)
            .map_err(CliError::from)?;
    let report = write_report(config, &dir, &out.records)?;
    if let (Some(epoch), Some(model)) = (config.calibrate.keep_model_at, &out.kept_model) {
        save_checkpoint(&dir.join(format!("checkpoint_{epoch}.json")), model)
            .map_err(CliError::from)?;
    }
    save_checkpoint(
        &dir.join(format!("checkpoint_{}.json", config.training.epochs)),
        &out.final_model,
    )
    .map_err(CliError::from)?;

    let mut log_text = String::from("epoch,split,metric,value\n");
    for rec in &out.train_log {
        log_text.push_str(&format!(
            "{},\"ftrain,dtrain\",episode_nll,{}\n",
            rec.epoch, rec.loss
        ));
    }
    fs::write(dir.join("train_log.csv"), log_text)
        .map_err(|e| CliError::Data(format!("train_log: {e}")))?;

    if config.svg {
        let mut series = Vec::new();
        for fsplit in ["ftrain", "ftest"] {
            for dsplit in ["dtrain", "dtest"] {
                let tag = format!("calibrate:{fsplit},{dsplit}");
                let pts: Vec<(f64, f64)> = out
                    .records
                    .iter()
                    .filter(|r| {
                        r.experiment == tag
                            && r.function_id == "all"
                            && r.metric == molcnp::experiments::MetricName::R2
                    })
                    .filter_map(|r| r.value.map(|v| (r.x, v)))
                    .collect();
                series.push((format!("{fsplit},{dsplit}"), pts));
            }
        }
        write_svg_lines(&dir.join("r2.svg"), "r2 vs epochs", &series)
            .map_err(CliError::from)?;
    }
    println!("calibration report at {}", report.display());
    Ok(())
}

fn cmd_fewshot(config: &RunConfig, hash: &str) -> Result<(), CliError> {
    let table = load_table(config)?;
    let split = build_split(config, &table)?;
    let model = load_required_checkpoint(&config.fewshot.checkpoint, "fewshot")?;
    let dir = prepare_outdir(config, hash, "fewshot")?;
    write_split_files(&dir, &split)?;

    let fs_config = FewshotConfig {
        context_sizes: config.fewshot.context_sizes.clone(),
        models: config.fewshot.models.clone(),
        n_repeats: config.fewshot.n_repeats,
        seed: config.seed,
        knn_k: config.fewshot.knn_k,
        rf: config.fewshot.forest(),
        mlp: config.fewshot.mlp(),
        pretrain: config.fewshot.pretrain(),
    };
    let records = run_fewshot(&table, &split, &model, &fs_config).map_err(CliError::from)?;
    let report = write_report(config, &dir, &records)?;

    if config.svg {
        let mut series = Vec::new();
        for m in &fs_config.models {
            let name = m.to_string();
            let mut by_x: std::collections::BTreeMap<u64, Vec<f64>> = Default::default();
            for r in records.iter().filter(|r| r.model == name) {
                if let Some(v) = r.value {
                    by_x.entry(r.x as u64).or_default().push(v);
                }
            }
            let pts: Vec<(f64, f64)> = by_x
                .into_iter()
                .map(|(x, vs)| (x as f64, vs.iter().sum::<f64>() / vs.len() as f64))
                .collect();
            series.push((name, pts));
        }
        write_svg_lines(&dir.join("r2.svg"), "r2 vs context size", &series)
            .map_err(CliError::from)?;
    }
    println!("fewshot report at {}", report.display());
    Ok(())
}

fn cmd_generalize(config: &RunConfig, hash: &str) -> Result<(), CliError> {
    let table = load_table(config)?;
    let split = build_split(config, &table)?;
    let dir = prepare_outdir(config, hash, "generalize")?;
    write_split_files(&dir, &split)?;

    let gen_config = GeneralizationConfig {
        eval_functions: config.generalize.eval_functions.clone(),
        eval_context_size: config.generalize.eval_context_size,
        seed: config.seed,
    };
    let out = run_generalization(
        &table,
        &split,
        &cnp_config(config),
        &train_config(config),
        &gen_config,
    )
    .map_err(CliError::from)?;
    let report = write_report(config, &dir, &out.records)?;
    fs::write(
        dir.join("grid.csv"),
        molcnp::experiments::format_grid_csv(&out),
    )
    .map_err(|e| CliError::Data(format!("grid: {e}")))?;
    println!("generalization report at {}", report.display());
    Ok(())
}

fn cmd_bo(config: &RunConfig, hash: &str) -> Result<(), CliError> {
    let table = load_table(config)?;
    let split = build_split(config, &table)?;
    let model = load_required_checkpoint(&config.bo.checkpoint, "bo")?;
    let dir = prepare_outdir(config, hash, "bo")?;

    let pool_ids: Vec<String> = match config.bo.pool.as_str() {
        "dtrain" => split.dtrain.clone(),
        "dtest" => split.dtest.clone(),
        "both" => split
            .dtrain
            .iter()
            .chain(split.dtest.iter())
            .cloned()
            .collect(),
        other => {
            return Err(CliError::Config(format!(
                "bo.pool must be dtrain, dtest or both, got `{other}`"
            )))
        }
    };
    let pool = bo_pool(&table, &config.bo.objective, &pool_ids).map_err(CliError::from)?;

    let mut rows: Vec<BoTraceRow> = Vec::new();
    for strategy in &config.bo.strategies {
        let acquisition = AcquisitionConfig {
            strategy: *strategy,
            beta: config.bo.beta,
            n_init: config.bo.n_init,
            n_iterations: config.bo.n_iterations,
        };
        rows.extend(
            run_bo(&pool, &acquisition, &model, &config.bo.seeds).map_err(CliError::from)?,
        );
    }
    let trace_path = dir.join("trace.csv");
    fs::write(&trace_path, format_bo_trace_csv(&rows))
        .map_err(|e| CliError::Data(format!("trace: {e}")))?;

    if config.svg {
        let mut series = Vec::new();
        for strategy in &config.bo.strategies {
            let name = strategy.to_string();
            if let Some(&first_seed) = config.bo.seeds.first() {
                let pts: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|r| r.strategy == name && r.seed == first_seed)
                    .map(|r| (r.iteration as f64, r.best_so_far))
                    .collect();
                series.push((name, pts));
            }
        }
        write_svg_lines(&dir.join("best_so_far.svg"), "best score vs iteration", &series)
            .map_err(CliError::from)?;
    }
    println!("bo trace at {}", trace_path.display());
    Ok(())
}

/// Emit a synthetic task family as TSV.
pub fn cmd_synth(config: &RunConfig) -> Result<(), CliError> {
    let synth = SynthConfig {
        seed: config.seed,
        n_functions: config.synth.n_functions,
        n_molecules: config.synth.n_molecules,
        nbits: config.synth.nbits,
        latent_dim: config.synth.latent_dim,
        noise_sd: config.synth.noise_sd,
    };
    let table = synthetic_task_family(&synth);
    if let Some(parent) = config.synth.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    save_task_table(&table, &config.synth.out).map_err(CliError::from)?;
    println!(
        "wrote synthetic table ({} molecules x {} functions) to {}",
        table.molecules().len(),
        table.functions().len(),
        config.synth.out.display()
    );
    Ok(())
}
