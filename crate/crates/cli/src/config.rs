//! Declarative run configuration: one TOML file, every value overridable
//! with `--set key=value` flags, hashed into the output directory name so
//! distinct configurations never collide.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use molcnp::baselines::{ForestConfig, MlpConfig, PretrainConfig};
use molcnp::experiments::{FewshotModel, Strategy};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; mandatory, never defaulted from the clock.
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_report_format")]
    pub report_format: String,
    /// Also render a flat SVG chart per experiment report.
    #[serde(default)]
    pub svg: bool,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub fingerprint: FingerprintConfig,
    #[serde(default)]
    pub splits: SplitsConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub calibrate: CalibrateConfig,
    #[serde(default)]
    pub fewshot: FewshotCliConfig,
    #[serde(default)]
    pub generalize: GeneralizeConfig,
    #[serde(default)]
    pub bo: BoConfig,
    #[serde(default)]
    pub synth: SynthCliConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_report_format() -> String {
    "csv".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FingerprintConfig {
    pub radius: u32,
    pub nbits: usize,
    /// Cache file written/validated by the fingerprint command.
    pub cache: Option<PathBuf>,
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        FingerprintConfig {
            radius: 3,
            nbits: 1024,
            cache: None,
        }
    }
}

/// Either explicit id lists (files) or seeded sampling.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SplitsConfig {
    pub dtrain_file: Option<PathBuf>,
    pub dtest_file: Option<PathBuf>,
    pub ftrain: Option<Vec<String>>,
    pub ftest: Option<Vec<String>>,
    pub n_dtrain: Option<usize>,
    pub n_dtest: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder_hidden: Vec<usize>,
    pub repr_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub variance_floor: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_hidden: vec![256, 256],
            repr_dim: 128,
            decoder_hidden: vec![256, 256],
            variance_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    /// Epochs at which checkpoints are written; empty means the final epoch.
    pub checkpoints: Vec<usize>,
    pub c_min: usize,
    pub c_max: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub learning_rate: f64,
    pub normalize: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 1000,
            checkpoints: Vec::new(),
            c_min: 5,
            c_max: 256,
            t_min: 256,
            t_max: 256,
            learning_rate: 1e-3,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateConfig {
    pub checkpoints: Vec<usize>,
    pub eval_context_size: usize,
    pub eval_max_targets: usize,
    pub keep_model_at: Option<usize>,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        CalibrateConfig {
            checkpoints: vec![0, 100, 250, 500, 1000],
            eval_context_size: 100,
            eval_max_targets: 512,
            keep_model_at: Some(1000),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FewshotCliConfig {
    /// Trained model checkpoint (from the train command).
    pub checkpoint: Option<PathBuf>,
    pub context_sizes: Vec<usize>,
    pub models: Vec<FewshotModel>,
    pub n_repeats: usize,
    pub knn_k: usize,
    pub rf_estimators: usize,
    pub nn_epochs: usize,
    pub nn_hidden: usize,
}

impl Default for FewshotCliConfig {
    fn default() -> Self {
        FewshotCliConfig {
            checkpoint: None,
            context_sizes: vec![5, 10, 25, 100, 250, 1000],
            models: vec![
                FewshotModel::Cnp,
                FewshotModel::Knn,
                FewshotModel::Fss,
                FewshotModel::Rf,
                FewshotModel::Nn,
            ],
            n_repeats: 10,
            knn_k: 5,
            rf_estimators: 200,
            nn_epochs: 400,
            nn_hidden: 256,
        }
    }
}

impl FewshotCliConfig {
    pub fn forest(&self) -> ForestConfig {
        ForestConfig {
            n_estimators: self.rf_estimators,
            ..ForestConfig::default()
        }
    }

    pub fn mlp(&self) -> MlpConfig {
        MlpConfig {
            hidden: vec![self.nn_hidden; 5],
            epochs: self.nn_epochs,
            learning_rate: 1e-3,
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            hidden: vec![self.nn_hidden; 5],
            pretrain_epochs: self.nn_epochs,
            finetune_epochs: self.nn_epochs,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneralizeConfig {
    pub eval_functions: Vec<String>,
    pub eval_context_size: usize,
}

impl Default for GeneralizeConfig {
    fn default() -> Self {
        GeneralizeConfig {
            eval_functions: vec!["PARP1".into(), "KIT".into(), "F2".into()],
            eval_context_size: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoConfig {
    pub checkpoint: Option<PathBuf>,
    pub objective: String,
    pub strategies: Vec<Strategy>,
    pub beta: f64,
    pub n_init: usize,
    pub n_iterations: usize,
    pub seeds: Vec<u64>,
    /// Molecule pool: "dtrain", "dtest", or "both".
    pub pool: String,
}

impl Default for BoConfig {
    fn default() -> Self {
        BoConfig {
            checkpoint: None,
            objective: "F2".into(),
            strategies: vec![Strategy::Random, Strategy::Greedy, Strategy::Lcb],
            beta: 1.0,
            n_init: 5,
            n_iterations: 4995,
            seeds: vec![0, 1, 2, 3, 4],
            pool: "both".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthCliConfig {
    pub n_functions: usize,
    pub n_molecules: usize,
    pub nbits: usize,
    pub latent_dim: usize,
    pub noise_sd: f64,
    pub out: PathBuf,
}

impl Default for SynthCliConfig {
    fn default() -> Self {
        SynthCliConfig {
            n_functions: 45,
            n_molecules: 3000,
            nbits: 256,
            latent_dim: 8,
            noise_sd: 0.15,
            out: PathBuf::from("synthetic.tsv"),
        }
    }
}

/// Parse the TOML file, apply `--set key=value` overrides (dotted paths,
/// values parsed as TOML literals with a string fallback), and deserialize.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<(RunConfig, String), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: toml::Value = text
        .parse()
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
    for entry in overrides {
        let (key, raw) = entry
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set `{entry}` is not KEY=VALUE")))?;
        apply_override(&mut value, key.trim(), raw.trim())?;
    }
    let config: RunConfig = value
        .clone()
        .try_into()
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
    let hash = config_hash(&value);
    Ok((config, hash))
}

fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<(), CliError> {
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(table) => table["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut cursor = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("--set {key}: `{part}` is not a table")))?;
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let last = parts.last().expect("split is non-empty");
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| CliError::Config(format!("--set {key}: parent is not a table")))?;
    table.insert(last.to_string(), parsed);
    Ok(())
}

/// Canonical hash of the resolved config: JSON with sorted keys, sha256,
/// first 12 hex digits.
pub fn config_hash(value: &toml::Value) -> String {
    fn canonical(v: &toml::Value) -> serde_json::Value {
        match v {
            toml::Value::Table(t) => {
                let map: BTreeMap<String, serde_json::Value> =
                    t.iter().map(|(k, val)| (k.clone(), canonical(val))).collect();
                serde_json::to_value(map).expect("canonical json")
            }
            toml::Value::Array(a) => {
                serde_json::Value::Array(a.iter().map(canonical).collect())
            }
            other => serde_json::to_value(other.clone()).expect("scalar json"),
        }
    }
    let json = serde_json::to_string(&canonical(value)).expect("canonical json");
    let digest = Sha256::digest(json.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    hex[..12].to_string()
}

impl RunConfig {
    /// Field-level validation before any computation touches data.
    /// `needs_dataset` is false for commands that create the dataset.
    pub fn validate(&self, needs_dataset: bool) -> Result<(), CliError> {
        if needs_dataset && !self.dataset.path.exists() {
            return Err(CliError::Config(format!(
                "dataset.path `{}` does not exist",
                self.dataset.path.display()
            )));
        }
        if self.fingerprint.nbits < 8 || !self.fingerprint.nbits.is_power_of_two() {
            return Err(CliError::Config(format!(
                "fingerprint.nbits must be a power of two >= 8, got {}",
                self.fingerprint.nbits
            )));
        }
        if self.report_format != "csv" && self.report_format != "json" {
            return Err(CliError::Config(format!(
                "report_format must be `csv` or `json`, got `{}`",
                self.report_format
            )));
        }
        for file in [&self.splits.dtrain_file, &self.splits.dtest_file]
            .into_iter()
            .flatten()
        {
            if !file.exists() {
                return Err(CliError::Config(format!(
                    "split file `{}` does not exist",
                    file.display()
                )));
            }
        }
        if self.training.c_min < 1 || self.training.c_max < self.training.c_min {
            return Err(CliError::Config("training.c_min/c_max malformed".into()));
        }
        if self.training.t_min < 1 || self.training.t_max < self.training.t_min {
            return Err(CliError::Config("training.t_min/t_max malformed".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("config.toml");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "seed = 7\n[dataset]\npath = \"x.tsv\"\n");
        let (config, hash) = load_config(&path, &[]).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.fingerprint.nbits, 1024);
        assert_eq!(config.training.epochs, 1000);
        assert_eq!(hash.len(), 12);
    }

    #[test]
    fn missing_seed_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "[dataset]\npath = \"x.tsv\"\n");
        assert!(load_config(&path, &[]).is_err());
    }

    #[test]
    fn overrides_change_values_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "seed = 7\n[dataset]\npath = \"x.tsv\"\n");
        let (base, h0) = load_config(&path, &[]).unwrap();
        let (over, h1) =
            load_config(&path, &["training.epochs=5".into(), "seed=9".into()]).unwrap();
        assert_eq!(base.training.epochs, 1000);
        assert_eq!(over.training.epochs, 5);
        assert_eq!(over.seed, 9);
        assert_ne!(h0, h1);

        let (_, h2) = load_config(&path, &["seed=9".into(), "training.epochs=5".into()]).unwrap();
        assert_eq!(h1, h2); // override order does not matter for the hash

        // arrays and strings
        let (c, _) = load_config(
            &path,
            &[
                "training.checkpoints=[1, 2, 3]".into(),
                "bo.objective=KIT".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.training.checkpoints, vec![1, 2, 3]);
        assert_eq!(c.bo.objective, "KIT");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "seed = 7\ntypo_field = 1\n[dataset]\npath = \"x.tsv\"\n",
        );
        let err = load_config(&path, &[]);
        assert!(err.is_err());
    }

    #[test]
    fn validation_requires_existing_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data.tsv");
        fs::write(&data, "molecule_id\tsmiles\tA\nm1\tC\t1\n").unwrap();
        let body = format!("seed = 1\n[dataset]\npath = {:?}\n", data);
        let path = write_config(dir.path(), &body);
        let (config, _) = load_config(&path, &[]).unwrap();
        assert!(config.validate(true).is_ok());

        let (bad, _) = load_config(&path, &["dataset.path=\"nope.tsv\"".into()]).unwrap();
        assert!(matches!(bad.validate(true), Err(CliError::Config(_))));
    }
}
