//! Score-table ingestion, datapoint/function splits, drug-likeness-modified
//! score synthesis, and the synthetic task family used by desk-scale tests.
//!
//! The canonical on-disk form is a TSV with a header naming `molecule_id`,
//! `smiles`, optional `qed`, optional `fingerprint` (hex, as written by the
//! fingerprint cache) and one column per function. Empty cells and the
//! literal `NaN` are missing scores — missing entries are first-class and
//! everything downstream skips them.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{ecfp_fingerprint, parse_smiles, Fingerprint, SmilesError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {detail}")]
    MalformedHeader { detail: String },
    #[error("row at line {line} has {got} fields, expected {expected}")]
    RaggedRow {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("bad numeric value `{value}` at line {line}, column {column}")]
    BadNumeric {
        line: usize,
        column: String,
        value: String,
    },
    #[error("duplicate molecule_id `{id}` at line {line}")]
    DuplicateMoleculeId { id: String, line: usize },
    #[error("molecule `{molecule_id}` at line {line}: {source}")]
    Smiles {
        molecule_id: String,
        line: usize,
        #[source]
        source: SmilesError,
    },
    #[error("pool of {available} molecules cannot supply {needed}")]
    InsufficientPool { needed: usize, available: usize },
    #[error("unknown function name `{name}`")]
    UnknownFunctionName { name: String },
    #[error("unknown molecule id `{id}`")]
    UnknownMoleculeId { id: String },
    #[error("invalid split: {detail}")]
    InvalidSplit { detail: String },
    #[error("qed value {value} outside [0, 1]")]
    QedOutOfRange { value: f64 },
    #[error("molecule `{molecule_id}` has no qed value")]
    MissingQed { molecule_id: String },
}

/// One row of the molecule axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    pub id: String,
    /// May be empty when a precomputed fingerprint is supplied (synthetic
    /// families have no structures).
    pub smiles: String,
    pub fingerprint: Option<Fingerprint>,
    pub qed: Option<f64>,
}

/// Molecules x functions score matrix with optional cells.
///
/// Scores are docking-score-like: real-valued, lower is better. The table is
/// immutable after construction; derivations return a new table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskTable {
    molecules: Vec<Molecule>,
    functions: Vec<String>,
    /// Row-major `[molecule][function]`.
    scores: Vec<Option<f64>>,
    #[serde(skip)]
    mol_index: HashMap<String, usize>,
    #[serde(skip)]
    func_index: HashMap<String, usize>,
}

impl PartialEq for TaskTable {
    fn eq(&self, other: &Self) -> bool {
        self.molecules == other.molecules
            && self.functions == other.functions
            && self.scores == other.scores
    }
}

impl TaskTable {
    pub fn new(
        molecules: Vec<Molecule>,
        functions: Vec<String>,
        scores: Vec<Option<f64>>,
    ) -> Result<Self, DataError> {
        if scores.len() != molecules.len() * functions.len() {
            return Err(DataError::MalformedHeader {
                detail: format!(
                    "score matrix has {} cells for {} molecules x {} functions",
                    scores.len(),
                    molecules.len(),
                    functions.len()
                ),
            });
        }
        let mut mol_index = HashMap::new();
        for (i, m) in molecules.iter().enumerate() {
            if mol_index.insert(m.id.clone(), i).is_some() {
                return Err(DataError::DuplicateMoleculeId {
                    id: m.id.clone(),
                    line: 0,
                });
            }
            if let Some(q) = m.qed {
                if !(0.0..=1.0).contains(&q) {
                    return Err(DataError::QedOutOfRange { value: q });
                }
            }
        }
        let mut func_index = HashMap::new();
        for (j, f) in functions.iter().enumerate() {
            if func_index.insert(f.clone(), j).is_some() {
                return Err(DataError::MalformedHeader {
                    detail: format!("duplicate function column `{f}`"),
                });
            }
        }
        Ok(TaskTable {
            molecules,
            functions,
            scores,
            mol_index,
            func_index,
        })
    }

    pub fn molecules(&self) -> &[Molecule] {
        &self.molecules
    }

    pub fn functions(&self) -> &[String] {
        &self.functions
    }

    pub fn molecule_index(&self, id: &str) -> Option<usize> {
        self.mol_index.get(id).copied()
    }

    pub fn function_index(&self, id: &str) -> Option<usize> {
        self.func_index.get(id).copied()
    }

    pub fn score(&self, mol: usize, func: usize) -> Option<f64> {
        self.scores[mol * self.functions.len() + func]
    }

    /// Fingerprint bit length, from the first molecule that has one.
    pub fn nbits(&self) -> Option<usize> {
        self.molecules
            .iter()
            .find_map(|m| m.fingerprint.as_ref().map(Fingerprint::nbits))
    }

    /// All `(molecule index, score)` observations of one function.
    pub fn observations(&self, func: usize) -> Vec<(usize, f64)> {
        (0..self.molecules.len())
            .filter_map(|m| self.score(m, func).map(|s| (m, s)))
            .collect()
    }

    /// Observations of `func` restricted to molecules flagged in `mask`.
    pub fn observations_masked(&self, func: usize, mask: &[bool]) -> Vec<(usize, f64)> {
        (0..self.molecules.len())
            .filter(|&m| mask[m])
            .filter_map(|m| self.score(m, func).map(|s| (m, s)))
            .collect()
    }

    /// Molecule-id list -> boolean mask over rows; unknown ids are errors.
    pub fn molecule_mask(&self, ids: &[String]) -> Result<Vec<bool>, DataError> {
        let mut mask = vec![false; self.molecules.len()];
        for id in ids {
            let idx = self
                .molecule_index(id)
                .ok_or_else(|| DataError::UnknownMoleculeId { id: id.clone() })?;
            mask[idx] = true;
        }
        Ok(mask)
    }

    /// Attach precomputed fingerprints (e.g. from a cache file) to the
    /// molecules they name; unknown ids are ignored, existing fingerprints
    /// are replaced.
    pub fn attach_fingerprints(&mut self, entries: &[(String, Fingerprint)]) {
        for (id, fp) in entries {
            if let Some(&m) = self.mol_index.get(id) {
                self.molecules[m].fingerprint = Some(fp.clone());
            }
        }
    }

    /// Compute fingerprints for every molecule that lacks one, from SMILES.
    pub fn ensure_fingerprints(&mut self, radius: u32, nbits: usize) -> Result<(), DataError> {
        for (i, mol) in self.molecules.iter_mut().enumerate() {
            if mol.fingerprint.is_some() {
                continue;
            }
            let graph = parse_smiles(&mol.smiles).map_err(|source| DataError::Smiles {
                molecule_id: mol.id.clone(),
                line: i + 2,
                source,
            })?;
            mol.fingerprint = Some(ecfp_fingerprint(&graph, radius, nbits));
        }
        Ok(())
    }

    fn rebuild_indices(&mut self) {
        self.mol_index = self
            .molecules
            .iter()
            .enumerate()
            .map(|(i, m)| (m.id.clone(), i))
            .collect();
        self.func_index = self
            .functions
            .iter()
            .enumerate()
            .map(|(j, f)| (f.clone(), j))
            .collect();
    }
}

/// Datapoint-axis and function-axis split of a [`TaskTable`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub dtrain: Vec<String>,
    pub dtest: Vec<String>,
    pub ftrain: Vec<String>,
    pub ftest: Vec<String>,
}

impl SplitSpec {
    pub fn validate(&self, table: &TaskTable) -> Result<(), DataError> {
        fn check_disjoint(a: &[String], b: &[String], what: &str) -> Result<(), DataError> {
            let set: HashSet<&String> = a.iter().collect();
            match b.iter().find(|id| set.contains(id)) {
                Some(id) => Err(DataError::InvalidSplit {
                    detail: format!("{what} overlap on `{id}`"),
                }),
                None => Ok(()),
            }
        }
        fn check_unique(part: &[String], what: &str) -> Result<(), DataError> {
            let mut seen = HashSet::new();
            for id in part {
                if !seen.insert(id) {
                    return Err(DataError::InvalidSplit {
                        detail: format!("{what} lists `{id}` twice"),
                    });
                }
            }
            Ok(())
        }
        check_disjoint(&self.dtrain, &self.dtest, "dtrain/dtest")?;
        check_disjoint(&self.ftrain, &self.ftest, "ftrain/ftest")?;
        for (part, what) in [(&self.dtrain, "dtrain"), (&self.dtest, "dtest")] {
            if part.is_empty() {
                return Err(DataError::InvalidSplit {
                    detail: format!("{what} is empty"),
                });
            }
            check_unique(part, what)?;
            for id in part {
                if table.molecule_index(id).is_none() {
                    return Err(DataError::UnknownMoleculeId { id: id.clone() });
                }
            }
        }
        for (part, what) in [(&self.ftrain, "ftrain"), (&self.ftest, "ftest")] {
            check_unique(part, what)?;
            for id in part {
                if table.function_index(id).is_none() {
                    return Err(DataError::UnknownFunctionName { name: id.clone() });
                }
            }
        }
        Ok(())
    }
}

/// How to build a [`SplitSpec`]: explicit id lists (the faithful path when
/// pre-split molecule lists ship with a dataset) or seeded sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SplitConfig {
    Explicit {
        dtrain: Vec<String>,
        dtest: Vec<String>,
        ftrain: Vec<String>,
        ftest: Vec<String>,
    },
    Sampled {
        n_dtrain: usize,
        n_dtest: usize,
        /// Molecule pools to draw from; `None` means the whole table.
        dtrain_pool: Option<Vec<String>>,
        dtest_pool: Option<Vec<String>>,
        /// Test functions by name; everything else becomes ftrain.
        ftest: Vec<String>,
    },
}

/// The five benchmark regression targets used as the held-out function set.
pub const DEFAULT_FTEST: [&str; 5] = ["ESR2", "KIT", "PARP1", "PGR", "F2"];

impl SplitConfig {
    /// 2500/2500 molecule sampling with the five named held-out targets.
    pub fn default_benchmark() -> Self {
        SplitConfig::Sampled {
            n_dtrain: 2500,
            n_dtest: 2500,
            dtrain_pool: None,
            dtest_pool: None,
            ftest: DEFAULT_FTEST.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub fn make_splits(
    table: &TaskTable,
    config: &SplitConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SplitSpec, DataError> {
    let spec = match config {
        SplitConfig::Explicit {
            dtrain,
            dtest,
            ftrain,
            ftest,
        } => SplitSpec {
            dtrain: dtrain.clone(),
            dtest: dtest.clone(),
            ftrain: ftrain.clone(),
            ftest: ftest.clone(),
        },
        SplitConfig::Sampled {
            n_dtrain,
            n_dtest,
            dtrain_pool,
            dtest_pool,
            ftest,
        } => {
            for name in ftest {
                if table.function_index(name).is_none() {
                    return Err(DataError::UnknownFunctionName { name: name.clone() });
                }
            }
            let all_ids: Vec<String> = table.molecules.iter().map(|m| m.id.clone()).collect();
            let pool1 = match dtrain_pool {
                Some(ids) => {
                    table.molecule_mask(ids)?;
                    ids.clone()
                }
                None => all_ids.clone(),
            };
            if pool1.len() < *n_dtrain {
                return Err(DataError::InsufficientPool {
                    needed: *n_dtrain,
                    available: pool1.len(),
                });
            }
            let mut dtrain: Vec<String> = pool1.choose_multiple(rng, *n_dtrain).cloned().collect();
            dtrain.sort();
            let taken: HashSet<&String> = dtrain.iter().collect();
            let pool2: Vec<String> = match dtest_pool {
                Some(ids) => {
                    table.molecule_mask(ids)?;
                    ids.iter().filter(|id| !taken.contains(id)).cloned().collect()
                }
                None => all_ids
                    .into_iter()
                    .filter(|id| !taken.contains(id))
                    .collect(),
            };
            if pool2.len() < *n_dtest {
                return Err(DataError::InsufficientPool {
                    needed: *n_dtest,
                    available: pool2.len(),
                });
            }
            let mut dtest: Vec<String> = pool2.choose_multiple(rng, *n_dtest).cloned().collect();
            dtest.sort();
            let ftest_set: HashSet<&String> = ftest.iter().collect();
            let ftrain: Vec<String> = table
                .functions
                .iter()
                .filter(|f| !ftest_set.contains(f))
                .cloned()
                .collect();
            SplitSpec {
                dtrain,
                dtest,
                ftrain,
                ftest: ftest.clone(),
            }
        }
    };
    spec.validate(table)?;
    Ok(spec)
}

/// The drug-likeness-modified score `s + 10 (1 - qed)`.
pub fn qed_modified_score(s: f64, qed: f64) -> Result<f64, DataError> {
    if !(0.0..=1.0).contains(&qed) {
        return Err(DataError::QedOutOfRange { value: qed });
    }
    Ok(s + 10.0 * (1.0 - qed))
}

/// Suffix appended to a function id by [`derive_modified_functions`].
pub const QED_SUFFIX: &str = "_qed";

/// Append, for each selected function `f`, a column `f_qed` holding the
/// modified scores. Re-deriving overwrites existing `f_qed` columns instead
/// of duplicating them; original columns are untouched.
pub fn derive_modified_functions(
    table: &TaskTable,
    subset: &[String],
) -> Result<TaskTable, DataError> {
    let mut out = table.clone();
    for name in subset {
        let src = table
            .function_index(name)
            .ok_or_else(|| DataError::UnknownFunctionName { name: name.clone() })?;
        let mut column: Vec<Option<f64>> = Vec::with_capacity(table.molecules.len());
        for m in 0..table.molecules.len() {
            match table.score(m, src) {
                Some(s) => {
                    let qed = table.molecules[m].qed.ok_or_else(|| DataError::MissingQed {
                        molecule_id: table.molecules[m].id.clone(),
                    })?;
                    column.push(Some(qed_modified_score(s, qed)?));
                }
                None => column.push(None),
            }
        }
        let new_name = format!("{name}{QED_SUFFIX}");
        match out.function_index(&new_name) {
            Some(j) => {
                let width = out.functions.len();
                for (m, v) in column.into_iter().enumerate() {
                    out.scores[m * width + j] = v;
                }
            }
            None => {
                let old_width = out.functions.len();
                let mut scores = Vec::with_capacity(out.molecules.len() * (old_width + 1));
                for m in 0..out.molecules.len() {
                    scores.extend_from_slice(&out.scores[m * old_width..(m + 1) * old_width]);
                    scores.push(column[m]);
                }
                out.scores = scores;
                out.functions.push(new_name);
                out.rebuild_indices();
            }
        }
    }
    Ok(out)
}

/// Configuration of the synthetic task family: random binary fingerprints,
/// a shared random projection to a low-dimensional latent, and per-function
/// affine maps of the latent plus Gaussian noise. Functions share structure
/// through the projection, which is what a transfer learner can exploit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_functions: usize,
    pub n_molecules: usize,
    pub nbits: usize,
    pub latent_dim: usize,
    pub noise_sd: f64,
}

/// Synthetic table generator. Also fills the `qed` column with a value
/// `u(m) in [0, 1]` derived from the shared latent (a squashed projection),
/// so modified-score experiments have a learnable drug-likeness analogue.
pub fn synthetic_task_family(config: &SynthConfig) -> TaskTable {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_molecules;
    let d = config.latent_dim;

    // shared projection P: latent_dim x nbits, scaled so latents are O(1)
    let scale = 1.0 / (config.nbits as f64).sqrt();
    let projection: Vec<f64> = (0..d * config.nbits)
        .map(|_| gauss(&mut rng) * scale)
        .collect();

    let mut fingerprints = Vec::with_capacity(n);
    let mut latents = vec![0.0f64; n * d];
    for m in 0..n {
        let mut fp = Fingerprint::zeros(config.nbits, 0);
        for bit in 0..config.nbits {
            if rng.gen_bool(0.5) {
                fp.set(bit);
            }
        }
        for k in 0..d {
            let row = &projection[k * config.nbits..(k + 1) * config.nbits];
            let mut acc = 0.0;
            for bit in 0..config.nbits {
                if fp.bit(bit) {
                    acc += row[bit];
                }
            }
            latents[m * d + k] = acc;
        }
        fingerprints.push(fp);
    }

    // squash a centered latent projection into [0, 1] for the qed column
    let qed_weights: Vec<f64> = (0..d).map(|_| gauss(&mut rng)).collect();
    let raw: Vec<f64> = (0..n)
        .map(|m| {
            (0..d)
                .map(|k| qed_weights[k] * latents[m * d + k])
                .sum::<f64>()
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let sd = (raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64)
        .sqrt()
        .max(1e-12);
    let qed: Vec<f64> = raw
        .iter()
        .map(|v| 0.5 * (1.0 + ((v - mean) / sd).tanh()))
        .collect();

    let mut weights = vec![0.0f64; config.n_functions * d];
    let mut offsets = vec![0.0f64; config.n_functions];
    for f in 0..config.n_functions {
        for k in 0..d {
            weights[f * d + k] = gauss(&mut rng);
        }
        offsets[f] = gauss(&mut rng);
    }

    let width = config.n_functions;
    let mut scores = vec![None; n * width];
    for m in 0..n {
        for f in 0..width {
            let mut y = offsets[f];
            for k in 0..d {
                y += weights[f * d + k] * latents[m * d + k];
            }
            if config.noise_sd > 0.0 {
                y += config.noise_sd * gauss(&mut rng);
            }
            scores[m * width + f] = Some(y);
        }
    }

    let molecules = (0..n)
        .map(|m| Molecule {
            id: format!("m{m:05}"),
            smiles: String::new(),
            fingerprint: Some(fingerprints[m].clone()),
            qed: Some(qed[m]),
        })
        .collect();
    let functions = (0..width).map(|f| format!("f{f:03}")).collect();
    TaskTable::new(molecules, functions, scores).expect("constructed consistently")
}

/// Standard normal via Box-Muller; keeps the generator stream independent of
/// rand_distr internals.
pub(crate) fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > 1e-300 {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

// --- TSV reading and writing -------------------------------------------------

const COL_MOLECULE: &str = "molecule_id";
const COL_SMILES: &str = "smiles";
const COL_QED: &str = "qed";
const COL_FP: &str = "fingerprint";

/// Parse the canonical TSV format. `fingerprint_radius` is recorded on
/// fingerprints decoded from the optional hex column.
pub fn load_task_table(path: &Path, fingerprint_radius: u32) -> Result<TaskTable, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_task_table(&text, fingerprint_radius)
}

pub fn parse_task_table(text: &str, fingerprint_radius: u32) -> Result<TaskTable, DataError> {
    let mut lines = text.lines();
    let header_line = lines.next().ok_or_else(|| DataError::MalformedHeader {
        detail: "empty file".to_string(),
    })?;
    let header: Vec<&str> = header_line.split('\t').collect();

    let mut seen = HashSet::new();
    for name in &header {
        if !seen.insert(*name) {
            return Err(DataError::MalformedHeader {
                detail: format!("duplicate column `{name}`"),
            });
        }
    }
    let col = |name: &str| header.iter().position(|h| *h == name);
    let mol_col = col(COL_MOLECULE).ok_or_else(|| DataError::MalformedHeader {
        detail: format!("missing `{COL_MOLECULE}` column"),
    })?;
    let smiles_col = col(COL_SMILES).ok_or_else(|| DataError::MalformedHeader {
        detail: format!("missing `{COL_SMILES}` column"),
    })?;
    let qed_col = col(COL_QED);
    let fp_col = col(COL_FP);

    let function_cols: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter(|(i, name)| {
            *i != mol_col && *i != smiles_col && Some(*i) != qed_col && Some(*i) != fp_col
                && !name.is_empty()
        })
        .map(|(i, name)| (i, name.to_string()))
        .collect();

    let functions: Vec<String> = function_cols.iter().map(|(_, n)| n.clone()).collect();
    let mut molecules = Vec::new();
    let mut scores = Vec::new();
    let mut ids = HashSet::new();

    for (lineno, line) in lines.enumerate() {
        let line_number = lineno + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != header.len() {
            return Err(DataError::RaggedRow {
                line: line_number,
                expected: header.len(),
                got: fields.len(),
            });
        }
        let id = fields[mol_col].to_string();
        if id.is_empty() {
            return Err(DataError::BadNumeric {
                line: line_number,
                column: COL_MOLECULE.to_string(),
                value: String::new(),
            });
        }
        if !ids.insert(id.clone()) {
            return Err(DataError::DuplicateMoleculeId {
                id,
                line: line_number,
            });
        }
        let qed = match qed_col {
            Some(c) if !fields[c].is_empty() && fields[c] != "NaN" => {
                let v: f64 = fields[c].parse().map_err(|_| DataError::BadNumeric {
                    line: line_number,
                    column: COL_QED.to_string(),
                    value: fields[c].to_string(),
                })?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(DataError::QedOutOfRange { value: v });
                }
                Some(v)
            }
            _ => None,
        };
        let fingerprint = match fp_col {
            Some(c) if !fields[c].is_empty() => {
                Some(Fingerprint::from_hex(fields[c], fingerprint_radius).ok_or_else(|| {
                    DataError::BadNumeric {
                        line: line_number,
                        column: COL_FP.to_string(),
                        value: fields[c].to_string(),
                    }
                })?)
            }
            _ => None,
        };
        for (c, name) in &function_cols {
            let cell = fields[*c];
            if cell.is_empty() || cell == "NaN" {
                scores.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| DataError::BadNumeric {
                    line: line_number,
                    column: name.clone(),
                    value: cell.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(DataError::BadNumeric {
                        line: line_number,
                        column: name.clone(),
                        value: cell.to_string(),
                    });
                }
                scores.push(Some(v));
            }
        }
        molecules.push(Molecule {
            id,
            smiles: fields[smiles_col].to_string(),
            fingerprint,
            qed,
        });
    }
    TaskTable::new(molecules, functions, scores)
}

/// Write the canonical TSV; together with [`load_task_table`] this
/// round-trips tables exactly (floats print shortest-round-trip).
pub fn save_task_table(table: &TaskTable, path: &Path) -> Result<(), DataError> {
    fs::write(path, format_task_table(table)).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn format_task_table(table: &TaskTable) -> String {
    let has_qed = table.molecules.iter().any(|m| m.qed.is_some());
    let has_fp = table.molecules.iter().any(|m| m.fingerprint.is_some());
    let mut out = String::new();
    out.push_str(COL_MOLECULE);
    out.push('\t');
    out.push_str(COL_SMILES);
    if has_qed {
        out.push('\t');
        out.push_str(COL_QED);
    }
    if has_fp {
        out.push('\t');
        out.push_str(COL_FP);
    }
    for f in &table.functions {
        out.push('\t');
        out.push_str(f);
    }
    out.push('\n');
    for (m, mol) in table.molecules.iter().enumerate() {
        out.push_str(&mol.id);
        out.push('\t');
        out.push_str(&mol.smiles);
        if has_qed {
            out.push('\t');
            if let Some(q) = mol.qed {
                out.push_str(&q.to_string());
            }
        }
        if has_fp {
            out.push('\t');
            if let Some(fp) = &mol.fingerprint {
                out.push_str(&fp.to_hex());
            }
        }
        for f in 0..table.functions.len() {
            out.push('\t');
            if let Some(s) = table.score(m, f) {
                out.push_str(&s.to_string());
            }
        }
        out.push('\n');
    }
    out
}

/// Newline-delimited id list (the split-file interchange format).
pub fn read_id_list(path: &Path) -> Result<Vec<String>, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn write_id_list(path: &Path, ids: &[String]) -> Result<(), DataError> {
    let mut text = ids.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn toy_tsv() -> &'static str {
        "molecule_id\tsmiles\tqed\tA\tB\nm1\tCCO\t0.8\t-9.5\t-7.25\nm2\tCCC\t0.5\t-8\t\n"
    }

    #[test]
    fn load_toy_table() {
        let t = parse_task_table(toy_tsv(), 3).unwrap();
        assert_eq!(t.molecules().len(), 2);
        assert_eq!(t.functions(), &["A".to_string(), "B".to_string()]);
        assert_eq!(t.score(0, 0), Some(-9.5));
        assert_eq!(t.score(0, 1), Some(-7.25));
        assert_eq!(t.score(1, 0), Some(-8.0));
        assert_eq!(t.score(1, 1), None); // empty cell is missing, not zero
        assert_eq!(t.molecules()[0].qed, Some(0.8));
    }

    #[test]
    fn nan_literal_is_missing() {
        let t = parse_task_table("molecule_id\tsmiles\tA\nm1\tC\tNaN\nm2\tC\t3.5\n", 3).unwrap();
        assert_eq!(t.score(0, 0), None);
        assert_eq!(t.score(1, 0), Some(3.5));
    }

    #[test]
    fn duplicate_molecule_rejected() {
        let text = "molecule_id\tsmiles\tA\nm1\tC\t1\nm1\tC\t2\n";
        assert!(matches!(
            parse_task_table(text, 3),
            Err(DataError::DuplicateMoleculeId { line: 3, .. })
        ));
    }

    #[test]
    fn ragged_row_rejected() {
        let text = "molecule_id\tsmiles\tA\nm1\tC\n";
        assert!(matches!(
            parse_task_table(text, 3),
            Err(DataError::RaggedRow {
                line: 2,
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn bad_numeric_names_line_and_column() {
        let text = "molecule_id\tsmiles\tA\nm1\tC\tnope\n";
        match parse_task_table(text, 3) {
            Err(DataError::BadNumeric { line, column, .. }) => {
                assert_eq!((line, column.as_str()), (2, "A"));
            }
            other => panic!("expected BadNumeric, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_rejected() {
        assert!(matches!(
            parse_task_table("id\tsmiles\tA\nm1\tC\t1\n", 3),
            Err(DataError::MalformedHeader { .. })
        ));
        assert!(matches!(
            parse_task_table("molecule_id\tsmiles\tA\tA\nm1\tC\t1\t2\n", 3),
            Err(DataError::MalformedHeader { .. })
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let config = SynthConfig {
            seed: 7,
            n_functions: 4,
            n_molecules: 12,
            nbits: 64,
            latent_dim: 3,
            noise_sd: 0.5,
        };
        let table = synthetic_task_family(&config);
        let text = format_task_table(&table);
        let back = parse_task_table(&text, 0).unwrap();
        assert_eq!(table, back);
        // and a second round trip is byte-stable
        assert_eq!(format_task_table(&back), text);
    }

    #[test]
    fn make_splits_explicit_echoes_and_validates() {
        let table = parse_task_table(toy_tsv(), 3).unwrap();
        let config = SplitConfig::Explicit {
            dtrain: vec!["m1".to_string()],
            dtest: vec!["m2".to_string()],
            ftrain: vec!["A".to_string()],
            ftest: vec!["B".to_string()],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = make_splits(&table, &config, &mut rng).unwrap();
        assert_eq!(spec.dtrain, vec!["m1"]);
        assert_eq!(spec.ftest, vec!["B"]);

        let overlapping = SplitConfig::Explicit {
            dtrain: vec!["m1".to_string(), "m2".to_string()],
            dtest: vec!["m2".to_string()],
            ftrain: vec!["A".to_string()],
            ftest: vec!["B".to_string()],
        };
        assert!(matches!(
            make_splits(&table, &overlapping, &mut rng),
            Err(DataError::InvalidSplit { .. })
        ));
    }

    #[test]
    fn make_splits_default_benchmark_sizes() {
        let mut functions: Vec<String> = (0..53).map(|i| format!("T{i:02}")).collect();
        functions.extend(DEFAULT_FTEST.iter().map(|s| s.to_string()));
        let n = 5100;
        let molecules: Vec<Molecule> = (0..n)
            .map(|m| Molecule {
                id: format!("m{m:05}"),
                smiles: "C".to_string(),
                fingerprint: None,
                qed: None,
            })
            .collect();
        let scores = vec![Some(0.0); n * functions.len()];
        let table = TaskTable::new(molecules, functions, scores).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = make_splits(&table, &SplitConfig::default_benchmark(), &mut rng).unwrap();
        assert_eq!(spec.dtrain.len(), 2500);
        assert_eq!(spec.dtest.len(), 2500);
        assert_eq!(spec.ftrain.len(), 53);
        let mut ftest = spec.ftest.clone();
        ftest.sort();
        let mut expect: Vec<String> = DEFAULT_FTEST.iter().map(|s| s.to_string()).collect();
        expect.sort();
        assert_eq!(ftest, expect);

        let mut rng2 = ChaCha8Rng::seed_from_u64(11);
        let spec2 = make_splits(&table, &SplitConfig::default_benchmark(), &mut rng2).unwrap();
        assert_eq!(spec, spec2);
    }

    #[test]
    fn make_splits_insufficient_pool() {
        let table = parse_task_table(toy_tsv(), 3).unwrap();
        let config = SplitConfig::Sampled {
            n_dtrain: 5,
            n_dtest: 5,
            dtrain_pool: None,
            dtest_pool: None,
            ftest: vec!["B".to_string()],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            make_splits(&table, &config, &mut rng),
            Err(DataError::InsufficientPool { .. })
        ));
    }

    #[test]
    fn make_splits_unknown_function() {
        let table = parse_task_table(toy_tsv(), 3).unwrap();
        let config = SplitConfig::Sampled {
            n_dtrain: 1,
            n_dtest: 1,
            dtrain_pool: None,
            dtest_pool: None,
            ftest: vec!["NOPE".to_string()],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            make_splits(&table, &config, &mut rng),
            Err(DataError::UnknownFunctionName { .. })
        ));
    }

    #[test]
    fn qed_modified_score_formula() {
        assert_eq!(qed_modified_score(-9.5, 1.0).unwrap(), -9.5);
        assert_eq!(qed_modified_score(-9.5, 0.0).unwrap(), 0.5);
        let v = qed_modified_score(-9.2, 0.75).unwrap();
        assert!((v - (-6.7)).abs() < 1e-12);
        assert!(matches!(
            qed_modified_score(0.0, 1.5),
            Err(DataError::QedOutOfRange { .. })
        ));
        assert!(matches!(
            qed_modified_score(0.0, -0.1),
            Err(DataError::QedOutOfRange { .. })
        ));
    }

    #[test]
    fn derive_modified_functions_appends_and_overwrites() {
        let table = parse_task_table(toy_tsv(), 3).unwrap();
        let subset = vec!["A".to_string()];
        let derived = derive_modified_functions(&table, &subset).unwrap();
        assert_eq!(derived.functions().len(), 3);
        let j = derived.function_index("A_qed").unwrap();
        for m in 0..2 {
            let delta = derived.score(m, j).unwrap() - derived.score(m, 0).unwrap();
            let expect = 10.0 * (1.0 - derived.molecules()[m].qed.unwrap());
            assert!((delta - expect).abs() < 1e-12);
        }
        // missing source cells stay missing
        assert_eq!(derived.score(1, derived.function_index("B").unwrap()), None);

        // idempotent: re-deriving overwrites rather than duplicates
        let again = derive_modified_functions(&derived, &subset).unwrap();
        assert_eq!(again.functions().len(), 3);
        assert_eq!(again, derived);

        // empty subset leaves the table unchanged
        let same = derive_modified_functions(&table, &[]).unwrap();
        assert_eq!(same, table);
    }

    #[test]
    fn derive_modified_requires_qed() {
        let text = "molecule_id\tsmiles\tA\nm1\tC\t-3\n";
        let table = parse_task_table(text, 3).unwrap();
        assert!(matches!(
            derive_modified_functions(&table, &["A".to_string()]),
            Err(DataError::MissingQed { .. })
        ));
    }

    #[test]
    fn synthetic_family_is_seed_deterministic() {
        let config = SynthConfig {
            seed: 42,
            n_functions: 3,
            n_molecules: 20,
            nbits: 32,
            latent_dim: 2,
            noise_sd: 0.1,
        };
        let a = synthetic_task_family(&config);
        let b = synthetic_task_family(&config);
        assert_eq!(a, b);
        assert_eq!(a.molecules().len(), 20);
        assert!(a
            .molecules()
            .iter()
            .all(|m| (0.0..=1.0).contains(&m.qed.unwrap())));
    }

    #[test]
    fn synthetic_noise_free_scores_are_affine_in_bits() {
        // with noise 0 the scores are an exact affine function of the bit
        // vector (rank latent_dim), so least squares on the bits reproduces
        // them; this is the independent recovery oracle
        let config = SynthConfig {
            seed: 5,
            n_functions: 2,
            n_molecules: 400,
            nbits: 128,
            latent_dim: 4,
            noise_sd: 0.0,
        };
        let table = synthetic_task_family(&config);
        let n = table.molecules().len();
        let bits: Vec<Vec<f64>> = table
            .molecules()
            .iter()
            .map(|m| m.fingerprint.as_ref().unwrap().to_reals())
            .collect();
        let y: Vec<f64> = (0..n).map(|m| table.score(m, 0).unwrap()).collect();
        let d = config.nbits + 1;
        let mut ata = vec![0.0f64; d * d];
        let mut aty = vec![0.0f64; d];
        let row = |m: usize| -> Vec<f64> {
            let mut r = bits[m].clone();
            r.push(1.0);
            r
        };
        for m in 0..n {
            let r = row(m);
            for i in 0..d {
                aty[i] += r[i] * y[m];
                for j in 0..d {
                    ata[i * d + j] += r[i] * r[j];
                }
            }
        }
        for i in 0..d {
            ata[i * d + i] += 1e-9;
        }
        let beta = solve_dense(&mut ata, &mut aty, d);
        let mut max_err = 0.0f64;
        for m in 0..n {
            let r = row(m);
            let pred: f64 = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
            max_err = max_err.max((pred - y[m]).abs());
        }
        assert!(max_err < 1e-6, "max reconstruction error {max_err}");
    }

    // Gaussian elimination with partial pivoting; test-only oracle helper.
    fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Vec<f64> {
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| {
                    a[i * n + col]
                        .abs()
                        .partial_cmp(&a[j * n + col].abs())
                        .unwrap()
                })
                .unwrap();
            if pivot != col {
                for k in 0..n {
                    a.swap(col * n + k, pivot * n + k);
                }
                b.swap(col, pivot);
            }
            let diag = a[col * n + col];
            for i in col + 1..n {
                let factor = a[i * n + col] / diag;
                if factor == 0.0 {
                    continue;
                }
                for k in col..n {
                    a[i * n + k] -= factor * a[col * n + k];
                }
                b[i] -= factor * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = b[i];
            for k in i + 1..n {
                acc -= a[i * n + k] * x[k];
            }
            x[i] = acc / a[i * n + i];
        }
        x
    }

    #[test]
    fn id_list_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ids.txt");
        let ids = vec!["m1".to_string(), "m2".to_string(), "m3".to_string()];
        write_id_list(&path, &ids).unwrap();
        assert_eq!(read_id_list(&path).unwrap(), ids);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn sampled_splits_always_satisfy_invariants(
            seed in 0u64..1000,
            n_dtrain in 1usize..8,
            n_dtest in 1usize..8,
        ) {
            let molecules: Vec<Molecule> = (0..16)
                .map(|m| Molecule {
                    id: format!("m{m}"),
                    smiles: "C".to_string(),
                    fingerprint: None,
                    qed: None,
                })
                .collect();
            let table = TaskTable::new(
                molecules,
                vec!["A".to_string(), "B".to_string()],
                vec![Some(1.0); 32],
            )
            .unwrap();
            let config = SplitConfig::Sampled {
                n_dtrain,
                n_dtest,
                dtrain_pool: None,
                dtest_pool: None,
                ftest: vec!["B".to_string()],
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = make_splits(&table, &config, &mut rng).unwrap();
            prop_assert_eq!(spec.dtrain.len(), n_dtrain);
            prop_assert_eq!(spec.dtest.len(), n_dtest);
            prop_assert!(spec.validate(&table).is_ok());
        }
    }
}
