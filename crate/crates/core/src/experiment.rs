//! End-to-end experiments: JSON configuration, encoding generation for the
//! ensemble modes and baselines, replicated clustering and the run report.
//!
//! Autoencoders are identified by `(structure, init seed)` and trained once per
//! run, up to the largest epoch count any member or cell needs; shorter epoch
//! counts are read off training snapshots. Replicates reuse the encodings and
//! differ in their landmark and k-means streams.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchor::AnchorConfig;
use crate::autoencoder::{encode, structure_permutations, train_with_snapshots, LayerSpec, TrainConfig};
use crate::datasets::{generate, lift, load_any, preprocess, Dataset, LiftKind, LiftingTransform};
use crate::ensemble::{sc_edae_with_streams, ScEdaeConfig};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansConfig, Partition};
use crate::matrix::DenseMatrix;
use crate::metrics::{accuracy, ari_checked, nmi};
use crate::rng::{hash_u64s, SeededRng};

const TAG_AE: u64 = 0xae;
const TAG_ANCHOR: u64 = 0xa7;
const TAG_KMEANS: u64 = 0x6b;
const TAG_EPOCHS: u64 = 0xe9;
const TAG_LANDMARKS: u64 = 0x1a;
const TAG_RAW: u64 = 0x2a;

/// Epoch counts used when an epoch-ensemble config leaves them out.
pub const DEFAULT_EPOCH_GRID: [usize; 5] = [50, 100, 150, 200, 250];
/// Epoch count for every other mode when none is given.
pub const DEFAULT_EPOCHS: usize = 200;
/// Initialization ensemble size when neither `m` nor seeds are given.
pub const DEFAULT_INIT_MEMBERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    EnsInit,
    EnsEpochs,
    EnsStruct,
    EnsLandmarks,
    BaselineKmeanspp,
    BaselineLsc,
    BaselineDaeKmeans,
    BaselineDaeLsc,
}

impl Mode {
    fn is_ensemble(self) -> bool {
        matches!(self, Mode::EnsInit | Mode::EnsEpochs | Mode::EnsStruct | Mode::EnsLandmarks)
    }

    fn uses_autoencoder(self) -> bool {
        !matches!(self, Mode::BaselineKmeanspp | Mode::BaselineLsc)
    }

    fn uses_anchor_graph(self) -> bool {
        !matches!(self, Mode::BaselineKmeanspp | Mode::BaselineDaeKmeans)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftConfig {
    pub kind: LiftKind,
    #[serde(default)]
    pub seed: u64,
}

/// Either a named generator with a seed, or a `.csv` / binary matrix file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lift: Option<LiftConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Preprocessing {
    pub divisor: f64,
    pub l2_normalize: bool,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self {
            divisor: 1.0,
            l2_normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderSettings {
    /// Hidden widths of the single-network modes; its permutations are the
    /// default structure ensemble.
    pub structure: Vec<usize>,
    pub encoding_dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for AutoencoderSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            structure: vec![500, 750, 1000],
            encoding_dim: 10,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_epsilon: t.adam_epsilon,
        }
    }
}

fn default_replicates() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub preprocessing: Preprocessing,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structures: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub anchor: AnchorConfig,
    /// `k` inside this section is replaced by the resolved cluster count.
    #[serde(default)]
    pub kmeans: KMeansConfig,
    /// Cluster count; defaults to the number of ground-truth classes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub autoencoder: AutoencoderSettings,
    #[serde(default)]
    pub row_normalize_embedding: bool,
    /// Worker threads; all available cores when absent. Results do not depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Network identity: training with the same key always yields the same model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct AeKey {
    structure: Vec<usize>,
    init_seed: u64,
}

impl AeKey {
    fn label(&self) -> u64 {
        let mut parts = vec![self.init_seed, self.structure.len() as u64];
        parts.extend(self.structure.iter().map(|&w| w as u64));
        hash_u64s(&parts)
    }
}

#[derive(Debug, Clone)]
enum Source {
    Raw,
    Encoding(AeKey),
}

#[derive(Debug, Clone)]
struct Member {
    descriptor: String,
    /// Stream label; depends only on this member's own settings.
    key: u64,
    source: Source,
    epochs: Option<usize>,
    landmarks: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<usize>,
}

/// "1000--500--750".
pub fn structure_label(widths: &[usize]) -> String {
    widths.iter().map(usize::to_string).collect::<Vec<_>>().join("--")
}

struct Plan {
    members: Vec<Member>,
    cells: Vec<Cell>,
}

fn check_m(mode: Mode, m: Option<usize>, len: usize, what: &str) -> Result<()> {
    if let Some(m) = m {
        if m != len {
            return Err(Error::Config(format!("{mode:?} has m={m} but {len} {what}")));
        }
    }
    if len == 0 {
        return Err(Error::Config(format!("{mode:?} needs at least one entry in {what}")));
    }
    Ok(())
}

fn no_duplicates<T: Ord + Clone + std::fmt::Debug>(items: &[T], what: &str) -> Result<()> {
    let mut s = items.to_vec();
    s.sort();
    if s.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config(format!("duplicate entries in {what}: {items:?}")));
    }
    Ok(())
}

/// Fill in every defaulted list so the echoed config reproduces the run.
fn resolve(cfg: &ExperimentConfig, ds: &Dataset) -> Result<ExperimentConfig> {
    let mut r = cfg.clone();
    let mode = cfg.mode;
    if cfg.replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    let k = match (cfg.k, ds.k_true) {
        (Some(k), _) | (None, Some(k)) => k,
        (None, None) => return Err(Error::Config("k is required for unlabelled data".into())),
    };
    if k < 2 || k > ds.n() {
        return Err(Error::Config(format!("k must lie in 2..={}, got {k}", ds.n())));
    }
    r.k = Some(k);
    r.kmeans.k = k;
    r.kmeans.validate().map_err(|e| Error::Config(e.to_string()))?;

    let ae = &cfg.autoencoder;
    if mode.uses_autoencoder() {
        LayerSpec::new(ae.structure.clone(), ae.encoding_dim)?;
        train_config(ae, 1, 0).validate(ds.n())?;
        if mode != Mode::EnsEpochs {
            let epochs = cfg.epochs.clone().unwrap_or_else(|| vec![DEFAULT_EPOCHS]);
            if epochs.is_empty() || epochs.contains(&0) {
                return Err(Error::Config("epochs must be a non-empty list of positive counts".into()));
            }
            no_duplicates(&epochs, "epochs")?;
            r.epochs = Some(epochs);
        }
    } else if cfg.epochs.is_some() {
        return Err(Error::Config(format!("{mode:?} does not train networks; drop 'epochs'")));
    }
    if mode.uses_anchor_graph() && mode != Mode::EnsLandmarks {
        let landmarks = cfg.landmarks.clone().unwrap_or_else(|| vec![cfg.anchor.p]);
        if landmarks.is_empty() {
            return Err(Error::Config("landmarks must not be empty".into()));
        }
        no_duplicates(&landmarks, "landmarks")?;
        r.landmarks = Some(landmarks);
    } else if !mode.uses_anchor_graph() && cfg.landmarks.is_some() {
        return Err(Error::Config(format!("{mode:?} builds no anchor graph; drop 'landmarks'")));
    }

    match mode {
        Mode::EnsInit => {
            let seeds = cfg
                .init_seeds
                .clone()
                .unwrap_or_else(|| (0..cfg.m.unwrap_or(DEFAULT_INIT_MEMBERS) as u64).collect());
            check_m(mode, cfg.m, seeds.len(), "init_seeds")?;
            no_duplicates(&seeds, "init_seeds")?;
            r.m = Some(seeds.len());
            r.init_seeds = Some(seeds);
        }
        Mode::EnsEpochs => {
            let epochs = cfg.epochs.clone().unwrap_or_else(|| DEFAULT_EPOCH_GRID.to_vec());
            check_m(mode, cfg.m, epochs.len(), "epochs")?;
            if epochs.contains(&0) {
                return Err(Error::Config("epoch counts must be positive".into()));
            }
            no_duplicates(&epochs, "epochs")?;
            r.m = Some(epochs.len());
            r.epochs = Some(epochs);
        }
        Mode::EnsStruct => {
            let structures = match &cfg.structures {
                Some(s) => s.clone(),
                None => {
                    let w: [usize; 3] = ae.structure.as_slice().try_into().map_err(|_| {
                        Error::Config("default structure ensemble needs exactly three widths".into())
                    })?;
                    let all = structure_permutations(w);
                    let m = cfg.m.unwrap_or(all.len());
                    if m > all.len() {
                        return Err(Error::Config(format!("only {} width orderings exist, m={m}", all.len())));
                    }
                    all[..m].to_vec()
                }
            };
            check_m(mode, cfg.m, structures.len(), "structures")?;
            for s in &structures {
                LayerSpec::new(s.clone(), ae.encoding_dim)?;
            }
            no_duplicates(&structures, "structures")?;
            r.m = Some(structures.len());
            r.structures = Some(structures);
        }
        Mode::EnsLandmarks => {
            let landmarks = cfg
                .landmarks
                .clone()
                .ok_or_else(|| Error::Config("ens_landmarks needs a 'landmarks' list".into()))?;
            check_m(mode, cfg.m, landmarks.len(), "landmarks")?;
            no_duplicates(&landmarks, "landmarks")?;
            r.m = Some(landmarks.len());
        }
        _ => {
            if cfg.m.is_some_and(|m| m != 1) {
                return Err(Error::Config(format!("{mode:?} is a single-member baseline; m must be 1")));
            }
            for (field, set) in [
                ("structures", cfg.structures.is_some()),
                ("init_seeds", cfg.init_seeds.is_some()),
            ] {
                if set {
                    return Err(Error::Config(format!("{mode:?} does not use '{field}'")));
                }
            }
            r.m = Some(1);
        }
    }

    if mode.uses_anchor_graph() {
        for &p in r.landmarks.as_deref().unwrap_or_default() {
            AnchorConfig { p, ..cfg.anchor.clone() }
                .validate(ds.n())
                .map_err(|e| Error::Config(e.to_string()))?;
        }
    }
    Ok(r)
}

fn train_config(ae: &AutoencoderSettings, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: ae.batch_size,
        learning_rate: ae.learning_rate,
        adam_beta1: ae.adam_beta1,
        adam_beta2: ae.adam_beta2,
        adam_epsilon: ae.adam_epsilon,
        seed,
    }
}

fn plan(r: &ExperimentConfig) -> Plan {
    let ae_default = AeKey {
        structure: r.autoencoder.structure.clone(),
        init_seed: 0,
    };
    let encoding_member = |key: AeKey, descriptor: String| Member {
        descriptor,
        key: key.label(),
        source: Source::Encoding(key),
        epochs: None,
        landmarks: None,
    };
    let epochs: Vec<Option<usize>> = r.epochs.iter().flatten().map(|&e| Some(e)).collect();
    let landmarks: Vec<Option<usize>> = r.landmarks.iter().flatten().map(|&p| Some(p)).collect();
    let product = |es: &[Option<usize>], ps: &[Option<usize>]| -> Vec<Cell> {
        es.iter()
            .flat_map(|&epochs| ps.iter().map(move |&landmarks| Cell { epochs, landmarks }))
            .collect()
    };
    let none = [None];
    match r.mode {
        Mode::EnsInit => Plan {
            members: r
                .init_seeds
                .iter()
                .flatten()
                .map(|&s| {
                    let key = AeKey { init_seed: s, ..ae_default.clone() };
                    encoding_member(key, format!("{} init {s}", structure_label(&ae_default.structure)))
                })
                .collect(),
            cells: product(&epochs, &landmarks),
        },
        Mode::EnsStruct => Plan {
            members: r
                .structures
                .iter()
                .flatten()
                .map(|s| {
                    let key = AeKey {
                        structure: s.clone(),
                        init_seed: 0,
                    };
                    encoding_member(key, structure_label(s))
                })
                .collect(),
            cells: product(&epochs, &landmarks),
        },
        Mode::EnsEpochs => Plan {
            members: epochs
                .iter()
                .map(|&e| Member {
                    key: hash_u64s(&[TAG_EPOCHS, e.unwrap() as u64]),
                    epochs: e,
                    ..encoding_member(ae_default.clone(), format!("{} epochs", e.unwrap()))
                })
                .collect(),
            cells: product(&none, &landmarks),
        },
        Mode::EnsLandmarks => Plan {
            members: r
                .landmarks
                .iter()
                .flatten()
                .map(|&p| Member {
                    key: hash_u64s(&[TAG_LANDMARKS, p as u64]),
                    landmarks: Some(p),
                    ..encoding_member(ae_default.clone(), format!("p={p}"))
                })
                .collect(),
            cells: product(&epochs, &none),
        },
        Mode::BaselineKmeanspp | Mode::BaselineLsc => Plan {
            members: vec![Member {
                descriptor: "input data".into(),
                key: hash_u64s(&[TAG_RAW]),
                source: Source::Raw,
                epochs: None,
                landmarks: None,
            }],
            cells: if r.mode == Mode::BaselineLsc { product(&none, &landmarks) } else { vec![Cell { epochs: None, landmarks: None }] },
        },
        Mode::BaselineDaeKmeans | Mode::BaselineDaeLsc => Plan {
            members: vec![encoding_member(ae_default.clone(), structure_label(&ae_default.structure))],
            cells: if r.mode == Mode::BaselineDaeLsc { product(&epochs, &landmarks) } else { product(&epochs, &none) },
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub n: usize,
    pub d: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_true: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ari: Option<f64>,
    /// Set when ARI fell back to 1 on a degenerate pair of partitions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ari_degenerate: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inertia: Option<f64>,
    /// Predicted labels, reported only when there is no ground truth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let mid = s.len() / 2;
        let median = if s.len() % 2 == 1 { s[mid] } else { 0.5 * (s[mid - 1] + s[mid]) };
        Some(Self {
            mean,
            std,
            median,
            min: s[0],
            max: s[s.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub acc: Stat,
    pub nmi: Stat,
    pub ari: Stat,
}

impl MetricSummary {
    fn of<'a>(results: impl IntoIterator<Item = &'a ReplicateResult>) -> Option<Self> {
        let (mut acc, mut nmi, mut ari) = (Vec::new(), Vec::new(), Vec::new());
        for r in results {
            if let (Some(a), Some(n), Some(b)) = (r.acc, r.nmi, r.ari) {
                acc.push(a);
                nmi.push(n);
                ari.push(b);
            }
        }
        Some(Self {
            count: acc.len(),
            acc: Stat::of(&acc)?,
            nmi: Stat::of(&nmi)?,
            ari: Stat::of(&ari)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    #[serde(flatten)]
    pub cell: Cell,
    pub replicates: Vec<ReplicateResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// The configuration with every default filled in.
    pub config: ExperimentConfig,
    pub dataset: DatasetSummary,
    pub members: Vec<String>,
    pub cells: Vec<CellReport>,
    /// Mean over every successful replicate of every cell.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pooled: Option<MetricSummary>,
    /// Wall-clock seconds per stage. Kept out of the serialized report so that
    /// identical configs give byte-identical reports; see [`write_report`].
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn failed_replicates(&self) -> usize {
        self.cells.iter().flat_map(|c| &c.replicates).filter(|r| r.error.is_some()).count()
    }
}

/// Path of the timing file written next to a report.
pub fn timings_path(report_path: &Path) -> PathBuf {
    let mut s = report_path.as_os_str().to_owned();
    s.push(".timings.json");
    PathBuf::from(s)
}

/// Write the report and, next to it, `<path>.timings.json`.
pub fn write_report(report: &RunReport, path: &Path) -> Result<()> {
    fs::write(path, report.to_json() + "\n")?;
    let timings = serde_json::to_string_pretty(&report.timings).expect("timings serialize");
    fs::write(timings_path(path), timings + "\n")?;
    Ok(())
}

/// Generate or load the dataset, then lift it if requested (before preprocessing).
pub fn load_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    let ds = match (&cfg.generator, &cfg.path) {
        (Some(g), None) => generate(g, cfg.seed)?,
        (None, Some(p)) => load_any(p).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("{}: {io}", p.display())),
            other => other,
        })?,
        _ => return Err(Error::Config("dataset needs exactly one of 'generator' or 'path'".into())),
    };
    match &cfg.lift {
        None => Ok(ds),
        Some(l) => {
            let t = LiftingTransform::sample(l.kind, ds.x.cols(), SeededRng::new(l.seed))
                .map_err(|e| Error::Config(e.to_string()))?;
            let x = lift(&ds.x, &t)?;
            let kind = serde_json::to_value(l.kind).expect("enum serializes");
            Ok(Dataset {
                name: format!("{}+{}", ds.name, kind.as_str().unwrap_or("lift")),
                ..ds.with_x(x)
            })
        }
    }
}

fn timed<T>(timings: &mut Vec<StageTiming>, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    timings.push(StageTiming {
        stage: stage.into(),
        seconds: start.elapsed().as_secs_f64(),
    });
    out
}

type EncodingTable = BTreeMap<(AeKey, usize), DenseMatrix>;

fn train_encodings(
    x: &DenseMatrix,
    r: &ExperimentConfig,
    members: &[Member],
    cells: &[Cell],
) -> Result<EncodingTable> {
    let mut needed: BTreeMap<AeKey, Vec<usize>> = BTreeMap::new();
    for m in members {
        if let Source::Encoding(key) = &m.source {
            let epochs: Vec<usize> = match m.epochs {
                Some(e) => vec![e],
                None => cells.iter().filter_map(|c| c.epochs).collect(),
            };
            needed.entry(key.clone()).or_default().extend(epochs);
        }
    }
    let jobs: Vec<(AeKey, Vec<usize>)> = needed
        .into_iter()
        .map(|(k, mut e)| {
            e.sort_unstable();
            e.dedup();
            (k, e)
        })
        .collect();
    let trained = jobs
        .par_iter()
        .enumerate()
        .map(|(idx, (key, epochs))| {
            let spec = LayerSpec::new(key.structure.clone(), r.autoencoder.encoding_dim)?;
            let seed = hash_u64s(&[r.master_seed, TAG_AE, key.label()]);
            let tc = train_config(&r.autoencoder, *epochs.last().unwrap(), seed);
            let out = train_with_snapshots(x, &spec, &tc, epochs).map_err(|e| e.in_stage("autoencoder", Some(idx)))?;
            out.snapshots
                .into_iter()
                .map(|(e, model)| Ok(((key.clone(), e), encode(&model, x)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(trained.into_iter().flatten().collect())
}

/// Run one replicate of one cell.
fn run_replicate(
    r: &ExperimentConfig,
    x: &DenseMatrix,
    labels: Option<&[usize]>,
    members: &[Member],
    cell: Cell,
    encodings: &EncodingTable,
    replicate: usize,
) -> ReplicateResult {
    let outcome = (|| -> Result<Partition> {
        let inputs: Vec<&DenseMatrix> = members
            .iter()
            .map(|m| match &m.source {
                Source::Raw => x,
                Source::Encoding(key) => {
                    let e = m.epochs.or(cell.epochs).expect("encoding member has an epoch count");
                    &encodings[&(key.clone(), e)]
                }
            })
            .collect();
        let km = KMeansConfig {
            seed: hash_u64s(&[r.master_seed, TAG_KMEANS, replicate as u64]),
            ..r.kmeans.clone()
        };
        if !r.mode.uses_anchor_graph() {
            return kmeans(inputs[0], &km).map_err(|e| e.in_stage("k-means", None));
        }
        let anchors = members
            .iter()
            .map(|m| AnchorConfig {
                p: m.landmarks.or(cell.landmarks).unwrap_or(r.anchor.p),
                ..r.anchor.clone()
            })
            .collect();
        let streams: Vec<SeededRng> = members
            .iter()
            .map(|m| SeededRng::new(r.master_seed).derive_path(&[TAG_ANCHOR, replicate as u64, m.key]))
            .collect();
        let cfg = ScEdaeConfig {
            anchors,
            kmeans: km,
            normalize_rows: r.row_normalize_embedding,
        };
        let owned: Vec<DenseMatrix> = inputs.into_iter().cloned().collect();
        Ok(sc_edae_with_streams(&owned, &cfg, &streams)?.partition)
    })();
    let mut res = ReplicateResult {
        replicate,
        acc: None,
        nmi: None,
        ari: None,
        ari_degenerate: None,
        inertia: None,
        labels: None,
        error: None,
    };
    let scored = outcome.and_then(|p| {
        res.inertia = Some(p.inertia);
        match labels {
            Some(truth) => {
                res.acc = Some(accuracy(&p.labels, truth)?);
                res.nmi = Some(nmi(&p.labels, truth)?);
                let (a, degenerate) = ari_checked(&p.labels, truth)?;
                res.ari = Some(a);
                res.ari_degenerate = Some(degenerate);
            }
            None => res.labels = Some(p.labels),
        }
        Ok(())
    });
    if let Err(e) = scored {
        res = ReplicateResult {
            replicate,
            acc: None,
            nmi: None,
            ari: None,
            ari_degenerate: None,
            inertia: None,
            labels: None,
            error: Some(e.to_string()),
        };
    }
    res
}

/// Run an experiment in the calling thread pool.
pub fn run_in_current_pool(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut timings = Vec::new();
    let ds = timed(&mut timings, "dataset", || load_dataset(&cfg.dataset))?;
    let resolved = resolve(cfg, &ds)?;
    let x = timed(&mut timings, "preprocessing", || {
        preprocess(&ds.x, resolved.preprocessing.divisor, resolved.preprocessing.l2_normalize)
            .map_err(|e| Error::Config(e.to_string()))
    })?;
    if resolved.mode.uses_autoencoder() {
        if let Some(v) = x.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!(
                "autoencoder targets must lie in [0, 1] after preprocessing, found {v}; lift or rescale the data"
            )));
        }
    }
    let Plan { members, cells } = plan(&resolved);
    let encodings = if resolved.mode.uses_autoencoder() {
        timed(&mut timings, "encodings", || train_encodings(&x, &resolved, &members, &cells))?
    } else {
        EncodingTable::new()
    };
    let mut reports = Vec::with_capacity(cells.len());
    for cell in &cells {
        let stage = match (cell.epochs, cell.landmarks) {
            (Some(e), Some(p)) => format!("clustering epochs={e} p={p}"),
            (Some(e), None) => format!("clustering epochs={e}"),
            (None, Some(p)) => format!("clustering p={p}"),
            (None, None) => "clustering".into(),
        };
        let replicates = timed(&mut timings, &stage, || {
            Ok((0..resolved.replicates)
                .into_par_iter()
                .map(|i| run_replicate(&resolved, &x, ds.labels.as_deref(), &members, *cell, &encodings, i))
                .collect::<Vec<_>>())
        })?;
        reports.push(CellReport {
            cell: *cell,
            summary: MetricSummary::of(&replicates),
            replicates,
        });
    }
    let pooled = MetricSummary::of(reports.iter().flat_map(|c| &c.replicates));
    debug_assert!(resolved.mode.is_ensemble() || members.len() == 1);
    Ok(RunReport {
        config: resolved,
        dataset: DatasetSummary {
            name: ds.name.clone(),
            n: ds.n(),
            d: ds.x.cols(),
            k_true: ds.k_true,
        },
        members: members.into_iter().map(|m| m.descriptor).collect(),
        cells: reports,
        pooled,
        timings,
    })
}

/// Run an experiment on a dedicated pool of `cfg.threads` workers.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_in_current_pool(cfg))
}
