//! Experiment configuration and runners that turn a trained model into
//! detection reports.

mod ingest;
mod report;

pub use ingest::{ingest_external_scores, parse_records, RecordShape, ScorePopulations};
pub use report::{
    base_percent, emit_report, error_percent, percent, value_base, AverageRow, DetectorResult,
    Provenance, ReportDocument, ReportFormat, ReportRow, Task, REPORT_FORMAT,
};

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::abnormality::{
    build_module, make_abnormal_set, AbnormalityModule, ScorerLog, ScorerTrainConfig,
    DEFAULT_SCORER_HIDDEN,
};
use crate::data::{
    class_holdout_split, distort, gen_gaussian_images, gen_uniform_images, load_idx, Dataset,
    DistortionRange,
};
use crate::error::{Error, Result};
use crate::metrics::{build_report, mean, DetectionReport};
use crate::nn::checkpoint::load_mlp;
use crate::nn::mlp::{LossWeights, Mlp};
use crate::nn::train::{evaluate, predict_distributions, train_classifier, TrainConfig, TrainingLog};
use crate::rng;
use crate::scores::{max_prob, partition_by_correctness, ScoreKind};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Where the IDX files live. Each file defaults to its standard MNIST name;
/// relative file paths are taken inside `dir` when it is set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Use the first `n` training examples.
    pub train_limit: Option<usize>,
    /// Validation examples taken from the training file right after the
    /// training subset.
    pub validation_size: Option<usize>,
    /// Use the first `n` test examples.
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OodSource {
    /// `Normal(0.5, 0.25)` pixels clipped to `[0, 1]`.
    Gaussian {
        #[serde(default)]
        count: Option<usize>,
    },
    /// `Uniform[0, 1]` pixels.
    Uniform {
        #[serde(default)]
        count: Option<usize>,
    },
    /// Test examples of the classes listed in `holdout_classes`.
    ClassHoldout,
    /// In-distribution test examples corrupted with a distortion drawn per
    /// example from `distortions`.
    Distorted {
        distortions: Vec<DistortionRange>,
        #[serde(default)]
        name: Option<String>,
    },
    /// `out`/`neg` records of a score file (see [`parse_records`]).
    ExternalJsonl { path: PathBuf },
}

impl OodSource {
    pub fn label(&self, holdout: &BTreeSet<usize>) -> String {
        match self {
            OodSource::Gaussian { .. } => "Gaussian".into(),
            OodSource::Uniform { .. } => "Uniform".into(),
            OodSource::ClassHoldout => {
                let classes: Vec<String> = holdout.iter().map(|c| c.to_string()).collect();
                format!("Classes {}", classes.join(","))
            }
            OodSource::Distorted { name: Some(n), .. } => n.clone(),
            OodSource::Distorted { .. } => "Distorted".into(),
            OodSource::ExternalJsonl { path } => path
                .file_stem()
                .map_or("External".into(), |s| s.to_string_lossy().into_owned()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbmodConfig {
    pub scorer_hidden: Vec<usize>,
    pub scorer: ScorerTrainConfig,
    /// Families used to make the abnormal training examples.
    pub distortions: Vec<DistortionRange>,
    /// Clean training examples for the scorer (all of the training subset
    /// when unset).
    pub clean_examples: Option<usize>,
}

impl Default for AbmodConfig {
    fn default() -> Self {
        Self {
            scorer_hidden: DEFAULT_SCORER_HIDDEN.to_vec(),
            scorer: ScorerTrainConfig::default(),
            distortions: DistortionRange::image_defaults(),
            clean_examples: None,
        }
    }
}

fn default_name() -> String {
    "MNIST".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Required: nothing is seeded from the clock.
    pub seed: u64,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub data: DataConfig,
    /// Load this classifier checkpoint instead of training.
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Training recipe; the task picks a default when unset. Its `seed` is
    /// replaced by the experiment seed.
    #[serde(default)]
    pub training: Option<TrainConfig>,
    #[serde(default)]
    pub score: ScoreKind,
    #[serde(default)]
    pub ood_sources: Vec<OodSource>,
    /// Classes removed from training and used as an OOD source.
    #[serde(default)]
    pub holdout_classes: BTreeSet<usize>,
    #[serde(default)]
    pub abmod: AbmodConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line values that replace config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub task: Option<Task>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses a config document, applies overrides, and validates.
    pub fn from_json(text: &str, overrides: &Overrides, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        if let Some(task) = overrides.task {
            obj.insert("task".into(), serde_json::to_value(task)?);
        }
        if let Some(seed) = overrides.seed {
            obj.insert("seed".into(), json!(seed));
        }
        if let Some(out) = &overrides.output {
            obj.insert("output".into(), json!(out));
        }
        let mut config: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.base_dir = base_dir.into();
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative paths inside resolve against its
    /// directory.
    pub fn load(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, overrides, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn data_path(&self, explicit: &Option<PathBuf>, file: &str) -> Result<PathBuf> {
        match (explicit, &self.data.dir) {
            (Some(p), Some(dir)) => Ok(self.resolve(dir).join(p)),
            (Some(p), None) => Ok(self.resolve(p)),
            (None, Some(dir)) => Ok(self.resolve(dir).join(file)),
            (None, None) => Err(Error::Config(format!(
                "no data.dir and no explicit path for {file}"
            ))),
        }
    }

    pub fn train_paths(&self) -> Result<(PathBuf, PathBuf)> {
        Ok((
            self.data_path(&self.data.train_images, TRAIN_IMAGES)?,
            self.data_path(&self.data.train_labels, TRAIN_LABELS)?,
        ))
    }

    pub fn test_paths(&self) -> Result<(PathBuf, PathBuf)> {
        Ok((
            self.data_path(&self.data.test_images, TEST_IMAGES)?,
            self.data_path(&self.data.test_labels, TEST_LABELS)?,
        ))
    }

    fn needs_training_data(&self) -> bool {
        self.model.is_none() || self.task == Task::Abmod
    }

    /// The training recipe actually used: the configured one (or the task
    /// default) with the experiment seed.
    pub fn effective_training(&self) -> TrainConfig {
        let mut t = self.training.clone().unwrap_or_else(|| match self.task {
            Task::Abmod => TrainConfig {
                decoder: true,
                loss_weights: LossWeights::JOINT,
                ..TrainConfig::default()
            },
            _ => TrainConfig::default(),
        });
        t.seed = self.seed;
        t
    }

    pub fn validate(&self) -> Result<()> {
        if self.task == Task::External {
            return Err(Error::Config("task \"external\" is only produced by ingestion".into()));
        }
        let check = |p: PathBuf| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("path does not exist: {}", p.display())))
            }
        };
        let (ti, tl) = self.test_paths()?;
        check(ti)?;
        check(tl)?;
        if self.needs_training_data() {
            let (ti, tl) = self.train_paths()?;
            check(ti)?;
            check(tl)?;
        }
        if let Some(m) = &self.model {
            check(self.resolve(m))?;
        }
        let training = self.effective_training();
        training.validate()?;
        match self.task {
            Task::OodDetection | Task::Abmod if self.ood_sources.is_empty() => {
                return Err(Error::Config("at least one OOD source is required".into()));
            }
            Task::Abmod => {
                if self.model.is_some() {
                    return Err(Error::Config(
                        "abmod trains its own classifier+decoder; drop `model`".into(),
                    ));
                }
                if !training.decoder || training.loss_weights.reconstruction <= 0.0 {
                    return Err(Error::Config(
                        "abmod needs a decoder trained with a positive reconstruction weight".into(),
                    ));
                }
                if self.abmod.distortions.is_empty() {
                    return Err(Error::Config("abmod needs at least one distortion".into()));
                }
                for d in &self.abmod.distortions {
                    d.validate()?;
                }
                self.abmod.scorer.validate()?;
            }
            _ => {}
        }
        for source in &self.ood_sources {
            match source {
                OodSource::ClassHoldout if self.holdout_classes.is_empty() => {
                    return Err(Error::Config(
                        "class-holdout source needs holdout_classes".into(),
                    ));
                }
                OodSource::Gaussian { count: Some(0) } | OodSource::Uniform { count: Some(0) } => {
                    return Err(Error::Config("OOD source with count 0".into()));
                }
                OodSource::Distorted { distortions, .. } => {
                    if distortions.is_empty() {
                        return Err(Error::Config("distorted source without distortions".into()));
                    }
                    for d in distortions {
                        d.validate()?;
                    }
                }
                OodSource::ExternalJsonl { path } => {
                    if self.task == Task::Abmod {
                        return Err(Error::Config(
                            "external score files carry no inputs for the abnormality module".into(),
                        ));
                    }
                    check(self.resolve(path))?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (after overrides). The output
    /// directory does not affect results and is left out.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            output: None,
            ..self.clone()
        };
        let text = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: self.hash(),
            seed: self.seed,
            code_version: CODE_VERSION.into(),
        }
    }
}

/// Training, validation and test sets after limits and class holdout.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Option<Dataset>,
    pub validation: Option<Dataset>,
    pub test: Dataset,
    /// Test examples of the held-out classes, original labels.
    pub held_out: Option<Dataset>,
}

pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let (ti, tl) = config.test_paths()?;
    let mut test = load_idx(ti, tl)?;
    if let Some(n) = config.data.test_limit {
        test = test.head(n);
    }
    let mut train_full = if config.needs_training_data() {
        let (ti, tl) = config.train_paths()?;
        Some(load_idx(ti, tl)?)
    } else {
        None
    };
    // Limits can drop the top class from one file; keep one label space.
    let classes = train_full
        .as_ref()
        .map_or(test.class_count, |t| t.class_count.max(test.class_count));
    test.class_count = classes;

    let (mut train, mut validation) = (None, None);
    if let Some(full) = train_full.as_mut() {
        full.class_count = classes;
        let n = config.data.train_limit.unwrap_or(full.len()).min(full.len());
        let v = config.data.validation_size.unwrap_or(0);
        if v > 0 {
            if n + v > full.len() {
                return Err(Error::Config(format!(
                    "train_limit {n} + validation_size {v} exceeds {} training examples",
                    full.len()
                )));
            }
            let idx: Vec<usize> = (n..n + v).collect();
            validation = Some(full.select(&idx));
        }
        train = Some(full.head(n));
    }

    let mut held_out = None;
    if !config.holdout_classes.is_empty() {
        let split = class_holdout_split(&test, &config.holdout_classes)?;
        test = split.in_dist;
        held_out = Some(split.out_dist);
        train = train
            .map(|t| class_holdout_split(&t, &config.holdout_classes).map(|s| s.in_dist))
            .transpose()?;
        validation = validation
            .map(|t| class_holdout_split(&t, &config.holdout_classes).map(|s| s.in_dist))
            .transpose()?;
    }
    Ok(PreparedData {
        train,
        validation,
        test,
        held_out,
    })
}

/// Trains (or loads) the classifier named by the config.
pub fn obtain_model(config: &ExperimentConfig, data: &PreparedData) -> Result<(Mlp, Option<TrainingLog>)> {
    let (model, log) = match &config.model {
        Some(path) => (load_mlp(config.resolve(path))?, None),
        None => {
            let train = data
                .train
                .as_ref()
                .ok_or_else(|| Error::Config("no training data".into()))?;
            let (m, log) =
                train_classifier(&config.effective_training(), train, data.validation.as_ref())?;
            (m, Some(log))
        }
    };
    if model.input_dim() != data.test.dim() || model.num_classes() != data.test.class_count {
        return Err(Error::ShapeMismatch(format!(
            "model maps {} inputs to {} classes; test data has {} inputs and {} classes",
            model.input_dim(),
            model.num_classes(),
            data.test.dim(),
            data.test.class_count
        )));
    }
    Ok((model, log))
}

/// Detector scores and maximum softmax probabilities for every row.
pub fn softmax_scores(model: &Mlp, inputs: ArrayView2<f64>, kind: ScoreKind) -> Result<(Vec<f64>, Vec<f64>)> {
    let dists = predict_distributions(model, inputs)?;
    let scores = dists.iter().map(|d| kind.score(d)).collect();
    let probs = dists.iter().map(|d| max_prob(d).0).collect();
    Ok((scores, probs))
}

/// Inputs for a generated OOD source. `index` decorrelates repeated sources.
pub fn generate_ood(
    source: &OodSource,
    data: &PreparedData,
    seed: u64,
    index: usize,
) -> Result<Option<Dataset>> {
    let seed = seed.wrapping_add(index as u64);
    let n_in = data.test.len();
    let d = data.test.dim();
    let ds = match source {
        OodSource::Gaussian { count } => gen_gaussian_images(count.unwrap_or(n_in), d, seed),
        OodSource::Uniform { count } => gen_uniform_images(count.unwrap_or(n_in), d, seed),
        OodSource::ClassHoldout => data
            .held_out
            .clone()
            .ok_or_else(|| Error::Config("class-holdout source needs holdout_classes".into()))?,
        OodSource::Distorted { distortions, .. } => distort_all(&data.test, distortions, seed)?,
        OodSource::ExternalJsonl { .. } => return Ok(None),
    };
    if ds.is_empty() {
        return Err(Error::DegeneratePopulation(format!(
            "OOD source {:?} produced no examples",
            source
        )));
    }
    Ok(Some(ds))
}

fn distort_all(clean: &Dataset, distortions: &[DistortionRange], seed: u64) -> Result<Dataset> {
    let mut r = rng::stream(seed, rng::streams::DISTORTION);
    let mut out = Array2::zeros((clean.len(), clean.dim()));
    for (i, row) in clean.inputs.outer_iter().enumerate() {
        let kind = distortions[r.random_range(0..distortions.len())].sample(&mut r);
        let v = distort(&row.to_vec(), &kind, clean.shape, r.random())?;
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&v));
    }
    let mut ds = Dataset::unlabeled(out, format!("distorted({})", clean.provenance))?;
    ds.shape = clean.shape;
    Ok(ds)
}

fn training_notes(log: &Option<TrainingLog>, model: &Mlp, data: &PreparedData) -> serde_json::Map<String, Value> {
    let mut notes = serde_json::Map::new();
    notes.insert("model_checksum".into(), json!(model.checksum()));
    notes.insert("test_examples".into(), json!(data.test.len()));
    if let Some(train) = &data.train {
        notes.insert("train_examples".into(), json!(train.len()));
    }
    if let Some(log) = log {
        notes.insert("training".into(), json!(log.epochs));
    }
    notes
}

fn document(config: &ExperimentConfig, rows: Vec<ReportRow>, averages: Vec<AverageRow>, notes: serde_json::Map<String, Value>) -> Result<ReportDocument> {
    let doc = ReportDocument {
        format: REPORT_FORMAT,
        task: config.task,
        title: config.name.clone(),
        score_kind: config.score,
        rows,
        averages,
        notes,
        provenance: config.provenance(),
    };
    doc.validate()?;
    Ok(doc)
}

fn single(detector: &str, report: DetectionReport) -> Vec<DetectorResult> {
    vec![DetectorResult {
        detector: detector.into(),
        report,
    }]
}

/// Successes versus errors on the test set, one row.
pub fn run_error_detection(config: &ExperimentConfig) -> Result<ReportDocument> {
    let data = prepare_data(config)?;
    let (model, log) = obtain_model(config, &data)?;
    error_detection_report(config, &model, &data, &log)
}

pub fn error_detection_report(
    config: &ExperimentConfig,
    model: &Mlp,
    data: &PreparedData,
    log: &Option<TrainingLog>,
) -> Result<ReportDocument> {
    let labels = data.test.require_labels()?;
    let eval = evaluate(model, &data.test)?;
    let scores: Vec<f64> = eval.distributions.iter().map(|d| config.score.score(d)).collect();
    let (success, error) = partition_by_correctness(&eval.predictions, labels, &scores)?;
    if error.is_empty() {
        return Err(Error::DegeneratePopulation(
            "every test example was classified correctly; there is no error population".into(),
        ));
    }
    if success.is_empty() {
        return Err(Error::DegeneratePopulation(
            "every test example was misclassified; there is no success population".into(),
        ));
    }
    let report = build_report(&success, &error)?;
    let wrong_probs: Vec<f64> = eval
        .distributions
        .iter()
        .zip(eval.predictions.iter().zip(labels))
        .filter(|(_, (p, l))| p != l)
        .map(|(d, _)| max_prob(d).0)
        .collect();
    let mut row = ReportRow::new(config.name.clone(), single("softmax", report))?;
    row.mean_predicted_probability = Some(mean(&wrong_probs));
    row.test_error = Some(eval.error_rate);
    document(config, vec![row], vec![], training_notes(log, model, data))
}

/// In-distribution test set versus each OOD source, plus a pooled "All" row
/// when there are several sources.
pub fn run_ood_detection(config: &ExperimentConfig) -> Result<ReportDocument> {
    let data = prepare_data(config)?;
    let (model, log) = obtain_model(config, &data)?;
    ood_detection_report(config, &model, &data, &log)
}

pub fn ood_detection_report(
    config: &ExperimentConfig,
    model: &Mlp,
    data: &PreparedData,
    log: &Option<TrainingLog>,
) -> Result<ReportDocument> {
    let (in_scores, _) = softmax_scores(model, data.test.inputs.view(), config.score)?;
    let mut rows = Vec::new();
    let mut pooled: Vec<f64> = Vec::new();
    let mut pooled_probs: Option<Vec<f64>> = Some(Vec::new());
    for (i, source) in config.ood_sources.iter().enumerate() {
        let (out_scores, out_probs) = match generate_ood(source, data, config.seed, i)? {
            Some(ds) => {
                let (s, p) = softmax_scores(model, ds.inputs.view(), config.score)?;
                (s, Some(p))
            }
            None => {
                let OodSource::ExternalJsonl { path } = source else {
                    unreachable!("only external sources have no inputs")
                };
                let pops = ingest_external_scores(config.resolve(path), config.score)?;
                (pops.negative, None)
            }
        };
        if out_scores.is_empty() {
            return Err(Error::DegeneratePopulation(format!(
                "OOD source {} is empty",
                source.label(&config.holdout_classes)
            )));
        }
        let report = build_report(&in_scores, &out_scores)?;
        let name = format!("{}/{}", config.name, source.label(&config.holdout_classes));
        let mut row = ReportRow::new(name, single("softmax", report))?;
        row.mean_predicted_probability = out_probs.as_deref().map(mean);
        rows.push(row);
        pooled.extend_from_slice(&out_scores);
        pooled_probs = match (pooled_probs, out_probs) {
            (Some(mut acc), Some(p)) => {
                acc.extend(p);
                Some(acc)
            }
            _ => None,
        };
    }
    if config.ood_sources.len() > 1 {
        let report = build_report(&in_scores, &pooled)?;
        let mut row = ReportRow::new(format!("{}/All", config.name), single("softmax", report))?;
        row.mean_predicted_probability = pooled_probs.as_deref().map(mean);
        rows.push(row);
    }
    document(config, rows, vec![], training_notes(log, model, data))
}

/// A trained classifier+decoder with its abnormality module.
#[derive(Debug, Clone)]
pub struct AbmodRun {
    pub model: Mlp,
    pub training_log: Option<TrainingLog>,
    pub module: AbnormalityModule,
    pub scorer_log: ScorerLog,
    pub abnormal_examples: usize,
}

/// Trains classifier+decoder jointly, freezes it, and trains the scorer on
/// clean versus distorted training examples.
pub fn train_abmod(config: &ExperimentConfig, data: &PreparedData) -> Result<AbmodRun> {
    let (model, training_log) = obtain_model(config, data)?;
    let train = data
        .train
        .as_ref()
        .ok_or_else(|| Error::Config("abmod needs training data".into()))?;
    let mut module = build_module(model.clone(), &config.abmod.scorer_hidden, config.seed)?;
    let clean = match config.abmod.clean_examples {
        Some(n) => train.head(n),
        None => train.clone(),
    };
    let set = make_abnormal_set(&clean, &config.abmod.distortions, config.seed)?;
    let scorer_config = ScorerTrainConfig {
        seed: config.seed,
        ..config.abmod.scorer.clone()
    };
    let scorer_log = module.train_scorer(&set.data, &scorer_config)?;
    Ok(AbmodRun {
        model,
        training_log,
        module,
        scorer_log,
        abnormal_examples: set.data.len(),
    })
}

/// Softmax baseline and abnormality module on identical OOD sets, with an
/// Average row per detector.
pub fn abmod_report(config: &ExperimentConfig, run: &AbmodRun, data: &PreparedData) -> Result<ReportDocument> {
    let model = &run.model;
    let test = data.test.inputs.view();
    let (in_soft, _) = softmax_scores(model, test, config.score)?;
    let in_ab = run.module.normality_scores(test)?;
    let mut rows = Vec::new();
    for (i, source) in config.ood_sources.iter().enumerate() {
        let ds = generate_ood(source, data, config.seed, i)?
            .ok_or_else(|| Error::Config("abmod sources need inputs".into()))?;
        let (out_soft, out_probs) = softmax_scores(model, ds.inputs.view(), config.score)?;
        let out_ab = run.module.normality_scores(ds.inputs.view())?;
        let detectors = vec![
            DetectorResult {
                detector: "softmax".into(),
                report: build_report(&in_soft, &out_soft)?,
            },
            DetectorResult {
                detector: "abmod".into(),
                report: build_report(&in_ab, &out_ab)?,
            },
        ];
        let name = format!("{}/{}", config.name, source.label(&config.holdout_classes));
        let mut row = ReportRow::new(name, detectors)?;
        row.mean_predicted_probability = Some(mean(&out_probs));
        rows.push(row);
    }
    let averages = ["softmax", "abmod"]
        .iter()
        .map(|&name| {
            let reports: Vec<&DetectionReport> =
                rows.iter().filter_map(|r| r.detector(name)).collect();
            let avg = |f: fn(&DetectionReport) -> f64| {
                reports.iter().map(|r| f(r)).sum::<f64>() / reports.len() as f64
            };
            AverageRow {
                detector: name.into(),
                auroc: avg(|r| r.auroc),
                aupr_positive: avg(|r| r.aupr_positive),
                aupr_negative: avg(|r| r.aupr_negative),
            }
        })
        .collect();

    let mut notes = training_notes(&run.training_log, model, data);
    let log = &run.scorer_log;
    notes.insert("backbone_checksum_before".into(), json!(log.backbone_checksum_before));
    notes.insert("backbone_checksum_after".into(), json!(log.backbone_checksum_after));
    notes.insert("scorer_epoch_loss".into(), json!(log.epoch_loss));
    notes.insert("scorer_checksum".into(), json!(log.scorer_checksum));
    notes.insert("abnormal_examples".into(), json!(run.abnormal_examples));
    document(config, rows, averages, notes)
}

pub fn run_abmod(config: &ExperimentConfig) -> Result<ReportDocument> {
    let data = prepare_data(config)?;
    let run = train_abmod(config, &data)?;
    abmod_report(config, &run, &data)
}

/// Dispatches on `config.task`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ReportDocument> {
    match config.task {
        Task::ErrorDetection => run_error_detection(config),
        Task::OodDetection => run_ood_detection(config),
        Task::Abmod => run_abmod(config),
        Task::External => Err(Error::Config("use run_ingest for external scores".into())),
    }
}

/// A one-row report over an external score file: `in`/`pos` records are the
/// positive population.
pub fn run_ingest(path: impl AsRef<Path>, kind: ScoreKind, name: &str) -> Result<ReportDocument> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let pops = parse_records(bytes.as_slice(), kind).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    let report = build_report(&pops.positive, &pops.negative)?;
    let row = ReportRow::new(name, single("external", report))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    hasher.update(serde_json::to_string(&kind)?.as_bytes());
    let doc = ReportDocument {
        format: REPORT_FORMAT,
        task: Task::External,
        title: name.into(),
        score_kind: kind,
        rows: vec![row],
        averages: vec![],
        notes: Default::default(),
        provenance: Provenance {
            config_hash: hex::encode(hasher.finalize()),
            seed: 0,
            code_version: CODE_VERSION.into(),
        },
    };
    doc.validate()?;
    Ok(doc)
}
