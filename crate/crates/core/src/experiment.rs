//! Experiment runner: fit every configured method on every seed, score the
//! ID test set and each OOD set, and collect metrics into a [`RunReport`].
//!
//! Cells (one method on one seed) run in parallel, but the report is always
//! assembled in (method, seed) order, so its numeric content does not depend
//! on the thread count. Wall-clock timings live in a separate field.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingSet;
use crate::error::{Error, ErrorKind, Result};
use crate::io::load_auto;
use crate::metrics::MetricsSummary;
use crate::model::{deserialize_methods, FittedModel, MethodSpec, Scoring};
use crate::sprod::DistanceMetric;
use crate::synth::{generate, subsample_lowshot, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    /// Regenerated for every run seed, which replaces the `seed` field.
    Synthetic(SyntheticSpec),
    /// Loaded once and shared by all seeds.
    Files(FileSources),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileSources {
    pub train: PathBuf,
    pub id_test: PathBuf,
    pub ood: Vec<NamedPath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPath {
    pub name: String,
    pub path: PathBuf,
}

fn default_temperature() -> f64 {
    1.0
}

fn default_ablation_stages() -> Vec<MethodSpec> {
    ["stage1", "stage2", "stage3", "kmeans", "converged"]
        .iter()
        .map(|s| s.parse().expect("built-in method name"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(deserialize_with = "deserialize_methods")]
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub metric: DistanceMetric,
    #[serde(default)]
    pub scoring: Scoring,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Directory for report files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Minority-group sizes for the low-shot sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lowshot: Option<Vec<usize>>,
    /// Prototype variants compared by the stage ablation.
    #[serde(default = "default_ablation_stages", deserialize_with = "deserialize_methods")]
    pub ablation_stages: Vec<MethodSpec>,
}

impl ExperimentConfig {
    /// Config with default knobs over the given data and methods.
    pub fn new(dataset: DatasetSource, methods: Vec<MethodSpec>, seeds: Vec<u64>) -> Self {
        Self {
            dataset,
            methods,
            seeds,
            metric: DistanceMetric::default(),
            scoring: Scoring::default(),
            temperature: default_temperature(),
            output: None,
            lowshot: None,
            ablation_stages: default_ablation_stages(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file. Relative data paths are taken relative to the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text).map_err(|e| e.context(path.display().to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DatasetSource::Files(files) = &mut config.dataset {
            let resolve = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            resolve(&mut files.train);
            resolve(&mut files.id_test);
            files.ood.iter_mut().for_each(|o| resolve(&mut o.path));
        }
        if let Some(out) = &mut config.output {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        check_methods(&self.methods)?;
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate seed".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if let Some(ms) = &self.lowshot {
            if ms.contains(&0) {
                return Err(Error::Config("low-shot sizes must be at least 1".into()));
            }
        }
        match &self.dataset {
            DatasetSource::Synthetic(spec) => spec.validate()?,
            DatasetSource::Files(files) => {
                if files.train.as_os_str().is_empty() || files.id_test.as_os_str().is_empty() {
                    return Err(Error::Config("file mode needs train and id_test paths".into()));
                }
                if files.ood.is_empty() {
                    return Err(Error::Config("file mode needs at least one OOD path".into()));
                }
                let mut names: Vec<_> = files.ood.iter().map(|o| o.name.as_str()).collect();
                names.sort_unstable();
                if names.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::Config("duplicate OOD set name".into()));
                }
            }
        }
        Ok(())
    }
}

fn check_methods(methods: &[MethodSpec]) -> Result<()> {
    let mut labels = Vec::new();
    for m in methods {
        m.validate()?;
        let label = m.label();
        if labels.contains(&label) {
            return Err(Error::Config(format!("method {label} listed twice")));
        }
        labels.push(label);
    }
    Ok(())
}

/// Inputs for one seed: normalized train, ID test and named OOD sets.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: EmbeddingSet,
    pub id_test: EmbeddingSet,
    pub ood: Vec<(String, EmbeddingSet)>,
}

fn load_files(files: &FileSources) -> Result<PreparedData> {
    let load = |p: &Path| load_auto(p).and_then(|s| s.normalize()).map_err(|e| e.context(p.display().to_string()));
    let train = load(&files.train)?;
    if !train.is_labeled() {
        return Err(Error::Format("training set has no labels".into()).context(files.train.display().to_string()));
    }
    let id_test = load(&files.id_test)?;
    id_test.require_dim(train.dim())?;
    let ood = files
        .ood
        .iter()
        .map(|o| {
            let set = load(&o.path)?;
            set.require_dim(train.dim())?;
            Ok((o.name.clone(), set))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedData { train, id_test, ood })
}

fn synthetic_for_seed(spec: &SyntheticSpec, seed: u64) -> Result<PreparedData> {
    let data = generate(&SyntheticSpec { seed, ..spec.clone() })?;
    Ok(PreparedData {
        train: data.train,
        id_test: data.id_test,
        ood: vec![("sp_ood".into(), data.sp_ood), ("nsp_ood".into(), data.nsp_ood)],
    })
}

/// Data for each seed, in seed order. File data is loaded once.
fn prepare_all(config: &ExperimentConfig) -> Result<SeedData> {
    match &config.dataset {
        DatasetSource::Synthetic(spec) => Ok(config
            .seeds
            .par_iter()
            .map(|&seed| synthetic_for_seed(spec, seed).map(Arc::new).map_err(CellError::from))
            .collect()),
        DatasetSource::Files(files) => {
            let data = Arc::new(load_files(files)?);
            Ok(config.seeds.iter().map(|_| Ok(Arc::clone(&data))).collect())
        }
    }
}

/// A failure recorded in the report instead of aborting the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub kind: ErrorKind,
    pub message: String,
}

impl From<Error> for CellError {
    fn from(e: Error) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodResult {
    pub ood: String,
    pub metrics: MetricsSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub method: String,
    pub seed: u64,
    /// `None` when the method has no classifier or the ID test set is
    /// unlabeled.
    pub id_accuracy: Option<f64>,
    pub results: Vec<OodResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<CellError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodAggregate {
    pub ood: String,
    pub auroc: Stat,
    pub fpr_at_95tpr: Stat,
    pub aupr_in: Stat,
    pub aupr_out: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub seeds_ok: usize,
    pub seeds_failed: usize,
    pub id_accuracy: Option<Stat>,
    pub ood: Vec<OodAggregate>,
}

/// Mean and standard deviation per method over its successful rows, in
/// first-appearance order of methods and OOD sets.
pub fn aggregate(rows: &[RunRow]) -> Vec<Aggregate> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|method| {
            let mine: Vec<&RunRow> = rows.iter().filter(|r| r.method == method).collect();
            let ok: Vec<&RunRow> = mine.iter().copied().filter(|r| r.error.is_none()).collect();
            let acc: Vec<f64> = ok.iter().filter_map(|r| r.id_accuracy).collect();
            let mut oods: Vec<&str> = Vec::new();
            for r in &ok {
                for res in &r.results {
                    if !oods.contains(&res.ood.as_str()) {
                        oods.push(&res.ood);
                    }
                }
            }
            let ood = oods
                .into_iter()
                .filter_map(|name| {
                    let ms: Vec<&MetricsSummary> = ok
                        .iter()
                        .flat_map(|r| r.results.iter().filter(|x| x.ood == name).map(|x| &x.metrics))
                        .collect();
                    let stat = |f: fn(&MetricsSummary) -> f64| Stat::of(&ms.iter().map(|m| f(m)).collect::<Vec<_>>());
                    Some(OodAggregate {
                        ood: name.to_string(),
                        auroc: stat(|m| m.auroc)?,
                        fpr_at_95tpr: stat(|m| m.fpr_at_95tpr)?,
                        aupr_in: stat(|m| m.aupr_in)?,
                        aupr_out: stat(|m| m.aupr_out)?,
                    })
                })
                .collect();
            Aggregate {
                method: method.to_string(),
                seeds_ok: ok.len(),
                seeds_failed: mine.len() - ok.len(),
                id_accuracy: if acc.len() == ok.len() { Stat::of(&acc) } else { None },
                ood,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBlock {
    pub key: String,
    /// Set when the whole block could not run, e.g. a low-shot size larger
    /// than some minority group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
    pub rows: Vec<RunRow>,
    pub aggregates: Vec<Aggregate>,
}

impl ReportBlock {
    fn new(key: impl Into<String>, rows: Vec<RunRow>) -> Self {
        let aggregates = aggregate(&rows);
        Self {
            key: key.into(),
            skipped: None,
            rows,
            aggregates,
        }
    }

    fn skipped(key: impl Into<String>, reason: String) -> Self {
        Self {
            key: key.into(),
            skipped: Some(reason),
            rows: Vec::new(),
            aggregates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    Run,
    AblateScoring,
    AblateStages,
    Lowshot,
}

/// Distance and softmax AUROC of one fitted bank on one OOD set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringPair {
    pub method: String,
    pub seed: u64,
    pub ood: String,
    pub auroc_distance: f64,
    pub auroc_softmax: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// Wall clock for loading or generating data.
    pub data_seconds: f64,
    /// Summed over cells, so it can exceed the wall clock.
    pub fit_seconds: f64,
    /// Scoring plus metrics, summed over cells.
    pub score_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub toolkit_version: String,
    pub kind: ReportKind,
    pub config: ExperimentConfig,
    pub blocks: Vec<ReportBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<ScoringPair>>,
    pub timings: Timings,
}

impl RunReport {
    pub fn block(&self, key: &str) -> Option<&ReportBlock> {
        self.blocks.iter().find(|b| b.key == key)
    }

    pub fn rows(&self) -> impl Iterator<Item = &RunRow> {
        self.blocks.iter().flat_map(|b| &b.rows)
    }

    /// First recorded cell failure, if any.
    pub fn first_error(&self) -> Option<&CellError> {
        self.rows().find_map(|r| r.error.as_ref())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// The report without timings: equal for equal configs on any machine.
    pub fn content_json(&self) -> Result<String> {
        let mut value = serde_json::to_value(self).map_err(|e| Error::Format(e.to_string()))?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("timings");
        }
        serde_json::to_string_pretty(&value).map_err(|e| Error::Format(e.to_string()))
    }

    /// One line per (block, row, OOD set), then `mean` and `std` lines per
    /// aggregate.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record([
            "block",
            "method",
            "seed",
            "ood",
            "id_accuracy",
            "auroc",
            "fpr_at_95tpr",
            "aupr_in",
            "aupr_out",
            "n_id",
            "n_ood",
            "error",
        ])
        .map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for b in &self.blocks {
            if let Some(reason) = &b.skipped {
                w.write_record([b.key.as_str(), "", "", "", "", "", "", "", "", "", "", &format!("skipped: {reason}")])
                    .map_err(csv_err)?;
                continue;
            }
            for r in &b.rows {
                let seed = r.seed.to_string();
                let acc = opt(r.id_accuracy);
                if let Some(e) = &r.error {
                    w.write_record([&b.key, &r.method, &seed, "", &acc, "", "", "", "", "", "", &e.message])
                        .map_err(csv_err)?;
                    continue;
                }
                for res in &r.results {
                    let m = &res.metrics;
                    w.write_record([
                        b.key.clone(),
                        r.method.clone(),
                        seed.clone(),
                        res.ood.clone(),
                        acc.clone(),
                        m.auroc.to_string(),
                        m.fpr_at_95tpr.to_string(),
                        m.aupr_in.to_string(),
                        m.aupr_out.to_string(),
                        m.n_id.to_string(),
                        m.n_ood.to_string(),
                        String::new(),
                    ])
                    .map_err(csv_err)?;
                }
            }
            for a in &b.aggregates {
                for (label, pick) in [("mean", (|s: &Stat| s.mean) as fn(&Stat) -> f64), ("std", |s: &Stat| s.std)] {
                    for o in &a.ood {
                        w.write_record([
                            b.key.clone(),
                            a.method.clone(),
                            label.to_string(),
                            o.ood.clone(),
                            opt(a.id_accuracy.as_ref().map(pick)),
                            pick(&o.auroc).to_string(),
                            pick(&o.fpr_at_95tpr).to_string(),
                            pick(&o.aupr_in).to_string(),
                            pick(&o.aupr_out).to_string(),
                            String::new(),
                            String::new(),
                            String::new(),
                        ])
                        .map_err(csv_err)?;
                    }
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    /// Whitespace-separated aggregates for gnuplot, one line per
    /// (block, method, OOD set). String columns are quoted.
    pub fn to_gnuplot(&self) -> String {
        let mut out = String::from(
            "# block method ood auroc_mean auroc_std fpr95_mean fpr95_std aupr_in_mean aupr_in_std aupr_out_mean aupr_out_std\n",
        );
        for b in &self.blocks {
            for a in &b.aggregates {
                for o in &a.ood {
                    out.push_str(&format!(
                        "\"{}\" \"{}\" \"{}\" {} {} {} {} {} {} {} {}\n",
                        b.key,
                        a.method,
                        o.ood,
                        o.auroc.mean,
                        o.auroc.std,
                        o.fpr_at_95tpr.mean,
                        o.fpr_at_95tpr.std,
                        o.aupr_in.mean,
                        o.aupr_in.std,
                        o.aupr_out.mean,
                        o.aupr_out.std
                    ));
                }
            }
        }
        out
    }

    /// Writes `report.json` and `report.csv` (and `report.dat` when asked)
    /// into `dir`, creating it if needed.
    pub fn write(&self, dir: impl AsRef<Path>, gnuplot: bool) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = vec![
            (dir.join("report.json"), self.to_json()?),
            (dir.join("report.csv"), self.to_csv()?),
        ];
        if gnuplot {
            files.push((dir.join("report.dat"), self.to_gnuplot()));
        }
        for (path, text) in &files {
            std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}

#[derive(Default)]
struct CellTimes {
    fit: f64,
    score: f64,
}

fn accuracy(pred: &[u32], labels: &[u32]) -> f64 {
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// Fits one method and evaluates it under each scorer, yielding one row per
/// scorer.
fn run_cell(
    method: &MethodSpec,
    seed: u64,
    data: &PreparedData,
    train: &EmbeddingSet,
    scorings: &[Scoring],
    config: &ExperimentConfig,
    times: &mut CellTimes,
) -> Vec<RunRow> {
    let label = method.label();
    let fail = |e: Error| {
        let e = CellError::from(e.context(format!("method {label}, seed {seed}")));
        scorings
            .iter()
            .map(|_| RunRow {
                method: label.clone(),
                seed,
                id_accuracy: None,
                results: Vec::new(),
                error: Some(e.clone()),
            })
            .collect()
    };
    let t = Instant::now();
    let model = match method.fit(train, config.metric, seed) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    times.fit += t.elapsed().as_secs_f64();
    let t = Instant::now();
    let rows = scorings
        .iter()
        .map(|&scoring| evaluate(&model, data, scoring, config.temperature))
        .collect::<Result<Vec<_>>>();
    times.score += t.elapsed().as_secs_f64();
    match rows {
        Ok(rows) => rows
            .into_iter()
            .map(|(id_accuracy, results)| RunRow {
                method: label.clone(),
                seed,
                id_accuracy,
                results,
                error: None,
            })
            .collect(),
        Err(e) => fail(e),
    }
}

fn evaluate(
    model: &FittedModel,
    data: &PreparedData,
    scoring: Scoring,
    temperature: f64,
) -> Result<(Option<f64>, Vec<OodResult>)> {
    let id_accuracy = match (data.id_test.is_labeled(), model.predict(&data.id_test)?) {
        (true, Some(pred)) => Some(accuracy(&pred, data.id_test.labels())),
        _ => None,
    };
    let id_scores = model.score(&data.id_test, scoring, temperature)?;
    let results = data
        .ood
        .iter()
        .map(|(name, set)| {
            let ood_scores = model.score(set, scoring, temperature)?;
            Ok(OodResult {
                ood: name.clone(),
                metrics: MetricsSummary::compute(&id_scores.scores, &ood_scores.scores)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((id_accuracy, results))
}

/// Runs every (method, seed) cell and returns, for each scorer, the rows in
/// (method, seed) order. `reduce_train` derives the training set of a seed
/// from its full training set.
fn run_grid<F>(
    config: &ExperimentConfig,
    methods: &[MethodSpec],
    data: &[Result<Arc<PreparedData>, CellError>],
    scorings: &[Scoring],
    reduce_train: F,
    timings: &mut Timings,
) -> Vec<Vec<RunRow>>
where
    F: Fn(&EmbeddingSet, u64) -> Result<EmbeddingSet> + Sync,
{
    let cells: Vec<(usize, usize)> = (0..methods.len())
        .flat_map(|m| (0..config.seeds.len()).map(move |s| (m, s)))
        .collect();
    let results: Vec<(Vec<RunRow>, CellTimes)> = cells
        .par_iter()
        .map(|&(m, s)| {
            let seed = config.seeds[s];
            let method = &methods[m];
            let mut times = CellTimes::default();
            let rows = match &data[s] {
                Ok(d) => match reduce_train(&d.train, seed) {
                    Ok(train) => run_cell(method, seed, d, &train, scorings, config, &mut times),
                    Err(e) => failed_rows(method, seed, scorings.len(), e.into()),
                },
                Err(e) => failed_rows(method, seed, scorings.len(), e.clone()),
            };
            (rows, times)
        })
        .collect();
    let mut per_scoring = vec![Vec::with_capacity(cells.len()); scorings.len()];
    for (rows, times) in results {
        timings.fit_seconds += times.fit;
        timings.score_seconds += times.score;
        for (dst, row) in per_scoring.iter_mut().zip(rows) {
            dst.push(row);
        }
    }
    per_scoring
}

fn failed_rows(method: &MethodSpec, seed: u64, n: usize, error: CellError) -> Vec<RunRow> {
    (0..n)
        .map(|_| RunRow {
            method: method.label(),
            seed,
            id_accuracy: None,
            results: Vec::new(),
            error: Some(error.clone()),
        })
        .collect()
}

fn full_train(train: &EmbeddingSet, _seed: u64) -> Result<EmbeddingSet> {
    Ok(train.clone())
}

type SeedData = Vec<Result<Arc<PreparedData>, CellError>>;

fn start(config: &ExperimentConfig) -> Result<(Instant, Timings, SeedData)> {
    config.validate()?;
    let t0 = Instant::now();
    let data = prepare_all(config)?;
    let timings = Timings {
        data_seconds: t0.elapsed().as_secs_f64(),
        ..Timings::default()
    };
    Ok((t0, timings, data))
}

fn finish(
    config: &ExperimentConfig,
    kind: ReportKind,
    blocks: Vec<ReportBlock>,
    pairs: Option<Vec<ScoringPair>>,
    t0: Instant,
    mut timings: Timings,
) -> RunReport {
    timings.total_seconds = t0.elapsed().as_secs_f64();
    RunReport {
        toolkit_version: crate::VERSION.to_string(),
        kind,
        config: config.clone(),
        blocks,
        pairs,
        timings,
    }
}

/// Every configured method on every seed, scored with the configured scorer.
/// Cell failures are recorded in the rows; only config and file-loading
/// problems abort.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    let (t0, mut timings, data) = start(config)?;
    let rows = run_grid(config, &config.methods, &data, &[config.scoring], full_train, &mut timings)
        .pop()
        .unwrap_or_default();
    let blocks = vec![ReportBlock::new("main", rows)];
    Ok(finish(config, ReportKind::Run, blocks, None, t0, timings))
}

/// The configured prototype methods scored both ways on identical banks.
/// Blocks `distance` and `softmax` list rows in the same order; `pairs`
/// lines up their AUROCs.
pub fn ablate_scoring(config: &ExperimentConfig) -> Result<RunReport> {
    if let Some(m) = config.methods.iter().find(|m| !m.is_prototype()) {
        return Err(Error::Config(format!(
            "scoring ablation needs prototype methods, got {}",
            m.label()
        )));
    }
    let (t0, mut timings, data) = start(config)?;
    let scorings = [Scoring::Distance, Scoring::Softmax];
    let mut grids = run_grid(config, &config.methods, &data, &scorings, full_train, &mut timings);
    let softmax = grids.pop().unwrap_or_default();
    let distance = grids.pop().unwrap_or_default();
    let pairs = distance
        .iter()
        .zip(&softmax)
        .filter(|(d, s)| d.error.is_none() && s.error.is_none())
        .flat_map(|(d, s)| {
            d.results.iter().zip(&s.results).map(|(rd, rs)| ScoringPair {
                method: d.method.clone(),
                seed: d.seed,
                ood: rd.ood.clone(),
                auroc_distance: rd.metrics.auroc,
                auroc_softmax: rs.metrics.auroc,
            })
        })
        .collect();
    let blocks = vec![ReportBlock::new("distance", distance), ReportBlock::new("softmax", softmax)];
    Ok(finish(config, ReportKind::AblateScoring, blocks, Some(pairs), t0, timings))
}

/// The prototype variants in `ablation_stages`, in one block.
pub fn ablate_stages(config: &ExperimentConfig) -> Result<RunReport> {
    if config.ablation_stages.is_empty() {
        return Err(Error::Config("ablation_stages is empty".into()));
    }
    if let Some(m) = config.ablation_stages.iter().find(|m| !m.is_prototype()) {
        return Err(Error::Config(format!("{} is not a prototype variant", m.label())));
    }
    check_methods(&config.ablation_stages)?;
    let (t0, mut timings, data) = start(config)?;
    let rows = run_grid(
        config,
        &config.ablation_stages,
        &data,
        &[config.scoring],
        full_train,
        &mut timings,
    )
    .pop()
    .unwrap_or_default();
    let blocks = vec![ReportBlock::new("stages", rows)];
    Ok(finish(config, ReportKind::AblateStages, blocks, None, t0, timings))
}

/// A `full` block on all training data, then one block `m=<m>` per low-shot
/// size. A size that some minority group cannot supply is skipped with a
/// marker.
pub fn lowshot_sweep(config: &ExperimentConfig) -> Result<RunReport> {
    let sizes = match &config.lowshot {
        Some(ms) if !ms.is_empty() => ms.clone(),
        _ => return Err(Error::Config("lowshot sweep needs a non-empty `lowshot` list".into())),
    };
    let (t0, mut timings, data) = start(config)?;
    if let Some(Ok(d)) = data.first() {
        if !d.train.has_groups() {
            return Err(Error::Config("lowshot sweep needs group ids on the training set".into()));
        }
    }
    let full = run_grid(config, &config.methods, &data, &[config.scoring], full_train, &mut timings)
        .pop()
        .unwrap_or_default();
    let mut blocks = vec![ReportBlock::new("full", full)];
    for m in sizes {
        let key = format!("m={m}");
        let too_few = data.iter().filter_map(|d| d.as_ref().ok()).zip(&config.seeds).find_map(|(d, &seed)| {
            match subsample_lowshot(&d.train, m, seed) {
                Err(e @ Error::TooFewSamples(_)) => Some(e.to_string()),
                _ => None,
            }
        });
        if let Some(reason) = too_few {
            blocks.push(ReportBlock::skipped(key, reason));
            continue;
        }
        let rows = run_grid(
            config,
            &config.methods,
            &data,
            &[config.scoring],
            |train, seed| subsample_lowshot(train, m, seed),
            &mut timings,
        )
        .pop()
        .unwrap_or_default();
        blocks.push(ReportBlock::new(key, rows));
    }
    Ok(finish(config, ReportKind::Lowshot, blocks, None, t0, timings))
}
