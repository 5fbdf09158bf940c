use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sprod_core::experiment::{self, DatasetSource, ExperimentConfig, RunReport};
use sprod_core::io::{load_auto, save_embeddings, FileFormat};
use sprod_core::metrics::MetricsSummary;
use sprod_core::model::{FittedModel, MethodSpec, Scoring};
use sprod_core::synth::{generate, SyntheticSpec};
use sprod_core::{DistanceMetric, EmbeddingSet, Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "sprod", version, about = "Post-hoc OOD detection experiments over embeddings")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Euclidean,
    Cosine,
}

impl From<MetricArg> for DistanceMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => DistanceMetric::Euclidean,
            MetricArg::Cosine => DistanceMetric::Cosine,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoringArg {
    Distance,
    Softmax,
}

impl From<ScoringArg> for Scoring {
    fn from(s: ScoringArg) -> Self {
        match s {
            ScoringArg::Distance => Scoring::Distance,
            ScoringArg::Softmax => Scoring::Softmax,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Emb1,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationKind {
    Stages,
    Scoring,
}

/// Overrides shared by the experiment commands.
#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long, value_enum)]
    scoring: Option<ScoringArg>,
    /// Neighbor count for every KNN method.
    #[arg(long)]
    k: Option<usize>,
    /// Report directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a gnuplot data file.
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark and write its four sets.
    Synth {
        /// Synthetic spec (JSON); defaults to the built-in spec.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "emb1")]
        format: FormatArg,
    },
    /// Fit one method on a training set and write the model as JSON.
    Fit {
        #[arg(long)]
        train: PathBuf,
        /// stage1, stage2, stage3, kmeans, converged, mds, knn, msp, energy or mls.
        #[arg(long, default_value = "stage3")]
        method: String,
        #[arg(long, value_enum, default_value = "euclidean")]
        metric: MetricArg,
        #[arg(long)]
        k: Option<usize>,
        /// Seed for k-means initialization.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score embeddings with a fitted model; writes `method,index,score` CSV.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "distance")]
        scoring: ScoringArg,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detection metrics from ID and OOD score files.
    Eval {
        #[arg(long)]
        id: PathBuf,
        #[arg(long)]
        ood: PathBuf,
        /// Output JSON; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configured method on every seed.
    Bench(RunArgs),
    /// Compare prototype stages, or distance against softmax scoring.
    Ablate {
        #[arg(long, value_enum)]
        kind: AblationKind,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Low-shot sweep over minority-group sizes.
    Lowshot {
        /// Comma-separated sizes; overrides the config's `lowshot`.
        #[arg(long, value_delimiter = ',')]
        m: Option<Vec<usize>>,
        #[command(flatten)]
        run: RunArgs,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Config => "config",
        ErrorKind::Data => "data",
        ErrorKind::Numeric => "numeric",
    }
}

fn report_error(kind: ErrorKind, message: &str) -> ExitCode {
    let line = serde_json::json!({ "error": kind_name(kind), "message": message });
    eprintln!("{line}");
    ExitCode::from(exit_code(kind))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return report_error(ErrorKind::Config, e.to_string().trim()),
    };
    if let Some(n) = cli.threads {
        let built = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        if let Err(e) = built {
            return report_error(ErrorKind::Config, &format!("thread pool: {e}"));
        }
    }
    match dispatch(cli.command) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(failure)) => report_error(failure.kind, &failure.message),
        Err(e) => report_error(e.kind(), &e.to_string()),
    }
}

/// `Ok(Some(_))` means the report was written but some cell failed.
fn dispatch(command: Command) -> Result<Option<experiment::CellError>> {
    match command {
        Command::Synth {
            config,
            seed,
            out,
            format,
        } => synth(config.as_deref(), seed, &out, format).map(|_| None),
        Command::Fit {
            train,
            method,
            metric,
            k,
            seed,
            out,
        } => fit(&train, &method, metric.into(), k, seed, &out).map(|_| None),
        Command::Score {
            model,
            input,
            scoring,
            temperature,
            out,
        } => score(&model, &input, scoring.into(), temperature, out.as_deref()).map(|_| None),
        Command::Eval { id, ood, out } => eval(&id, &ood, out.as_deref()).map(|_| None),
        Command::Bench(args) => run_experiment(&args, None, experiment::run),
        Command::Ablate { kind, run } => match kind {
            AblationKind::Stages => run_experiment(&run, None, experiment::ablate_stages),
            AblationKind::Scoring => run_experiment(&run, None, experiment::ablate_scoring),
        },
        Command::Lowshot { m, run } => run_experiment(&run, m, experiment::lowshot_sweep),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Format(format!("cannot write {}: {e}", path.display())))
}

fn synth(config: Option<&Path>, seed: Option<u64>, out: &Path, format: FormatArg) -> Result<()> {
    let mut spec: SyntheticSpec = match config {
        Some(path) => read_json(path)?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let data = generate(&spec)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Format(format!("cannot create {}: {e}", out.display())))?;
    let (format, ext) = match format {
        FormatArg::Emb1 => (FileFormat::Emb1, "emb1"),
        FormatArg::Csv => (FileFormat::Csv, "csv"),
    };
    for (name, set) in [
        ("train", &data.train),
        ("id_test", &data.id_test),
        ("sp_ood", &data.sp_ood),
        ("nsp_ood", &data.nsp_ood),
    ] {
        let path = out.join(format!("{name}.{ext}"));
        save_embeddings(set, &path, format)?;
        println!("{}\t{} rows", path.display(), set.rows());
    }
    Ok(())
}

fn load_normalized(path: &Path) -> Result<EmbeddingSet> {
    load_auto(path)
        .and_then(|s| s.normalize())
        .map_err(|e| e.context(path.display().to_string()))
}

fn fit(train: &Path, method: &str, metric: DistanceMetric, k: Option<usize>, seed: u64, out: &Path) -> Result<()> {
    let mut spec: MethodSpec = method.parse()?;
    if let Some(k) = k {
        match &mut spec {
            MethodSpec::Knn { k: slot } => *slot = k,
            _ => return Err(Error::Config(format!("--k only applies to knn, not {method}"))),
        }
    }
    let train = load_normalized(train)?;
    if !train.is_labeled() {
        return Err(Error::Format("training set has no labels".into()));
    }
    let model = spec.fit(&train, metric, seed)?;
    model.save(out)?;
    println!("{}\t{}", out.display(), spec.label());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ScoreRecord {
    method: String,
    index: usize,
    score: f64,
}

fn score(model: &Path, input: &Path, scoring: Scoring, temperature: f64, out: Option<&Path>) -> Result<()> {
    let model = FittedModel::load(model)?;
    let query = load_normalized(input)?;
    let scores = model.score(&query, scoring, temperature)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for (index, &score) in scores.scores.iter().enumerate() {
        w.serialize(ScoreRecord {
            method: scores.method.clone(),
            index,
            score,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))?;
    match out {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    r.deserialize::<ScoreRecord>()
        .map(|rec| {
            rec.map(|r| r.score)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn eval(id: &Path, ood: &Path, out: Option<&Path>) -> Result<()> {
    let summary = MetricsSummary::compute(&read_scores(id)?, &read_scores(ood)?)?;
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?;
    match out {
        Some(path) => write_text(path, &text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn apply_overrides(args: &RunArgs, lowshot: Option<Vec<usize>>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&args.config).map_err(|e| match e.kind() {
        ErrorKind::Config => e,
        _ => Error::Config(e.to_string()),
    })?;
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    if let Some(metric) = args.metric {
        config.metric = metric.into();
    }
    if let Some(scoring) = args.scoring {
        config.scoring = scoring.into();
    }
    if let Some(k) = args.k {
        let mut any = false;
        for m in &mut config.methods {
            if let MethodSpec::Knn { k: slot } = m {
                *slot = k;
                any = true;
            }
        }
        if !any {
            return Err(Error::Config("--k given but no knn method is configured".into()));
        }
    }
    if let Some(out) = &args.out {
        config.output = Some(out.clone());
    }
    if lowshot.is_some() {
        config.lowshot = lowshot;
    }
    Ok(config)
}

fn run_experiment(
    args: &RunArgs,
    lowshot: Option<Vec<usize>>,
    runner: fn(&ExperimentConfig) -> Result<RunReport>,
) -> Result<Option<experiment::CellError>> {
    let config = apply_overrides(args, lowshot)?;
    let report = runner(&config)?;
    let dir = config.output.clone().unwrap_or_else(|| PathBuf::from("sprod-report"));
    for path in report.write(&dir, args.gnuplot)? {
        println!("wrote {}", path.display());
    }
    print_summary(&report);
    if matches!(config.dataset, DatasetSource::Files(_)) && config.seeds.len() > 1 {
        eprintln!("note: file data is shared by all seeds; only k-means seeding varies");
    }
    Ok(report.first_error().cloned())
}

fn print_summary(report: &RunReport) {
    for b in &report.blocks {
        if let Some(reason) = &b.skipped {
            println!("{}\tskipped: {reason}", b.key);
            continue;
        }
        for a in &b.aggregates {
            for o in &a.ood {
                println!(
                    "{}\t{}\t{}\tAUROC {:.4} ± {:.4}\tFPR@95 {:.4}",
                    b.key, a.method, o.ood, o.auroc.mean, o.auroc.std, o.fpr_at_95tpr.mean
                );
            }
        }
    }
}
