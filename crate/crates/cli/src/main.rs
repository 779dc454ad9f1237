//! `xferscore`: score tasks, evaluate bundles, generate synthetic data and run
//! the timing and stability experiments.
//!
//! Exit codes: 0 on success, 2 for bad input, 3 for numerical failure.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use xferscore::bench::{self, BenchConfig, GridCell, StabilityConfig};
use xferscore::evalharness::{self, EvalConfig, Target};
use xferscore::linalg;
use xferscore::matrixio::{self, FmbDtype, TaskData};
use xferscore::projection::ProjectionSpec;
use xferscore::scoring::{self, MetricConfig, MetricId, MetricValue};
use xferscore::synthgen::{self, SyntheticSpec};

use output::{Format, Header};

#[derive(Parser, Debug)]
#[command(
    name = "xferscore",
    version,
    about = "Transferability metrics over feature embeddings"
)]
struct Cli {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for BLAS and the task pool.
    #[arg(long, global = true, env = "XFERSCORE_THREADS")]
    threads: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Tsv)]
    format: Format,

    /// Write the result here instead of stdout.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,

    /// Repeat for more log output.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score one task with one or more metrics.
    Score(ScoreArgs),
    /// Correlate metrics with accuracy across a task bundle.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic task and its manifest row.
    Synth(SynthArgs),
    /// Time LogME against the plain and shrinkage H-scores.
    Bench(BenchArgs),
    /// Finite-sample behaviour of the H-scores against a population reference.
    Stability(StabilityArgs),
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Source-model class probabilities, one row per sample.
    #[arg(long)]
    softpred: Option<PathBuf>,
    /// Comma-separated metric names, or `all`.
    #[arg(long, default_value = "hscore_shrunk")]
    metrics: String,
    /// Randomly project features to this width before the shrinkage H-score.
    #[arg(long)]
    project_to: Option<usize>,
    /// Fixed shrinkage intensity instead of Ledoit-Wolf.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TargetArg {
    Accuracy,
    Relative,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Task manifest (TSV).
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "all")]
    metrics: String,
    #[arg(long, value_enum, default_value_t = TargetArg::Accuracy)]
    target: TargetArg,
    #[arg(long)]
    project_to: Option<usize>,
    /// Permutation p-values with this many shuffles instead of the t-test.
    #[arg(long)]
    permutations: Option<usize>,
    /// Print a fixed-width table instead of TSV.
    #[arg(long, conflicts_with = "format")]
    table: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    informative: usize,
    #[arg(long, default_value_t = 1.0)]
    class_sep: f64,
    #[arg(long, default_value_t = 2)]
    clusters_per_class: usize,
    /// Keep informative features isotropic within each cluster.
    #[arg(long)]
    no_mixing: bool,
    /// Directory for the feature and label files.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Task id and file stem; defaults to `synth-<seed>`.
    #[arg(long)]
    id: Option<String>,
    /// Accuracy recorded in the manifest; hold-out centroid accuracy if absent.
    #[arg(long)]
    accuracy: Option<f64>,
    /// Append the row to this manifest, creating it with a header if needed.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Store features as f32.
    #[arg(long)]
    f32: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GridArg {
    Table5,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_enum, default_value_t = GridArg::Table5)]
    grid: GridArg,
    /// Custom cells as `NxDxC`, comma separated; replaces the grid.
    #[arg(long)]
    cells: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    /// Also write the per-cell speed ratios here.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Desk,
    Paper,
}

#[derive(Args, Debug)]
struct StabilityArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// Number of seeds, starting at `--seed`.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    n_reference: Option<usize>,
    /// Comma-separated, strictly increasing.
    #[arg(long)]
    sample_sizes: Option<String>,
    #[arg(long)]
    class_sep: Option<f64>,
    /// Also write the median ratio per series here.
    #[arg(long)]
    summary: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Numeric(String),
}

impl From<xferscore::Error> for Failure {
    fn from(e: xferscore::Error) -> Self {
        if e.is_numerical() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("numerical error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(Failure::Input("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Input(format!("thread pool: {e}")))?;
    linalg::set_blas_threads(threads);

    let header = Header::new(cli.seed, threads);
    let ctx = Ctx {
        seed: cli.seed,
        format: cli.format,
        out: cli.out.as_deref(),
    };
    match cli.command {
        Command::Score(a) => score(&ctx, header, a),
        Command::Evaluate(a) => evaluate(&ctx, header, a),
        Command::Synth(a) => synth(&ctx, header, a),
        Command::Bench(a) => run_bench(&ctx, header.with_cpu(), a),
        Command::Stability(a) => stability(&ctx, header, a),
    }
}

struct Ctx<'a> {
    seed: u64,
    format: Format,
    out: Option<&'a Path>,
}

impl Ctx<'_> {
    fn emit(&self, text: &str) -> CmdResult {
        output::emit(self.out, text)
    }
}

fn load_matrix_path(p: &Path) -> Result<xferscore::FeatureMatrix, Failure> {
    Ok(matrixio::load_feature_matrix(p, matrixio::detect_matrix_format(p)?)?)
}

fn score(ctx: &Ctx<'_>, header: Header, a: ScoreArgs) -> CmdResult {
    let metrics = MetricId::parse_list(&a.metrics)?;
    if a.softpred.is_none() {
        if let Some(m) = metrics.iter().find(|m| m.needs_softpred()) {
            return Err(Failure::Input(format!("metric {m} needs --softpred")));
        }
    }
    let features = load_matrix_path(&a.features)?;
    let labels = matrixio::load_labels(&a.labels)?;
    let softpred = match &a.softpred {
        Some(p) => Some(matrixio::load_soft_predictions(p, matrixio::detect_matrix_format(p)?)?),
        None => None,
    };
    let data = TaskData::new(features, labels, softpred)?;
    let config = MetricConfig {
        projection: a.project_to.map(|q| ProjectionSpec::new(q, ctx.seed)),
        alpha: a.alpha,
        seed: ctx.seed,
    };
    let rows: Vec<MetricValue> = metrics
        .iter()
        .map(|&m| scoring::compute(m, &data, &config))
        .collect::<Result<_, _>>()?;

    let text = match ctx.format {
        Format::Tsv => {
            let mut s = header.line();
            s.push_str("metric\tvalue\tdetail\n");
            for r in &rows {
                s.push_str(&format!("{}\t{}\t{}\n", r.metric, r.value, r.detail));
            }
            s
        }
        Format::Json => output::json(&header, &serde_json::json!({ "rows": rows }))?,
    };
    ctx.emit(&text)
}

fn evaluate(ctx: &Ctx<'_>, header: Header, a: EvaluateArgs) -> CmdResult {
    let metrics = MetricId::parse_list(&a.metrics)?;
    let bundle = matrixio::load_task_bundle(&a.manifest)?;
    let target = match a.target {
        TargetArg::Accuracy => Target::Accuracy,
        TargetArg::Relative => Target::RelativeAccuracy,
    };
    let mut config = EvalConfig::new(metrics, target, ctx.seed);
    config.metric_config.projection = a.project_to.map(|q| ProjectionSpec::new(q, ctx.seed));
    config.permutations = a.permutations;
    let outcome = evalharness::evaluate_metrics(&bundle, &config)?;
    log::info!("evaluated {} tasks", outcome.task_ids.len());

    let text = if a.table {
        header.line() + &evalharness::report_table(&outcome.rows)
    } else {
        match ctx.format {
            Format::Tsv => header.line() + &evalharness::report_tsv(&outcome.rows),
            Format::Json => output::json(
                &header,
                &serde_json::json!({
                    "target": target.name(),
                    "tasks": outcome.task_ids.len(),
                    "rows": outcome.rows,
                }),
            )?,
        }
    };
    ctx.emit(&text)
}

fn synth(ctx: &Ctx<'_>, header: Header, a: SynthArgs) -> CmdResult {
    let spec = SyntheticSpec::new(a.n, a.d, a.informative, a.classes, a.class_sep, ctx.seed)
        .with_clusters_per_class(a.clusters_per_class)
        .with_covariance_mixing(!a.no_mixing);
    let (f, y) = synthgen::make_classification(&spec)?;
    let accuracy = match a.accuracy {
        Some(acc) => acc,
        None => synthgen::holdout_centroid_accuracy(&f, &y, ctx.seed)?,
    };

    let id = a.id.unwrap_or_else(|| format!("synth-{}", ctx.seed));
    fs::create_dir_all(&a.out_dir).map_err(|e| Failure::Input(format!("{}: {e}", a.out_dir.display())))?;
    let feat_name = PathBuf::from(format!("{id}.fmb"));
    let label_name = PathBuf::from(format!("{id}.flb"));
    let dtype = if a.f32 { FmbDtype::F32 } else { FmbDtype::F64 };
    matrixio::write_matrix_fmb(&a.out_dir.join(&feat_name), f.view(), dtype)?;
    matrixio::write_labels_flb(&a.out_dir.join(&label_name), y.labels())?;

    let record = xferscore::TaskRecord::new(
        id.clone(),
        matrixio::TaskInputs::Files {
            features: feat_name.clone(),
            labels: label_name.clone(),
            softpred: None,
        },
        accuracy,
        Some(y.num_classes()),
    )?;
    // Manifest paths resolve against the manifest's own directory.
    let (feat_path, label_path) = match &a.manifest {
        Some(m) if !same_dir(m.parent().unwrap_or(Path::new(".")), &a.out_dir) => {
            let dir =
                fs::canonicalize(&a.out_dir).map_err(|e| Failure::Input(format!("{}: {e}", a.out_dir.display())))?;
            (dir.join(&feat_name), dir.join(&label_name))
        }
        _ => (feat_name.clone(), label_name.clone()),
    };
    let row = matrixio::manifest_row(&record.id, &feat_path, &label_path, None, accuracy, record.num_classes);
    if let Some(m) = &a.manifest {
        output::append_manifest_row(m, &row)?;
    }

    let text = match ctx.format {
        Format::Tsv => format!("{}{}\n{row}\n", header.line(), matrixio::MANIFEST_HEADER.join("\t")),
        Format::Json => output::json(
            &header,
            &serde_json::json!({
                "id": id,
                "features": feat_name,
                "labels": label_name,
                "accuracy": accuracy,
                "num_classes": y.num_classes(),
                "n": f.n_samples(),
                "d": f.dim(),
            }),
        )?,
    };
    ctx.emit(&text)
}

fn same_dir(a: &Path, b: &Path) -> bool {
    let norm = |p: &Path| fs::canonicalize(if p.as_os_str().is_empty() { Path::new(".") } else { p }).ok();
    matches!((norm(a), norm(b)), (Some(x), Some(y)) if x == y)
}

fn parse_cells(s: &str) -> Result<Vec<GridCell>, Failure> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let v: Vec<usize> = p
                .split('x')
                .map(|x| x.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| Failure::Input(format!("bad cell `{p}`, expected NxDxC")))?;
            match v[..] {
                [n, d, c] => Ok(GridCell { n, d, c }),
                _ => Err(Failure::Input(format!("bad cell `{p}`, expected NxDxC"))),
            }
        })
        .collect()
}

fn parse_sizes(s: &str) -> Result<Vec<usize>, Failure> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|_| Failure::Input(format!("bad sample size `{p}`"))))
        .collect()
}

fn run_bench(ctx: &Ctx<'_>, header: Header, a: BenchArgs) -> CmdResult {
    let mut config = match a.grid {
        GridArg::Table5 => BenchConfig::table5(),
    };
    if let Some(cells) = &a.cells {
        config.grid = parse_cells(cells)?;
    }
    if let Some(r) = a.reps {
        config.repetitions = r;
    }
    if let Some(w) = a.warmup {
        config.warmup = w;
    }
    config.seed = ctx.seed;
    let report = bench::run_timing(&config)?;
    for c in &report.cells {
        if c.path_rel_diff > 1e-8 {
            log::warn!(
                "n={} d={} C={}: Woodbury and dense evaluations differ by {:.3e}",
                c.cell.n,
                c.cell.d,
                c.cell.c,
                c.path_rel_diff
            );
        }
    }
    let summary = bench::timing_summary_tsv(&report);
    if let Some(p) = &a.summary {
        output::emit(Some(p), &(header.line() + &summary))?;
    }
    eprint!("{summary}");

    let text = match ctx.format {
        Format::Tsv => header.line() + &bench::timing_tsv(&report),
        Format::Json => output::json(
            &header,
            &serde_json::json!({ "rows": report.rows, "cells": report.cells }),
        )?,
    };
    ctx.emit(&text)
}

fn stability(ctx: &Ctx<'_>, header: Header, a: StabilityArgs) -> CmdResult {
    let mut config = match a.preset {
        Preset::Desk => StabilityConfig::desk(),
        Preset::Paper => StabilityConfig::paper(),
    };
    let count = a.seeds.unwrap_or(config.seeds.len() as u64);
    config.seeds = (0..count).map(|i| ctx.seed.wrapping_add(i)).collect();
    if let Some(n) = a.n_reference {
        config.n_reference = n;
    }
    if let Some(s) = &a.sample_sizes {
        config.sample_sizes = parse_sizes(s)?;
    }
    if let Some(sep) = a.class_sep {
        config.class_sep = sep;
    }
    let report = bench::run_stability(&config)?;
    let summary = bench::stability_summary_tsv(&report, &config);
    if let Some(p) = &a.summary {
        output::emit(Some(p), &(header.line() + &summary))?;
    }
    eprint!("{summary}");

    let text = match ctx.format {
        Format::Tsv => header.line() + &bench::stability_tsv(&report),
        Format::Json => output::json(
            &header,
            &serde_json::json!({ "references": report.references, "rows": report.rows }),
        )?,
    };
    ctx.emit(&text)
}
