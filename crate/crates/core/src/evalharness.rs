//! Meta-evaluation: how well do metric scores track fine-tuned accuracy across
//! a bundle of tasks.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::matrixio::TaskRecord;
use crate::rng;
use crate::scoring::{self, MetricConfig, MetricId};

/// p-values above this are flagged as not significant.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
/// Class-count ratio above which relative accuracy is flagged as unreliable.
pub const IMBALANCE_WARN_RATIO: f64 = 1.5;

/// Gain over the balanced-class chance rate, `(acc − 1/C)·C`.
pub fn relative_accuracy(acc: f64, num_classes: usize) -> Result<f64> {
    if num_classes < 2 {
        return Err(Error::Degenerate(format!(
            "relative accuracy needs C >= 2, got {num_classes}"
        )));
    }
    let c = num_classes as f64;
    Ok((acc - 1.0 / c) * c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Validation(format!(
            "vectors differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "correlation needs n >= 3, got {}",
            x.len()
        )));
    }
    Ok(())
}

fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("constant vector; correlation undefined".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `r` from the t statistic with `n − 2` degrees of freedom.
pub fn t_test_pvalue(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y)?;
    let r = pearson_r(x, y)?;
    Ok(Correlation {
        r,
        p: t_test_pvalue(r, x.len()),
    })
}

/// Ranks starting at 1; tied values share the mean of their positions.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y)?;
    pearson(&midranks(x), &midranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    Pearson,
    Spearman,
}

/// Permutation p-value: the share of label shuffles whose |r| reaches the
/// observed one, with the usual +1 correction.
pub fn permutation_pvalue(x: &[f64], y: &[f64], kind: CorrelationKind, permutations: usize, seed: u64) -> Result<f64> {
    check_pair(x, y)?;
    let (x, y) = match kind {
        CorrelationKind::Pearson => (x.to_vec(), y.to_vec()),
        CorrelationKind::Spearman => (midranks(x), midranks(y)),
    };
    let observed = pearson_r(&x, &y)?.abs();
    let mut r = rng::stream(seed, "permutation", 0);
    let mut shuffled = y.clone();
    let mut hits = 0usize;
    for _ in 0..permutations {
        shuffled.shuffle(&mut r);
        if pearson_r(&x, &shuffled)?.abs() >= observed - 1e-12 {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (permutations + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Accuracy,
    RelativeAccuracy,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Accuracy => "accuracy",
            Target::RelativeAccuracy => "relative_accuracy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metric_name: String,
    pub r_pearson: f64,
    pub p_pearson: f64,
    pub r_spearman: f64,
    pub p_spearman: f64,
    pub n: usize,
    pub target: Target,
}

impl CorrelationReport {
    /// `*` when the Pearson correlation is not significant.
    pub fn sig_flag(&self) -> &'static str {
        if self.p_pearson > SIGNIFICANCE_LEVEL {
            "*"
        } else {
            ""
        }
    }
}

/// One report line: the correlation, or why it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub metric_name: String,
    /// Tasks on which the metric could be computed.
    pub n: usize,
    pub report: Option<CorrelationReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub metrics: Vec<MetricId>,
    pub target: Target,
    pub metric_config: MetricConfig,
    /// Replace t-test p-values by permutation p-values with this many shuffles.
    pub permutations: Option<usize>,
}

impl EvalConfig {
    pub fn new(metrics: Vec<MetricId>, target: Target, seed: u64) -> Self {
        Self {
            metrics,
            target,
            metric_config: MetricConfig::new(seed),
            permutations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub rows: Vec<ReportRow>,
    /// Task ids in the order used for correlation.
    pub task_ids: Vec<String>,
    /// Per task, per metric (in `rows` order): value or `None` when it failed.
    pub scores: Vec<Vec<Option<f64>>>,
}

struct TaskScores {
    id: String,
    target: f64,
    values: Vec<Option<f64>>,
}

/// Computes every metric on every task and correlates each with the target.
///
/// Tasks are scored in parallel and then sorted by id, so the result does not
/// depend on bundle order. A metric that fails on a task drops that task from
/// its own correlation only.
pub fn evaluate_metrics(bundle: &[TaskRecord], config: &EvalConfig) -> Result<EvalOutcome> {
    if bundle.len() < 3 {
        return Err(Error::Validation(format!(
            "evaluation needs at least 3 tasks, got {}",
            bundle.len()
        )));
    }
    if config.metrics.is_empty() {
        return Err(Error::Validation("no metrics requested".into()));
    }
    let mut metrics = config.metrics.clone();
    metrics.sort_by_key(|m| m.name());
    metrics.dedup();

    let targets: Vec<f64> = bundle
        .iter()
        .map(|t| match config.target {
            Target::Accuracy => Ok(t.accuracy),
            Target::RelativeAccuracy => {
                let c = t
                    .num_classes
                    .ok_or_else(|| Error::Validation(format!("task {}: relative accuracy needs num_classes", t.id)))?;
                relative_accuracy(t.accuracy, c)
            }
        })
        .collect::<Result<_>>()?;

    let mut scored: Vec<TaskScores> = bundle
        .par_iter()
        .zip(targets.par_iter())
        .map(|(task, &target)| -> Result<TaskScores> {
            let data = task.load()?;
            if config.target == Target::RelativeAccuracy {
                let counts = data.labels.class_counts();
                let (lo, hi) = (counts.iter().min().copied().unwrap_or(1), counts.iter().max().copied().unwrap_or(1));
                if hi as f64 > IMBALANCE_WARN_RATIO * lo as f64 {
                    log::warn!(
                        "task {}: class imbalance {hi}:{lo} exceeds {IMBALANCE_WARN_RATIO}:1; relative accuracy assumes balanced classes",
                        task.id
                    );
                }
            }
            let values = metrics
                .iter()
                .map(|&m| match scoring::compute(m, &data, &config.metric_config) {
                    Ok(v) => Some(v.value),
                    Err(e) => {
                        log::warn!("task {}: metric {m} failed: {e}", task.id);
                        None
                    }
                })
                .collect();
            Ok(TaskScores {
                id: task.id.clone(),
                target,
                values,
            })
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| a.id.cmp(&b.id));

    let rows = metrics
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let (xs, ys): (Vec<f64>, Vec<f64>) =
                scored.iter().filter_map(|t| t.values[k].map(|v| (v, t.target))).unzip();
            let n = xs.len();
            match correlate(m.name(), &xs, &ys, config) {
                Ok(report) => ReportRow {
                    metric_name: m.name().to_string(),
                    n,
                    report: Some(report),
                    error: None,
                },
                Err(e) => ReportRow {
                    metric_name: m.name().to_string(),
                    n,
                    report: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    Ok(EvalOutcome {
        rows,
        task_ids: scored.iter().map(|t| t.id.clone()).collect(),
        scores: scored.into_iter().map(|t| t.values).collect(),
    })
}

fn correlate(name: &str, x: &[f64], y: &[f64], config: &EvalConfig) -> Result<CorrelationReport> {
    let mut p = pearson(x, y)?;
    let mut s = spearman(x, y)?;
    if let Some(perms) = config.permutations {
        let seed = config.metric_config.seed;
        p.p = permutation_pvalue(x, y, CorrelationKind::Pearson, perms, seed)?;
        s.p = permutation_pvalue(x, y, CorrelationKind::Spearman, perms, seed)?;
    }
    Ok(CorrelationReport {
        metric_name: name.to_string(),
        r_pearson: p.r,
        p_pearson: p.p,
        r_spearman: s.r,
        p_spearman: s.p,
        n: x.len(),
        target: config.target,
    })
}

pub const REPORT_HEADER: &str = "metric\tr_pearson\tp_pearson\tr_spearman\tp_spearman\tn\tsig_flag";

/// TSV report; rows that failed carry `NA` and the error in the flag column.
pub fn report_tsv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for row in rows {
        match &row.report {
            Some(r) => writeln!(
                out,
                "{}\t{:.10}\t{:.6e}\t{:.10}\t{:.6e}\t{}\t{}",
                r.metric_name,
                r.r_pearson,
                r.p_pearson,
                r.r_spearman,
                r.p_spearman,
                r.n,
                r.sig_flag()
            ),
            None => writeln!(
                out,
                "{}\tNA\tNA\tNA\tNA\t{}\terror: {}",
                row.metric_name,
                row.n,
                row.error.as_deref().unwrap_or("unknown")
            ),
        }
        .expect("writing to a String");
    }
    out
}

/// Fixed-width table for terminals.
pub fn report_table(rows: &[ReportRow]) -> String {
    let mut out = format!(
        "{:<14} {:>10} {:>11} {:>10} {:>11} {:>5}\n",
        "metric", "pearson", "p", "spearman", "p", "n"
    );
    for row in rows {
        match &row.report {
            Some(r) => writeln!(
                out,
                "{:<14} {:>9.4}{} {:>11.3e} {:>10.4} {:>11.3e} {:>5}",
                r.metric_name,
                r.r_pearson,
                if r.sig_flag().is_empty() { " " } else { "*" },
                r.p_pearson,
                r.r_spearman,
                r.p_spearman,
                r.n
            ),
            None => writeln!(
                out,
                "{:<14} {}",
                row.metric_name,
                row.error.as_deref().unwrap_or("error")
            ),
        }
        .expect("writing to a String");
    }
    out
}
