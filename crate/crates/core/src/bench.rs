//! Timing and stability experiments.
//!
//! Timing: for each `(n, d, C)` cell a synthetic task is generated and LogME,
//! the plain H-score and the shrinkage H-score are timed after a warmup.
//! Alongside, the Woodbury and dense shrinkage evaluations are compared on the
//! same normalized data.
//!
//! Stability: per seed, a large-sample population reference of the H-score is
//! computed once; then for a range of sample sizes the plain and shrunk scores
//! are reported as ratios to it.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::covshrink::{self, ClassStats};
use crate::error::{Error, Result};
use crate::hscore;
use crate::logme;
use crate::synthgen::{self, SyntheticModel, SyntheticSpec};

/// Coefficient of variation above which a timing cell is flagged unstable.
pub const UNSTABLE_CV: f64 = 0.30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub n: usize,
    pub d: usize,
    pub c: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub grid: Vec<GridCell>,
    pub repetitions: usize,
    pub warmup: usize,
    pub seed: u64,
    pub d_informative: usize,
    pub class_sep: f64,
}

impl BenchConfig {
    /// The seven `(n, d, C)` cells of the published timing table.
    pub fn table5() -> Self {
        let grid = [
            (500, 500, 50),
            (500, 1000, 50),
            (500, 5000, 50),
            (500, 1000, 10),
            (500, 1000, 100),
            (100, 1000, 50),
            (1000, 1000, 50),
        ]
        .into_iter()
        .map(|(n, d, c)| GridCell { n, d, c })
        .collect();
        Self {
            grid,
            repetitions: 7,
            warmup: 2,
            seed: 0,
            d_informative: 100,
            class_sep: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Validation("timing grid is empty".into()));
        }
        if self.repetitions < 3 {
            return Err(Error::Validation(format!(
                "need at least 3 repetitions, got {}",
                self.repetitions
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n: usize,
    pub d: usize,
    pub c: usize,
    pub metric: String,
    pub ms_median: f64,
    pub ms_iqr: f64,
    pub cv: f64,
    pub unstable: bool,
    pub samples_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingCell {
    pub cell: GridCell,
    /// Median LogME time over median shrinkage H-score time.
    pub logme_over_shrunk: f64,
    /// Median plain H-score time over median shrinkage H-score time.
    pub hscore_over_shrunk: f64,
    /// Relative gap between Woodbury and dense shrinkage evaluations.
    pub path_rel_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    pub cells: Vec<TimingCell>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

fn time_ms<F: FnMut() -> Result<()>>(warmup: usize, reps: usize, mut f: F) -> Result<Vec<f64>> {
    for _ in 0..warmup {
        f()?;
    }
    (0..reps)
        .map(|_| {
            let t = Instant::now();
            f()?;
            Ok(t.elapsed().as_secs_f64() * 1e3)
        })
        .collect()
}

fn timing_row(cell: GridCell, metric: &str, samples: Vec<f64>) -> TimingRow {
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (samples.len() - 1).max(1) as f64;
    let cv = if mean > 0.0 { var.sqrt() / mean } else { 0.0 };
    TimingRow {
        n: cell.n,
        d: cell.d,
        c: cell.c,
        metric: metric.to_string(),
        ms_median: quantile(&sorted, 0.5),
        ms_iqr: quantile(&sorted, 0.75) - quantile(&sorted, 0.25),
        cv,
        unstable: cv > UNSTABLE_CV,
        samples_ms: samples,
    }
}

/// Times every grid cell in sequence. No projection is applied.
pub fn run_timing(config: &BenchConfig) -> Result<TimingReport> {
    config.validate()?;
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for (idx, &cell) in config.grid.iter().enumerate() {
        let spec = SyntheticSpec::new(
            cell.n,
            cell.d,
            config.d_informative.min(cell.d),
            cell.c,
            config.class_sep,
            config.seed.wrapping_add(idx as u64),
        );
        let (f, y) = synthgen::make_classification(&spec)?;
        log::info!("timing n={} d={} C={}", cell.n, cell.d, cell.c);

        let t_logme = time_ms(config.warmup, config.repetitions, || logme::logme(&f, &y).map(|_| ()))?;
        let t_h = time_ms(config.warmup, config.repetitions, || {
            hscore::hscore_original(&f, &y).map(|_| ())
        })?;
        let t_hs = time_ms(config.warmup, config.repetitions, || {
            hscore::hscore_shrunk(&f, &y, None, None).map(|_| ())
        })?;

        let path_rel_diff = path_gap(&f, &y)?;
        let (a, b, c) = (median(&t_logme), median(&t_h), median(&t_hs));
        cells.push(TimingCell {
            cell,
            logme_over_shrunk: a / c,
            hscore_over_shrunk: b / c,
            path_rel_diff,
        });
        rows.push(timing_row(cell, "logme", t_logme));
        rows.push(timing_row(cell, "hscore", t_h));
        rows.push(timing_row(cell, "hscore_shrunk", t_hs));
    }
    Ok(TimingReport { rows, cells })
}

/// `|woodbury − dense| / |dense|` at the Ledoit-Wolf intensity.
pub fn path_gap(f: &crate::FeatureMatrix, y: &crate::LabelVector) -> Result<f64> {
    let z = covshrink::center_and_standardize(f)?;
    let stats = ClassStats::new(z.view(), y)?;
    let alpha = covshrink::ledoit_wolf_alpha(&z)?;
    let sigma = z.view().iter().map(|v| v * v).sum::<f64>() / (z.n_samples() * z.dim()) as f64;
    let w = hscore::shrunk_score_woodbury(z.view(), stats.r.view(), alpha, sigma)?;
    let d = hscore::shrunk_score_dense(z.view(), stats.r.view(), alpha, sigma)?;
    Ok(if d == 0.0 { (w - d).abs() } else { ((w - d) / d).abs() })
}

pub const TIMING_HEADER: &str = "n\td\tC\tmetric\tms_median\tms_iqr\tcv\tflag";

pub fn timing_tsv(report: &TimingReport) -> String {
    let mut out = String::from(TIMING_HEADER);
    out.push('\n');
    for r in &report.rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.3}\t{:.3}\t{:.3}\t{}",
            r.n,
            r.d,
            r.c,
            r.metric,
            r.ms_median,
            r.ms_iqr,
            r.cv,
            if r.unstable { "unstable" } else { "ok" }
        )
        .expect("writing to a String");
    }
    out
}

pub const TIMING_SUMMARY_HEADER: &str = "n\td\tC\tlogme_over_shrunk\thscore_over_shrunk\tpath_rel_diff";

pub fn timing_summary_tsv(report: &TimingReport) -> String {
    let mut out = String::from(TIMING_SUMMARY_HEADER);
    out.push('\n');
    for c in &report.cells {
        writeln!(
            out,
            "{}\t{}\t{}\t{:.3}\t{:.3}\t{:.3e}",
            c.cell.n, c.cell.d, c.cell.c, c.logme_over_shrunk, c.hscore_over_shrunk, c.path_rel_diff
        )
        .expect("writing to a String");
    }
    out
}

/// One point of the shrinkage sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum AlphaSetting {
    /// `min(k·α*, 1)`.
    Scaled(f64),
    Fixed(f64),
}

impl AlphaSetting {
    pub fn resolve(self, alpha_star: f64) -> f64 {
        match self {
            AlphaSetting::Scaled(k) => (k * alpha_star).min(1.0),
            AlphaSetting::Fixed(a) => a,
        }
    }

    pub fn label(self) -> String {
        match self {
            AlphaSetting::Scaled(1.0) => "alpha*".to_string(),
            AlphaSetting::Scaled(k) => format!("alpha*x{k}"),
            AlphaSetting::Fixed(a) => format!("{a}"),
        }
    }

    /// `{α*/100, α*/10, α*, min(10α*, 1), 1}`.
    pub fn default_grid() -> Vec<AlphaSetting> {
        vec![
            AlphaSetting::Scaled(0.01),
            AlphaSetting::Scaled(0.1),
            AlphaSetting::Scaled(1.0),
            AlphaSetting::Scaled(10.0),
            AlphaSetting::Fixed(1.0),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub d: usize,
    pub d_informative: usize,
    pub c: usize,
    pub class_sep: f64,
    pub clusters_per_class: usize,
    pub sample_sizes: Vec<usize>,
    pub n_reference: usize,
    pub alpha_grid: Vec<AlphaSetting>,
    pub seeds: Vec<u64>,
}

impl StabilityConfig {
    /// d = 200 with 100 informative features, 10 classes, a 10⁵-sample
    /// reference and five seeds.
    pub fn desk() -> Self {
        Self {
            d: 200,
            d_informative: 100,
            c: 10,
            class_sep: 0.4,
            clusters_per_class: 2,
            sample_sizes: vec![50, 100, 200, 400, 800, 1600, 3200],
            n_reference: 100_000,
            alpha_grid: AlphaSetting::default_grid(),
            seeds: (0..5).collect(),
        }
    }

    /// d = 1000 with 500 informative features and a 10⁶-sample reference.
    pub fn paper() -> Self {
        Self {
            d: 1000,
            d_informative: 500,
            c: 10,
            class_sep: 1.0,
            clusters_per_class: 2,
            sample_sizes: vec![100, 250, 500, 1000, 2000, 4000, 8000],
            n_reference: 1_000_000,
            alpha_grid: AlphaSetting::default_grid(),
            seeds: (0..5).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_sizes.is_empty() || self.seeds.is_empty() {
            return Err(Error::Validation("stability run needs sample sizes and seeds".into()));
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("sample sizes must be strictly increasing".into()));
        }
        let max = *self.sample_sizes.last().expect("non-empty");
        if max >= self.n_reference {
            return Err(Error::Validation(format!(
                "largest sample size {max} must be below n_reference {}",
                self.n_reference
            )));
        }
        if self.sample_sizes[0] < self.c {
            return Err(Error::Validation(format!(
                "smallest sample size {} is below the class count {}",
                self.sample_sizes[0], self.c
            )));
        }
        Ok(())
    }

    fn spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec::new(
            self.n_reference,
            self.d,
            self.d_informative,
            self.c,
            self.class_sep,
            seed,
        )
        .with_clusters_per_class(self.clusters_per_class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub seed: u64,
    pub n: usize,
    pub alpha: f64,
    /// `hscore`, or `hscore_shrunk` with the sweep label.
    pub metric: String,
    pub setting: String,
    pub value: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub references: Vec<(u64, f64)>,
    pub rows: Vec<StabilityRow>,
}

impl StabilityReport {
    /// Median over seeds of the ratio for one `(metric, setting, n)` series.
    pub fn median_ratio(&self, metric: &str, setting: &str, n: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.metric == metric && r.setting == setting && r.n == n)
            .map(|r| r.ratio)
            .collect();
        (!v.is_empty()).then(|| median(&v))
    }

    /// Median over seeds of `|value − reference|` for one series.
    pub fn median_abs_error(&self, metric: &str, setting: &str, n: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.metric == metric && r.setting == setting && r.n == n)
            .map(|r| {
                let reference = self
                    .references
                    .iter()
                    .find(|(s, _)| *s == r.seed)
                    .map_or(f64::NAN, |x| x.1);
                (r.value - reference).abs()
            })
            .collect();
        (!v.is_empty()).then(|| median(&v))
    }
}

pub fn run_stability(config: &StabilityConfig) -> Result<StabilityReport> {
    config.validate()?;
    let mut references = Vec::new();
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let model = SyntheticModel::new(&config.spec(seed))?;
        let reference = hscore::population_reference_for(&model, config.n_reference)?;
        log::info!("seed {seed}: population reference {reference:.6}");
        references.push((seed, reference));
        for (draw, &n) in config.sample_sizes.iter().enumerate() {
            let (f, y) = model.sample(n, draw as u64)?;
            let push = |rows: &mut Vec<StabilityRow>, metric: &str, setting: String, alpha: f64, value: f64| {
                rows.push(StabilityRow {
                    seed,
                    n,
                    alpha,
                    metric: metric.to_string(),
                    setting,
                    value,
                    ratio: value / reference,
                })
            };
            let h = hscore::hscore_original(&f, &y)?;
            push(&mut rows, "hscore", "-".into(), 0.0, h.value);
            let star = hscore::hscore_shrunk(&f, &y, None, None)?;
            for &setting in &config.alpha_grid {
                let alpha = setting.resolve(star.alpha_used);
                let value = if alpha == star.alpha_used {
                    star.value
                } else {
                    hscore::hscore_shrunk(&f, &y, Some(alpha), None)?.value
                };
                push(&mut rows, "hscore_shrunk", setting.label(), alpha, value);
            }
        }
    }
    Ok(StabilityReport { references, rows })
}

pub const STABILITY_HEADER: &str = "seed\tn\talpha\tmetric\tvalue\tratio\tsetting";

pub fn stability_tsv(report: &StabilityReport) -> String {
    let mut out = String::from(STABILITY_HEADER);
    out.push('\n');
    for r in &report.rows {
        writeln!(
            out,
            "{}\t{}\t{:.6e}\t{}\t{:.10e}\t{:.6}\t{}",
            r.seed, r.n, r.alpha, r.metric, r.value, r.ratio, r.setting
        )
        .expect("writing to a String");
    }
    out
}

/// Per `(metric, setting, n)`: median ratio over seeds.
pub fn stability_summary_tsv(report: &StabilityReport, config: &StabilityConfig) -> String {
    let mut out = String::from("metric\tsetting\tn\tmedian_ratio\n");
    let mut series = vec![("hscore".to_string(), "-".to_string())];
    series.extend(
        config
            .alpha_grid
            .iter()
            .map(|a| ("hscore_shrunk".to_string(), a.label())),
    );
    for (metric, setting) in &series {
        for &n in &config.sample_sizes {
            if let Some(m) = report.median_ratio(metric, setting, n) {
                writeln!(out, "{metric}\t{setting}\t{n}\t{m:.6}").expect("writing to a String");
            }
        }
    }
    out
}
