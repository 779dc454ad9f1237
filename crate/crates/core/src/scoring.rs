//! Metric identifiers and a single entry point that evaluates any of them on
//! one task's inputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hscore;
use crate::logme;
use crate::matrixio::{SoftPredictionMatrix, TaskData};
use crate::projection::ProjectionSpec;
use crate::pseudometrics::{self, NleepConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Hscore,
    HscoreShrunk,
    Nce,
    Leep,
    Nleep,
    NNce,
    NLeep,
    NNleep,
    Logme,
}

impl MetricId {
    pub const ALL: [MetricId; 9] = [
        MetricId::Hscore,
        MetricId::HscoreShrunk,
        MetricId::Nce,
        MetricId::Leep,
        MetricId::Nleep,
        MetricId::NNce,
        MetricId::NLeep,
        MetricId::NNleep,
        MetricId::Logme,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Hscore => "hscore",
            MetricId::HscoreShrunk => "hscore_shrunk",
            MetricId::Nce => "nce",
            MetricId::Leep => "leep",
            MetricId::Nleep => "nleep",
            MetricId::NNce => "n_nce",
            MetricId::NLeep => "n_leep",
            MetricId::NNleep => "n_nleep",
            MetricId::Logme => "logme",
        }
    }

    pub fn needs_softpred(self) -> bool {
        matches!(self, MetricId::Nce | MetricId::Leep | MetricId::NNce | MetricId::NLeep)
    }

    /// Parses a comma-separated list; `all` expands to every metric.
    pub fn parse_list(s: &str) -> Result<Vec<MetricId>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "all" {
                out.extend(MetricId::ALL);
            } else {
                out.push(part.parse()?);
            }
        }
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::Validation("no metrics requested".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown metric `{s}`")))
    }
}

/// Knobs shared by every metric evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Random projection for the shrinkage H-score.
    pub projection: Option<ProjectionSpec>,
    /// Fixed shrinkage intensity; Ledoit-Wolf when absent.
    pub alpha: Option<f64>,
    pub seed: u64,
}

impl MetricConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            projection: None,
            alpha: None,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub metric: MetricId,
    pub value: f64,
    /// `key=value` pairs separated by `;`.
    pub detail: String,
}

fn softpred(data: &TaskData, metric: MetricId) -> Result<&SoftPredictionMatrix> {
    data.softpred
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("metric {metric} needs soft predictions")))
}

pub fn compute(metric: MetricId, data: &TaskData, config: &MetricConfig) -> Result<MetricValue> {
    let f = &data.features;
    let y = &data.labels;
    let (value, detail) = match metric {
        MetricId::Hscore => {
            let r = hscore::hscore_original(f, y)?;
            (r.value, format!("path={}", r.path.as_str()))
        }
        MetricId::HscoreShrunk => {
            let r = hscore::hscore_shrunk(f, y, config.alpha, config.projection.as_ref())?;
            let mut detail = format!("alpha={:.6e};path={}", r.alpha_used, r.path.as_str());
            if let Some(q) = r.q_projected {
                detail.push_str(&format!(";q={q}"));
            }
            if !r.warnings.is_empty() {
                detail.push_str(&format!(";warnings={}", r.warnings.len()));
            }
            (r.value, detail)
        }
        MetricId::Nce | MetricId::NNce => {
            let raw = pseudometrics::nce_soft(y, softpred(data, metric)?)?;
            normalized(metric == MetricId::NNce, raw, y)?
        }
        MetricId::Leep | MetricId::NLeep => {
            let raw = pseudometrics::leep(y, softpred(data, metric)?)?;
            normalized(metric == MetricId::NLeep, raw, y)?
        }
        MetricId::Nleep | MetricId::NNleep => {
            let r = pseudometrics::nleep(f, y, &NleepConfig::new(config.seed))?;
            let (v, d) = normalized(metric == MetricId::NNleep, r.value, y)?;
            (
                v,
                format!("{d};em_iterations={};converged={}", r.iterations, r.converged),
            )
        }
        MetricId::Logme => {
            let r = logme::logme(f, y)?;
            let max_iter = r.iterations_per_class.iter().max().copied().unwrap_or(0);
            (r.value, format!("converged={};max_iterations={max_iter}", r.converged))
        }
    };
    if !value.is_finite() {
        return Err(Error::Numerical(format!("metric {metric} produced {value}")));
    }
    Ok(MetricValue { metric, value, detail })
}

fn normalized(normalize: bool, raw: f64, y: &crate::LabelVector) -> Result<(f64, String)> {
    if normalize {
        let h = pseudometrics::label_entropy(y);
        Ok((
            pseudometrics::normalize_metric(raw, h)?,
            format!("raw={raw:.6e};label_entropy={h:.6e}"),
        ))
    } else {
        Ok((raw, format!("label_entropy={:.6e}", pseudometrics::label_entropy(y))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in MetricId::ALL {
            assert_eq!(m.name().parse::<MetricId>().unwrap(), m);
        }
        assert!("hscore2".parse::<MetricId>().is_err());
    }

    #[test]
    fn list_parsing() {
        assert_eq!(MetricId::parse_list("all").unwrap().len(), 9);
        assert_eq!(
            MetricId::parse_list("nce, hscore,nce").unwrap(),
            vec![MetricId::Hscore, MetricId::Nce]
        );
        assert!(MetricId::parse_list("").is_err());
    }
}
