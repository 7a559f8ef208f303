//! AUC / LogLoss and per-domain evaluation reports.

mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use metrics::{auc, logloss, PROB_EPS};

use crate::error::{Error, Result};
use crate::model::{FeatureSet, Mode, UfinModel};
use crate::numeric::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    InDomain,
    ZeroShot,
    CrossPlatform,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::InDomain => "in-domain",
            EvalMode::ZeroShot => "zero-shot",
            EvalMode::CrossPlatform => "cross-platform",
        }
    }
}

impl FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in-domain" => Ok(EvalMode::InDomain),
            "zero-shot" => Ok(EvalMode::ZeroShot),
            "cross-platform" => Ok(EvalMode::CrossPlatform),
            other => Err(Error::invalid(format!(
                "unknown evaluation mode `{other}` (expected in-domain, zero-shot or cross-platform)"
            ))),
        }
    }
}

/// Metrics for one slice. `auc` is absent when the slice has a single class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub n: usize,
    pub positives: usize,
    pub auc: Option<f64>,
    pub logloss: f64,
}

impl SliceMetrics {
    pub fn compute(labels: &[u8], probs: &[f64]) -> Result<Self> {
        let positives = labels.iter().filter(|&&y| y == 1).count();
        let auc = if positives == 0 || positives == labels.len() {
            None
        } else {
            Some(auc(labels, probs)?)
        };
        Ok(Self {
            n: labels.len(),
            positives,
            auc,
            logloss: logloss(labels, probs)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub domains: BTreeMap<usize, SliceMetrics>,
    pub overall: SliceMetrics,
}

impl EvalReport {
    /// Per-domain and pooled metrics from probabilities.
    pub fn from_predictions(
        mode: EvalMode,
        domains: &[usize],
        labels: &[u8],
        probs: &[f64],
    ) -> Result<Self> {
        if domains.len() != labels.len() || labels.len() != probs.len() {
            return Err(Error::shape(
                "evaluate",
                &[domains.len(), labels.len()],
                &[probs.len()],
            ));
        }
        let mut groups: BTreeMap<usize, (Vec<u8>, Vec<f64>)> = BTreeMap::new();
        for ((&d, &y), &p) in domains.iter().zip(labels).zip(probs) {
            let g = groups.entry(d).or_default();
            g.0.push(y);
            g.1.push(p);
        }
        let domains = groups
            .into_iter()
            .map(|(d, (y, p))| Ok((d, SliceMetrics::compute(&y, &p)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            mode,
            domains,
            overall: SliceMetrics::compute(labels, probs)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Aligned-column table.
    pub fn to_text(&self) -> String {
        let fmt_auc = |a: Option<f64>| a.map_or("-".to_string(), |v| format!("{v:.4}"));
        let mut out = format!("mode: {}\n", self.mode.name());
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>8} {:>8} {:>8}",
            "domain", "n", "pos", "auc", "logloss"
        );
        let rows = self
            .domains
            .iter()
            .map(|(d, m)| (d.to_string(), m))
            .chain(std::iter::once(("all".to_string(), &self.overall)));
        for (name, m) in rows {
            let _ = writeln!(
                out,
                "{:<10} {:>8} {:>8} {:>8} {:>8.4}",
                name,
                m.n,
                m.positives,
                fmt_auc(m.auc),
                m.logloss
            );
        }
        out
    }
}

/// Score `set` with `model` and report per domain.
pub fn evaluate(model: &UfinModel, set: &FeatureSet, mode: EvalMode) -> Result<EvalReport> {
    if mode == EvalMode::ZeroShot && model.mode() == Mode::TextFeature {
        return Err(Error::invalid(
            "zero-shot evaluation needs a ufin_t model: the feature adaptor has no weights for unseen domains",
        ));
    }
    let scores = model.score(set)?;
    let probs: Vec<f64> = scores.logit.iter().map(|&z| sigmoid(z)).collect();
    EvalReport::from_predictions(mode, &set.domains, &set.labels, &probs)
}
