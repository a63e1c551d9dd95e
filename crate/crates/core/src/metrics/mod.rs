//! Scores, confidence intervals, significance tests and rater consistency.

mod consistency;
mod plot;
mod report;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::domain::{Answer, LocationSet, Prediction, DESCRIPTOR_COUNT};

pub use consistency::{consistency, ConsistencyMode, RaterResponse};
pub use plot::{bar_chart_svg, radar_chart_svg};
pub use report::{evaluate, Comparison, EvaluationReport, MetricKind, TaskMetric};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("no items to score")]
    Empty,
    #[error("items mix tasks {0:?} and {1:?}")]
    MixedTasks(String, String),
    #[error("item {0}: empty ground-truth label list")]
    EmptyGold(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("no repeated items to measure self-consistency")]
    NoRepeats,
    #[error("no items shared between raters")]
    NoOverlap,
}

/// One gold/prediction pair ready for scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub record_id: String,
    pub task_id: String,
    pub gold: Answer,
    #[serde(default)]
    pub gold_locations: LocationSet,
    pub pred: Prediction,
    #[serde(default)]
    pub pred_locations: LocationSet,
}

fn same_task(items: &[ScoredItem]) -> Result<(), MetricError> {
    let first = items.first().ok_or(MetricError::Empty)?;
    match items.iter().find(|i| i.task_id != first.task_id) {
        Some(o) => Err(MetricError::MixedTasks(first.task_id.clone(), o.task_id.clone())),
        None => Ok(()),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// 1 for an exact match, 0 otherwise; indeterminate counts as wrong.
pub fn exact_score(item: &ScoredItem) -> f64 {
    if item.pred.matches(&item.gold) {
        1.0
    } else {
        0.0
    }
}

/// Fraction of gold labels recovered; 0 if any predicted label is not gold.
pub fn hit_score(item: &ScoredItem) -> Result<f64, MetricError> {
    let gold = item.gold.label_set();
    if gold.is_empty() {
        return Err(MetricError::EmptyGold(item.record_id.clone()));
    }
    let Some(pred) = item.pred.answer() else { return Ok(0.0) };
    let pred = pred.label_set();
    if pred.is_subset(&gold) {
        Ok(pred.len() as f64 / gold.len() as f64)
    } else {
        Ok(0.0)
    }
}

pub fn accuracy(items: &[ScoredItem]) -> Result<f64, MetricError> {
    same_task(items)?;
    Ok(mean(&items.iter().map(exact_score).collect::<Vec<_>>()))
}

pub fn hit_rate(items: &[ScoredItem]) -> Result<f64, MetricError> {
    same_task(items)?;
    let scores = items.iter().map(hit_score).collect::<Result<Vec<_>, _>>()?;
    Ok(mean(&scores))
}

/// Intersection over union over the descriptor indicators; `None` when both sets are empty.
pub fn iou(gold: LocationSet, pred: LocationSet) -> Option<f64> {
    let (mut inter, mut union) = (0u32, 0u32);
    for k in 0..DESCRIPTOR_COUNT {
        let g = gold.mask() >> k & 1;
        let p = pred.mask() >> k & 1;
        inter += u32::from(g & p);
        union += u32::from(g | p);
    }
    (union > 0).then(|| f64::from(inter) / f64::from(union))
}

/// Items on which location IoU is defined: the condition is present and
/// the diagnosis was correct.
pub fn location_eligible(item: &ScoredItem) -> bool {
    !item.gold_locations.is_empty() && item.pred.matches(&item.gold)
}

pub fn location_iou(items: &[ScoredItem]) -> Result<f64, MetricError> {
    let scores: Vec<f64> =
        items.iter().filter(|i| location_eligible(i)).filter_map(|i| iou(i.gold_locations, i.pred_locations)).collect();
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(mean(&scores))
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_stdev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// mean ± 1.96·s/√n
    #[default]
    Fixed,
    /// mean ± t(0.975, n-1)·s/√n
    StudentT,
}

pub fn confidence_interval_95(samples: &[f64]) -> Result<(f64, f64), MetricError> {
    confidence_interval(samples, CiMethod::Fixed)
}

pub fn confidence_interval(samples: &[f64], method: CiMethod) -> Result<(f64, f64), MetricError> {
    let n = samples.len();
    if n < 2 {
        return Err(MetricError::TooFewSamples { needed: 2, got: n });
    }
    let crit = match method {
        CiMethod::Fixed => 1.96,
        CiMethod::StudentT => StudentsT::new(0.0, 1.0, n as f64 - 1.0).expect("df > 0").inverse_cdf(0.975),
    };
    let m = mean(samples);
    let half = crit * sample_stdev(samples) / (n as f64).sqrt();
    Ok((m - half, m + half))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
    pub significant: bool,
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Two-sided Student two-sample t-test with pooled variance.
pub fn t_test(a: &[f64], b: &[f64]) -> Result<TTest, MetricError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(MetricError::TooFewSamples { needed: 2, got: s.len() });
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let ss = |xs: &[f64], m: f64| xs.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    let df = na + nb - 2.0;
    let pooled = (ss(a, ma) + ss(b, mb)) / df;
    let diff = ma - mb;
    let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    let (statistic, p_value) = if diff == 0.0 {
        (0.0, 1.0)
    } else if se == 0.0 {
        (diff.signum() * f64::INFINITY, 0.0)
    } else {
        let t = diff / se;
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (t, (2.0 * dist.sf(t.abs())).min(1.0))
    };
    Ok(TTest { statistic, df, p_value, significant: p_value < SIGNIFICANCE_LEVEL })
}
