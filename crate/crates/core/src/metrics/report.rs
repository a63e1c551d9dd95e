use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    confidence_interval, exact_score, hit_score, iou, location_eligible, t_test, CiMethod, MetricError, ScoredItem,
};
use crate::dataset::VQARecord;
use crate::domain::{AnswerMode, Language, Prediction, TaskRegistry};
use crate::inference::ModelResponse;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    HitRate,
    LocationIou,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::HitRate => "hit_rate",
            MetricKind::LocationIou => "location_iou",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetric {
    pub task_id: String,
    pub language: Language,
    pub metric: MetricKind,
    pub value: f64,
    pub n: usize,
    /// Absent when fewer than two items were scored.
    pub ci95: Option<(f64, f64)>,
    /// Per-item scores, kept for significance tests between reports.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub task_id: String,
    pub language: Language,
    pub metric: MetricKind,
    pub a: String,
    pub b: String,
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub cohort: String,
    pub ci_method: CiMethod,
    pub metrics: Vec<TaskMetric>,
    #[serde(default)]
    pub comparisons: Vec<Comparison>,
    /// Records without a model response; scored as indeterminate.
    #[serde(default)]
    pub missing: Vec<String>,
}

/// Score `records` against model responses, per (task, language).
///
/// Multi-class tasks get accuracy, multi-label tasks hit-rate, and
/// location-bearing tasks additionally location IoU on eligible items.
pub fn evaluate(
    records: &[VQARecord],
    responses: &BTreeMap<String, ModelResponse>,
    registry: &TaskRegistry,
    cohort: &str,
    ci_method: CiMethod,
) -> Result<EvaluationReport, MetricError> {
    let mut groups: BTreeMap<(&str, Language), Vec<ScoredItem>> = BTreeMap::new();
    let mut missing = Vec::new();
    for r in records {
        let (pred, pred_locations) = match responses.get(&r.record_id) {
            Some(m) => (m.parsed_answer.clone(), m.parsed_locations),
            None => {
                missing.push(r.record_id.clone());
                (Prediction::Indeterminate, Default::default())
            }
        };
        groups.entry((r.task_id.as_str(), r.language)).or_default().push(ScoredItem {
            record_id: r.record_id.clone(),
            task_id: r.task_id.clone(),
            gold: r.answer.clone(),
            gold_locations: r.locations.unwrap_or_default(),
            pred,
            pred_locations,
        });
    }
    let mut metrics = Vec::new();
    for ((task_id, language), items) in groups {
        let Some(task) = registry.get(task_id) else { continue };
        let main = match task.answer_mode {
            AnswerMode::MultiClass => (MetricKind::Accuracy, items.iter().map(exact_score).collect::<Vec<_>>()),
            AnswerMode::MultiLabel => {
                (MetricKind::HitRate, items.iter().map(hit_score).collect::<Result<Vec<_>, _>>()?)
            }
        };
        let mut rows = vec![main];
        if task.supports_location {
            let loc: Vec<f64> = items
                .iter()
                .filter(|i| location_eligible(i))
                .filter_map(|i| iou(i.gold_locations, i.pred_locations))
                .collect();
            if !loc.is_empty() {
                rows.push((MetricKind::LocationIou, loc));
            }
        }
        for (metric, scores) in rows {
            let value = scores.iter().sum::<f64>() / scores.len() as f64;
            metrics.push(TaskMetric {
                task_id: task_id.to_string(),
                language,
                metric,
                value,
                n: scores.len(),
                ci95: confidence_interval(&scores, ci_method).ok(),
                scores,
            });
        }
    }
    if metrics.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(EvaluationReport {
        schema_version: 1,
        cohort: cohort.to_string(),
        ci_method,
        metrics,
        comparisons: Vec::new(),
        missing,
    })
}

impl EvaluationReport {
    pub fn get(&self, task_id: &str, language: Language, metric: MetricKind) -> Option<&TaskMetric> {
        self.metrics.iter().find(|m| m.task_id == task_id && m.language == language && m.metric == metric)
    }

    /// Unweighted mean of per-task values for one metric and language.
    pub fn macro_mean(&self, language: Language, metric: MetricKind) -> Option<f64> {
        let vals: Vec<f64> =
            self.metrics.iter().filter(|m| m.language == language && m.metric == metric).map(|m| m.value).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// t-tests on every (task, language, metric) both reports cover.
    pub fn compare(&self, other: &EvaluationReport) -> Vec<Comparison> {
        let mut out = Vec::new();
        for m in &self.metrics {
            let Some(o) = other.get(&m.task_id, m.language, m.metric) else { continue };
            if let Ok(t) = t_test(&m.scores, &o.scores) {
                out.push(Comparison {
                    task_id: m.task_id.clone(),
                    language: m.language,
                    metric: m.metric,
                    a: self.cohort.clone(),
                    b: other.cohort.clone(),
                    statistic: t.statistic,
                    p_value: t.p_value,
                    significant: t.significant,
                });
            }
        }
        out
    }

    /// Item-weighted mean over every task and language.
    pub fn pooled(&self, metric: MetricKind) -> Option<f64> {
        let rows: Vec<&TaskMetric> = self.metrics.iter().filter(|m| m.metric == metric && m.n > 0).collect();
        let n: usize = rows.iter().map(|m| m.n).sum();
        (n > 0).then(|| rows.iter().map(|m| m.value * m.n as f64).sum::<f64>() / n as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    /// Flat table: one row per (task, language, metric).
    pub fn write_csv(&self, path: &Path) -> csv::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["cohort", "task_id", "language", "metric", "value", "n", "ci_lo", "ci_hi"])?;
        for m in &self.metrics {
            let (lo, hi) =
                m.ci95.map_or((String::new(), String::new()), |(l, h)| (format!("{l:.6}"), format!("{h:.6}")));
            w.write_record([
                self.cohort.as_str(),
                &m.task_id,
                m.language.code(),
                m.metric.name(),
                &format!("{:.6}", m.value),
                &m.n.to_string(),
                &lo,
                &hi,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One bar chart per (language, metric) and one radar chart per language.
    pub fn write_plots(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut groups: BTreeMap<(Language, MetricKind), Vec<&TaskMetric>> = BTreeMap::new();
        for m in &self.metrics {
            groups.entry((m.language, m.metric)).or_default().push(m);
        }
        let mut paths = Vec::new();
        for ((lang, metric), rows) in &groups {
            let bars: Vec<(&str, f64, Option<(f64, f64)>)> =
                rows.iter().map(|m| (m.task_id.as_str(), m.value, m.ci95)).collect();
            let title = format!("{} {} ({})", self.cohort, metric.name(), lang.code());
            let path = dir.join(format!("bar_{}_{}.svg", metric.name(), lang.code().to_lowercase()));
            std::fs::write(&path, super::bar_chart_svg(&title, &bars))?;
            paths.push(path);
            if rows.len() >= 3 && *metric != MetricKind::LocationIou {
                let spokes: Vec<(&str, f64)> = rows.iter().map(|m| (m.task_id.as_str(), m.value)).collect();
                let path = dir.join(format!("radar_{}_{}.svg", metric.name(), lang.code().to_lowercase()));
                std::fs::write(&path, super::radar_chart_svg(&title, &spokes))?;
                paths.push(path);
            }
        }
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Provenance;
    use crate::domain::{Answer, LocationSet};

    fn rec(id: &str, task: &str, answer: Answer, locs: Option<LocationSet>) -> VQARecord {
        VQARecord {
            record_id: id.into(),
            lineage: id.into(),
            image_id: "i".into(),
            task_id: task.into(),
            language: Language::En,
            question: "q".into(),
            answer,
            rationale: None,
            locations: locs,
            provenance: Provenance::Auto,
        }
    }

    fn resp(p: Prediction, locs: LocationSet) -> ModelResponse {
        ModelResponse {
            raw_text: String::new(),
            parsed_answer: p,
            parsed_locations: locs,
            latency_ms: 0,
            step_count: 1,
        }
    }

    #[test]
    fn per_task_rows_and_exports() {
        let reg = TaskRegistry::default();
        let l5 = LocationSet::from_mask(1 << 5).unwrap();
        let records = vec![
            rec("a", "caries", Answer::single("yes"), Some(l5)),
            rec("b", "caries", Answer::single("no"), None),
            rec("c", "caries", Answer::single("yes"), Some(l5)),
            rec("d", "malocclusion_types", Answer::multi(["crowding", "spacing"]), None),
            rec("e", "malocclusion_types", Answer::multi(["crowding"]), None),
        ];
        let mut responses = BTreeMap::new();
        responses.insert("a".to_string(), resp(Answer::single("yes").into(), l5));
        responses.insert("b".to_string(), resp(Answer::single("no").into(), LocationSet::default()));
        responses.insert(
            "c".to_string(),
            resp(Answer::single("yes").into(), LocationSet::from_mask(1 << 5 | 1 << 4).unwrap()),
        );
        responses.insert("d".to_string(), resp(Answer::multi(["crowding"]).into(), LocationSet::default()));
        let rep = evaluate(&records, &responses, &reg, "mock", CiMethod::Fixed).unwrap();
        assert_eq!(rep.get("caries", Language::En, MetricKind::Accuracy).unwrap().value, 1.0);
        assert_eq!(rep.get("caries", Language::En, MetricKind::LocationIou).unwrap().value, 0.75);
        let hr = rep.get("malocclusion_types", Language::En, MetricKind::HitRate).unwrap();
        assert_eq!((hr.value, hr.n), (0.25, 2));
        assert_eq!(rep.missing, vec!["e".to_string()]);
        for m in &rep.metrics {
            if let Some((lo, hi)) = m.ci95 {
                assert!(lo <= m.value && m.value <= hi);
            }
        }

        let dir = tempfile::tempdir().unwrap();
        rep.write_csv(&dir.path().join("r.csv")).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + rep.metrics.len());
        let back: EvaluationReport = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(back.metrics.len(), rep.metrics.len());
        let plots = rep.write_plots(&dir.path().join("plots")).unwrap();
        assert!(plots.iter().all(|p| p.exists()));

        let cmp = rep.compare(&rep);
        assert!(cmp.iter().all(|c| c.p_value == 1.0));
    }
}
