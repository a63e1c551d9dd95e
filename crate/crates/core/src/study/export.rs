use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::design::{Arm, EntryKind, Tier};
use super::session::{Study, Submission};
use super::{StudyError, SCHEMA_VERSION};
use crate::domain::{Answer, TaskRegistry};
use crate::metrics::{consistency, exact_score, hit_score, ConsistencyMode, RaterResponse, ScoredItem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub tier: Tier,
    /// `None` for the summary over all tasks.
    pub task_id: Option<String>,
    pub accuracy: Option<f64>,
    pub hit_rate: Option<f64>,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssistedGain {
    pub tier: Tier,
    pub arm: Arm,
    /// Accuracy in `arm` minus accuracy in the independent arm.
    pub accuracy_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub arm: Arm,
    pub category: String,
    pub n: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingHistogram {
    pub dimension: String,
    /// `counts[v]` is the number of ratings equal to `v`.
    pub counts: Vec<usize>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyExport {
    pub schema_version: u32,
    pub study_id: String,
    pub summaries: Vec<ArmSummary>,
    pub gains: Vec<AssistedGain>,
    pub timing: Vec<TimingSummary>,
    pub ratings: Vec<RatingHistogram>,
    pub self_consistency: Option<f64>,
    pub group_consistency: Option<f64>,
}

#[derive(Default)]
struct Acc {
    exact: Vec<f64>,
    hit: Vec<f64>,
}

impl Acc {
    fn summary(&self, arm: Arm, tier: Tier, task_id: Option<String>) -> ArmSummary {
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        ArmSummary {
            arm,
            tier,
            task_id,
            accuracy: mean(&self.exact),
            hit_rate: mean(&self.hit),
            n: self.exact.len() + self.hit.len(),
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl Study {
    /// Summarize a finished study. Refuses while any session is open.
    ///
    /// Accuracy and hit-rate use first showings of independent-set items;
    /// repeats feed self-consistency and group-validation items feed group
    /// consistency (independent arm only).
    pub fn export(&self, registry: &TaskRegistry) -> Result<StudyExport, StudyError> {
        let open = self.open_sessions();
        if !open.is_empty() {
            return Err(StudyError::OpenSessions(open));
        }
        let mut overall: BTreeMap<(Arm, Tier), Acc> = BTreeMap::new();
        let mut per_task: BTreeMap<(Arm, Tier, String), Acc> = BTreeMap::new();
        let mut times: BTreeMap<(Arm, String), Vec<f64>> = BTreeMap::new();
        let mut ratings: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
        let mut self_rows = Vec::new();
        let mut group_rows: BTreeMap<usize, Vec<RaterResponse>> = BTreeMap::new();

        for s in self.sessions.values() {
            let arm = s.plan.arm;
            for r in s.responses.values() {
                let item = &self.items[&r.item_id];
                let category = registry.get(&item.task_id).map_or("unknown".to_string(), |t| {
                    serde_json::to_value(t.category)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default()
                });
                times.entry((arm, category)).or_default().push(r.duration_ms as f64);
                match &r.submission {
                    Submission::Rating(rec) => {
                        ratings.entry("accuracy").or_default().push(rec.accuracy);
                        for (d, v) in rec.dimensions() {
                            ratings.entry(d).or_default().push(v);
                        }
                    }
                    Submission::Answer(a) => {
                        if arm == Arm::Independent {
                            let row = RaterResponse {
                                rater: s.plan.dentist_id.clone(),
                                item: r.item_id.clone(),
                                answer: a.answer.clone(),
                            };
                            match r.kind {
                                EntryKind::GroupValidation(g) => group_rows.entry(g).or_default().push(row),
                                _ => self_rows.push(row),
                            }
                        }
                        if r.kind != EntryKind::Independent {
                            continue;
                        }
                        let scored = ScoredItem {
                            record_id: r.item_id.clone(),
                            task_id: item.task_id.clone(),
                            gold: item.gold.clone(),
                            gold_locations: Default::default(),
                            pred: a.answer.clone(),
                            pred_locations: Default::default(),
                        };
                        for acc in [
                            overall.entry((arm, s.tier)).or_default(),
                            per_task.entry((arm, s.tier, item.task_id.clone())).or_default(),
                        ] {
                            match &item.gold {
                                Answer::Single(_) => acc.exact.push(exact_score(&scored)),
                                Answer::Multi(_) => acc.hit.push(hit_score(&scored).unwrap_or(0.0)),
                            }
                        }
                    }
                }
            }
        }

        let mut summaries: Vec<ArmSummary> = overall.iter().map(|((a, t), acc)| acc.summary(*a, *t, None)).collect();
        summaries.extend(per_task.iter().map(|((a, t, task), acc)| acc.summary(*a, *t, Some(task.clone()))));
        let mut gains = Vec::new();
        for ((arm, tier), acc) in &overall {
            if matches!(arm, Arm::AnswerAssisted | Arm::RationaleAssisted) {
                let base = overall
                    .get(&(Arm::Independent, *tier))
                    .and_then(|b| b.summary(Arm::Independent, *tier, None).accuracy);
                if let (Some(b), Some(x)) = (base, acc.summary(*arm, *tier, None).accuracy) {
                    gains.push(AssistedGain { tier: *tier, arm: *arm, accuracy_delta: x - b });
                }
            }
        }
        let timing = times
            .into_iter()
            .map(|((arm, category), mut v)| TimingSummary {
                arm,
                category,
                n: v.len(),
                mean_ms: v.iter().sum::<f64>() / v.len() as f64,
                median_ms: median(&mut v),
            })
            .collect();
        let ratings = ratings
            .into_iter()
            .map(|(d, v)| {
                let mut counts = vec![0; 6];
                for x in &v {
                    counts[*x as usize] += 1;
                }
                RatingHistogram {
                    dimension: d.to_string(),
                    counts,
                    mean: v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len() as f64,
                }
            })
            .collect();
        let group_scores: Vec<f64> =
            group_rows.values().filter_map(|rows| consistency(rows, ConsistencyMode::GroupPairwise).ok()).collect();
        Ok(StudyExport {
            schema_version: SCHEMA_VERSION,
            study_id: self.study_id.clone(),
            summaries,
            gains,
            timing,
            ratings,
            self_consistency: consistency(&self_rows, ConsistencyMode::SelfAgreement).ok(),
            group_consistency: (!group_scores.is_empty())
                .then(|| group_scores.iter().sum::<f64>() / group_scores.len() as f64),
        })
    }

    /// Write the export JSON plus flat response and rating tables into `dir`.
    pub fn export_to(&self, registry: &TaskRegistry, dir: &Path) -> Result<Vec<PathBuf>, StudyError> {
        let ex = self.export(registry)?;
        let io = |e: std::io::Error| StudyError::Log(e.to_string());
        let csv_err = |e: csv::Error| StudyError::Log(e.to_string());
        std::fs::create_dir_all(dir).map_err(io)?;
        let report = dir.join("study_export.json");
        std::fs::write(&report, serde_json::to_string_pretty(&ex).expect("export serializes")).map_err(io)?;

        let responses = dir.join("responses.csv");
        let mut w = csv::Writer::from_path(&responses).map_err(csv_err)?;
        w.write_record([
            "session_id",
            "dentist_id",
            "tier",
            "arm",
            "seq",
            "item_id",
            "kind",
            "answer",
            "confidence",
            "complexity",
            "duration_ms",
            "correct",
        ])
        .map_err(csv_err)?;
        let ratings = dir.join("ratings.csv");
        let mut rw = csv::Writer::from_path(&ratings).map_err(csv_err)?;
        rw.write_record([
            "session_id",
            "dentist_id",
            "item_id",
            "accuracy",
            "correctness",
            "completeness",
            "fairness",
            "faithfulness",
            "acceptability",
            "duration_ms",
        ])
        .map_err(csv_err)?;
        for s in self.sessions.values() {
            for r in s.responses.values() {
                match &r.submission {
                    Submission::Answer(a) => {
                        let item = &self.items[&r.item_id];
                        w.write_record([
                            s.plan.session_id.as_str(),
                            &s.plan.dentist_id,
                            &plain(&s.tier),
                            s.plan.arm.code(),
                            &r.seq.to_string(),
                            &r.item_id,
                            &plain(&r.kind),
                            &plain(&a.answer),
                            &plain(&a.confidence),
                            &plain(&a.complexity),
                            &r.duration_ms.to_string(),
                            if a.answer.matches(&item.gold) { "1" } else { "0" },
                        ])
                        .map_err(csv_err)?;
                    }
                    Submission::Rating(x) => {
                        let nums =
                            [x.accuracy, x.correctness, x.completeness, x.fairness, x.faithfulness, x.acceptability]
                                .map(|v| v.to_string());
                        let mut row = vec![s.plan.session_id.clone(), s.plan.dentist_id.clone(), r.item_id.clone()];
                        row.extend(nums);
                        row.push(r.duration_ms.to_string());
                        rw.write_record(&row).map_err(csv_err)?;
                    }
                }
            }
        }
        w.flush().map_err(io)?;
        rw.flush().map_err(io)?;
        Ok(vec![report, responses, ratings])
    }
}

/// JSON form of a value, without quotes for plain strings.
fn plain<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(v) => v.to_string(),
        Err(_) => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::super::session::tests::{small_design, small_pool};
    use super::super::session::{AnswerSubmission, NextItem};
    use super::super::{Complexity, Confidence, Dentist, RatingRecord, StudyDesign, StudyItem};
    use super::*;
    use crate::client::ManualClock;
    use crate::domain::Prediction;
    use std::sync::Arc;
    use std::time::Duration;

    type Policy<'a> = dyn FnMut(Arm, &StudyItem, &str) -> Prediction + 'a;

    fn run(study: &mut Study, clock: &ManualClock, policy: &mut Policy<'_>) {
        let ids: Vec<String> = study.dentists.iter().map(|d| d.dentist_id.clone()).collect();
        for d in ids {
            while let NextItem::Item(p) = study.next_item(&d).unwrap() {
                clock.advance(Duration::from_millis(1000));
                let item = study.item(&p.item_id).unwrap().clone();
                let sub = if p.arm == Arm::Rating {
                    Submission::Rating(RatingRecord {
                        item_id: p.item_id.clone(),
                        accuracy: 2,
                        correctness: 4,
                        completeness: 4,
                        fairness: 4,
                        faithfulness: 4,
                        acceptability: 4,
                    })
                } else {
                    Submission::Answer(AnswerSubmission {
                        answer: policy(p.arm, &item, &d),
                        confidence: Confidence::High,
                        complexity: Complexity::Easy,
                    })
                };
                study.submit(&d, &p.session_id, p.seq, sub).unwrap();
            }
        }
    }

    fn roster(n: usize) -> Vec<Dentist> {
        (0..n)
            .map(|i| Dentist { dentist_id: format!("d{i}"), tier: if i < n / 2 { Tier::Junior } else { Tier::Senior } })
            .collect()
    }

    #[test]
    fn refuses_while_open_then_all_correct() {
        let clock = Arc::new(ManualClock::new());
        let mut s = Study::create("s", small_design(), small_pool(3, 4), roster(2), 1, clock.clone(), None).unwrap();
        s.next_item("d0").unwrap();
        let reg = TaskRegistry::default();
        match s.export(&reg) {
            Err(StudyError::OpenSessions(list)) => assert_eq!(list.len(), 8),
            other => panic!("{other:?}"),
        }
        run(&mut s, &clock, &mut |_, item, _| item.gold.clone().into());
        let ex = s.export(&reg).unwrap();
        assert!(ex.summaries.iter().all(|m| m.accuracy == Some(1.0)));
        assert!(ex.gains.iter().all(|g| g.accuracy_delta == 0.0));
        assert!(ex.timing.iter().all(|t| t.mean_ms == 1000.0 && t.median_ms == 1000.0));
        let acc = ex.ratings.iter().find(|h| h.dimension == "accuracy").unwrap();
        assert_eq!(acc.counts.len(), 6);
        assert_eq!(acc.counts[2], 12);
        for h in ex.ratings.iter().filter(|h| h.dimension != "accuracy") {
            assert_eq!(h.counts[0], 0);
            assert_eq!(h.counts[4], 12);
        }
        let dir = tempfile::tempdir().unwrap();
        let files = s.export_to(&reg, dir.path()).unwrap();
        assert!(files.iter().all(|f| f.exists()));
        let responses = std::fs::read_to_string(&files[1]).unwrap();
        assert_eq!(responses.lines().count(), 1 + 3 * 12);
    }

    /// Independent answers are right for a hashed 60% of items; the assisted
    /// arm flips another hashed 10% of all items from wrong to gold.
    #[test]
    fn scripted_assistance_gain() {
        let clock = Arc::new(ManualClock::new());
        let design = StudyDesign {
            items_per_task: 500,
            gv_subsets: 0,
            repeat_fraction: 0.0,
            arms: vec![Arm::Independent, Arm::AnswerAssisted],
            ..StudyDesign::default()
        };
        let mut s = Study::create("s", design, small_pool(4, 500), roster(4), 5, clock.clone(), None).unwrap();
        let wrong = |item: &StudyItem| -> Prediction {
            let g = item.gold.to_string();
            Answer::single(if g == "yes" { "no" } else { "yes" }).into()
        };
        let base = |item: &StudyItem| crate::seed::stable_hash(&[&item.item_id]) % 10 < 6;
        let flip = |item: &StudyItem| crate::seed::stable_hash(&[&item.item_id]) % 10 == 6;
        run(&mut s, &clock, &mut |arm, item, _| {
            let correct = base(item) || (arm == Arm::AnswerAssisted && flip(item) && !base(item));
            if correct {
                item.gold.clone().into()
            } else {
                wrong(item)
            }
        });
        let ex = s.export(&TaskRegistry::default()).unwrap();
        // oracle: the gain is exactly the share of items that were wrong and got flipped
        let items: Vec<_> = small_pool(4, 500);
        let expected = items.iter().filter(|i| !base(i) && flip(i)).count() as f64 / items.len() as f64;
        let overall_gain = {
            let by = |arm| {
                let rows: Vec<_> = ex.summaries.iter().filter(|m| m.arm == arm && m.task_id.is_none()).collect();
                rows.iter().map(|m| m.accuracy.unwrap() * m.n as f64).sum::<f64>()
                    / rows.iter().map(|m| m.n as f64).sum::<f64>()
            };
            by(Arm::AnswerAssisted) - by(Arm::Independent)
        };
        assert!((overall_gain - expected).abs() < 1e-12);
        assert!((overall_gain - 0.10).abs() < 0.03, "{overall_gain}");
    }

    #[test]
    fn consistency_from_repeats_and_groups() {
        let clock = Arc::new(ManualClock::new());
        let design = StudyDesign {
            items_per_task: 10,
            gv_subsets: 2,
            gv_subset_size: 5,
            repeat_fraction: 0.2,
            arms: vec![Arm::Independent],
            ..StudyDesign::default()
        };
        let mut s = Study::create("s", design, small_pool(2, 20), roster(4), 2, clock.clone(), None).unwrap();
        run(&mut s, &clock, &mut |_, item, _| item.gold.clone().into());
        let ex = s.export(&TaskRegistry::default()).unwrap();
        assert_eq!(ex.self_consistency, Some(1.0));
        assert_eq!(ex.group_consistency, Some(1.0));
    }
}
