//! Patient-level voting over per-image predictions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{ImageRecord, VQARecord};
use crate::domain::{Answer, Prediction, TaskCategory, TaskRegistry, TaskSpec};
use crate::inference::ModelResponse;

pub const COHORT_KIND: &str = "dentvqa.cohort";

/// The seven oral-disease tasks screened from home photographs.
pub const HOME_SCREENING_TASKS: [&str; 7] = [
    "caries",
    "periodontal_disease",
    "wedge_shaped_defect",
    "demineralization",
    "dental_plaque",
    "tooth_wear",
    "dental_calculus",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregationError {
    #[error("patient {patient_id}: {message}")]
    InvalidBundle { patient_id: String, message: String },
    #[error("patient {patient_id} has gold for {found:?}, expected {expected:?}")]
    InconsistentTasks { patient_id: String, expected: Vec<String>, found: Vec<String> },
    #[error("empty cohort")]
    Empty,
    #[error("unknown task {0}")]
    UnknownTask(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePrediction {
    pub image_id: String,
    pub task_id: String,
    pub answer: Prediction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientBundle {
    pub patient_id: String,
    pub images: Vec<ImageRecord>,
    pub predictions: Vec<ImagePrediction>,
    #[serde(default)]
    pub gold: BTreeMap<String, Answer>,
}

impl PatientBundle {
    pub fn validate(&self, registry: &TaskRegistry) -> Result<(), AggregationError> {
        let bad = |message: String| AggregationError::InvalidBundle { patient_id: self.patient_id.clone(), message };
        let modality: BTreeMap<&str, _> = self.images.iter().map(|i| (i.image_id.as_str(), i.modality)).collect();
        for p in &self.predictions {
            let m = modality.get(p.image_id.as_str()).ok_or_else(|| bad(format!("unknown image {}", p.image_id)))?;
            let task = registry.get(&p.task_id).ok_or_else(|| bad(format!("unknown task {}", p.task_id)))?;
            if !task.applies_to(*m) {
                return Err(bad(format!("task {} does not apply to {m} image {}", p.task_id, p.image_id)));
            }
        }
        Ok(())
    }

    fn answers_for(&self, task_id: &str) -> Vec<&Answer> {
        self.predictions.iter().filter(|p| p.task_id == task_id).filter_map(|p| p.answer.answer()).collect()
    }
}

/// How ties between equally frequent answers are broken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Prefer an abnormal answer; among several, the earliest in label order.
    #[default]
    PreferAbnormal,
    /// Prefer the normal answer; otherwise the earliest in label order.
    PreferNormal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Majority,
    Matching,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "majority" => Ok(Strategy::Majority),
            "matching" => Ok(Strategy::Matching),
            _ => Err(format!("unknown strategy {s:?} (expected majority or matching)")),
        }
    }
}

/// Sorted label indices; makes answers in either language comparable.
fn answer_key(task: &TaskSpec, a: &Answer) -> Vec<usize> {
    let mut k: Vec<usize> = a.labels().map(|l| task.label_index(l).unwrap_or(usize::MAX)).collect();
    k.sort_unstable();
    k.dedup();
    k
}

/// Modal answer across the bundle's images, or `None` without predictions.
/// Indeterminate predictions do not vote.
pub fn majority_vote(bundle: &PatientBundle, task: &TaskSpec, tie: TieRule) -> Option<Answer> {
    let mut counts: BTreeMap<Vec<usize>, (usize, &Answer)> = BTreeMap::new();
    for a in bundle.answers_for(&task.task_id) {
        counts.entry(answer_key(task, a)).or_insert((0, a)).0 += 1;
    }
    let top = counts.values().map(|(c, _)| *c).max()?;
    let negative = vec![task.negative];
    let mut tied: Vec<(&Vec<usize>, &Answer)> =
        counts.iter().filter(|(_, (c, _))| *c == top).map(|(k, (_, a))| (k, *a)).collect();
    tied.sort_by_key(|(k, _)| {
        let is_normal = **k == negative;
        let rank = match tie {
            TieRule::PreferAbnormal => is_normal,
            TieRule::PreferNormal => !is_normal,
        };
        (rank, (*k).clone())
    });
    Some(tied[0].1.clone())
}

/// Gold if any image predicted it, otherwise the majority answer.
pub fn matching_vote(bundle: &PatientBundle, task: &TaskSpec, tie: TieRule) -> Option<Answer> {
    if let Some(gold) = bundle.gold.get(&task.task_id) {
        let g = answer_key(task, gold);
        if bundle.answers_for(&task.task_id).into_iter().any(|a| answer_key(task, a) == g) {
            return Some(gold.clone());
        }
    }
    majority_vote(bundle, task, tie)
}

pub fn vote(bundle: &PatientBundle, task: &TaskSpec, strategy: Strategy, tie: TieRule) -> Option<Answer> {
    match strategy {
        Strategy::Majority => majority_vote(bundle, task, tie),
        Strategy::Matching => matching_vote(bundle, task, tie),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VotedList {
    pub patient_id: String,
    /// Tasks whose voted answer is abnormal.
    pub present: BTreeSet<String>,
    /// Voted answer per task that had at least one prediction.
    pub answers: BTreeMap<String, Answer>,
    pub strategy: Strategy,
}

pub fn voted_list(bundle: &PatientBundle, tasks: &[&TaskSpec], strategy: Strategy, tie: TieRule) -> VotedList {
    let mut answers = BTreeMap::new();
    let mut present = BTreeSet::new();
    for t in tasks {
        if let Some(a) = vote(bundle, t, strategy, tie) {
            if !t.is_negative(&a) {
                present.insert(t.task_id.clone());
            }
            answers.insert(t.task_id.clone(), a);
        }
    }
    VotedList { patient_id: bundle.patient_id.clone(), present, answers, strategy }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreeningMode {
    /// Oral-disease screening from intraoral photographs.
    Home,
    /// Malocclusion workup over all modalities.
    Hospital,
}

impl std::str::FromStr for ScreeningMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "home" => Ok(ScreeningMode::Home),
            "hospital" => Ok(ScreeningMode::Hospital),
            _ => Err(format!("unknown mode {s:?} (expected home or hospital)")),
        }
    }
}

impl ScreeningMode {
    pub fn tasks(self, registry: &TaskRegistry) -> Result<Vec<&TaskSpec>, AggregationError> {
        match self {
            ScreeningMode::Home => HOME_SCREENING_TASKS
                .iter()
                .map(|id| registry.get(id).ok_or_else(|| AggregationError::UnknownTask(id.to_string())))
                .collect(),
            ScreeningMode::Hospital => {
                Ok(registry.tasks().iter().filter(|t| t.category == TaskCategory::Malocclusion).collect())
            }
        }
    }
}

/// Fraction of (patient, task) cells whose voted answer equals gold.
///
/// Scored tasks are those in `tasks` with gold on the first patient; every
/// other patient must carry gold for exactly the same tasks. A cell with no
/// predictions counts as wrong.
pub fn matching_score(
    cohort: &[PatientBundle],
    tasks: &[&TaskSpec],
    strategy: Strategy,
    tie: TieRule,
) -> Result<f64, AggregationError> {
    let first = cohort.first().ok_or(AggregationError::Empty)?;
    let scored: Vec<&TaskSpec> = tasks.iter().copied().filter(|t| first.gold.contains_key(&t.task_id)).collect();
    let expected: Vec<String> = scored.iter().map(|t| t.task_id.clone()).collect();
    if scored.is_empty() {
        return Err(AggregationError::Empty);
    }
    let mut hits = 0usize;
    for b in cohort {
        let found: Vec<String> =
            tasks.iter().filter(|t| b.gold.contains_key(&t.task_id)).map(|t| t.task_id.clone()).collect();
        if found != expected {
            return Err(AggregationError::InconsistentTasks { patient_id: b.patient_id.clone(), expected, found });
        }
        for t in &scored {
            let gold = &b.gold[&t.task_id];
            if vote(b, t, strategy, tie).is_some_and(|a| answer_key(t, &a) == answer_key(t, gold)) {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / (cohort.len() * scored.len()) as f64)
}

/// Group per-image model responses into patient bundles.
///
/// Patient-level gold is the abnormal answer if any image of the patient has
/// an abnormal gold answer for an oral-disease task, and the record answer
/// for malocclusion tasks, which is shared across a patient's images.
/// Records missing from `responses` are skipped.
pub fn bundles_from_records(
    images: &[ImageRecord],
    records: &[VQARecord],
    responses: &BTreeMap<String, ModelResponse>,
    registry: &TaskRegistry,
) -> Vec<PatientBundle> {
    let image_of: BTreeMap<&str, &ImageRecord> = images.iter().map(|i| (i.image_id.as_str(), i)).collect();
    let mut out: BTreeMap<&str, PatientBundle> = BTreeMap::new();
    for r in records {
        let (Some(img), Some(task)) = (image_of.get(r.image_id.as_str()), registry.get(&r.task_id)) else { continue };
        let b = out.entry(img.patient_id.as_str()).or_insert_with(|| PatientBundle {
            patient_id: img.patient_id.clone(),
            images: Vec::new(),
            predictions: Vec::new(),
            gold: BTreeMap::new(),
        });
        if !b.images.iter().any(|i| i.image_id == img.image_id) {
            b.images.push((*img).clone());
        }
        match b.gold.get(&r.task_id) {
            Some(g) if !task.is_negative(g) => {}
            _ => {
                b.gold.insert(r.task_id.clone(), r.answer.clone());
            }
        }
        if let Some(resp) = responses.get(&r.record_id) {
            b.predictions.push(ImagePrediction {
                image_id: r.image_id.clone(),
                task_id: r.task_id.clone(),
                answer: resp.parsed_answer.clone(),
            });
        }
    }
    out.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Language, Modality};
    use proptest::prelude::{prop_assert_eq, proptest};
    use rand::{Rng, SeedableRng};

    fn img(id: &str, m: Modality) -> ImageRecord {
        ImageRecord { image_id: id.into(), patient_id: "p".into(), modality: m, uri: id.into(), width: 10, height: 10 }
    }

    fn bundle(task: &str, preds: &[&str], gold: Option<&str>) -> PatientBundle {
        let images: Vec<_> = (0..preds.len()).map(|i| img(&format!("i{i}"), Modality::Inf)).collect();
        PatientBundle {
            patient_id: "p".into(),
            predictions: preds
                .iter()
                .enumerate()
                .map(|(i, a)| ImagePrediction {
                    image_id: format!("i{i}"),
                    task_id: task.into(),
                    answer: Answer::single(*a).into(),
                })
                .collect(),
            images,
            gold: gold.map(|g| [(task.to_string(), Answer::single(g))].into_iter().collect()).unwrap_or_default(),
        }
    }

    #[test]
    fn majority_examples() {
        let reg = TaskRegistry::default();
        let t = reg.get("caries").unwrap();
        let v = |p: &[&str]| majority_vote(&bundle("caries", p, None), t, TieRule::default()).unwrap();
        assert_eq!(v(&["yes", "yes", "no"]), Answer::single("yes"));
        assert_eq!(v(&["no", "no", "no", "yes"]), Answer::single("no"));
        assert_eq!(v(&["yes", "no"]), Answer::single("yes"));
        assert_eq!(v(&["no", "yes"]), Answer::single("yes"));
        assert_eq!(
            majority_vote(&bundle("caries", &["yes", "no"], None), t, TieRule::PreferNormal).unwrap(),
            Answer::single("no")
        );
        assert_eq!(majority_vote(&bundle("caries", &[], None), t, TieRule::default()), None);
    }

    #[test]
    fn two_image_ties_are_exhaustively_abnormal() {
        let reg = TaskRegistry::default();
        let t = reg.get("molar_relationship").unwrap();
        let labels = t.label_space(Language::En);
        for a in &labels {
            for b in &labels {
                let got = majority_vote(&bundle(&t.task_id, &[a, b], None), t, TieRule::PreferAbnormal).unwrap();
                let ia = t.label_index(a).unwrap();
                let ib = t.label_index(b).unwrap();
                let want = if ia == ib {
                    ia
                } else if ia == t.negative {
                    ib
                } else if ib == t.negative {
                    ia
                } else {
                    ia.min(ib)
                };
                assert_eq!(got, Answer::single(labels[want]));
            }
        }
    }

    #[test]
    fn matching_examples() {
        let reg = TaskRegistry::default();
        let t = reg.get("caries").unwrap();
        let m = |p: &[&str]| matching_vote(&bundle("caries", p, Some("yes")), t, TieRule::default()).unwrap();
        assert_eq!(m(&["no", "yes"]), Answer::single("yes"));
        assert_eq!(m(&["no", "no"]), Answer::single("no"));
    }

    #[test]
    fn score_formula_and_errors() {
        let reg = TaskRegistry::default();
        let tasks = ScreeningMode::Home.tasks(&reg).unwrap();
        let patient = |id: &str, wrong: Option<&str>| {
            let mut b = PatientBundle {
                patient_id: id.into(),
                images: vec![img("i0", Modality::Inf)],
                predictions: vec![],
                gold: BTreeMap::new(),
            };
            for t in &tasks {
                b.gold.insert(t.task_id.clone(), Answer::single("no"));
                let a = if Some(t.task_id.as_str()) == wrong { "yes" } else { "no" };
                b.predictions.push(ImagePrediction {
                    image_id: "i0".into(),
                    task_id: t.task_id.clone(),
                    answer: Answer::single(a).into(),
                });
            }
            b
        };
        let cohort = vec![patient("a", None), patient("b", None)];
        assert_eq!(matching_score(&cohort, &tasks, Strategy::Majority, TieRule::default()).unwrap(), 1.0);
        let cohort = vec![patient("a", Some("caries")), patient("b", None)];
        let s = matching_score(&cohort, &tasks, Strategy::Majority, TieRule::default()).unwrap();
        assert!((s - 13.0 / 14.0).abs() < 1e-12);
        let mut odd = patient("c", None);
        odd.gold.remove("caries");
        assert!(matches!(
            matching_score(&[patient("a", None), odd], &tasks, Strategy::Majority, TieRule::default()),
            Err(AggregationError::InconsistentTasks { .. })
        ));
        assert_eq!(matching_score(&[], &tasks, Strategy::Majority, TieRule::default()), Err(AggregationError::Empty));
    }

    #[test]
    fn voted_list_and_validation() {
        let reg = TaskRegistry::default();
        let tasks = ScreeningMode::Home.tasks(&reg).unwrap();
        let mut b = bundle("caries", &["yes", "no", "yes"], None);
        b.predictions.push(ImagePrediction {
            image_id: "i0".into(),
            task_id: "tooth_wear".into(),
            answer: Answer::single("no").into(),
        });
        let list = voted_list(&b, &tasks, Strategy::Majority, TieRule::default());
        assert_eq!(list.present.iter().collect::<Vec<_>>(), vec!["caries"]);
        assert_eq!(list.answers.len(), 2);
        assert!(b.validate(&reg).is_ok());
        b.predictions.push(ImagePrediction {
            image_id: "i0".into(),
            task_id: "overjet".into(),
            answer: Answer::single("x").into(),
        });
        assert!(b.validate(&reg).is_err());
    }

    /// Every assignment of 3 labels over up to 4 images, every gold.
    #[test]
    fn matching_dominates_majority_exhaustively() {
        let reg = TaskRegistry::default();
        let t = reg.get("molar_relationship").unwrap();
        let labels: Vec<&str> = t.label_space(Language::En).into_iter().take(3).collect();
        for n in 1..=4u32 {
            for code in 0..3u32.pow(n) {
                let preds: Vec<&str> = (0..n).map(|i| labels[(code / 3u32.pow(i) % 3) as usize]).collect();
                for g in &labels {
                    let b = bundle(&t.task_id, &preds, Some(g));
                    for tie in [TieRule::PreferAbnormal, TieRule::PreferNormal] {
                        let maj = matching_score(std::slice::from_ref(&b), &[t], Strategy::Majority, tie).unwrap();
                        let mat = matching_score(std::slice::from_ref(&b), &[t], Strategy::Matching, tie).unwrap();
                        assert!(mat >= maj);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn voting_ignores_image_order(preds in proptest::collection::vec(0usize..3, 1..6), rot in 0usize..6) {
            let reg = TaskRegistry::default();
            let t = reg.get("molar_relationship").unwrap();
            let labels = t.label_space(Language::En);
            let p: Vec<&str> = preds.iter().map(|&i| labels[i]).collect();
            let mut q = p.clone();
            q.rotate_left(rot % p.len());
            for tie in [TieRule::PreferAbnormal, TieRule::PreferNormal] {
                prop_assert_eq!(
                    majority_vote(&bundle(&t.task_id, &p, None), t, tie),
                    majority_vote(&bundle(&t.task_id, &q, None), t, tie)
                );
            }
        }
    }

    #[test]
    fn random_cohorts_never_violate_the_upper_bound() {
        let reg = TaskRegistry::default();
        let tasks = ScreeningMode::Home.tasks(&reg).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let cohort: Vec<PatientBundle> = (0..rng.random_range(1..6))
                .map(|p| {
                    let n_img = rng.random_range(1..5);
                    let mut b = PatientBundle {
                        patient_id: format!("p{p}"),
                        images: (0..n_img).map(|i| img(&format!("i{i}"), Modality::Inf)).collect(),
                        predictions: vec![],
                        gold: BTreeMap::new(),
                    };
                    for t in &tasks {
                        b.gold
                            .insert(t.task_id.clone(), Answer::single(if rng.random_bool(0.3) { "yes" } else { "no" }));
                        for i in 0..n_img {
                            let a = if rng.random_bool(0.5) { "yes" } else { "no" };
                            b.predictions.push(ImagePrediction {
                                image_id: format!("i{i}"),
                                task_id: t.task_id.clone(),
                                answer: Answer::single(a).into(),
                            });
                        }
                    }
                    b
                })
                .collect();
            let maj = matching_score(&cohort, &tasks, Strategy::Majority, TieRule::default()).unwrap();
            let mat = matching_score(&cohort, &tasks, Strategy::Matching, TieRule::default()).unwrap();
            assert!(mat >= maj);
        }
    }
}
