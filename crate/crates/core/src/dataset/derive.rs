use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AnnotationSet, BoxAnnotation, BoxKind, DiagnosisReport, ImageRecord};
use crate::domain::{
    region_of_tooth, Answer, Language, LocationDescriptor, LocationSet, Modality, TaskCategory, TaskRegistry, TaskSpec,
    ToothNumber, VerticalRule,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeriveError {
    #[error("task {0} is not an oral-disease task")]
    NotOralDisease(String),
    #[error("box for image {box_image} passed with image {image}")]
    ForeignBox { image: String, box_image: String },
    #[error("image {image_id}: {task_id} box present but no tooth boxes to localize it; needs review")]
    NeedsReview { image_id: String, task_id: String },
}

/// Diagnosis of one task on one image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDiagnosis {
    pub answer: Answer,
    /// Present for location-bearing tasks with a positive answer.
    pub locations: Option<LocationSet>,
}

/// An item set aside for expert review instead of being silently dropped.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewFlag {
    pub image_id: String,
    pub task_id: String,
    pub reason: String,
}

/// Yes/no plus locations for one oral-disease task on one image.
///
/// Each disease box is assigned to the tooth box with the nearest center
/// (Euclidean; ties go to the lower FDI number) and contributes that tooth's
/// arch region.
pub fn derive_image_diagnosis(
    image: &ImageRecord,
    boxes: &[BoxAnnotation],
    task: &TaskSpec,
    lang: Language,
    rule: VerticalRule,
) -> Result<ImageDiagnosis, DeriveError> {
    if task.category != TaskCategory::OralDisease {
        return Err(DeriveError::NotOralDisease(task.task_id.clone()));
    }
    if let Some(b) = boxes.iter().find(|b| b.image_id != image.image_id) {
        return Err(DeriveError::ForeignBox { image: image.image_id.clone(), box_image: b.image_id.clone() });
    }
    let disease: Vec<&BoxAnnotation> =
        boxes.iter().filter(|b| b.kind == BoxKind::Disease && b.label == task.task_id).collect();
    if disease.is_empty() {
        return Ok(ImageDiagnosis { answer: task.negative_answer(lang), locations: None });
    }
    let teeth: Vec<(ToothNumber, (f64, f64))> =
        boxes.iter().filter_map(|b| b.tooth().map(|t| (t, b.bbox.center()))).collect();
    if teeth.is_empty() {
        return Err(DeriveError::NeedsReview { image_id: image.image_id.clone(), task_id: task.task_id.clone() });
    }
    let locations = disease
        .iter()
        .map(|d| {
            let (cx, cy) = d.bbox.center();
            let (tooth, _) = teeth
                .iter()
                .map(|&(t, (tx, ty))| (t, (tx - cx).powi(2) + (ty - cy).powi(2)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .expect("teeth is nonempty");
            LocationDescriptor::from_region(region_of_tooth(tooth, rule))
        })
        .collect::<LocationSet>();
    Ok(ImageDiagnosis { answer: Answer::Single(task.positive_label(lang).to_string()), locations: Some(locations) })
}

/// Malocclusion answers for one image of a patient, restricted to the tasks
/// applicable to its modality. Tasks the report does not mention get the
/// task's normal label.
pub fn derive_modality_diagnosis(
    report: &DiagnosisReport,
    modality: Modality,
    registry: &TaskRegistry,
    lang: Language,
) -> BTreeMap<String, Answer> {
    registry
        .tasks_for_modality(modality)
        .into_iter()
        .filter(|t| t.category == TaskCategory::Malocclusion)
        .map(|t| {
            let answer = report
                .findings
                .get(&t.task_id)
                .and_then(|a| t.translate_answer(a, lang))
                .unwrap_or_else(|| t.negative_answer(lang));
            (t.task_id.clone(), answer)
        })
        .collect()
}

/// Findings whose task applies to none of the patient's collected modalities.
pub fn unmapped_findings(report: &DiagnosisReport, collected: &[Modality], registry: &TaskRegistry) -> Vec<String> {
    report
        .findings
        .keys()
        .filter(|id| registry.get(id).is_some_and(|t| !collected.iter().any(|&m| t.applies_to(m))))
        .map(|id| format!("patient {}: finding {id} does not apply to any collected modality", report.patient_id))
        .collect()
}

/// Per-image diagnoses for every applicable task, plus review flags and warnings.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnoses {
    pub language: Option<Language>,
    /// image_id -> task_id -> diagnosis.
    pub by_image: BTreeMap<String, BTreeMap<String, ImageDiagnosis>>,
    pub review: Vec<ReviewFlag>,
    pub warnings: Vec<String>,
}

/// Run both derivations over a whole annotation set.
///
/// Flagged items (positive finding that cannot be localized) keep their
/// positive answer with an empty location set and are listed in `review`.
pub fn derive_diagnoses(
    annotations: &AnnotationSet,
    registry: &TaskRegistry,
    lang: Language,
    rule: VerticalRule,
) -> Diagnoses {
    let mut boxes_by_image: BTreeMap<&str, Vec<BoxAnnotation>> = BTreeMap::new();
    for b in &annotations.boxes {
        boxes_by_image.entry(b.image_id.as_str()).or_default().push(b.clone());
    }
    let reports: BTreeMap<&str, &DiagnosisReport> =
        annotations.reports.iter().map(|r| (r.patient_id.as_str(), r)).collect();
    let empty_boxes = Vec::new();

    let per_image: Vec<(String, BTreeMap<String, ImageDiagnosis>, Vec<ReviewFlag>)> = annotations
        .images
        .par_iter()
        .map(|img| {
            let boxes = boxes_by_image.get(img.image_id.as_str()).unwrap_or(&empty_boxes);
            let mut out = BTreeMap::new();
            let mut flags = Vec::new();
            for task in registry.tasks_for_modality(img.modality) {
                if task.category != TaskCategory::OralDisease {
                    continue;
                }
                let d = match derive_image_diagnosis(img, boxes, task, lang, rule) {
                    Ok(d) => d,
                    Err(e @ DeriveError::NeedsReview { .. }) => {
                        flags.push(ReviewFlag {
                            image_id: img.image_id.clone(),
                            task_id: task.task_id.clone(),
                            reason: e.to_string(),
                        });
                        ImageDiagnosis {
                            answer: Answer::Single(task.positive_label(lang).to_string()),
                            locations: Some(LocationSet::new()),
                        }
                    }
                    Err(e) => unreachable!("inputs are grouped per image and filtered by category: {e}"),
                };
                out.insert(task.task_id.clone(), d);
            }
            let empty_report = DiagnosisReport { patient_id: img.patient_id.clone(), ..Default::default() };
            let report = reports.get(img.patient_id.as_str()).copied().unwrap_or(&empty_report);
            for (task_id, answer) in derive_modality_diagnosis(report, img.modality, registry, lang) {
                out.insert(task_id, ImageDiagnosis { answer, locations: None });
            }
            (img.image_id.clone(), out, flags)
        })
        .collect();

    let mut diagnoses = Diagnoses { language: Some(lang), ..Default::default() };
    for (id, map, mut flags) in per_image {
        diagnoses.by_image.insert(id, map);
        diagnoses.review.append(&mut flags);
    }

    let mut collected: BTreeMap<&str, BTreeSet<Modality>> = BTreeMap::new();
    for img in &annotations.images {
        collected.entry(img.patient_id.as_str()).or_default().insert(img.modality);
    }
    for r in &annotations.reports {
        let mods: Vec<Modality> =
            collected.get(r.patient_id.as_str()).map(|s| s.iter().copied().collect()).unwrap_or_default();
        diagnoses.warnings.extend(unmapped_findings(r, &mods, registry));
    }
    diagnoses
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::BBox;
    use crate::domain::{validate_registry, RegistryConfig};

    fn image() -> ImageRecord {
        ImageRecord {
            image_id: "img1".into(),
            patient_id: "p1".into(),
            modality: Modality::Pan,
            uri: "p1/pan.png".into(),
            width: 1000,
            height: 500,
        }
    }

    fn tooth(fdi: &str, cx: f64, cy: f64) -> BoxAnnotation {
        BoxAnnotation {
            image_id: "img1".into(),
            kind: BoxKind::Tooth,
            label: fdi.into(),
            bbox: BBox::new(cx - 10.0, cy - 10.0, 20.0, 20.0),
        }
    }

    fn disease(label: &str, cx: f64, cy: f64) -> BoxAnnotation {
        BoxAnnotation {
            image_id: "img1".into(),
            kind: BoxKind::Disease,
            label: label.into(),
            bbox: BBox::new(cx - 5.0, cy - 5.0, 10.0, 10.0),
        }
    }

    /// Independent oracle: scan all tooth boxes, keep the strictly closer one
    /// (or the lower FDI on equal distance), then read the region from a hand table.
    fn nearest_region(d: (f64, f64), teeth: &[(u8, (f64, f64))]) -> u8 {
        let mut best: Option<(u8, f64)> = None;
        for &(fdi, (x, y)) in teeth {
            let dist = ((x - d.0).powi(2) + (y - d.1).powi(2)).sqrt();
            best = match best {
                Some((bf, bd)) if bd < dist || (bd == dist && bf < fdi) => Some((bf, bd)),
                _ => Some((fdi, dist)),
            };
        }
        let fdi = best.unwrap().0;
        let (q, p) = (fdi / 10, fdi % 10);
        let row = if matches!(q, 1 | 2 | 5 | 6) { 0 } else { 3 };
        let col = if p <= 3 {
            1
        } else if matches!(q, 1 | 4 | 5 | 8) {
            0
        } else {
            2
        };
        row + col
    }

    fn set(ids: &[u8]) -> LocationSet {
        ids.iter().map(|&i| LocationDescriptor::new(i).unwrap()).collect()
    }

    #[test]
    fn no_matching_box_is_negative() {
        let reg = TaskRegistry::default();
        let caries = reg.get("caries").unwrap();
        let boxes = vec![tooth("36", 700.0, 400.0), disease("dental_calculus", 700.0, 400.0)];
        let d = derive_image_diagnosis(&image(), &boxes, caries, Language::En, VerticalRule::FdiQuadrant).unwrap();
        assert_eq!(d.answer, Answer::single("no"));
        assert_eq!(d.locations, None);
    }

    #[test]
    fn two_tooth_layout_nearest_center() {
        let reg = TaskRegistry::default();
        let caries = reg.get("caries").unwrap();
        let teeth = [(36u8, (700.0, 400.0)), (11u8, (480.0, 100.0))];
        let boxes = vec![tooth("36", 700.0, 400.0), tooth("11", 480.0, 100.0), disease("caries", 690.0, 380.0)];
        let d = derive_image_diagnosis(&image(), &boxes, caries, Language::En, VerticalRule::FdiQuadrant).unwrap();
        assert_eq!(d.answer, Answer::single("yes"));
        assert_eq!(d.locations, Some(set(&[nearest_region((690.0, 380.0), &teeth)])));
        assert_eq!(d.locations, Some(set(&[5]))); // lower left posterior
    }

    #[test]
    fn two_boxes_two_regions() {
        let reg = TaskRegistry::default();
        let caries = reg.get("caries").unwrap();
        let teeth = [(11u8, (480.0, 100.0)), (46u8, (250.0, 400.0)), (36u8, (750.0, 400.0))];
        let mut boxes: Vec<_> = teeth.iter().map(|(f, (x, y))| tooth(&f.to_string(), *x, *y)).collect();
        boxes.push(disease("caries", 470.0, 120.0));
        boxes.push(disease("caries", 260.0, 390.0));
        let d = derive_image_diagnosis(&image(), &boxes, caries, Language::Zh, VerticalRule::FdiQuadrant).unwrap();
        let expected = set(&[nearest_region((470.0, 120.0), &teeth), nearest_region((260.0, 390.0), &teeth)]);
        assert_eq!(d.locations, Some(expected));
        assert_eq!(expected, set(&[1, 3])); // upper anterior, lower right posterior
        assert_eq!(d.answer, Answer::single("是"));
    }

    #[test]
    fn equidistant_teeth_break_toward_lower_fdi() {
        let reg = TaskRegistry::default();
        let caries = reg.get("caries").unwrap();
        let boxes = vec![tooth("21", 520.0, 100.0), tooth("11", 480.0, 100.0), disease("caries", 500.0, 100.0)];
        let d = derive_image_diagnosis(&image(), &boxes, caries, Language::En, VerticalRule::FdiQuadrant).unwrap();
        assert_eq!(d.locations, Some(set(&[1])));
        let boxes = vec![tooth("24", 520.0, 100.0), tooth("14", 480.0, 100.0), disease("caries", 500.0, 100.0)];
        let d = derive_image_diagnosis(&image(), &boxes, caries, Language::En, VerticalRule::FdiQuadrant).unwrap();
        assert_eq!(d.locations, Some(set(&[0]))); // tooth 14: upper right posterior
    }

    #[test]
    fn positive_without_teeth_needs_review() {
        let reg = TaskRegistry::default();
        let caries = reg.get("caries").unwrap();
        let err = derive_image_diagnosis(
            &image(),
            &[disease("caries", 10.0, 10.0)],
            caries,
            Language::En,
            VerticalRule::FdiQuadrant,
        )
        .unwrap_err();
        assert!(matches!(err, DeriveError::NeedsReview { .. }));

        let set = AnnotationSet { images: vec![image()], boxes: vec![disease("caries", 10.0, 10.0)], reports: vec![] };
        let d = derive_diagnoses(&set, &reg, Language::En, VerticalRule::FdiQuadrant);
        assert_eq!(d.review.len(), 1);
        assert_eq!(d.by_image["img1"]["caries"].answer, Answer::single("yes"));
    }

    fn toy_registry() -> TaskRegistry {
        let toml = r#"
schema_version = 1
[[task]]
id = "sagittal"
name_en = "sagittal relationship"
name_zh = "矢状关系"
category = "malocclusion"
answer_mode = "multi_class"
modalities = ["LAT", "INL"]
labels = [{ en = "class I", zh = "中性" }, { en = "class II", zh = "远中" }, { en = "class III", zh = "近中" }]
[[task]]
id = "crowding"
name_en = "crowding"
name_zh = "拥挤"
category = "malocclusion"
answer_mode = "multi_class"
modalities = ["UPP", "LOW", "INL"]
labels = [{ en = "no", zh = "否" }, { en = "yes", zh = "是" }]
[[task]]
id = "profile"
name_en = "profile"
name_zh = "面型"
category = "malocclusion"
answer_mode = "multi_label"
modalities = ["LAT", "INL"]
labels = [{ en = "straight", zh = "直面型" }, { en = "convex", zh = "凸面型" }]
"#;
        validate_registry(RegistryConfig::from_toml(toml).unwrap()).unwrap()
    }

    #[test]
    fn modality_restriction_and_defaults() {
        let reg = toy_registry();
        let report = DiagnosisReport {
            patient_id: "p".into(),
            findings: [("crowding".to_string(), Answer::single("yes"))].into(),
        };
        let lat = derive_modality_diagnosis(&report, Modality::Lat, &reg, Language::En);
        assert!(!lat.contains_key("crowding"));

        let empty = DiagnosisReport { patient_id: "p".into(), findings: BTreeMap::new() };
        let inl = derive_modality_diagnosis(&empty, Modality::Inl, &reg, Language::En);
        assert_eq!(inl.len(), 3);
        assert_eq!(inl["sagittal"], Answer::single("class I"));
        assert_eq!(inl["profile"], Answer::multi(["straight"]));

        let class2 = DiagnosisReport {
            patient_id: "p".into(),
            findings: [("sagittal".to_string(), Answer::single("class II"))].into(),
        };
        assert_eq!(
            derive_modality_diagnosis(&class2, Modality::Lat, &reg, Language::En)["sagittal"],
            Answer::single("class II")
        );
    }

    /// Exhaustive check over the toy registry: every (finding, modality) pair
    /// yields the finding iff the task maps to the modality, the default otherwise.
    #[test]
    fn exhaustive_toy_registry_mapping() {
        let reg = toy_registry();
        for task in reg.tasks() {
            for idx in 0..task.labels.len() {
                let label = task.label(idx, Language::En).to_string();
                let answer = match task.answer_mode {
                    crate::domain::AnswerMode::MultiClass => Answer::Single(label),
                    crate::domain::AnswerMode::MultiLabel => Answer::Multi(vec![label]),
                };
                let report = DiagnosisReport {
                    patient_id: "p".into(),
                    findings: [(task.task_id.clone(), answer.clone())].into(),
                };
                for m in Modality::ALL {
                    let out = derive_modality_diagnosis(&report, m, &reg, Language::En);
                    let expected_keys: Vec<&str> =
                        reg.tasks().iter().filter(|t| t.applies_to(m)).map(|t| t.task_id.as_str()).collect();
                    let mut keys: Vec<&str> = out.keys().map(String::as_str).collect();
                    keys.sort();
                    let mut exp = expected_keys.clone();
                    exp.sort();
                    assert_eq!(keys, exp);
                    if task.applies_to(m) {
                        assert_eq!(out[&task.task_id], answer);
                    }
                }
            }
        }
    }

    #[test]
    fn unmapped_findings_warn() {
        let reg = toy_registry();
        let report = DiagnosisReport {
            patient_id: "p".into(),
            findings: [("crowding".to_string(), Answer::single("yes"))].into(),
        };
        assert_eq!(unmapped_findings(&report, &[Modality::Lat], &reg).len(), 1);
        assert!(unmapped_findings(&report, &[Modality::Upp], &reg).is_empty());
    }
}
