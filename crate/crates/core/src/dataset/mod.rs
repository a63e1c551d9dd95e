//! Turning structured clinical annotations into bilingual VQA records.
//!
//! The pipeline runs in three phases: annotations are validated
//! ([`AnnotationSet::validate`]), reduced to per-image diagnoses
//! ([`derive_diagnoses`]) and expanded into question/answer records
//! ([`build_vqa_pairs`]). Rationales, translation and subsampling operate on
//! the resulting records.

mod build;
mod corpus;
mod derive;
mod rationale;
mod subsample;
mod translate;

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{
    Answer, AnswerMode, Language, LocationSet, Modality, TaskCategory, TaskRegistry, ToothNumber, VerticalRule,
};

pub use build::{build_vqa_pairs, BuildError, BuildOptions, QuestionTemplates};
pub use corpus::{read_corpus, read_jsonl, write_corpus, write_jsonl, CorpusError, CORPUS_KIND};
pub use derive::{
    derive_diagnoses, derive_image_diagnosis, derive_modality_diagnosis, unmapped_findings, DeriveError, Diagnoses,
    ImageDiagnosis, ReviewFlag,
};
pub use rationale::{generate_rationale, generate_rationales, RationaleContext, RationaleError, RationaleFlag};
pub use subsample::{subsample, Subsample};
pub use translate::{translate_record, PhraseDictionary, TranslateError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub patient_id: String,
    pub modality: Modality,
    pub uri: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxKind {
    Disease,
    Tooth,
}

/// Axis-aligned box in pixels: top-left corner plus size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub image_id: String,
    pub kind: BoxKind,
    /// Disease task id for disease boxes, FDI number for tooth boxes.
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

impl BoxAnnotation {
    pub fn tooth(&self) -> Option<ToothNumber> {
        match self.kind {
            BoxKind::Tooth => self.label.parse().ok(),
            BoxKind::Disease => None,
        }
    }
}

/// Patient-level malocclusion findings from a diagnosis report.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub patient_id: String,
    #[serde(default)]
    pub findings: BTreeMap<String, Answer>,
}

impl DiagnosisReport {
    pub fn validate(&self, registry: &TaskRegistry) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        for (task_id, answer) in &self.findings {
            match registry.get(task_id) {
                None => errs.push(format!("report {}: unknown task {task_id:?}", self.patient_id)),
                Some(t) if t.category != TaskCategory::Malocclusion => {
                    errs.push(format!("report {}: {task_id} is not a malocclusion task", self.patient_id))
                }
                Some(t) => {
                    if Language::ALL.iter().all(|&l| t.check_answer(answer, l).is_err()) {
                        errs.push(format!(
                            "report {}: finding {answer} is outside the label space of {task_id}",
                            self.patient_id
                        ));
                    }
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Everything the builder consumes, as stored in an annotation file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub images: Vec<ImageRecord>,
    #[serde(default)]
    pub boxes: Vec<BoxAnnotation>,
    #[serde(default)]
    pub reports: Vec<DiagnosisReport>,
}

impl AnnotationSet {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| CorpusError::Parse { line: 0, message: e.to_string() })
    }

    /// Check every annotation invariant; returns all problems found.
    pub fn validate(&self, registry: &TaskRegistry) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        let mut ids = HashSet::new();
        let mut keys = HashSet::new();
        let mut by_id = BTreeMap::new();
        for img in &self.images {
            if !ids.insert(&img.image_id) {
                errs.push(format!("duplicate image_id {:?}", img.image_id));
            }
            if !keys.insert((&img.patient_id, img.modality, &img.uri)) {
                errs.push(format!("image {}: (patient, modality, uri) is not unique", img.image_id));
            }
            if img.width == 0 || img.height == 0 {
                errs.push(format!("image {}: zero-sized", img.image_id));
            }
            by_id.insert(img.image_id.as_str(), img);
        }
        for b in &self.boxes {
            let Some(img) = by_id.get(b.image_id.as_str()) else {
                errs.push(format!("box refers to unknown image {:?}", b.image_id));
                continue;
            };
            let r = &b.bbox;
            let inside = r.w > 0.0
                && r.h > 0.0
                && r.x >= 0.0
                && r.y >= 0.0
                && r.x + r.w <= f64::from(img.width)
                && r.y + r.h <= f64::from(img.height);
            if !inside {
                errs.push(format!("image {}: box {:?} lies outside the image bounds", img.image_id, b.label));
            }
            match b.kind {
                BoxKind::Tooth => {
                    if let Err(e) = b.label.parse::<ToothNumber>() {
                        errs.push(format!("image {}: {e}", img.image_id));
                    }
                }
                BoxKind::Disease => match registry.get(&b.label) {
                    Some(t) if t.category == TaskCategory::OralDisease => {}
                    _ => errs.push(format!("image {}: {:?} is not an oral-disease task", img.image_id, b.label)),
                },
            }
        }
        for r in &self.reports {
            if let Err(mut e) = r.validate(registry) {
                errs.append(&mut e);
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Auto,
    ExpertCorrected,
}

/// One question/answer pair about one image for one task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VQARecord {
    pub record_id: String,
    /// Shared by all language versions of the same pair.
    pub lineage: String,
    pub image_id: String,
    pub task_id: String,
    pub language: Language,
    pub question: String,
    pub answer: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locations: Option<LocationSet>,
    pub provenance: Provenance,
}

pub(crate) fn record_id(lineage: &str, lang: Language) -> String {
    format!("{lineage}:{}", lang.code().to_ascii_lowercase())
}

/// Check a record against its task; used as a validator pass over built corpora.
pub fn validate_record(r: &VQARecord, registry: &TaskRegistry) -> Result<(), String> {
    let task =
        registry.get(&r.task_id).ok_or_else(|| format!("record {}: unknown task {:?}", r.record_id, r.task_id))?;
    task.check_answer(&r.answer, r.language).map_err(|e| format!("record {}: {e}", r.record_id))?;
    if let Some(_locs) = r.locations {
        if !task.supports_location {
            return Err(format!("record {}: task {} does not carry locations", r.record_id, task.task_id));
        }
        if task.is_negative(&r.answer) {
            return Err(format!("record {}: locations on a negative answer", r.record_id));
        }
    }
    if task.answer_mode == AnswerMode::MultiLabel && !matches!(r.answer, Answer::Multi(_)) {
        return Err(format!("record {}: multi-label task needs a list answer", r.record_id));
    }
    Ok(())
}

/// Output of [`build_corpus`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuiltCorpus {
    pub records: Vec<VQARecord>,
    pub review: Vec<ReviewFlag>,
    pub warnings: Vec<String>,
}

/// Validate, derive and expand Chinese-source annotations using the
/// registry's own question templates and phrase dictionary.
pub fn build_corpus(
    annotations: &AnnotationSet,
    registry: &TaskRegistry,
    templates: &QuestionTemplates,
    options: &BuildOptions,
) -> Result<BuiltCorpus, BuildError> {
    annotations.validate(registry).map_err(BuildError::InvalidAnnotations)?;
    let dictionary = PhraseDictionary::from_registry(registry, templates)?;
    let diagnoses = derive_diagnoses(annotations, registry, Language::Zh, VerticalRule::FdiQuadrant);
    let records = build_vqa_pairs(&annotations.images, &diagnoses, templates, &dictionary, options)?;
    Ok(BuiltCorpus { records, review: diagnoses.review, warnings: diagnoses.warnings })
}
