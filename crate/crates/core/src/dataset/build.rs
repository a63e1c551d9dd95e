use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;

use super::{
    record_id, translate_record, Diagnoses, ImageRecord, PhraseDictionary, Provenance, TranslateError, VQARecord,
};
use crate::domain::{Language, TaskRegistry};
use crate::seed::keyed_rng;

/// Question templates keyed by (task_id, language).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QuestionTemplates {
    map: BTreeMap<(String, Language), Vec<String>>,
}

impl QuestionTemplates {
    pub fn from_registry(registry: &TaskRegistry) -> Self {
        let mut t = QuestionTemplates::default();
        for task in registry.tasks() {
            for lang in Language::ALL {
                let qs = task.questions(lang);
                if !qs.is_empty() {
                    t.set(&task.task_id, lang, qs.to_vec());
                }
            }
        }
        t
    }

    pub fn set(&mut self, task_id: &str, lang: Language, questions: Vec<String>) {
        self.map.insert((task_id.to_string(), lang), questions);
    }

    pub fn remove(&mut self, task_id: &str, lang: Language) -> Option<Vec<String>> {
        self.map.remove(&(task_id.to_string(), lang))
    }

    pub fn get(&self, task_id: &str, lang: Language) -> &[String] {
        self.map.get(&(task_id.to_string(), lang)).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub languages: Vec<Language>,
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { languages: vec![Language::En, Language::Zh], seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BuildError {
    #[error("no question template for task {task_id} in {language}")]
    MissingTemplate { task_id: String, language: Language },
    #[error("image {0} has no diagnoses")]
    MissingDiagnoses(String),
    #[error(transparent)]
    Translate(#[from] TranslateError),
    #[error("invalid annotations: {}", .0.join("; "))]
    InvalidAnnotations(Vec<String>),
}

/// Expand diagnoses into one record per (image, applicable task, language).
///
/// Questions are drawn uniformly from the source-language templates with an
/// RNG keyed by (seed, image, task), so output depends only on the inputs and
/// seed. Other languages are produced by dictionary translation of the
/// source record. Output is sorted by (image_id, task_id, language).
pub fn build_vqa_pairs(
    images: &[ImageRecord],
    diagnoses: &Diagnoses,
    templates: &QuestionTemplates,
    dictionary: &PhraseDictionary,
    options: &BuildOptions,
) -> Result<Vec<VQARecord>, BuildError> {
    let source = diagnoses.language.unwrap_or(Language::Zh);
    let mut needed: BTreeSet<Language> = options.languages.iter().copied().collect();
    needed.insert(source);

    let mut task_ids = BTreeSet::new();
    for img in images {
        let per =
            diagnoses.by_image.get(&img.image_id).ok_or_else(|| BuildError::MissingDiagnoses(img.image_id.clone()))?;
        task_ids.extend(per.keys().map(String::as_str));
    }
    for task_id in &task_ids {
        for &lang in &needed {
            if templates.get(task_id, lang).is_empty() {
                return Err(BuildError::MissingTemplate { task_id: task_id.to_string(), language: lang });
            }
        }
    }

    let chunks: Vec<Result<Vec<VQARecord>, BuildError>> = images
        .par_iter()
        .map(|img| {
            let mut out = Vec::new();
            for (task_id, diag) in &diagnoses.by_image[&img.image_id] {
                let questions = templates.get(task_id, source);
                let mut rng = keyed_rng(options.seed, &[&img.image_id, task_id]);
                let question = questions[rng.random_range(0..questions.len())].clone();
                let lineage = format!("{}:{}", img.image_id, task_id);
                let base = VQARecord {
                    record_id: record_id(&lineage, source),
                    lineage,
                    image_id: img.image_id.clone(),
                    task_id: task_id.clone(),
                    language: source,
                    question,
                    answer: diag.answer.clone(),
                    rationale: None,
                    locations: diag.locations,
                    provenance: Provenance::Auto,
                };
                for &lang in &options.languages {
                    out.push(translate_record(&base, lang, dictionary, None)?);
                }
            }
            Ok(out)
        })
        .collect();

    let mut records = Vec::new();
    for c in chunks {
        records.extend(c?);
    }
    records.sort_by(|a, b| (&a.image_id, &a.task_id, a.language).cmp(&(&b.image_id, &b.task_id, b.language)));
    records.dedup_by(|a, b| a.record_id == b.record_id);
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{derive_diagnoses, validate_record, AnnotationSet};
    use crate::domain::{Modality, VerticalRule};

    fn images(n: usize) -> Vec<ImageRecord> {
        (0..n)
            .map(|i| ImageRecord {
                image_id: format!("img{i:03}"),
                patient_id: format!("p{}", i / 7),
                modality: Modality::ALL[i % 7],
                uri: format!("p{}/{i}.png", i / 7),
                width: 640,
                height: 480,
            })
            .collect()
    }

    fn build(n: usize, seed: u64) -> (Vec<ImageRecord>, Vec<VQARecord>) {
        let reg = TaskRegistry::default();
        let set = AnnotationSet { images: images(n), ..Default::default() };
        let diag = derive_diagnoses(&set, &reg, Language::Zh, VerticalRule::FdiQuadrant);
        let templates = QuestionTemplates::from_registry(&reg);
        let dict = PhraseDictionary::from_registry(&reg, &templates).unwrap();
        let opts = BuildOptions { languages: vec![Language::En, Language::Zh], seed };
        let recs = build_vqa_pairs(&set.images, &diag, &templates, &dict, &opts).unwrap();
        (set.images, recs)
    }

    #[test]
    fn count_matches_brute_force_sum() {
        let reg = TaskRegistry::default();
        let (imgs, recs) = build(10, 7);
        let mut expected = 0;
        for img in &imgs {
            for _lang in Language::ALL {
                for t in reg.tasks() {
                    if t.modalities.contains(&img.modality) {
                        expected += 1;
                    }
                }
            }
        }
        assert_eq!(recs.len(), expected);
        for r in &recs {
            validate_record(r, &reg).unwrap();
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = serde_json::to_vec(&build(10, 42).1).unwrap();
        let b = serde_json::to_vec(&build(10, 42).1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn canonical_order() {
        let (_, recs) = build(5, 1);
        let keys: Vec<_> = recs.iter().map(|r| (r.image_id.clone(), r.task_id.clone(), r.language)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn missing_template_aborts_naming_the_gap() {
        let reg = TaskRegistry::default();
        let set = AnnotationSet { images: images(3), ..Default::default() };
        let diag = derive_diagnoses(&set, &reg, Language::Zh, VerticalRule::FdiQuadrant);
        let full = QuestionTemplates::from_registry(&reg);
        let dict = PhraseDictionary::from_registry(&reg, &full).unwrap();
        let mut templates = full.clone();
        templates.remove("overjet", Language::En);
        let err = build_vqa_pairs(&set.images, &diag, &templates, &dict, &BuildOptions::default()).unwrap_err();
        assert_eq!(err, BuildError::MissingTemplate { task_id: "overjet".into(), language: Language::En });
    }
}
