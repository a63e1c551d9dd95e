//! Seeded generators for demos, tests and the acceptance suite: registries,
//! annotation sets, scripted endpoints with a known error rate, screening
//! cohorts and reader-study pools.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{ImagePrediction, PatientBundle, ScreeningMode};
use crate::client::Script;
use crate::dataset::{AnnotationSet, BBox, BoxAnnotation, BoxKind, DiagnosisReport, ImageRecord, VQARecord};
use crate::domain::{
    validate_registry, Answer, AnswerMode, Language, LocationVocabulary, Modality, TaskCategory, TaskRegistry, TaskSpec,
};
use crate::seed::keyed_rng;
use crate::study::StudyItem;

pub const IMAGE_WIDTH: u32 = 1024;
pub const IMAGE_HEIGHT: u32 = 768;

/// A random sub-registry of the default one: each task kept with
/// probability 0.6 (at least three), each on a random non-empty subset of
/// its modalities.
pub fn random_registry(seed: u64) -> TaskRegistry {
    let mut rng = keyed_rng(seed, &["registry"]);
    let mut config = TaskRegistry::default().to_config();
    let mut tasks: Vec<_> = config.tasks.drain(..).filter(|_| rng.random_bool(0.6)).collect();
    if tasks.len() < 3 {
        tasks = TaskRegistry::default().to_config().tasks.into_iter().take(3).collect();
    }
    for t in &mut tasks {
        let mut mods = t.modalities.clone();
        mods.shuffle(&mut rng);
        mods.truncate(rng.random_range(1..=mods.len()));
        t.modalities = mods;
    }
    config.tasks = tasks;
    validate_registry(config).expect("a subset of the default registry is valid")
}

fn tooth_label(rng: &mut ChaCha8Rng) -> String {
    format!("{}{}", rng.random_range(1..=4), rng.random_range(1..=8))
}

/// Chinese-source annotations for `patients` patients with two to four
/// images each. Each applicable disease is present with probability 0.25,
/// drawn as a disease box inside a tooth box; each malocclusion task gets an
/// abnormal report finding with probability 0.4.
pub fn annotations(registry: &TaskRegistry, patients: usize, seed: u64) -> AnnotationSet {
    let mut set = AnnotationSet::default();
    for p in 0..patients {
        let patient_id = format!("P{p:04}");
        let mut rng = keyed_rng(seed, &["annotations", &patient_id]);
        let mut mods = Modality::ALL.to_vec();
        mods.shuffle(&mut rng);
        mods.truncate(rng.random_range(2..=4));
        mods.sort();
        for m in &mods {
            let image_id = format!("{patient_id}-{}", m.code());
            for task in registry.tasks_for_modality(*m) {
                if task.category != TaskCategory::OralDisease || !rng.random_bool(0.25) {
                    continue;
                }
                let (x, y) = (rng.random_range(0.0..900.0), rng.random_range(0.0..640.0));
                set.boxes.push(BoxAnnotation {
                    image_id: image_id.clone(),
                    kind: BoxKind::Tooth,
                    label: tooth_label(&mut rng),
                    bbox: BBox::new(x, y, 60.0, 80.0),
                });
                set.boxes.push(BoxAnnotation {
                    image_id: image_id.clone(),
                    kind: BoxKind::Disease,
                    label: task.task_id.clone(),
                    bbox: BBox::new(x + 20.0, y + 25.0, 20.0, 30.0),
                });
            }
            set.images.push(ImageRecord {
                uri: format!("images/{image_id}.png"),
                image_id,
                patient_id: patient_id.clone(),
                modality: *m,
                width: IMAGE_WIDTH,
                height: IMAGE_HEIGHT,
            });
        }
        let mut findings = BTreeMap::new();
        for task in registry.tasks().iter().filter(|t| t.category == TaskCategory::Malocclusion) {
            if task.modalities.iter().any(|m| mods.contains(m)) && rng.random_bool(0.4) {
                findings.insert(task.task_id.clone(), abnormal_answer(task, Language::Zh, &mut rng));
            }
        }
        set.reports.push(DiagnosisReport { patient_id, findings });
    }
    set
}

fn abnormal_indices(task: &TaskSpec) -> Vec<usize> {
    (0..task.labels.len()).filter(|&i| i != task.negative).collect()
}

fn answer_from(task: &TaskSpec, indices: &BTreeSet<usize>, lang: Language) -> Answer {
    let labels: Vec<String> = indices.iter().map(|&i| task.label(i, lang).to_string()).collect();
    match task.answer_mode {
        AnswerMode::MultiClass => Answer::Single(labels[0].clone()),
        AnswerMode::MultiLabel => Answer::Multi(labels),
    }
}

fn abnormal_answer(task: &TaskSpec, lang: Language, rng: &mut ChaCha8Rng) -> Answer {
    let pool = abnormal_indices(task);
    let mut picked = BTreeSet::from([*pool.choose(rng).expect("task has an abnormal label")]);
    if task.answer_mode == AnswerMode::MultiLabel && pool.len() > 1 && rng.random_bool(0.3) {
        picked.insert(*pool.choose(rng).unwrap());
    }
    answer_from(task, &picked, lang)
}

/// A valid answer in the task's label space that differs from `gold`.
pub fn wrong_answer(task: &TaskSpec, gold: &Answer, lang: Language, rng: &mut ChaCha8Rng) -> Answer {
    let gold_idx: BTreeSet<usize> = gold.labels().filter_map(|l| task.label_index(l)).collect();
    match task.answer_mode {
        AnswerMode::MultiClass => {
            let others: Vec<usize> = (0..task.labels.len()).filter(|i| !gold_idx.contains(i)).collect();
            answer_from(task, &BTreeSet::from([*others.choose(rng).unwrap()]), lang)
        }
        AnswerMode::MultiLabel => {
            let abnormal = abnormal_indices(task);
            let toggle = *abnormal.choose(rng).unwrap();
            let mut set: BTreeSet<usize> = gold_idx.into_iter().filter(|&i| i != task.negative).collect();
            if !set.remove(&toggle) {
                set.insert(toggle);
            }
            if set.is_empty() {
                set.insert(task.negative);
            }
            answer_from(task, &set, lang)
        }
    }
}

fn answer_text(a: &Answer, lang: Language) -> String {
    match a {
        Answer::Single(s) => s.clone(),
        Answer::Multi(v) => v.join(if lang == Language::Zh { "、" } else { ", " }),
    }
}

/// A scripted endpoint that answers each record correctly except with
/// probability `flip_rate`, independently per record. Extraction requests
/// (`{id}/extract`) get the bare answer.
#[derive(Clone, Debug)]
pub struct FlipScript {
    pub script: Script,
    /// Record ids that were given a wrong answer.
    pub flipped: BTreeSet<String>,
}

pub fn flip_script(
    records: &[VQARecord],
    registry: &TaskRegistry,
    vocabulary: &LocationVocabulary,
    flip_rate: f64,
    seed: u64,
) -> FlipScript {
    let mut responses = BTreeMap::new();
    let mut flipped = BTreeSet::new();
    for r in records {
        let Some(task) = registry.get(&r.task_id) else { continue };
        let mut rng = keyed_rng(seed, &["flip", &r.record_id]);
        let (answer, text) = if rng.random_bool(flip_rate) {
            flipped.insert(r.record_id.clone());
            let a = answer_text(&wrong_answer(task, &r.answer, r.language, &mut rng), r.language);
            (a.clone(), a)
        } else {
            let a = answer_text(&r.answer, r.language);
            let mut t = a.clone();
            if let Some(locs) = r.locations.filter(|l| !l.is_empty()) {
                let sep = if r.language == Language::Zh { "。" } else { ". " };
                t = format!("{t}{sep}{}", vocabulary.describe(locs, r.language).join(", "));
            }
            (a, t)
        };
        responses.insert(r.record_id.clone(), text);
        // second step of the two-step protocol: the extractor returns the bare answer
        responses.insert(format!("{}/extract", r.record_id), answer);
    }
    FlipScript { script: Script { responses, latency_ms: 0, fallback: None }, flipped }
}

/// Patients with one to four extra images plus one image per screening task
/// that nothing else covers. Gold is abnormal with probability 0.3; each
/// image prediction is wrong with probability `error_rate`.
pub fn cohort(
    registry: &TaskRegistry,
    mode: ScreeningMode,
    patients: usize,
    error_rate: f64,
    seed: u64,
) -> Vec<PatientBundle> {
    let tasks = mode.tasks(registry).expect("screening tasks are in the registry");
    let usable: Vec<Modality> =
        Modality::ALL.iter().copied().filter(|m| tasks.iter().any(|t| t.applies_to(*m))).collect();
    (0..patients)
        .map(|p| {
            let patient_id = format!("C{p:04}");
            let mut rng = keyed_rng(seed, &["cohort", &patient_id]);
            let mut mods: Vec<Modality> =
                (0..rng.random_range(1..=4)).map(|_| *usable.choose(&mut rng).unwrap()).collect();
            for t in &tasks {
                if !mods.iter().any(|m| t.applies_to(*m)) {
                    mods.push(t.modalities[0]);
                }
            }
            let images: Vec<ImageRecord> = mods
                .iter()
                .enumerate()
                .map(|(i, m)| ImageRecord {
                    image_id: format!("{patient_id}-{i}"),
                    patient_id: patient_id.clone(),
                    modality: *m,
                    uri: format!("images/{patient_id}-{i}.png"),
                    width: IMAGE_WIDTH,
                    height: IMAGE_HEIGHT,
                })
                .collect();
            let mut gold = BTreeMap::new();
            let mut predictions = Vec::new();
            for t in &tasks {
                let g = if rng.random_bool(0.3) {
                    abnormal_answer(t, Language::En, &mut rng)
                } else {
                    t.negative_answer(Language::En)
                };
                for img in images.iter().filter(|i| t.applies_to(i.modality)) {
                    let a = if rng.random_bool(error_rate) {
                        wrong_answer(t, &g, Language::En, &mut rng)
                    } else {
                        g.clone()
                    };
                    predictions.push(ImagePrediction {
                        image_id: img.image_id.clone(),
                        task_id: t.task_id.clone(),
                        answer: a.into(),
                    });
                }
                gold.insert(t.task_id.clone(), g);
            }
            PatientBundle { patient_id, images, predictions, gold }
        })
        .collect()
}

/// `per_task` study items for every registry task, alternating languages.
/// The model answer is correct with probability `model_accuracy`.
pub fn study_pool(registry: &TaskRegistry, per_task: usize, model_accuracy: f64, seed: u64) -> Vec<StudyItem> {
    let mut out = Vec::new();
    for task in registry.tasks() {
        for i in 0..per_task {
            let item_id = format!("{}-{i:03}", task.task_id);
            let mut rng = keyed_rng(seed, &["study-pool", &item_id]);
            let lang = if i % 2 == 0 { Language::En } else { Language::Zh };
            let gold =
                if rng.random_bool(0.4) { abnormal_answer(task, lang, &mut rng) } else { task.negative_answer(lang) };
            let model =
                if rng.random_bool(model_accuracy) { gold.clone() } else { wrong_answer(task, &gold, lang, &mut rng) };
            let model_rationale = match lang {
                Language::En => format!("The image findings are consistent with: {}.", answer_text(&model, lang)),
                Language::Zh => format!("影像表现符合：{}。", answer_text(&model, lang)),
            };
            out.push(StudyItem {
                item_id: item_id.clone(),
                task_id: task.task_id.clone(),
                language: lang,
                image_uri: format!("images/{item_id}.png"),
                question: task.questions(lang).first().cloned().unwrap_or_else(|| task.name(lang).to_string()),
                label_space: task.label_space(lang).into_iter().map(String::from).collect(),
                gold,
                model_answer: answer_text(&model, lang),
                model_rationale,
            });
        }
    }
    out
}
