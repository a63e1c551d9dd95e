//! Diagnostic task registry and its validation.
//!
//! The registry is loaded from a TOML document (see `config/registry.toml`
//! for the schema and the shipped default). Validation collects every
//! violation instead of stopping at the first one.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Answer, Language, Modality};

const DEFAULT_REGISTRY: &str = include_str!("../../config/registry.toml");
pub const REGISTRY_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCategory {
    OralDisease,
    Malocclusion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    MultiClass,
    MultiLabel,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDef {
    pub en: String,
    pub zh: String,
}

impl LabelDef {
    pub fn get(&self, lang: Language) -> &str {
        match lang {
            Language::En => &self.en,
            Language::Zh => &self.zh,
        }
    }
}

/// Raw registry document, as parsed from TOML.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegistryConfig {
    pub schema_version: u32,
    #[serde(rename = "task", default)]
    pub tasks: Vec<TaskConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskConfig {
    pub id: String,
    pub name_en: String,
    pub name_zh: String,
    pub category: TaskCategory,
    pub answer_mode: AnswerMode,
    /// Kept as strings so typos are reported alongside other violations.
    pub modalities: Vec<String>,
    #[serde(default)]
    pub supports_location: bool,
    #[serde(default)]
    pub negative: usize,
    pub labels: Vec<LabelDef>,
    #[serde(default)]
    pub questions_en: Vec<String>,
    #[serde(default)]
    pub questions_zh: Vec<String>,
}

impl RegistryConfig {
    pub fn from_toml(s: &str) -> Result<Self, RegistryError> {
        toml::from_str(s).map_err(|e| RegistryError { violations: vec![format!("parse error: {e}")] })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("registry config serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub name_en: String,
    pub name_zh: String,
    pub category: TaskCategory,
    pub answer_mode: AnswerMode,
    pub labels: Vec<LabelDef>,
    pub negative: usize,
    pub modalities: Vec<Modality>,
    pub supports_location: bool,
    pub questions_en: Vec<String>,
    pub questions_zh: Vec<String>,
}

impl TaskSpec {
    pub fn name(&self, lang: Language) -> &str {
        match lang {
            Language::En => &self.name_en,
            Language::Zh => &self.name_zh,
        }
    }

    pub fn label_space(&self, lang: Language) -> Vec<&str> {
        self.labels.iter().map(|l| l.get(lang)).collect()
    }

    pub fn questions(&self, lang: Language) -> &[String] {
        match lang {
            Language::En => &self.questions_en,
            Language::Zh => &self.questions_zh,
        }
    }

    pub fn applies_to(&self, m: Modality) -> bool {
        self.modalities.contains(&m)
    }

    /// Index of `label` in the label space, matched in either language.
    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.en == label || l.zh == label)
    }

    pub fn label(&self, index: usize, lang: Language) -> &str {
        self.labels[index].get(lang)
    }

    pub fn negative_label(&self, lang: Language) -> &str {
        self.label(self.negative, lang)
    }

    /// The designated normal answer: the negative label, wrapped per answer mode.
    pub fn negative_answer(&self, lang: Language) -> Answer {
        let l = self.negative_label(lang).to_string();
        match self.answer_mode {
            AnswerMode::MultiClass => Answer::Single(l),
            AnswerMode::MultiLabel => Answer::Multi(vec![l]),
        }
    }

    /// The first non-negative label; for binary presence tasks this is "yes".
    pub fn positive_label(&self, lang: Language) -> &str {
        let i = (0..self.labels.len()).find(|&i| i != self.negative).unwrap_or(self.negative);
        self.label(i, lang)
    }

    pub fn is_negative(&self, answer: &Answer) -> bool {
        let mut labels = answer.labels();
        match (labels.next(), labels.next()) {
            (Some(l), None) => self.label_index(l) == Some(self.negative),
            _ => false,
        }
    }

    /// Check an answer against the label space in `lang`.
    pub fn check_answer(&self, answer: &Answer, lang: Language) -> Result<(), String> {
        let space = self.label_space(lang);
        match (self.answer_mode, answer) {
            (AnswerMode::MultiClass, Answer::Single(s)) => {
                if space.contains(&s.as_str()) {
                    Ok(())
                } else {
                    Err(format!("task {}: answer {s:?} is not in the {lang} label space", self.task_id))
                }
            }
            (AnswerMode::MultiLabel, Answer::Multi(v)) => {
                if v.is_empty() {
                    return Err(format!("task {}: multi-label answer is empty", self.task_id));
                }
                let mut seen = HashSet::new();
                for s in v {
                    if !space.contains(&s.as_str()) {
                        return Err(format!("task {}: label {s:?} is not in the {lang} label space", self.task_id));
                    }
                    if !seen.insert(s) {
                        return Err(format!("task {}: label {s:?} repeated", self.task_id));
                    }
                }
                Ok(())
            }
            (AnswerMode::MultiClass, Answer::Multi(_)) => {
                Err(format!("task {}: multi-class task needs a single label", self.task_id))
            }
            (AnswerMode::MultiLabel, Answer::Single(_)) => {
                Err(format!("task {}: multi-label task needs a label list", self.task_id))
            }
        }
    }

    /// Re-express an answer in another language via the parallel label lists.
    pub fn translate_answer(&self, answer: &Answer, to: Language) -> Option<Answer> {
        let tr = |s: &str| self.label_index(s).map(|i| self.label(i, to).to_string());
        match answer {
            Answer::Single(s) => tr(s).map(Answer::Single),
            Answer::Multi(v) => v.iter().map(|s| tr(s)).collect::<Option<Vec<_>>>().map(Answer::Multi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct RegistryError {
    pub violations: Vec<String>,
}

impl fmt::Display for RegistryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid task registry ({} violation(s))", self.violations.len())?;
        for v in &self.violations {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

/// A validated, immutable set of tasks in declaration order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskRegistry {
    tasks: Vec<TaskSpec>,
    index: HashMap<String, usize>,
}

impl TaskRegistry {
    pub fn from_toml(s: &str) -> Result<Self, RegistryError> {
        validate_registry(RegistryConfig::from_toml(s)?)
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, task_id: &str) -> Option<&TaskSpec> {
        self.index.get(task_id).map(|&i| &self.tasks[i])
    }

    /// Tasks whose modality list contains `m`, in registry order.
    pub fn tasks_for_modality(&self, m: Modality) -> Vec<&TaskSpec> {
        self.tasks.iter().filter(|t| t.applies_to(m)).collect()
    }

    /// Counts of (oral-disease, malocclusion multi-class, malocclusion multi-label).
    pub fn category_counts(&self) -> (usize, usize, usize) {
        let count = |c, m| self.tasks.iter().filter(|t| t.category == c && t.answer_mode == m).count();
        (
            self.tasks.iter().filter(|t| t.category == TaskCategory::OralDisease).count(),
            count(TaskCategory::Malocclusion, AnswerMode::MultiClass),
            count(TaskCategory::Malocclusion, AnswerMode::MultiLabel),
        )
    }

    /// Back to the document form, e.g. for editing and re-validation.
    pub fn to_config(&self) -> RegistryConfig {
        RegistryConfig {
            schema_version: REGISTRY_SCHEMA_VERSION,
            tasks: self
                .tasks
                .iter()
                .map(|t| TaskConfig {
                    id: t.task_id.clone(),
                    name_en: t.name_en.clone(),
                    name_zh: t.name_zh.clone(),
                    category: t.category,
                    answer_mode: t.answer_mode,
                    modalities: t.modalities.iter().map(|m| m.code().to_string()).collect(),
                    supports_location: t.supports_location,
                    negative: t.negative,
                    labels: t.labels.clone(),
                    questions_en: t.questions_en.clone(),
                    questions_zh: t.questions_zh.clone(),
                })
                .collect(),
        }
    }
}

impl Default for TaskRegistry {
    fn default() -> Self {
        TaskRegistry::from_toml(DEFAULT_REGISTRY).expect("shipped registry is valid")
    }
}

pub fn validate_registry(config: RegistryConfig) -> Result<TaskRegistry, RegistryError> {
    let mut violations = Vec::new();
    if config.schema_version != REGISTRY_SCHEMA_VERSION {
        violations.push(format!(
            "schema_version {} is not supported (expected {REGISTRY_SCHEMA_VERSION})",
            config.schema_version
        ));
    }
    if config.tasks.is_empty() {
        violations.push("registry declares no tasks".to_string());
    }

    let mut seen_ids = HashSet::new();
    let mut tasks = Vec::with_capacity(config.tasks.len());
    for t in config.tasks {
        let id = t.id.clone();
        if id.trim().is_empty() {
            violations.push("task with empty id".to_string());
        }
        if !seen_ids.insert(id.clone()) {
            violations.push(format!("duplicate task_id {id:?}"));
        }

        let mut modalities = Vec::new();
        for code in &t.modalities {
            match code.parse::<Modality>() {
                Ok(m) if modalities.contains(&m) => {
                    violations.push(format!("task {id}: modality {m} listed twice"));
                }
                Ok(m) => modalities.push(m),
                Err(_) => violations.push(format!("task {id}: unknown modality {code:?}")),
            }
        }
        if t.modalities.is_empty() {
            violations.push(format!("task {id}: modality list is empty"));
        }

        if t.labels.is_empty() {
            violations.push(format!("task {id}: label space is empty"));
        } else if t.negative >= t.labels.len() {
            violations.push(format!("task {id}: negative index {} out of range", t.negative));
        }
        for lang in Language::ALL {
            let mut seen = HashSet::new();
            for l in &t.labels {
                let s = l.get(lang);
                if s.trim().is_empty() {
                    violations.push(format!("task {id}: empty {lang} label"));
                } else if !seen.insert(s) {
                    violations.push(format!("task {id}: {lang} label {s:?} repeated"));
                }
            }
        }

        match t.category {
            TaskCategory::OralDisease => {
                if t.answer_mode == AnswerMode::MultiLabel {
                    violations.push(format!("task {id}: multi-label tasks must be malocclusion tasks"));
                }
                if modalities.contains(&Modality::Lat) {
                    violations.push(format!("task {id}: oral-disease tasks apply only to PAN and intraoral images"));
                }
                if t.labels.len() != 2 {
                    violations
                        .push(format!("task {id}: oral-disease tasks need a binary (absent/present) label space"));
                }
            }
            TaskCategory::Malocclusion => {
                if t.supports_location {
                    violations.push(format!("task {id}: location output is only defined for oral-disease tasks"));
                }
            }
        }

        tasks.push(TaskSpec {
            task_id: id,
            name_en: t.name_en,
            name_zh: t.name_zh,
            category: t.category,
            answer_mode: t.answer_mode,
            labels: t.labels,
            negative: t.negative,
            modalities,
            supports_location: t.supports_location,
            questions_en: t.questions_en,
            questions_zh: t.questions_zh,
        });
    }

    if !violations.is_empty() {
        return Err(RegistryError { violations });
    }
    let index = tasks.iter().enumerate().map(|(i, t)| (t.task_id.clone(), i)).collect();
    Ok(TaskRegistry { tasks, index })
}
