use std::collections::BTreeMap;

use super::{record_id, QuestionTemplates, VQARecord};
use crate::client::{
    complete_with_retry, ChatMessage, ChatRequest, Clock, GenerationParams, ModelClient, RetryError, RetryPolicy,
};
use crate::domain::{Answer, Language, TaskRegistry};
use crate::text::render;

pub const RATIONALE_TRANSLATION_PROMPT: &str = include_str!("../../config/prompts/translate_rationale.txt");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TranslateError {
    #[error("no dictionary entry for {lang} phrase {phrase:?}")]
    MissingPhrase { lang: Language, phrase: String },
    #[error("dictionary conflict: {0}")]
    Conflict(String),
    #[error("rationale translation for {record_id} failed; flagged: {source}")]
    Translator { record_id: String, source: RetryError },
    #[error("rationale present on {0} but no translator client was supplied")]
    NoTranslator(String),
}

/// Exact-match phrase table between the two languages.
///
/// Covers every fixed phrasing the builder can emit: answer labels and
/// question templates. Must be a bijection so translations round-trip.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PhraseDictionary {
    zh_to_en: BTreeMap<String, String>,
    en_to_zh: BTreeMap<String, String>,
}

impl PhraseDictionary {
    pub fn insert(&mut self, zh: &str, en: &str) -> Result<(), TranslateError> {
        if let Some(prev) = self.zh_to_en.get(zh) {
            if prev != en {
                return Err(TranslateError::Conflict(format!("{zh:?} maps to both {prev:?} and {en:?}")));
            }
        }
        if let Some(prev) = self.en_to_zh.get(en) {
            if prev != zh {
                return Err(TranslateError::Conflict(format!("{en:?} maps to both {prev:?} and {zh:?}")));
            }
        }
        self.zh_to_en.insert(zh.to_string(), en.to_string());
        self.en_to_zh.insert(en.to_string(), zh.to_string());
        Ok(())
    }

    /// Labels of every task plus the index-aligned question templates.
    pub fn from_registry(registry: &TaskRegistry, templates: &QuestionTemplates) -> Result<Self, TranslateError> {
        let mut d = PhraseDictionary::default();
        for t in registry.tasks() {
            for l in &t.labels {
                d.insert(&l.zh, &l.en)?;
            }
            let zh = templates.get(&t.task_id, Language::Zh);
            let en = templates.get(&t.task_id, Language::En);
            for (z, e) in zh.iter().zip(en) {
                d.insert(z, e)?;
            }
        }
        Ok(d)
    }

    pub fn lookup(&self, phrase: &str, from: Language) -> Option<&str> {
        let map = match from {
            Language::Zh => &self.zh_to_en,
            Language::En => &self.en_to_zh,
        };
        map.get(phrase).map(String::as_str)
    }

    fn translate(&self, phrase: &str, from: Language) -> Result<String, TranslateError> {
        self.lookup(phrase, from)
            .map(String::from)
            .ok_or_else(|| TranslateError::MissingPhrase { lang: from, phrase: phrase.to_string() })
    }

    pub fn len(&self) -> usize {
        self.zh_to_en.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zh_to_en.is_empty()
    }
}

/// Translate a record into `target`.
///
/// Question and answer go through the dictionary; a missing phrase is a hard
/// error. A rationale, if present, goes through `translator` with retries.
/// Task, lineage and locations are carried over unchanged.
pub fn translate_record(
    r: &VQARecord,
    target: Language,
    dictionary: &PhraseDictionary,
    translator: Option<(&dyn ModelClient, &RetryPolicy, &dyn Clock)>,
) -> Result<VQARecord, TranslateError> {
    let from = r.language;
    if from == target {
        return Ok(r.clone());
    }
    let question = dictionary.translate(&r.question, from)?;
    let answer = match &r.answer {
        Answer::Single(s) => Answer::Single(dictionary.translate(s, from)?),
        Answer::Multi(v) => Answer::Multi(v.iter().map(|s| dictionary.translate(s, from)).collect::<Result<_, _>>()?),
    };
    let rationale = match (&r.rationale, translator) {
        (None, _) => None,
        (Some(_), None) => return Err(TranslateError::NoTranslator(r.record_id.clone())),
        (Some(text), Some((client, policy, clock))) => {
            let prompt = render(
                RATIONALE_TRANSLATION_PROMPT,
                &[("source", language_name(from)), ("target", language_name(target)), ("text", text)],
            );
            let req = ChatRequest {
                request_id: format!("{}/translate", r.record_id),
                messages: vec![ChatMessage::user(prompt)],
                params: GenerationParams::default(),
            };
            let out = complete_with_retry(client, &req, policy, clock)
                .map_err(|source| TranslateError::Translator { record_id: r.record_id.clone(), source })?;
            Some(out.trim().to_string())
        }
    };
    Ok(VQARecord {
        record_id: record_id(&r.lineage, target),
        lineage: r.lineage.clone(),
        image_id: r.image_id.clone(),
        task_id: r.task_id.clone(),
        language: target,
        question,
        answer,
        rationale,
        locations: r.locations,
        provenance: r.provenance,
    })
}

fn language_name(l: Language) -> &'static str {
    match l {
        Language::En => "English",
        Language::Zh => "Chinese",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{ClientError, FnClient, ManualClock};
    use crate::dataset::Provenance;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn zh_record(reg: &TaskRegistry) -> VQARecord {
        let t = reg.get("caries").unwrap();
        VQARecord {
            record_id: "img:caries:zh".into(),
            lineage: "img:caries".into(),
            image_id: "img".into(),
            task_id: "caries".into(),
            language: Language::Zh,
            question: t.questions_zh[0].clone(),
            answer: Answer::single("是"),
            rationale: None,
            locations: None,
            provenance: Provenance::Auto,
        }
    }

    fn dict(reg: &TaskRegistry) -> PhraseDictionary {
        PhraseDictionary::from_registry(reg, &QuestionTemplates::from_registry(reg)).unwrap()
    }

    #[test]
    fn translates_without_calling_any_client() {
        let reg = TaskRegistry::default();
        let en = translate_record(&zh_record(&reg), Language::En, &dict(&reg), None).unwrap();
        assert_eq!(en.answer, Answer::single("yes"));
        assert_eq!(en.question, "Is there caries in this image?");
        assert_eq!(en.record_id, "img:caries:en");
        assert_eq!(en.lineage, "img:caries");
    }

    #[test]
    fn missing_label_is_named() {
        let reg = TaskRegistry::default();
        let mut r = zh_record(&reg);
        r.answer = Answer::single("可能");
        let err = translate_record(&r, Language::En, &dict(&reg), None).unwrap_err();
        assert!(err.to_string().contains("可能"), "{err}");
    }

    #[test]
    fn conflicting_entries_are_rejected() {
        let mut d = PhraseDictionary::default();
        d.insert("是", "yes").unwrap();
        assert!(d.insert("是", "true").is_err());
        assert!(d.insert("对", "yes").is_err());
    }

    #[test]
    fn rationale_goes_through_translator_with_retry() {
        let reg = TaskRegistry::default();
        let mut r = zh_record(&reg);
        r.rationale = Some("左下后牙区可见龋坏。".into());
        let calls = AtomicU32::new(0);
        let client = FnClient(|req: &ChatRequest| {
            calls.fetch_add(1, Ordering::SeqCst);
            assert!(req.messages[0].content.contains("左下后牙区"));
            Ok("Caries is visible in the lower left posterior region.".to_string())
        });
        let clock = ManualClock::new();
        let policy = RetryPolicy::default();
        let en = translate_record(&r, Language::En, &dict(&reg), Some((&client, &policy, &clock))).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert!(en.rationale.unwrap().contains("lower left posterior"));

        let failing = FnClient(|_: &ChatRequest| Err(ClientError::Transport("down".into())));
        let err = translate_record(&r, Language::En, &dict(&reg), Some((&failing, &policy, &clock))).unwrap_err();
        assert!(matches!(err, TranslateError::Translator { .. }));
    }
}
