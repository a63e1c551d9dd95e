use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Provenance, VQARecord};
use crate::client::{
    complete_with_retry, ChatMessage, ChatRequest, Clock, GenerationParams, ImageRef, ModelClient, RetryError,
    RetryPolicy, SystemClock,
};
use crate::domain::{Language, LocationVocabulary, TaskRegistry};
use crate::inference::extract_locations;
use crate::text::render;

pub const RATIONALE_PROMPT_EN: &str = include_str!("../../config/prompts/rationale.en.txt");
pub const RATIONALE_PROMPT_ZH: &str = include_str!("../../config/prompts/rationale.zh.txt");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RationaleError {
    #[error("record {0} is not expert-corrected; rationales are only generated for corrected records")]
    NotCorrected(String),
    #[error("record {0} refers to an unknown task")]
    UnknownTask(String),
    #[error(transparent)]
    Transport(#[from] RetryError),
    #[error("record {record_id}: rationale omitted required locations after {attempts} attempt(s)")]
    MissingLocations { record_id: String, attempts: u32 },
}

pub struct RationaleContext<'a> {
    pub registry: &'a TaskRegistry,
    pub vocabulary: &'a LocationVocabulary,
    pub prompt_en: String,
    pub prompt_zh: String,
    pub retry: RetryPolicy,
    /// Generations allowed per record when the output fails the location check.
    pub attempt_budget: u32,
    pub clock: Arc<dyn Clock>,
    pub params: GenerationParams,
}

impl<'a> RationaleContext<'a> {
    pub fn new(registry: &'a TaskRegistry, vocabulary: &'a LocationVocabulary) -> Self {
        RationaleContext {
            registry,
            vocabulary,
            prompt_en: RATIONALE_PROMPT_EN.to_string(),
            prompt_zh: RATIONALE_PROMPT_ZH.to_string(),
            retry: RetryPolicy::default(),
            attempt_budget: 3,
            clock: Arc::new(SystemClock::new()),
            params: GenerationParams::default(),
        }
    }
}

/// Ask `client` for a rationale supporting the record's ground truth.
///
/// The answer and locations of the returned record are the input's; only the
/// rationale is filled in. For location-bearing records, a rationale that
/// does not mention every gold location is rejected and requested again.
pub fn generate_rationale(
    r: &VQARecord,
    image: &ImageRef,
    client: &dyn ModelClient,
    ctx: &RationaleContext<'_>,
) -> Result<VQARecord, RationaleError> {
    if r.provenance != Provenance::ExpertCorrected {
        return Err(RationaleError::NotCorrected(r.record_id.clone()));
    }
    let task = ctx.registry.get(&r.task_id).ok_or_else(|| RationaleError::UnknownTask(r.record_id.clone()))?;
    let required = r.locations.filter(|_| task.supports_location).unwrap_or_default();
    let locations_text =
        if required.is_empty() { "-".to_string() } else { ctx.vocabulary.describe(required, r.language).join(", ") };
    let template = match r.language {
        Language::En => &ctx.prompt_en,
        Language::Zh => &ctx.prompt_zh,
    };
    let prompt = render(
        template,
        &[
            ("task", task.name(r.language)),
            ("question", &r.question),
            ("answer", &r.answer.to_string()),
            ("locations", &locations_text),
        ],
    );
    let budget = ctx.attempt_budget.max(1);
    for attempt in 0..budget {
        let req = ChatRequest {
            request_id: if attempt == 0 {
                format!("{}/rationale", r.record_id)
            } else {
                format!("{}/rationale#{attempt}", r.record_id)
            },
            messages: vec![ChatMessage::user(prompt.clone()).with_image(image.clone())],
            params: ctx.params.clone(),
        };
        let text = complete_with_retry(client, &req, &ctx.retry, ctx.clock.as_ref())?;
        let found = extract_locations(&text, ctx.vocabulary, r.language);
        if required.is_subset(found) {
            let mut out = r.clone();
            out.rationale = Some(text.trim().to_string());
            return Ok(out);
        }
    }
    Err(RationaleError::MissingLocations { record_id: r.record_id.clone(), attempts: budget })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationaleFlag {
    pub record_id: String,
    pub reason: String,
}

/// Batch form: failures become flags and the pipeline carries on.
///
/// Every input record is returned, in order; records that are not
/// expert-corrected pass through untouched.
pub fn generate_rationales(
    records: &[VQARecord],
    image_for: &dyn Fn(&VQARecord) -> ImageRef,
    client: &dyn ModelClient,
    ctx: &RationaleContext<'_>,
) -> (Vec<VQARecord>, Vec<RationaleFlag>) {
    let mut out = Vec::with_capacity(records.len());
    let mut flags = Vec::new();
    for r in records {
        if r.provenance != Provenance::ExpertCorrected {
            out.push(r.clone());
            continue;
        }
        match generate_rationale(r, &image_for(r), client, ctx) {
            Ok(done) => out.push(done),
            Err(e) => {
                flags.push(RationaleFlag { record_id: r.record_id.clone(), reason: e.to_string() });
                out.push(r.clone());
            }
        }
    }
    (out, flags)
}
