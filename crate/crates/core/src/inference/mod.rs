//! Diagnostic model adapters: one-step and two-step inference protocols.

mod normalize;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{
    ChatMessage, ChatRequest, ClientError, Clock, GenerationParams, HttpChatClient, ImageRef, ModelClient, RetryError,
    RetryPolicy, Script, ScriptedClient, SystemClock,
};
use crate::dataset::VQARecord;
use crate::domain::{AnswerMode, Language, LocationSet, LocationVocabulary, Prediction, TaskRegistry, TaskSpec};
use crate::text::render;

pub use normalize::{extract_locations, normalize_answer, parse_leading_answer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transport {
    /// Scripted local endpoint; responses keyed by request id.
    Local { script: PathBuf },
    Remote {
        base_url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub name: String,
    pub transport: Transport,
    #[serde(default)]
    pub params: GenerationParams,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_in_flight() -> usize {
    4
}

impl ModelEndpoint {
    pub fn local(name: impl Into<String>, script: impl Into<PathBuf>) -> Self {
        ModelEndpoint {
            name: name.into(),
            transport: Transport::Local { script: script.into() },
            params: GenerationParams::default(),
            max_in_flight: default_in_flight(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, InferenceError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| InferenceError::Config(format!("{}: {e}", path.display())))?;
        let mut ep: ModelEndpoint = toml::from_str(&text).map_err(|e| InferenceError::Config(e.to_string()))?;
        // a relative script path is relative to the endpoint file
        if let (Transport::Local { script }, Some(dir)) = (&mut ep.transport, path.parent()) {
            if script.is_relative() {
                *script = dir.join(&*script);
            }
        }
        ep.validate()?;
        Ok(ep)
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        self.params.validate().map_err(InferenceError::Config)?;
        if self.max_in_flight == 0 {
            return Err(InferenceError::Config("max_in_flight must be positive".into()));
        }
        Ok(())
    }

    pub fn connect(&self, clock: Arc<dyn Clock>) -> Result<Arc<dyn ModelClient>, InferenceError> {
        self.validate()?;
        Ok(match &self.transport {
            Transport::Local { script } => {
                let s =
                    Script::load(script).map_err(|e| InferenceError::Config(format!("{}: {e}", script.display())))?;
                Arc::new(ScriptedClient::with_clock(s, clock))
            }
            Transport::Remote { base_url, model, api_key_env } => {
                let mut c = HttpChatClient::new(base_url.clone(), model.clone());
                if let Some(var) = api_key_env {
                    c = c.with_api_key_env(var.clone());
                }
                Arc::new(c)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub raw_text: String,
    pub parsed_answer: Prediction,
    pub parsed_locations: LocationSet,
    pub latency_ms: u64,
    pub step_count: u8,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InferenceError {
    #[error(transparent)]
    Transport(#[from] RetryError),
    #[error("image for {0} could not be decoded")]
    Image(String),
    #[error("endpoint configuration: {0}")]
    Config(String),
}

/// Editable extraction prompt templates, one per (language, answer mode).
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractionPrompts {
    templates: [[String; 2]; 2],
}

const FILES: [[&str; 2]; 2] = [
    ["extract.en.multi_class.txt", "extract.en.multi_label.txt"],
    ["extract.zh.multi_class.txt", "extract.zh.multi_label.txt"],
];

fn slot(lang: Language, mode: AnswerMode) -> (usize, usize) {
    let l = match lang {
        Language::En => 0,
        Language::Zh => 1,
    };
    let m = match mode {
        AnswerMode::MultiClass => 0,
        AnswerMode::MultiLabel => 1,
    };
    (l, m)
}

impl Default for ExtractionPrompts {
    fn default() -> Self {
        ExtractionPrompts {
            templates: [
                [
                    include_str!("../../config/prompts/extract.en.multi_class.txt").to_string(),
                    include_str!("../../config/prompts/extract.en.multi_label.txt").to_string(),
                ],
                [
                    include_str!("../../config/prompts/extract.zh.multi_class.txt").to_string(),
                    include_str!("../../config/prompts/extract.zh.multi_label.txt").to_string(),
                ],
            ],
        }
    }
}

impl ExtractionPrompts {
    /// Load overrides from `dir`; files that are absent keep the shipped text.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut p = Self::default();
        for (l, row) in FILES.iter().enumerate() {
            for (m, name) in row.iter().enumerate() {
                let path = dir.join(name);
                if path.exists() {
                    p.templates[l][m] = std::fs::read_to_string(path)?;
                }
            }
        }
        Ok(p)
    }

    pub fn get(&self, lang: Language, mode: AnswerMode) -> &str {
        let (l, m) = slot(lang, mode);
        &self.templates[l][m]
    }

    pub fn set(&mut self, lang: Language, mode: AnswerMode, template: impl Into<String>) {
        let (l, m) = slot(lang, mode);
        self.templates[l][m] = template.into();
    }
}

/// Records how long the last call to the wrapped client took, excluding backoff.
struct Timed<'a> {
    inner: &'a dyn ModelClient,
    clock: &'a dyn Clock,
    last: Mutex<Duration>,
}

impl ModelClient for Timed<'_> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let t0 = self.clock.now();
        let out = self.inner.complete(request);
        *self.last.lock().unwrap() = self.clock.now().saturating_sub(t0);
        out
    }
}

/// Client plus the settings shared by every inference call.
pub struct Adapter {
    pub client: Arc<dyn ModelClient>,
    pub params: GenerationParams,
    pub retry: RetryPolicy,
    pub clock: Arc<dyn Clock>,
    pub vocabulary: LocationVocabulary,
    pub extraction: ExtractionPrompts,
    pub max_in_flight: usize,
}

impl Adapter {
    pub fn new(client: Arc<dyn ModelClient>) -> Self {
        Adapter {
            client,
            params: GenerationParams::default(),
            retry: RetryPolicy::default(),
            clock: Arc::new(SystemClock::new()),
            vocabulary: LocationVocabulary::default(),
            extraction: ExtractionPrompts::default(),
            max_in_flight: default_in_flight(),
        }
    }

    pub fn for_endpoint(endpoint: &ModelEndpoint, clock: Arc<dyn Clock>) -> Result<Self, InferenceError> {
        let client = endpoint.connect(clock.clone())?;
        let mut a = Adapter::new(client);
        a.params = endpoint.params.clone();
        a.clock = clock;
        a.max_in_flight = endpoint.max_in_flight;
        Ok(a)
    }

    fn call(&self, request: &ChatRequest) -> Result<(String, u64), RetryError> {
        let timed = Timed { inner: self.client.as_ref(), clock: self.clock.as_ref(), last: Mutex::new(Duration::ZERO) };
        let text = crate::client::complete_with_retry(&timed, request, &self.retry, self.clock.as_ref())?;
        let ms = timed.last.lock().unwrap().as_millis() as u64;
        Ok((text, ms))
    }

    fn locations(&self, text: &str, task: &TaskSpec, lang: Language) -> LocationSet {
        if task.supports_location {
            extract_locations(text, &self.vocabulary, lang)
        } else {
            LocationSet::default()
        }
    }

    /// One generation producing answer, rationale and locations together.
    pub fn infer_direct(
        &self,
        request_id: &str,
        image: &ImageRef,
        question: &str,
        task: &TaskSpec,
        lang: Language,
    ) -> Result<ModelResponse, InferenceError> {
        check_image(request_id, image)?;
        let req = ChatRequest {
            request_id: request_id.to_string(),
            messages: vec![ChatMessage::user(question).with_image(image.clone())],
            params: self.params.clone(),
        };
        let (raw, latency_ms) = self.call(&req)?;
        Ok(ModelResponse {
            parsed_answer: parse_leading_answer(&raw, task, lang),
            parsed_locations: self.locations(&raw, task, lang),
            raw_text: raw,
            latency_ms,
            step_count: 1,
        })
    }

    /// Free response, then a text-only extraction call against the label space.
    ///
    /// The second request id is `"{request_id}/extract"`; `raw_text` keeps
    /// the free response.
    pub fn infer_two_step(
        &self,
        request_id: &str,
        image: &ImageRef,
        question: &str,
        task: &TaskSpec,
        lang: Language,
    ) -> Result<ModelResponse, InferenceError> {
        check_image(request_id, image)?;
        let first = ChatRequest {
            request_id: request_id.to_string(),
            messages: vec![ChatMessage::user(question).with_image(image.clone())],
            params: self.params.clone(),
        };
        let (raw, t1) = self.call(&first)?;
        let sep = if lang == Language::Zh { "、" } else { ", " };
        let prompt = render(
            self.extraction.get(lang, task.answer_mode),
            &[("question", question), ("labels", &task.label_space(lang).join(sep)), ("response", &raw)],
        );
        let second = ChatRequest {
            request_id: format!("{request_id}/extract"),
            messages: vec![ChatMessage::user(prompt)],
            params: self.params.clone(),
        };
        let (extracted, t2) = self.call(&second)?;
        Ok(ModelResponse {
            parsed_answer: normalize_answer(&extracted, task, lang),
            parsed_locations: self.locations(&raw, task, lang),
            raw_text: raw,
            latency_ms: t1 + t2,
            step_count: 2,
        })
    }

    /// Run many items with at most `max_in_flight` requests outstanding.
    /// Results come back sorted by request id whatever the completion order.
    pub fn infer_batch(&self, items: &[InferenceItem<'_>], protocol: Protocol) -> Vec<InferenceOutcome> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(self.max_in_flight.max(1)).build().expect("thread pool");
        let mut out: Vec<InferenceOutcome> = pool.install(|| {
            items
                .par_iter()
                .map(|it| {
                    let r = match protocol {
                        Protocol::Direct => {
                            self.infer_direct(it.request_id, it.image, it.question, it.task, it.language)
                        }
                        Protocol::TwoStep => {
                            self.infer_two_step(it.request_id, it.image, it.question, it.task, it.language)
                        }
                    };
                    InferenceOutcome { request_id: it.request_id.to_string(), result: r }
                })
                .collect()
        });
        out.sort_by(|a, b| a.request_id.cmp(&b.request_id));
        out
    }

    /// Run every record of a corpus, keyed by record id. Records whose task is
    /// not in the registry are reported as configuration errors.
    pub fn infer_records(
        &self,
        records: &[VQARecord],
        registry: &TaskRegistry,
        image_for: impl Fn(&VQARecord) -> ImageRef,
        protocol: Protocol,
    ) -> (BTreeMap<String, ModelResponse>, Vec<(String, InferenceError)>) {
        let mut failures = Vec::new();
        let mut prepared = Vec::new();
        for r in records {
            match registry.get(&r.task_id) {
                Some(t) => prepared.push((r, t, image_for(r))),
                None => {
                    failures.push((r.record_id.clone(), InferenceError::Config(format!("unknown task {}", r.task_id))))
                }
            }
        }
        let items: Vec<InferenceItem<'_>> = prepared
            .iter()
            .map(|(r, t, img)| InferenceItem {
                request_id: &r.record_id,
                image: img,
                question: &r.question,
                task: t,
                language: r.language,
            })
            .collect();
        let mut responses = BTreeMap::new();
        for o in self.infer_batch(&items, protocol) {
            match o.result {
                Ok(resp) => {
                    responses.insert(o.request_id, resp);
                }
                Err(e) => failures.push((o.request_id, e)),
            }
        }
        (responses, failures)
    }
}

fn check_image(request_id: &str, image: &ImageRef) -> Result<(), InferenceError> {
    match image {
        ImageRef::Bytes(b) if image::guess_format(b).is_err() => Err(InferenceError::Image(request_id.to_string())),
        _ => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Direct,
    TwoStep,
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "direct" => Ok(Protocol::Direct),
            "two-step" => Ok(Protocol::TwoStep),
            _ => Err(format!("unknown protocol {s:?} (expected direct or two-step)")),
        }
    }
}

pub struct InferenceItem<'a> {
    pub request_id: &'a str,
    pub image: &'a ImageRef,
    pub question: &'a str,
    pub task: &'a TaskSpec,
    pub language: Language,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutcome {
    pub request_id: String,
    pub result: Result<ModelResponse, InferenceError>,
}
