//! Diagnostic model plus refiner conversation loop.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::client::{
    complete_with_retry, ChatMessage, ChatRequest, Clock, GenerationParams, ImageRef, ModelClient, RetryPolicy,
    SystemClock,
};
use crate::domain::Language;
use crate::text::{approx_tokens, render};

pub const TRANSCRIPT_KIND: &str = "dentvqa.transcript";
pub const REFINER_PROMPT_EN: &str = include_str!("../../config/prompts/refiner.en.txt");
pub const REFINER_PROMPT_ZH: &str = include_str!("../../config/prompts/refiner.zh.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Diagnostic,
    Refiner,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageRef>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub language: Language,
    pub turns: Vec<Turn>,
    pub round_count: u32,
    /// Set when a refiner call failed and the diagnostic text was kept as is.
    #[serde(default)]
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("the latest turn must be a user turn")]
    NotUserTurn,
    #[error("conversation already has {0} rounds")]
    TooManyRounds(u32),
    #[error("diagnostic model failed: {0}")]
    Diagnostic(String),
    #[error("rating for {conversation_id} by {rater}: {message}")]
    InvalidRating { conversation_id: String, rater: String, message: String },
}

impl Conversation {
    /// Start with the user's image and first query.
    pub fn new(
        conversation_id: impl Into<String>,
        language: Language,
        query: impl Into<String>,
        image: ImageRef,
    ) -> Self {
        Conversation {
            conversation_id: conversation_id.into(),
            language,
            turns: vec![Turn { speaker: Speaker::User, text: query.into(), image: Some(image) }],
            round_count: 0,
            degraded: false,
        }
    }

    pub fn ask(&mut self, query: impl Into<String>) {
        self.turns.push(Turn { speaker: Speaker::User, text: query.into(), image: None });
    }

    fn image(&self) -> Option<&ImageRef> {
        self.turns.first().and_then(|t| t.image.as_ref())
    }

    /// The most recent diagnostic turn.
    pub fn diagnosis(&self) -> Option<&str> {
        self.turns.iter().rev().find(|t| t.speaker == Speaker::Diagnostic).map(|t| t.text.as_str())
    }

    pub fn last_reply(&self) -> Option<&Turn> {
        self.turns.iter().rev().find(|t| t.speaker != Speaker::User)
    }
}

pub struct AgentConfig {
    pub refiner_prompt_en: String,
    pub refiner_prompt_zh: String,
    /// Token budget for the history block in the refiner prompt.
    pub history_budget: usize,
    pub max_rounds: u32,
    /// Call the diagnostic model again on follow-up questions.
    pub reinvoke_diagnostic: bool,
    pub retry: RetryPolicy,
    pub clock: Arc<dyn Clock>,
    pub params: GenerationParams,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            refiner_prompt_en: REFINER_PROMPT_EN.to_string(),
            refiner_prompt_zh: REFINER_PROMPT_ZH.to_string(),
            history_budget: 2048,
            max_rounds: 3,
            reinvoke_diagnostic: false,
            retry: RetryPolicy::default(),
            clock: Arc::new(SystemClock::new()),
            params: GenerationParams::default(),
        }
    }
}

fn label(s: Speaker, lang: Language) -> &'static str {
    match (s, lang) {
        (Speaker::User, Language::En) => "User",
        (Speaker::Diagnostic, Language::En) => "Diagnostic model",
        (Speaker::Refiner, Language::En) => "Assistant",
        (Speaker::User, Language::Zh) => "用户",
        (Speaker::Diagnostic, Language::Zh) => "诊断模型",
        (Speaker::Refiner, Language::Zh) => "助手",
    }
}

/// Render turns for the prompt, dropping the oldest turns after the first
/// until the rest fit in `budget` tokens. The first turn always stays.
pub fn truncate_history(turns: &[Turn], lang: Language, budget: usize) -> String {
    let lines: Vec<String> = turns.iter().map(|t| format!("{}: {}", label(t.speaker, lang), t.text)).collect();
    let Some((first, rest)) = lines.split_first() else { return String::new() };
    let mut used = approx_tokens(first);
    let mut kept: Vec<&String> = Vec::new();
    for l in rest.iter().rev() {
        let cost = approx_tokens(l);
        if used + cost > budget {
            break;
        }
        used += cost;
        kept.push(l);
    }
    kept.reverse();
    std::iter::once(first).chain(kept).cloned().collect::<Vec<_>>().join("\n")
}

/// One interaction round: diagnostic reply (first round, or every round with
/// `reinvoke_diagnostic`), then a refined reply in the conversation's language.
///
/// A refiner failure leaves the diagnostic turn in place and sets `degraded`.
pub fn run_round(
    conv: &Conversation,
    diagnostic: &dyn ModelClient,
    refiner: &dyn ModelClient,
    config: &AgentConfig,
) -> Result<Conversation, AgentError> {
    if conv.turns.last().map(|t| t.speaker) != Some(Speaker::User) {
        return Err(AgentError::NotUserTurn);
    }
    if conv.round_count >= config.max_rounds {
        return Err(AgentError::TooManyRounds(conv.round_count));
    }
    let mut out = conv.clone();
    let round = conv.round_count + 1;
    let query = conv.turns.last().unwrap().text.clone();
    if round == 1 || config.reinvoke_diagnostic {
        let mut msg = ChatMessage::user(query.clone());
        if let Some(img) = conv.image() {
            msg = msg.with_image(img.clone());
        }
        let req = ChatRequest {
            request_id: format!("{}/r{round}/diagnostic", conv.conversation_id),
            messages: vec![msg],
            params: config.params.clone(),
        };
        let text = complete_with_retry(diagnostic, &req, &config.retry, config.clock.as_ref())
            .map_err(|e| AgentError::Diagnostic(e.to_string()))?;
        out.turns.push(Turn { speaker: Speaker::Diagnostic, text, image: None });
    }
    let template = match conv.language {
        Language::En => &config.refiner_prompt_en,
        Language::Zh => &config.refiner_prompt_zh,
    };
    let history = truncate_history(&conv.turns, conv.language, config.history_budget);
    let prompt = render(
        template,
        &[("history", &history), ("diagnosis", out.diagnosis().unwrap_or_default()), ("query", &query)],
    );
    let req = ChatRequest {
        request_id: format!("{}/r{round}/refiner", conv.conversation_id),
        messages: vec![ChatMessage::user(prompt)],
        params: config.params.clone(),
    };
    match complete_with_retry(refiner, &req, &config.retry, config.clock.as_ref()) {
        Ok(text) => out.turns.push(Turn { speaker: Speaker::Refiner, text, image: None }),
        Err(_) => out.degraded = true,
    }
    out.round_count = round;
    Ok(out)
}

pub const INTERACTION_DIMENSIONS: [&str; 7] =
    ["correctness", "completeness", "fairness", "faithfulness", "acceptability", "readability", "coherence"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRating {
    pub conversation_id: String,
    pub rater: String,
    /// Scores in [`INTERACTION_DIMENSIONS`] order, each 1 to 5.
    pub scores: [u8; 7],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    pub dimension: String,
    pub n: usize,
    pub mean: f64,
    /// `distribution[v - 1]` counts ratings equal to `v`.
    pub distribution: [usize; 5],
}

/// Per-dimension means and score distributions. Any out-of-scale score
/// rejects the whole batch.
pub fn collect_ratings(ratings: &[InteractionRating]) -> Result<Vec<DimensionSummary>, AgentError> {
    for r in ratings {
        if let Some((d, v)) = INTERACTION_DIMENSIONS.iter().zip(r.scores).find(|(_, v)| !(1..=5).contains(v)) {
            return Err(AgentError::InvalidRating {
                conversation_id: r.conversation_id.clone(),
                rater: r.rater.clone(),
                message: format!("{d} = {v} is outside 1..=5"),
            });
        }
    }
    Ok(INTERACTION_DIMENSIONS
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut distribution = [0; 5];
            for r in ratings {
                distribution[usize::from(r.scores[i]) - 1] += 1;
            }
            let n = ratings.len();
            let total: usize = ratings.iter().map(|r| usize::from(r.scores[i])).sum();
            DimensionSummary {
                dimension: d.to_string(),
                n,
                mean: if n == 0 { 0.0 } else { total as f64 / n as f64 },
                distribution,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{ClientError, FnClient, ManualClock};
    use std::sync::Mutex;

    fn config() -> AgentConfig {
        AgentConfig { clock: Arc::new(ManualClock::new()), ..AgentConfig::default() }
    }

    fn img() -> ImageRef {
        ImageRef::Uri("file:///pan.png".into())
    }

    #[test]
    fn first_round_turn_order() {
        let conv = Conversation::new("c", Language::En, "Any caries?", img());
        let diag = FnClient(|_: &ChatRequest| Ok("yes. lower left posterior".to_string()));
        let refine = FnClient(|_: &ChatRequest| Ok("There is caries in the lower left molar region.".to_string()));
        let out = run_round(&conv, &diag, &refine, &config()).unwrap();
        let speakers: Vec<_> = out.turns.iter().map(|t| t.speaker).collect();
        assert_eq!(speakers, vec![Speaker::User, Speaker::Diagnostic, Speaker::Refiner]);
        assert_eq!(out.round_count, 1);
        assert!(!out.degraded);
        assert_eq!(conv.turns.len(), 1, "input untouched");
    }

    #[test]
    fn later_rounds_are_refiner_only_by_default() {
        let diag_calls = Mutex::new(0);
        let diag = FnClient(|_: &ChatRequest| {
            *diag_calls.lock().unwrap() += 1;
            Ok("yes".to_string())
        });
        let refine = FnClient(|req: &ChatRequest| Ok(format!("reply to {}", req.request_id)));
        let mut conv = Conversation::new("c", Language::En, "q1", img());
        for q in ["q2", "q3"] {
            conv = run_round(&conv, &diag, &refine, &config()).unwrap();
            conv.ask(q);
        }
        conv = run_round(&conv, &diag, &refine, &config()).unwrap();
        assert_eq!(*diag_calls.lock().unwrap(), 1);
        assert_eq!(conv.round_count, 3);
        assert_eq!(conv.turns.len(), 1 + 2 + 2 + 2);
        conv.ask("q4");
        assert_eq!(run_round(&conv, &diag, &refine, &config()), Err(AgentError::TooManyRounds(3)));

        let mut cfg = config();
        cfg.reinvoke_diagnostic = true;
        let mut c = Conversation::new("c", Language::En, "q1", img());
        c = run_round(&c, &diag, &refine, &cfg).unwrap();
        c.ask("q2");
        run_round(&c, &diag, &refine, &cfg).unwrap();
        assert_eq!(*diag_calls.lock().unwrap(), 3);
    }

    #[test]
    fn refiner_prompt_follows_language() {
        let seen = Mutex::new(String::new());
        let diag = FnClient(|_: &ChatRequest| Ok("是".to_string()));
        let refine = FnClient(|req: &ChatRequest| {
            *seen.lock().unwrap() = req.messages[0].content.clone();
            Ok("好的".to_string())
        });
        let conv = Conversation::new("c", Language::Zh, "有龋齿吗？", img());
        run_round(&conv, &diag, &refine, &config()).unwrap();
        let prompt = seen.lock().unwrap().clone();
        assert!(prompt.starts_with("你是一名协助同事的资深口腔医生"));
        assert!(prompt.contains("有龋齿吗？"));
    }

    #[test]
    fn refiner_outage_degrades() {
        let conv = Conversation::new("c", Language::En, "q", img());
        let diag = FnClient(|_: &ChatRequest| Ok("no caries".to_string()));
        let down = FnClient(|_: &ChatRequest| Err(ClientError::Transport("down".into())));
        let out = run_round(&conv, &diag, &down, &config()).unwrap();
        assert!(out.degraded);
        assert_eq!(out.turns.last().unwrap().speaker, Speaker::Diagnostic);
        assert_eq!(out.diagnosis(), Some("no caries"));
        let mut not_user = out.clone();
        not_user.degraded = false;
        assert_eq!(run_round(&not_user, &diag, &down, &config()), Err(AgentError::NotUserTurn));
    }

    #[test]
    fn history_keeps_first_turn_and_newest() {
        let mut turns = vec![Turn { speaker: Speaker::User, text: "first question here".into(), image: Some(img()) }];
        for i in 0..10 {
            turns.push(Turn { speaker: Speaker::Refiner, text: format!("reply number {i}"), image: None });
        }
        let h = truncate_history(&turns, Language::En, 4 + 2 * 4);
        let lines: Vec<_> = h.lines().collect();
        assert_eq!(lines, vec!["User: first question here", "Assistant: reply number 8", "Assistant: reply number 9"]);
    }

    #[test]
    fn transcript_round_trip() {
        let diag = FnClient(|_: &ChatRequest| Ok("yes".to_string()));
        let conv = run_round(&Conversation::new("c", Language::En, "q", img()), &diag, &diag, &config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        crate::dataset::write_jsonl(&p, TRANSCRIPT_KIND, std::slice::from_ref(&conv)).unwrap();
        let back: Vec<Conversation> = crate::dataset::read_jsonl(&p, TRANSCRIPT_KIND).unwrap();
        assert_eq!(back, vec![conv]);
    }

    fn rating(c: usize, r: usize, scores: [u8; 7]) -> InteractionRating {
        InteractionRating { conversation_id: format!("c{c}"), rater: format!("r{r}"), scores }
    }

    #[test]
    fn rating_tables() {
        let fours: Vec<_> = (0..3).map(|r| rating(0, r, [4; 7])).collect();
        assert!(collect_ratings(&fours).unwrap().iter().all(|d| d.mean == 4.0));
        let mixed = vec![
            rating(0, 0, [3, 1, 1, 1, 1, 1, 1]),
            rating(0, 1, [4, 1, 1, 1, 1, 1, 1]),
            rating(0, 2, [5, 1, 1, 1, 1, 1, 1]),
        ];
        assert_eq!(collect_ratings(&mixed).unwrap()[0].mean, 4.0);
        let many: Vec<_> = (0..50).flat_map(|c| (0..3).map(move |r| rating(c, r, [5; 7]))).collect();
        assert!(collect_ratings(&many).unwrap().iter().all(|d| d.n == 150 && d.distribution[4] == 150));
        assert!(matches!(
            collect_ratings(&[rating(0, 0, [4, 4, 0, 4, 4, 4, 4])]),
            Err(AgentError::InvalidRating { .. })
        ));
        assert!(collect_ratings(&[rating(0, 0, [4, 4, 4, 4, 4, 4, 6])]).is_err());
    }
}
