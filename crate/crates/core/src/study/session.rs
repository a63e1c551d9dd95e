use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::design::{assign_sessions, Arm, Dentist, EntryKind, SessionPlan, StudyDesign, StudyItem, Tier};
use super::{Complexity, Confidence, RatingRecord, StudyError, RATING_DIMENSIONS, SCHEMA_VERSION};
use crate::client::Clock;
use crate::domain::Prediction;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingForm {
    pub accuracy_range: (u8, u8),
    pub dimensions: Vec<String>,
    pub dimension_range: (u8, u8),
}

impl Default for RatingForm {
    fn default() -> Self {
        RatingForm {
            accuracy_range: (0, 3),
            dimensions: RATING_DIMENSIONS.iter().map(|s| s.to_string()).collect(),
            dimension_range: (1, 5),
        }
    }
}

/// What the client shows for one queue entry. Model fields are absent,
/// not blank, in arms that do not expose them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemPayload {
    pub schema_version: u32,
    pub session_id: String,
    pub seq: usize,
    pub arm: Arm,
    pub item_id: String,
    pub image_uri: String,
    pub question: String,
    pub label_space: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating_form: Option<RatingForm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextItem {
    Item(ItemPayload),
    Complete,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSubmission {
    pub answer: Prediction,
    pub confidence: Confidence,
    #[serde(default = "default_complexity")]
    pub complexity: Complexity,
}

fn default_complexity() -> Complexity {
    Complexity::Medium
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Submission {
    Answer(AnswerSubmission),
    Rating(RatingRecord),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub session_id: String,
    pub seq: usize,
    pub item_id: String,
    pub duration_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created { study_id: String, design: StudyDesign, items: Vec<StudyItem>, dentists: Vec<Dentist>, seed: u64 },
    Enrolled { dentist_id: String, token: String },
    Delivered { session_id: String, seq: usize, at_ms: u64 },
    Started { session_id: String, seq: usize, at_ms: u64 },
    WaitBegan { session_id: String, seq: usize, at_ms: u64 },
    WaitEnded { session_id: String, seq: usize, at_ms: u64 },
    Responded { session_id: String, seq: usize, submission: Submission, at_ms: u64, duration_ms: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Active {
    seq: usize,
    delivered_ms: u64,
    started_ms: Option<u64>,
    wait_open: Option<u64>,
    waited_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct StoredResponse {
    pub seq: usize,
    pub item_id: String,
    pub kind: EntryKind,
    pub submission: Submission,
    pub duration_ms: u64,
}

#[derive(Clone, Debug)]
pub(crate) struct SessionState {
    pub plan: SessionPlan,
    pub tier: Tier,
    cursor: usize,
    active: Option<Active>,
    pub responses: BTreeMap<usize, StoredResponse>,
}

impl SessionState {
    pub fn is_complete(&self) -> bool {
        self.cursor >= self.plan.queue.len() && self.active.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: String,
    pub dentist_id: String,
    pub arm: Arm,
    pub answered: usize,
    pub total: usize,
    pub complete: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyStatus {
    pub schema_version: u32,
    pub study_id: String,
    pub sessions: Vec<SessionStatus>,
}

/// One running study. All state changes go through events, which are
/// appended to the log (when one is configured) before being applied.
pub struct Study {
    pub study_id: String,
    pub design: StudyDesign,
    pub(crate) items: BTreeMap<String, StudyItem>,
    pub(crate) dentists: Vec<Dentist>,
    pub(crate) sessions: BTreeMap<String, SessionState>,
    tokens: BTreeMap<String, String>,
    clock: Arc<dyn Clock>,
    log: Option<(PathBuf, File)>,
}

fn now_ms(clock: &dyn Clock) -> u64 {
    clock.now().as_millis() as u64
}

impl Study {
    /// Plan items, assign sessions and (optionally) start an event log at `log_path`.
    pub fn create(
        study_id: &str,
        design: StudyDesign,
        pool: Vec<StudyItem>,
        dentists: Vec<Dentist>,
        seed: u64,
        clock: Arc<dyn Clock>,
        log_path: Option<&Path>,
    ) -> Result<Study, StudyError> {
        let created = Event::Created { study_id: study_id.to_string(), design, items: pool, dentists, seed };
        let mut study = Study::from_created(&created, clock)?;
        if let Some(p) = log_path {
            let file = File::create(p).map_err(|e| StudyError::Log(format!("{}: {e}", p.display())))?;
            study.log = Some((p.to_path_buf(), file));
            study.append(&created)?;
        }
        Ok(study)
    }

    fn from_created(e: &Event, clock: Arc<dyn Clock>) -> Result<Study, StudyError> {
        let Event::Created { study_id, design, items, dentists, seed } = e else {
            return Err(StudyError::Log("log does not start with a creation event".into()));
        };
        let mut ids: Vec<&str> = dentists.iter().map(|d| d.dentist_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(StudyError::Design("duplicate dentist ids".into()));
        }
        let sets = design.plan(items, *seed)?;
        let plans = assign_sessions(design, &sets, dentists, *seed)?;
        let tier: BTreeMap<&str, Tier> = dentists.iter().map(|d| (d.dentist_id.as_str(), d.tier)).collect();
        let sessions = plans
            .into_iter()
            .map(|p| {
                let t = tier[p.dentist_id.as_str()];
                (
                    p.session_id.clone(),
                    SessionState { plan: p, tier: t, cursor: 0, active: None, responses: BTreeMap::new() },
                )
            })
            .collect();
        Ok(Study {
            study_id: study_id.clone(),
            design: design.clone(),
            items: items.iter().map(|i| (i.item_id.clone(), i.clone())).collect(),
            dentists: dentists.clone(),
            sessions,
            tokens: BTreeMap::new(),
            clock,
            log: None,
        })
    }

    /// Rebuild a study by replaying its event log; later events append to the same file.
    pub fn open(log_path: &Path, clock: Arc<dyn Clock>) -> Result<Study, StudyError> {
        let err = |e: String| StudyError::Log(format!("{}: {e}", log_path.display()));
        let file = File::open(log_path).map_err(|e| err(e.to_string()))?;
        let mut study: Option<Study> = None;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let ev: Event = serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            match study.as_mut() {
                None => study = Some(Study::from_created(&ev, clock.clone())?),
                Some(s) => s.apply(&ev),
            }
        }
        let mut study = study.ok_or_else(|| err("empty log".into()))?;
        let file = OpenOptions::new().append(true).open(log_path).map_err(|e| err(e.to_string()))?;
        study.log = Some((log_path.to_path_buf(), file));
        Ok(study)
    }

    fn append(&mut self, e: &Event) -> Result<(), StudyError> {
        if let Some((path, file)) = self.log.as_mut() {
            let line = serde_json::to_string(e).expect("event serializes");
            writeln!(file, "{line}")
                .and_then(|_| file.flush())
                .map_err(|err| StudyError::Log(format!("{}: {err}", path.display())))?;
        }
        Ok(())
    }

    fn emit(&mut self, e: Event) -> Result<(), StudyError> {
        self.append(&e)?;
        self.apply(&e);
        Ok(())
    }

    fn apply(&mut self, e: &Event) {
        match e {
            Event::Created { .. } => {}
            Event::Enrolled { dentist_id, token } => {
                self.tokens.insert(token.clone(), dentist_id.clone());
            }
            Event::Delivered { session_id, seq, at_ms } => {
                let s = self.sessions.get_mut(session_id).expect("validated session");
                s.active =
                    Some(Active { seq: *seq, delivered_ms: *at_ms, started_ms: None, wait_open: None, waited_ms: 0 });
            }
            Event::Started { session_id, at_ms, .. } => {
                if let Some(a) = self.sessions.get_mut(session_id).and_then(|s| s.active.as_mut()) {
                    a.started_ms.get_or_insert(*at_ms);
                }
            }
            Event::WaitBegan { session_id, at_ms, .. } => {
                if let Some(a) = self.sessions.get_mut(session_id).and_then(|s| s.active.as_mut()) {
                    a.wait_open.get_or_insert(*at_ms);
                }
            }
            Event::WaitEnded { session_id, at_ms, .. } => {
                if let Some(a) = self.sessions.get_mut(session_id).and_then(|s| s.active.as_mut()) {
                    if let Some(b) = a.wait_open.take() {
                        a.waited_ms += at_ms.saturating_sub(b);
                    }
                }
            }
            Event::Responded { session_id, seq, submission, duration_ms, .. } => {
                let s = self.sessions.get_mut(session_id).expect("validated session");
                let entry = &s.plan.queue[*seq];
                s.responses.insert(
                    *seq,
                    StoredResponse {
                        seq: *seq,
                        item_id: entry.item_id.clone(),
                        kind: entry.kind,
                        submission: submission.clone(),
                        duration_ms: *duration_ms,
                    },
                );
                s.active = None;
                s.cursor = seq + 1;
            }
        }
    }

    /// Issue (or re-issue) the access token of a rostered dentist.
    pub fn enroll(&mut self, dentist_id: &str) -> Result<String, StudyError> {
        if !self.dentists.iter().any(|d| d.dentist_id == dentist_id) {
            return Err(StudyError::UnknownDentist(dentist_id.to_string()));
        }
        if let Some((t, _)) = self.tokens.iter().find(|(_, d)| *d == dentist_id) {
            return Ok(t.clone());
        }
        let token: String = {
            let mut rng = rand::rng();
            (0..32).map(|_| char::from_digit(rng.random_range(0..16), 16).unwrap()).collect()
        };
        self.emit(Event::Enrolled { dentist_id: dentist_id.to_string(), token: token.clone() })?;
        Ok(token)
    }

    pub fn authenticate(&self, token: &str) -> Result<String, StudyError> {
        self.tokens.get(token).cloned().ok_or(StudyError::Unauthorized)
    }

    fn session_of(&self, dentist_id: &str, session_id: &str) -> Result<&SessionState, StudyError> {
        self.sessions
            .get(session_id)
            .filter(|s| s.plan.dentist_id == dentist_id)
            .ok_or_else(|| StudyError::UnknownSession(session_id.to_string()))
    }

    fn payload(&self, s: &SessionState, seq: usize) -> ItemPayload {
        let entry = &s.plan.queue[seq];
        let item = &self.items[&entry.item_id];
        let arm = s.plan.arm;
        ItemPayload {
            schema_version: SCHEMA_VERSION,
            session_id: s.plan.session_id.clone(),
            seq,
            arm,
            item_id: item.item_id.clone(),
            image_uri: item.image_uri.clone(),
            question: item.question.clone(),
            label_space: item.label_space.clone(),
            model_answer: arm.shows_answer().then(|| item.model_answer.clone()),
            model_rationale: arm.shows_rationale().then(|| item.model_rationale.clone()),
            rating_form: (arm == Arm::Rating).then(RatingForm::default),
        }
    }

    /// The dentist's active item, or the next one in arm order.
    pub fn next_item(&mut self, dentist_id: &str) -> Result<NextItem, StudyError> {
        let mut mine: Vec<&SessionState> = self.sessions.values().filter(|s| s.plan.dentist_id == dentist_id).collect();
        if mine.is_empty() {
            return Err(StudyError::UnknownDentist(dentist_id.to_string()));
        }
        mine.sort_by_key(|s| s.plan.arm);
        let Some(s) = mine.into_iter().find(|s| !s.is_complete()) else { return Ok(NextItem::Complete) };
        if let Some(a) = &s.active {
            return Ok(NextItem::Item(self.payload(s, a.seq)));
        }
        let (sid, seq) = (s.plan.session_id.clone(), s.cursor);
        let at_ms = now_ms(self.clock.as_ref());
        self.emit(Event::Delivered { session_id: sid.clone(), seq, at_ms })?;
        Ok(NextItem::Item(self.payload(&self.sessions[&sid], seq)))
    }

    fn check_active(&self, dentist_id: &str, session_id: &str, seq: usize) -> Result<(), StudyError> {
        let s = self.session_of(dentist_id, session_id)?;
        match &s.active {
            Some(a) if a.seq == seq => Ok(()),
            other => Err(StudyError::NotActive {
                session_id: session_id.to_string(),
                active: other.as_ref().map(|a| a.seq),
                got: seq,
            }),
        }
    }

    /// Client acknowledgment that the item is on screen; timing starts here.
    pub fn start(&mut self, dentist_id: &str, session_id: &str, seq: usize) -> Result<(), StudyError> {
        self.check_active(dentist_id, session_id, seq)?;
        let at_ms = now_ms(self.clock.as_ref());
        self.emit(Event::Started { session_id: session_id.to_string(), seq, at_ms })
    }

    pub fn begin_model_wait(&mut self, dentist_id: &str, session_id: &str, seq: usize) -> Result<(), StudyError> {
        self.check_active(dentist_id, session_id, seq)?;
        let at_ms = now_ms(self.clock.as_ref());
        self.emit(Event::WaitBegan { session_id: session_id.to_string(), seq, at_ms })
    }

    pub fn end_model_wait(&mut self, dentist_id: &str, session_id: &str, seq: usize) -> Result<(), StudyError> {
        self.check_active(dentist_id, session_id, seq)?;
        let at_ms = now_ms(self.clock.as_ref());
        self.emit(Event::WaitEnded { session_id: session_id.to_string(), seq, at_ms })
    }

    /// Store the answer or rating for the active item and advance the queue.
    /// Resubmitting an already stored item returns the original ack.
    pub fn submit(
        &mut self,
        dentist_id: &str,
        session_id: &str,
        seq: usize,
        submission: Submission,
    ) -> Result<Ack, StudyError> {
        let s = self.session_of(dentist_id, session_id)?;
        if let Some(r) = s.responses.get(&seq) {
            return Ok(Ack {
                session_id: session_id.to_string(),
                seq,
                item_id: r.item_id.clone(),
                duration_ms: r.duration_ms,
            });
        }
        self.check_active(dentist_id, session_id, seq)?;
        let item = &self.items[&s.plan.queue[seq].item_id];
        match (&submission, s.plan.arm) {
            (Submission::Rating(r), Arm::Rating) => {
                r.validate()?;
                if r.item_id != item.item_id {
                    return Err(StudyError::InvalidSubmission(format!(
                        "rating is for {}, active item is {}",
                        r.item_id, item.item_id
                    )));
                }
            }
            (Submission::Answer(a), arm) if arm != Arm::Rating => {
                if let Prediction::Answer(ans) = &a.answer {
                    if let Some(l) = ans.labels().find(|l| !item.label_space.iter().any(|x| x == l)) {
                        return Err(StudyError::InvalidSubmission(format!(
                            "{l:?} is not an option for {}",
                            item.item_id
                        )));
                    }
                }
            }
            (_, arm) => {
                return Err(StudyError::InvalidSubmission(format!("wrong submission kind for arm {}", arm.code())));
            }
        }
        let active = s.active.clone().expect("checked active");
        let stop = now_ms(self.clock.as_ref());
        let start = active.started_ms.unwrap_or(active.delivered_ms);
        let open_wait = active.wait_open.map_or(0, |b| stop.saturating_sub(b));
        let duration_ms = stop.saturating_sub(start).saturating_sub(active.waited_ms + open_wait);
        let item_id = item.item_id.clone();
        self.emit(Event::Responded { session_id: session_id.to_string(), seq, submission, at_ms: stop, duration_ms })?;
        Ok(Ack { session_id: session_id.to_string(), seq, item_id, duration_ms })
    }

    pub fn status(&self) -> StudyStatus {
        StudyStatus {
            schema_version: SCHEMA_VERSION,
            study_id: self.study_id.clone(),
            sessions: self
                .sessions
                .values()
                .map(|s| SessionStatus {
                    session_id: s.plan.session_id.clone(),
                    dentist_id: s.plan.dentist_id.clone(),
                    arm: s.plan.arm,
                    answered: s.responses.len(),
                    total: s.plan.queue.len(),
                    complete: s.is_complete(),
                })
                .collect(),
        }
    }

    pub fn open_sessions(&self) -> Vec<String> {
        self.sessions.values().filter(|s| !s.is_complete()).map(|s| s.plan.session_id.clone()).collect()
    }

    pub fn session_plans(&self) -> impl Iterator<Item = &SessionPlan> {
        self.sessions.values().map(|s| &s.plan)
    }

    pub fn item(&self, item_id: &str) -> Option<&StudyItem> {
        self.items.get(item_id)
    }
}
