//! Reader study: item selection, session assignment, timed sessions,
//! adjudication and export, plus the HTTP service the study client talks to.

mod adjudicate;
mod design;
mod export;
pub mod http;
mod session;

use serde::{Deserialize, Serialize};

pub use adjudicate::{
    adjudicate, adjudicate_all, AdjudicatedItem, Adjudication, AnnotationRecord, Complexity, Confidence, RemovalReason,
};
pub use design::{
    assign_sessions, Arm, Dentist, EntryKind, ItemSets, QueueEntry, SessionPlan, StudyDesign, StudyItem, Tier,
};
pub use export::{ArmSummary, AssistedGain, RatingHistogram, StudyExport, TimingSummary};
pub use session::{
    Ack, AnswerSubmission, Event, ItemPayload, NextItem, RatingForm, SessionStatus, Study, StudyStatus, Submission,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StudyError {
    #[error("invalid study design: {0}")]
    Design(String),
    #[error("unknown dentist {0}")]
    UnknownDentist(String),
    #[error("missing or invalid dentist token")]
    Unauthorized,
    #[error("unknown study {0}")]
    UnknownStudy(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("item {got} is not the active item of session {session_id} (active: {active:?})")]
    NotActive { session_id: String, active: Option<usize>, got: usize },
    #[error("invalid submission: {0}")]
    InvalidSubmission(String),
    #[error("sessions still open: {0:?}")]
    OpenSessions(Vec<String>),
    #[error("event log: {0}")]
    Log(String),
}

pub const RATING_DIMENSIONS: [&str; 5] = ["correctness", "completeness", "fairness", "faithfulness", "acceptability"];

/// A dentist's rating of one model response. Accuracy is 0 to 3 (0 means
/// the question cannot be answered from the image); the rest are 1 to 5.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub item_id: String,
    pub accuracy: u8,
    pub correctness: u8,
    pub completeness: u8,
    pub fairness: u8,
    pub faithfulness: u8,
    pub acceptability: u8,
}

impl RatingRecord {
    pub fn dimensions(&self) -> [(&'static str, u8); 5] {
        [
            ("correctness", self.correctness),
            ("completeness", self.completeness),
            ("fairness", self.fairness),
            ("faithfulness", self.faithfulness),
            ("acceptability", self.acceptability),
        ]
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        if self.accuracy > 3 {
            return Err(StudyError::InvalidSubmission(format!("accuracy {} outside 0..=3", self.accuracy)));
        }
        for (name, v) in self.dimensions() {
            if !(1..=5).contains(&v) {
                return Err(StudyError::InvalidSubmission(format!("{name} {v} outside 1..=5")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rating_scales() {
        let ok = RatingRecord {
            item_id: "i".into(),
            accuracy: 0,
            correctness: 1,
            completeness: 5,
            fairness: 3,
            faithfulness: 2,
            acceptability: 4,
        };
        assert!(ok.validate().is_ok());
        assert!(RatingRecord { accuracy: 4, ..ok.clone() }.validate().is_err());
        assert!(RatingRecord { fairness: 0, ..ok.clone() }.validate().is_err());
        assert!(RatingRecord { acceptability: 6, ..ok }.validate().is_err());
    }
}
