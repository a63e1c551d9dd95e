use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A task answer in surface form, in the language of the record it belongs to.
///
/// Multi-class tasks carry exactly one label; multi-label tasks carry a
/// duplicate-free list.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Single(String),
    Multi(Vec<String>),
}

impl Answer {
    pub fn single(label: impl Into<String>) -> Self {
        Answer::Single(label.into())
    }

    pub fn multi<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Answer::Multi(labels.into_iter().map(Into::into).collect())
    }

    /// Labels as a slice-like iterator, one element for `Single`.
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        let (one, many): (Option<&str>, &[String]) = match self {
            Answer::Single(s) => (Some(s.as_str()), &[]),
            Answer::Multi(v) => (None, v.as_slice()),
        };
        one.into_iter().chain(many.iter().map(String::as_str))
    }

    pub fn label_set(&self) -> BTreeSet<&str> {
        self.labels().collect()
    }

    /// Order-insensitive equality; two multi-label answers with the same
    /// labels in a different order are the same diagnosis.
    pub fn same_as(&self, other: &Answer) -> bool {
        match (self, other) {
            (Answer::Single(a), Answer::Single(b)) => a == b,
            _ => self.label_set() == other.label_set(),
        }
    }

    /// Canonical form used as a voting key: multi-label lists sorted and deduplicated.
    pub fn canonical(&self) -> Answer {
        match self {
            Answer::Single(s) => Answer::Single(s.clone()),
            Answer::Multi(v) => {
                let set: BTreeSet<&String> = v.iter().collect();
                Answer::Multi(set.into_iter().cloned().collect())
            }
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Single(s) => f.write_str(s),
            Answer::Multi(v) => f.write_str(&v.join(", ")),
        }
    }
}

/// A parsed model or reader prediction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Answer(Answer),
    Indeterminate,
}

impl Prediction {
    pub fn answer(&self) -> Option<&Answer> {
        match self {
            Prediction::Answer(a) => Some(a),
            Prediction::Indeterminate => None,
        }
    }

    pub fn is_indeterminate(&self) -> bool {
        matches!(self, Prediction::Indeterminate)
    }

    /// True iff the prediction is an answer equal to `gold`.
    pub fn matches(&self, gold: &Answer) -> bool {
        self.answer().is_some_and(|a| a.same_as(gold))
    }
}

impl From<Answer> for Prediction {
    fn from(a: Answer) -> Self {
        Prediction::Answer(a)
    }
}
