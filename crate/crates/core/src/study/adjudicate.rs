use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::Prediction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Low,
    Medium,
    High,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    Easy,
    Medium,
    Hard,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotator_id: String,
    pub item_id: String,
    pub answer: Prediction,
    pub confidence: Confidence,
    pub complexity: Complexity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicatedItem {
    pub item_id: String,
    pub answer: crate::domain::Answer,
    pub confidence: Confidence,
    pub complexity: Complexity,
    pub supporters: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    /// Every annotation was low-confidence.
    NoVotes,
    Tie,
    Indeterminate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Adjudication {
    Kept(AdjudicatedItem),
    Removed { item_id: String, reason: RemovalReason },
}

impl Adjudication {
    pub fn kept(&self) -> Option<&AdjudicatedItem> {
        match self {
            Adjudication::Kept(k) => Some(k),
            Adjudication::Removed { .. } => None,
        }
    }
}

fn vote_key(p: &Prediction) -> Prediction {
    match p {
        Prediction::Answer(a) => Prediction::Answer(a.canonical()),
        Prediction::Indeterminate => Prediction::Indeterminate,
    }
}

/// Ground truth for one item from several expert annotations.
///
/// Low-confidence annotations are dropped and the rest vote. A tie for the
/// top count, an indeterminate winner, or an empty vote removes the item.
/// Otherwise the winner keeps the highest confidence and the hardest
/// complexity among the annotations supporting it.
///
/// # Panics
/// If `annotations` is empty or spans several items.
pub fn adjudicate(annotations: &[AnnotationRecord]) -> Adjudication {
    let item_id = annotations.first().expect("at least one annotation").item_id.clone();
    assert!(annotations.iter().all(|a| a.item_id == item_id), "annotations span several items");
    let mut tally: BTreeMap<Prediction, Vec<&AnnotationRecord>> = BTreeMap::new();
    for a in annotations.iter().filter(|a| a.confidence != Confidence::Low) {
        tally.entry(vote_key(&a.answer)).or_default().push(a);
    }
    let Some(top) = tally.values().map(Vec::len).max() else {
        return Adjudication::Removed { item_id, reason: RemovalReason::NoVotes };
    };
    let winners: Vec<_> = tally.iter().filter(|(_, v)| v.len() == top).collect();
    if winners.len() > 1 {
        return Adjudication::Removed { item_id, reason: RemovalReason::Tie };
    }
    let (answer, support) = winners[0];
    match answer {
        Prediction::Indeterminate => Adjudication::Removed { item_id, reason: RemovalReason::Indeterminate },
        Prediction::Answer(a) => Adjudication::Kept(AdjudicatedItem {
            item_id,
            answer: a.clone(),
            confidence: support.iter().map(|s| s.confidence).max().unwrap(),
            complexity: support.iter().map(|s| s.complexity).max().unwrap(),
            supporters: support.len(),
        }),
    }
}

/// Adjudicate every item in `annotations`, grouped by item id.
pub fn adjudicate_all(annotations: &[AnnotationRecord]) -> Vec<Adjudication> {
    let mut by_item: BTreeMap<&str, Vec<AnnotationRecord>> = BTreeMap::new();
    for a in annotations {
        by_item.entry(&a.item_id).or_default().push(a.clone());
    }
    by_item.values().map(|v| adjudicate(v)).collect()
}
