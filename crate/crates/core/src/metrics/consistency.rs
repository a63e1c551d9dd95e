use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::domain::Prediction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaterResponse {
    pub rater: String,
    pub item: String,
    pub answer: Prediction,
}

/// How agreement is measured. Group modes expect the responses of one
/// rater group answering a shared item subset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyMode {
    /// Per rater, fraction of repeated items answered identically every time; mean over raters.
    #[serde(rename = "self")]
    SelfAgreement,
    /// Mean over rater pairs of their exact-agreement rate on shared items.
    #[default]
    GroupPairwise,
    /// Mean over shared items of the fraction of raters giving the modal answer.
    GroupMajority,
}

fn key(p: &Prediction) -> Prediction {
    match p {
        Prediction::Answer(a) => Prediction::Answer(a.canonical()),
        Prediction::Indeterminate => Prediction::Indeterminate,
    }
}

pub fn consistency(responses: &[RaterResponse], mode: ConsistencyMode) -> Result<f64, MetricError> {
    // rater -> item -> answers in submission order
    let mut by_rater: BTreeMap<&str, BTreeMap<&str, Vec<Prediction>>> = BTreeMap::new();
    for r in responses {
        by_rater.entry(&r.rater).or_default().entry(&r.item).or_default().push(key(&r.answer));
    }
    match mode {
        ConsistencyMode::SelfAgreement => {
            let mut per_rater = Vec::new();
            for items in by_rater.values() {
                let repeated: Vec<_> = items.values().filter(|a| a.len() > 1).collect();
                if repeated.is_empty() {
                    continue;
                }
                let same = repeated.iter().filter(|a| a.iter().all(|x| *x == a[0])).count();
                per_rater.push(same as f64 / repeated.len() as f64);
            }
            if per_rater.is_empty() {
                return Err(MetricError::NoRepeats);
            }
            Ok(per_rater.iter().sum::<f64>() / per_rater.len() as f64)
        }
        ConsistencyMode::GroupPairwise => {
            let raters: Vec<_> = by_rater.iter().collect();
            let mut rates = Vec::new();
            for (i, (_, a)) in raters.iter().enumerate() {
                for (_, b) in &raters[i + 1..] {
                    let shared: Vec<_> = a.keys().filter(|k| b.contains_key(*k)).collect();
                    if shared.is_empty() {
                        continue;
                    }
                    let agree = shared.iter().filter(|k| a[**k][0] == b[**k][0]).count();
                    rates.push(agree as f64 / shared.len() as f64);
                }
            }
            if rates.is_empty() {
                return Err(MetricError::NoOverlap);
            }
            Ok(rates.iter().sum::<f64>() / rates.len() as f64)
        }
        ConsistencyMode::GroupMajority => {
            let items: BTreeSet<&str> = by_rater.values().flat_map(|m| m.keys().copied()).collect();
            let mut rates = Vec::new();
            for item in items {
                let answers: Vec<&Prediction> = by_rater.values().filter_map(|m| m.get(item)).map(|v| &v[0]).collect();
                if answers.len() < 2 {
                    continue;
                }
                let top = answers.iter().map(|a| answers.iter().filter(|b| *b == a).count()).max().unwrap_or(0);
                rates.push(top as f64 / answers.len() as f64);
            }
            if rates.is_empty() {
                return Err(MetricError::NoOverlap);
            }
            Ok(rates.iter().sum::<f64>() / rates.len() as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Answer;

    fn r(rater: &str, item: &str, ans: &str) -> RaterResponse {
        RaterResponse { rater: rater.into(), item: item.into(), answer: Answer::single(ans).into() }
    }

    #[test]
    fn self_agreement() {
        let rs = vec![r("a", "1", "yes"), r("a", "2", "no"), r("a", "1", "yes"), r("a", "2", "no")];
        assert_eq!(consistency(&rs, ConsistencyMode::SelfAgreement).unwrap(), 1.0);
        let rs = vec![r("a", "1", "yes"), r("a", "1", "no"), r("b", "1", "yes"), r("b", "1", "yes")];
        assert_eq!(consistency(&rs, ConsistencyMode::SelfAgreement).unwrap(), 0.5);
        assert_eq!(consistency(&[r("a", "1", "x")], ConsistencyMode::SelfAgreement), Err(MetricError::NoRepeats));
    }

    #[test]
    fn group_pairwise() {
        let mut rs = Vec::new();
        for (i, (x, y)) in [("yes", "yes"), ("no", "no"), ("yes", "yes"), ("yes", "no")].iter().enumerate() {
            rs.push(r("a", &i.to_string(), x));
            rs.push(r("b", &i.to_string(), y));
        }
        assert_eq!(consistency(&rs, ConsistencyMode::GroupPairwise).unwrap(), 0.75);
        assert_eq!(
            consistency(&[r("a", "1", "x"), r("b", "2", "x")], ConsistencyMode::GroupPairwise),
            Err(MetricError::NoOverlap)
        );
    }

    #[test]
    fn identical_raters_agree_fully() {
        for k in 2..7 {
            let rs: Vec<_> = (0..k)
                .flat_map(|j| {
                    (0..5).map(move |i| r(&format!("d{j}"), &i.to_string(), if i % 2 == 0 { "yes" } else { "no" }))
                })
                .collect();
            assert_eq!(consistency(&rs, ConsistencyMode::GroupPairwise).unwrap(), 1.0);
            assert_eq!(consistency(&rs, ConsistencyMode::GroupMajority).unwrap(), 1.0);
        }
    }

    #[test]
    fn group_majority_counts_modal_share() {
        let rs = vec![r("a", "1", "yes"), r("b", "1", "yes"), r("c", "1", "no")];
        assert!((consistency(&rs, ConsistencyMode::GroupMajority).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((consistency(&rs, ConsistencyMode::GroupPairwise).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }
}
