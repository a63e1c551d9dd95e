use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;

use super::VQARecord;
use crate::seed::keyed_rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Subsample {
    pub records: Vec<VQARecord>,
    /// Tasks that ended up with no records at this fraction.
    pub empty_tasks: Vec<String>,
}

/// Keep `round(n * fraction)` lineages per task, where `n` counts the task's
/// lineages. All language versions of a kept lineage are kept together.
///
/// The lineage order for a task depends only on `(seed, task_id)`, and each
/// fraction takes a prefix of it, so a smaller fraction always yields a subset
/// of a larger one under the same seed. Input order is preserved.
pub fn subsample(records: &[VQARecord], fraction: f64, seed: u64) -> Result<Subsample, String> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(format!("fraction must lie in (0, 1], got {fraction}"));
    }
    let mut lineages: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in records {
        let list = lineages.entry(r.task_id.as_str()).or_default();
        if !list.contains(&r.lineage.as_str()) {
            list.push(r.lineage.as_str());
        }
    }
    let mut keep: HashSet<&str> = HashSet::new();
    let mut empty_tasks = Vec::new();
    for (task_id, mut list) in lineages {
        list.sort_unstable();
        list.shuffle(&mut keyed_rng(seed, &["subsample", task_id]));
        let take = (list.len() as f64 * fraction).round() as usize;
        if take == 0 {
            empty_tasks.push(task_id.to_string());
        }
        keep.extend(&list[..take]);
    }
    let records = records.iter().filter(|r| keep.contains(r.lineage.as_str())).cloned().collect();
    Ok(Subsample { records, empty_tasks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Provenance;
    use crate::domain::{Answer, Language};
    use proptest::prelude::*;

    fn corpus(per_task: &[(&str, usize)]) -> Vec<VQARecord> {
        let mut out = Vec::new();
        for (task, n) in per_task {
            for i in 0..*n {
                out.push(VQARecord {
                    record_id: format!("{task}-{i}:en"),
                    lineage: format!("{task}-{i}"),
                    image_id: format!("img{i}"),
                    task_id: task.to_string(),
                    language: Language::En,
                    question: "q".into(),
                    answer: Answer::single("no"),
                    rationale: None,
                    locations: None,
                    provenance: Provenance::Auto,
                });
            }
        }
        out
    }

    fn count(s: &Subsample, task: &str) -> usize {
        s.records.iter().filter(|r| r.task_id == task).count()
    }

    #[test]
    fn identity_at_one() {
        let c = corpus(&[("a", 7), ("b", 3)]);
        assert_eq!(subsample(&c, 1.0, 9).unwrap().records, c);
    }

    #[test]
    fn half_of_hundred_per_task() {
        let c = corpus(&[("a", 100), ("b", 100)]);
        let s = subsample(&c, 0.5, 1).unwrap();
        assert_eq!(count(&s, "a"), 50);
        assert_eq!(count(&s, "b"), 50);
    }

    #[test]
    fn rejects_bad_fractions() {
        let c = corpus(&[("a", 1)]);
        for f in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(subsample(&c, f, 0).is_err());
        }
    }

    #[test]
    fn reports_empty_tasks() {
        let c = corpus(&[("a", 100), ("tiny", 2)]);
        let s = subsample(&c, 0.1, 0).unwrap();
        assert_eq!(s.empty_tasks, vec!["tiny".to_string()]);
    }

    #[test]
    fn language_versions_stay_together() {
        let mut c = corpus(&[("a", 40)]);
        let zh: Vec<_> = c
            .iter()
            .map(|r| VQARecord { record_id: r.record_id.replace(":en", ":zh"), language: Language::Zh, ..r.clone() })
            .collect();
        c.extend(zh);
        let s = subsample(&c, 0.25, 5).unwrap();
        assert_eq!(s.records.len(), 20);
        let en = s.records.iter().filter(|r| r.language == Language::En).count();
        assert_eq!(en, 10);
    }

    proptest! {
        #[test]
        fn nested_under_shared_seed(seed in any::<u64>(), n in 1usize..120, lo in 0.01f64..1.0, hi in 0.01f64..1.0) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let c = corpus(&[("a", n), ("b", n / 2 + 1)]);
            let small = subsample(&c, lo, seed).unwrap();
            let large = subsample(&c, hi, seed).unwrap();
            let ids: HashSet<_> = large.records.iter().map(|r| &r.record_id).collect();
            prop_assert!(small.records.iter().all(|r| ids.contains(&r.record_id)));
        }
    }
}
