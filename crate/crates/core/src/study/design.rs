use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::StudyError;
use crate::domain::{Answer, Language};
use crate::seed::keyed_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    /// Independent diagnosis.
    #[serde(rename = "EXP1")]
    Independent,
    /// Model answer shown.
    #[serde(rename = "EXP2")]
    AnswerAssisted,
    /// Model answer and rationale shown.
    #[serde(rename = "EXP3")]
    RationaleAssisted,
    /// Rating the model's full response.
    #[serde(rename = "EXP4")]
    Rating,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Independent, Arm::AnswerAssisted, Arm::RationaleAssisted, Arm::Rating];

    pub fn code(self) -> &'static str {
        match self {
            Arm::Independent => "EXP1",
            Arm::AnswerAssisted => "EXP2",
            Arm::RationaleAssisted => "EXP3",
            Arm::Rating => "EXP4",
        }
    }

    pub fn shows_answer(self) -> bool {
        self != Arm::Independent
    }

    pub fn shows_rationale(self) -> bool {
        matches!(self, Arm::RationaleAssisted | Arm::Rating)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    /// 1 to 3 years of practice.
    Junior,
    /// More than 3 years.
    Senior,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dentist {
    pub dentist_id: String,
    pub tier: Tier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyDesign {
    pub schema_version: u32,
    pub items_per_task: usize,
    pub gv_subsets: usize,
    pub gv_subset_size: usize,
    /// Share of each answering session repeated later in the queue.
    pub repeat_fraction: f64,
    pub arms: Vec<Arm>,
}

impl Default for StudyDesign {
    fn default() -> Self {
        StudyDesign {
            schema_version: 1,
            items_per_task: 92,
            gv_subsets: 4,
            gv_subset_size: 72,
            repeat_fraction: 0.1,
            arms: Arm::ALL.to_vec(),
        }
    }
}

impl StudyDesign {
    pub fn validate(&self) -> Result<(), StudyError> {
        let bad = |m: &str| Err(StudyError::Design(m.to_string()));
        if self.items_per_task == 0 {
            return bad("items_per_task must be positive");
        }
        if self.gv_subsets > 0 && self.gv_subset_size == 0 {
            return bad("gv_subset_size must be positive");
        }
        if !(0.0..1.0).contains(&self.repeat_fraction) {
            return bad("repeat_fraction must lie in [0, 1)");
        }
        if self.arms.is_empty() {
            return bad("at least one arm is required");
        }
        let mut arms = self.arms.clone();
        arms.sort();
        arms.dedup();
        if arms.len() != self.arms.len() {
            return bad("arms repeat");
        }
        Ok(())
    }

    pub fn idp_total(&self, task_count: usize) -> usize {
        self.items_per_task * task_count
    }

    /// Draw the independent set and the group-validation subsets from `pool`.
    ///
    /// Per task, `items_per_task` items go to the independent set; subsets
    /// are filled from the remainder, cycling over tasks. Both are disjoint.
    pub fn plan(&self, pool: &[StudyItem], seed: u64) -> Result<ItemSets, StudyError> {
        self.validate()?;
        let mut by_task: BTreeMap<&str, Vec<&StudyItem>> = BTreeMap::new();
        for it in pool {
            by_task.entry(&it.task_id).or_default().push(it);
        }
        let mut idp = Vec::new();
        let mut rest: Vec<Vec<&StudyItem>> = Vec::new();
        for (task, mut items) in by_task {
            if items.len() < self.items_per_task {
                return Err(StudyError::Design(format!(
                    "task {task} has {} items, design needs {}",
                    items.len(),
                    self.items_per_task
                )));
            }
            items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
            items.shuffle(&mut keyed_rng(seed, &["study-plan", task]));
            let tail = items.split_off(self.items_per_task);
            idp.extend(items.into_iter().cloned());
            rest.push(tail);
        }
        let need = self.gv_subsets * self.gv_subset_size;
        let mut spare = Vec::with_capacity(need);
        let mut round = 0;
        while spare.len() < need && rest.iter().any(|r| round < r.len()) {
            for r in &rest {
                if spare.len() < need {
                    if let Some(it) = r.get(round) {
                        spare.push((*it).clone());
                    }
                }
            }
            round += 1;
        }
        if spare.len() < need {
            return Err(StudyError::Design(format!(
                "group-validation subsets need {need} items beyond the independent set, pool has {}",
                spare.len()
            )));
        }
        let gv = spare.chunks(self.gv_subset_size.max(1)).take(self.gv_subsets).map(<[_]>::to_vec).collect();
        Ok(ItemSets { idp, gv })
    }
}

/// One study item with the model output shown in assisted arms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyItem {
    pub item_id: String,
    pub task_id: String,
    pub language: Language,
    pub image_uri: String,
    pub question: String,
    pub label_space: Vec<String>,
    pub gold: Answer,
    pub model_answer: String,
    pub model_rationale: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemSets {
    pub idp: Vec<StudyItem>,
    pub gv: Vec<Vec<StudyItem>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Independent,
    /// From group-validation subset `n`.
    GroupValidation(usize),
    /// Second showing of an item earlier in the same queue.
    Repeat,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub seq: usize,
    pub item_id: String,
    pub kind: EntryKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub session_id: String,
    pub dentist_id: String,
    pub arm: Arm,
    /// Group-validation group, if the dentist belongs to one.
    pub group: Option<usize>,
    pub queue: Vec<QueueEntry>,
}

/// Split the independent set near-evenly over dentists in every arm, hand
/// each group-validation subset whole to one dentist group, and duplicate a
/// share of each answering queue for self-consistency.
///
/// Dentists are dealt into `gv.len()` groups round-robin after a seeded
/// shuffle; group `g` answers subset `g` in the independent arm.
pub fn assign_sessions(
    design: &StudyDesign,
    sets: &ItemSets,
    dentists: &[Dentist],
    seed: u64,
) -> Result<Vec<SessionPlan>, StudyError> {
    design.validate()?;
    if dentists.is_empty() {
        return Err(StudyError::Design("no dentists".into()));
    }
    let groups = sets.gv.len();
    if dentists.len() < groups {
        return Err(StudyError::Design(format!("{} dentists cannot cover {groups} validation groups", dentists.len())));
    }
    let mut roster: Vec<&Dentist> = dentists.iter().collect();
    roster.sort_by(|a, b| a.dentist_id.cmp(&b.dentist_id));
    roster.shuffle(&mut keyed_rng(seed, &["roster"]));
    let group_of: BTreeMap<&str, usize> = roster
        .iter()
        .enumerate()
        .filter(|_| groups > 0)
        .map(|(i, d)| (d.dentist_id.as_str(), i % groups.max(1)))
        .collect();

    let n = roster.len();
    let mut plans = Vec::new();
    for &arm in &design.arms {
        let mut ids: Vec<&str> = sets.idp.iter().map(|i| i.item_id.as_str()).collect();
        ids.shuffle(&mut keyed_rng(seed, &["arm", arm.code()]));
        let (base, extra) = (ids.len() / n, ids.len() % n);
        let mut offset = 0;
        for (k, d) in roster.iter().enumerate() {
            let take = base + usize::from(k < extra);
            let mut entries: Vec<(String, EntryKind)> =
                ids[offset..offset + take].iter().map(|id| (id.to_string(), EntryKind::Independent)).collect();
            offset += take;
            let group = group_of.get(d.dentist_id.as_str()).copied();
            if arm == Arm::Independent {
                if let Some(g) = group {
                    entries.extend(sets.gv[g].iter().map(|i| (i.item_id.clone(), EntryKind::GroupValidation(g))));
                }
            }
            let mut rng = keyed_rng(seed, &["queue", arm.code(), &d.dentist_id]);
            entries.shuffle(&mut rng);
            if arm != Arm::Rating {
                add_repeats(&mut entries, design.repeat_fraction, &mut rng);
            }
            plans.push(SessionPlan {
                session_id: format!("{}-{}", d.dentist_id, arm.code()),
                dentist_id: d.dentist_id.clone(),
                arm,
                group,
                queue: entries
                    .into_iter()
                    .enumerate()
                    .map(|(seq, (item_id, kind))| QueueEntry { seq, item_id, kind })
                    .collect(),
            });
        }
    }
    plans.sort_by(|a, b| (&a.dentist_id, a.arm).cmp(&(&b.dentist_id, b.arm)));
    Ok(plans)
}

/// Duplicate `round(fraction * len)` entries, each re-inserted at a random
/// position after its first showing.
fn add_repeats(entries: &mut Vec<(String, EntryKind)>, fraction: f64, rng: &mut impl Rng) {
    let k = (entries.len() as f64 * fraction).round() as usize;
    if k == 0 {
        return;
    }
    let mut picks: Vec<usize> = (0..entries.len()).collect();
    picks.shuffle(rng);
    let mut chosen: Vec<String> = picks[..k].iter().map(|&i| entries[i].0.clone()).collect();
    chosen.sort();
    for id in chosen {
        let first = entries.iter().position(|(e, _)| *e == id).expect("picked from queue");
        let at = rng.random_range(first + 1..=entries.len());
        entries.insert(at, (id, EntryKind::Repeat));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    pub(crate) fn pool(tasks: usize, per_task: usize) -> Vec<StudyItem> {
        (0..tasks)
            .flat_map(|t| {
                (0..per_task).map(move |i| StudyItem {
                    item_id: format!("t{t:02}-{i:03}"),
                    task_id: format!("t{t:02}"),
                    language: Language::En,
                    image_uri: format!("img/{t}/{i}.png"),
                    question: "q".into(),
                    label_space: vec!["no".into(), "yes".into()],
                    gold: Answer::single("yes"),
                    model_answer: "yes".into(),
                    model_rationale: "because".into(),
                })
            })
            .collect()
    }

    fn dentists(n: usize) -> Vec<Dentist> {
        (0..n)
            .map(|i| Dentist {
                dentist_id: format!("d{i:02}"),
                tier: if i % 2 == 0 { Tier::Junior } else { Tier::Senior },
            })
            .collect()
    }

    #[test]
    fn default_design_counts() {
        let d = StudyDesign::default();
        assert_eq!(d.idp_total(36), 3312);
        let sets = d.plan(&pool(36, 100), 7).unwrap();
        assert_eq!(sets.idp.len(), 3312);
        assert_eq!(sets.gv.len(), 4);
        assert!(sets.gv.iter().all(|s| s.len() == 72));
        let idp: BTreeSet<_> = sets.idp.iter().map(|i| &i.item_id).collect();
        assert!(sets.gv.iter().flatten().all(|i| !idp.contains(&i.item_id)));
        assert!(d.plan(&pool(36, 91), 7).is_err());
    }

    #[test]
    fn even_partition_per_arm() {
        let d = StudyDesign::default();
        let sets = d.plan(&pool(36, 100), 1).unwrap();
        let plans = assign_sessions(&d, &sets, &dentists(24), 1).unwrap();
        assert_eq!(plans.len(), 96);
        for arm in Arm::ALL {
            let mut seen = BTreeSet::new();
            for p in plans.iter().filter(|p| p.arm == arm) {
                let idp: Vec<_> = p.queue.iter().filter(|e| e.kind == EntryKind::Independent).collect();
                assert_eq!(idp.len(), 138);
                for e in idp {
                    assert!(seen.insert(e.item_id.clone()), "item in two sessions");
                }
            }
            assert_eq!(seen.len(), 3312);
        }
    }

    #[test]
    fn near_even_with_remainder() {
        let d = StudyDesign { gv_subsets: 0, ..StudyDesign::default() };
        let sets = d.plan(&pool(36, 92), 1).unwrap();
        let plans = assign_sessions(&d, &sets, &dentists(25), 1).unwrap();
        let sizes: BTreeSet<usize> = plans
            .iter()
            .filter(|p| p.arm == Arm::Independent)
            .map(|p| p.queue.iter().filter(|e| e.kind == EntryKind::Independent).count())
            .collect();
        assert_eq!(sizes, [132, 133].into_iter().collect());
    }

    #[test]
    fn single_dentist_gets_everything() {
        let d = StudyDesign { gv_subsets: 0, ..StudyDesign::default() };
        let sets = d.plan(&pool(3, 92), 1).unwrap();
        let plans = assign_sessions(&d, &sets, &dentists(1), 1).unwrap();
        assert_eq!(plans.len(), 4);
        for p in &plans {
            assert_eq!(p.queue.iter().filter(|e| e.kind == EntryKind::Independent).count(), 276);
        }
        let with_groups = StudyDesign::default();
        let sets = with_groups.plan(&pool(36, 100), 1).unwrap();
        assert!(assign_sessions(&with_groups, &sets, &dentists(3), 1).is_err());
    }

    #[test]
    fn groups_and_repeats() {
        let d = StudyDesign::default();
        let sets = d.plan(&pool(36, 100), 4).unwrap();
        let plans = assign_sessions(&d, &sets, &dentists(8), 4).unwrap();
        for p in plans.iter().filter(|p| p.arm == Arm::Independent) {
            let g = p.group.unwrap();
            let gv: BTreeSet<_> =
                p.queue.iter().filter(|e| e.kind == EntryKind::GroupValidation(g)).map(|e| &e.item_id).collect();
            let want: BTreeSet<_> = sets.gv[g].iter().map(|i| &i.item_id).collect();
            assert_eq!(gv, want);
            let originals = p.queue.iter().filter(|e| e.kind != EntryKind::Repeat).count();
            let repeats: Vec<_> = p.queue.iter().filter(|e| e.kind == EntryKind::Repeat).collect();
            assert_eq!(repeats.len(), (originals as f64 * 0.1).round() as usize);
            for r in repeats {
                let first = p.queue.iter().position(|e| e.item_id == r.item_id).unwrap();
                assert!(first < r.seq);
            }
        }
        assert!(plans
            .iter()
            .filter(|p| p.arm == Arm::Rating)
            .all(|p| p.queue.iter().all(|e| e.kind != EntryKind::Repeat)));
        let groups: BTreeSet<_> = plans.iter().filter_map(|p| p.group).collect();
        assert_eq!(groups.len(), 4);
    }

    #[test]
    fn deterministic_under_seed() {
        let d = StudyDesign::default();
        let sets = d.plan(&pool(36, 100), 9).unwrap();
        assert_eq!(sets, d.plan(&pool(36, 100), 9).unwrap());
        let a = assign_sessions(&d, &sets, &dentists(6), 9).unwrap();
        let b = assign_sessions(&d, &sets, &dentists(6), 9).unwrap();
        assert_eq!(a, b);
        let c = assign_sessions(&d, &sets, &dentists(6), 10).unwrap();
        assert_ne!(a, c);
    }
}
