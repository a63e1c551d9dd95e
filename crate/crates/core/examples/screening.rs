//! Patient-level screening: majority versus matching vote on synthetic
//! cohorts with increasing image-level error.

use dentvqa::aggregation::{matching_score, voted_list, ScreeningMode, Strategy, TieRule};
use dentvqa::domain::TaskRegistry;
use dentvqa::synthetic;

fn main() {
    let registry = TaskRegistry::default();
    for mode in [ScreeningMode::Home, ScreeningMode::Hospital] {
        let tasks = mode.tasks(&registry).unwrap();
        println!("{mode:?} screening over {} tasks", tasks.len());
        for error_rate in [0.0, 0.1, 0.3, 0.5] {
            let cohort = synthetic::cohort(&registry, mode, 200, error_rate, 1);
            let score = |s| matching_score(&cohort, &tasks, s, TieRule::PreferAbnormal).unwrap();
            println!(
                "  error {error_rate:.1}: majority {:.4}, matching {:.4}",
                score(Strategy::Majority),
                score(Strategy::Matching)
            );
        }
        let cohort = synthetic::cohort(&registry, mode, 1, 0.3, 2);
        let list = voted_list(&cohort[0], &tasks, Strategy::Matching, TieRule::PreferAbnormal);
        println!("  voted list for {}: {}", cohort[0].patient_id, serde_json::to_string(&list).unwrap());
    }
}
