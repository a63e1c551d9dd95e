//! Per-item scoring, confidence intervals and a two-sample t-test.

use dentvqa::domain::{Answer, LocationSet};
use dentvqa::metrics::{confidence_interval, hit_score, iou, t_test, CiMethod, ScoredItem};

fn main() {
    let item = ScoredItem {
        record_id: "r1".into(),
        task_id: "crowding".into(),
        gold: Answer::multi(["anterior crowding", "posterior crowding"]),
        gold_locations: LocationSet::default(),
        pred: Answer::multi(["anterior crowding"]).into(),
        pred_locations: LocationSet::default(),
    };
    println!("hit score for a subset prediction: {}", hit_score(&item).unwrap());

    let gold = LocationSet::from_mask(0b0000_0011).unwrap();
    let pred = LocationSet::from_mask(0b0000_0110).unwrap();
    println!(
        "location IoU {:?}, empty vs empty {:?}",
        iou(gold, pred),
        iou(LocationSet::default(), LocationSet::default())
    );

    let model_a = [0.81, 0.77, 0.85, 0.79, 0.83, 0.80];
    let model_b = [0.71, 0.74, 0.69, 0.75, 0.72, 0.70];
    for method in [CiMethod::Fixed, CiMethod::StudentT] {
        let (lo, hi) = confidence_interval(&model_a, method).unwrap();
        println!("{method:?} 95% CI for model A: [{lo:.4}, {hi:.4}]");
    }
    let t = t_test(&model_a, &model_b).unwrap();
    println!("A vs B: t = {:.3}, df = {:.1}, p = {:.2e}, significant: {}", t.statistic, t.df, t.p_value, t.significant);
}
