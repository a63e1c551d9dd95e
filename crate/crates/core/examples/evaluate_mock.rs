//! Evaluate a scripted model that answers 80% of questions correctly, under
//! both inference protocols, and write the report, CSV and charts.
//!
//! ```text
//! cargo run --example evaluate_mock -- /tmp/eval
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use dentvqa::client::{ImageRef, ManualClock, ScriptedClient};
use dentvqa::dataset::{build_corpus, BuildOptions, QuestionTemplates};
use dentvqa::domain::{Language, LocationVocabulary, TaskRegistry};
use dentvqa::inference::{Adapter, Protocol};
use dentvqa::metrics::{evaluate, CiMethod, MetricKind};
use dentvqa::synthetic;

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "eval-out".into()));
    std::fs::create_dir_all(&out).unwrap();
    let registry = TaskRegistry::default();
    let annotations = synthetic::annotations(&registry, 15, 3);
    let records =
        build_corpus(&annotations, &registry, &QuestionTemplates::from_registry(&registry), &BuildOptions::default())
            .unwrap()
            .records;

    let script = synthetic::flip_script(&records, &registry, &LocationVocabulary::default(), 0.2, 3);
    println!("{} records, {} scripted as wrong", records.len(), script.flipped.len());
    let adapter = Adapter::new(Arc::new(ScriptedClient::with_clock(script.script, Arc::new(ManualClock::new()))));
    let image = |r: &dentvqa::dataset::VQARecord| ImageRef::Uri(format!("images/{}.png", r.image_id));

    for (name, protocol) in [("direct", Protocol::Direct), ("two-step", Protocol::TwoStep)] {
        let (responses, failures) = adapter.infer_records(&records, &registry, image, protocol);
        let report = evaluate(&records, &responses, &registry, name, CiMethod::Fixed).unwrap();
        println!(
            "{name:>8}: {} failures, accuracy {:.3}, hit rate {:.3}, EN macro accuracy {:.3}",
            failures.len(),
            report.pooled(MetricKind::Accuracy).unwrap(),
            report.pooled(MetricKind::HitRate).unwrap(),
            report.macro_mean(Language::En, MetricKind::Accuracy).unwrap(),
        );
        report.write_json(&out.join(format!("{name}.json"))).unwrap();
        report.write_csv(&out.join(format!("{name}.csv"))).unwrap();
        let charts = report.write_plots(&out.join(format!("{name}-plots"))).unwrap();
        println!("          {} charts under {}", charts.len(), out.display());
    }
}
