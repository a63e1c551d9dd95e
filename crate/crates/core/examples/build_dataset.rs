//! Build a bilingual VQA corpus from synthetic Chinese-source annotations,
//! subsample it and write it as JSONL.
//!
//! ```text
//! cargo run --example build_dataset -- /tmp/corpus.jsonl
//! ```

use std::collections::BTreeMap;

use dentvqa::dataset::{build_corpus, subsample, write_corpus, BuildOptions, QuestionTemplates};
use dentvqa::domain::{Language, TaskRegistry};
use dentvqa::synthetic;

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "corpus.jsonl".into());
    let registry = TaskRegistry::default();
    let annotations = synthetic::annotations(&registry, 20, 7);
    let templates = QuestionTemplates::from_registry(&registry);
    let built = build_corpus(&annotations, &registry, &templates, &BuildOptions { seed: 7, ..Default::default() })
        .expect("synthetic annotations are valid");

    let mut per_lang: BTreeMap<Language, usize> = BTreeMap::new();
    for r in &built.records {
        *per_lang.entry(r.language).or_default() += 1;
    }
    println!("{} images -> {} records {per_lang:?}", annotations.images.len(), built.records.len());
    println!("review flags: {}, warnings: {}", built.review.len(), built.warnings.len());

    let first = &built.records[0];
    let twin = built.records.iter().find(|r| r.lineage == first.lineage && r.language != first.language).unwrap();
    println!("{}: {} -> {}", first.record_id, first.question, first.answer);
    println!("{}: {} -> {}", twin.record_id, twin.question, twin.answer);

    let tenth = subsample(&built.records, 0.1, 7).expect("fraction in range");
    write_corpus(out.as_ref(), &tenth.records).expect("corpus written");
    println!("10% subsample: {} records -> {out}", tenth.records.len());
}
