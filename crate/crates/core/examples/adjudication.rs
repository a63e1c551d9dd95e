//! Adjudicating annotator votes: low-confidence votes are dropped, ties and
//! indeterminate winners remove the item.

use dentvqa::domain::{Answer, Prediction};
use dentvqa::study::{adjudicate_all, AnnotationRecord, Complexity, Confidence};

fn vote(annotator: &str, item: &str, answer: Option<&str>, confidence: Confidence) -> AnnotationRecord {
    AnnotationRecord {
        annotator_id: annotator.into(),
        item_id: item.into(),
        answer: answer.map_or(Prediction::Indeterminate, |a| Answer::single(a).into()),
        confidence,
        complexity: Complexity::Medium,
    }
}

fn main() {
    use Confidence::*;
    let votes = vec![
        vote("a", "clear", Some("yes"), High),
        vote("b", "clear", Some("yes"), Medium),
        vote("c", "clear", Some("no"), Low),
        vote("a", "split", Some("yes"), High),
        vote("b", "split", Some("no"), High),
        vote("a", "unsure", None, Medium),
        vote("b", "unsure", None, High),
        vote("c", "unsure", Some("no"), Medium),
        vote("a", "weak", Some("yes"), Low),
    ];
    for outcome in adjudicate_all(&votes) {
        println!("{outcome:?}");
    }
}
