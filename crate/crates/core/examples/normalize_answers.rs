//! Map free-text model replies onto task label spaces and pull location
//! descriptors out of the prose.

use dentvqa::domain::{Language, LocationVocabulary, TaskRegistry};
use dentvqa::inference::{extract_locations, normalize_answer};

fn main() {
    let registry = TaskRegistry::default();
    let vocab = LocationVocabulary::default();
    let caries = registry.get("caries").unwrap();

    let replies = [
        (Language::En, "Yes. There is a carious lesion on the lower left posterior teeth."),
        (Language::En, "No caries is visible."),
        (Language::En, "The image quality is too poor to say."),
        (Language::Zh, "是的，下颌左侧后牙区可见龋坏。"),
        (Language::Zh, "否。"),
    ];
    for (lang, text) in replies {
        let answer = normalize_answer(text, caries, lang);
        let locations = vocab.describe(extract_locations(text, &vocab, lang), lang);
        println!("[{}] {text:?}\n    -> {answer:?}, locations {locations:?}", lang.code());
    }
}
