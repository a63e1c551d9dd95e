use crate::domain::{
    Answer, AnswerMode, Language, LocationDescriptor, LocationSet, LocationVocabulary, Prediction, TaskSpec,
    INDETERMINATE_EN, INDETERMINATE_ZH,
};
use crate::text::{fold, phrases_in_order, scan_phrases};

/// Every descriptor whose surface form occurs in `text`, longest match first.
pub fn extract_locations(text: &str, vocabulary: &LocationVocabulary, lang: Language) -> LocationSet {
    scan_phrases(text, vocabulary.surfaces(lang))
        .into_iter()
        .filter_map(|m| LocationDescriptor::new(m.pattern as u8).ok())
        .collect()
}

fn is_sentinel(text: &str) -> bool {
    let t = fold(text);
    [INDETERMINATE_EN, INDETERMINATE_ZH].iter().any(|s| t.contains(&fold(s)))
}

/// Map free text onto the task's label space in `lang`.
///
/// Matching ignores case, character width and punctuation. Multi-class text
/// naming two or more labels is ambiguous and yields `Indeterminate`.
pub fn normalize_answer(raw: &str, task: &TaskSpec, lang: Language) -> Prediction {
    if is_sentinel(raw) {
        return Prediction::Indeterminate;
    }
    let space = task.label_space(lang);
    let hits = phrases_in_order(raw, &space);
    match (task.answer_mode, hits.as_slice()) {
        (_, []) => Prediction::Indeterminate,
        (AnswerMode::MultiClass, [one]) => Answer::single(space[*one]).into(),
        (AnswerMode::MultiClass, _) => Prediction::Indeterminate,
        (AnswerMode::MultiLabel, many) => Answer::multi(many.iter().map(|&i| space[i])).into(),
    }
}

/// Answer parse for one-step output, where the answer leads and a rationale follows.
///
/// Tries the leading clause, then the first sentence, then the whole text;
/// multi-label answers skip the clause since labels are comma separated.
pub fn parse_leading_answer(raw: &str, task: &TaskSpec, lang: Language) -> Prediction {
    if is_sentinel(raw) {
        return Prediction::Indeterminate;
    }
    let trimmed = raw.trim();
    let sentence = trimmed.split(['.', '。', '!', '！', '?', '？', '\n']).next().unwrap_or("");
    let clause = sentence.split([',', '，', ';', '；', ':', '：', '、']).next().unwrap_or("");
    let mut tries = vec![sentence, trimmed];
    if task.answer_mode == AnswerMode::MultiClass {
        tries.insert(0, clause);
    }
    for t in tries {
        let p = normalize_answer(t, task, lang);
        if !p.is_indeterminate() {
            return p;
        }
    }
    Prediction::Indeterminate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TaskRegistry;
    use proptest::prelude::*;

    fn vocab() -> LocationVocabulary {
        LocationVocabulary::default()
    }

    /// Brute force: every occurrence of every surface form, then drop
    /// occurrences strictly inside a longer one.
    fn scan_oracle(text: &str, surfaces: &[String]) -> LocationSet {
        let t = text.to_lowercase();
        let mut occ = Vec::new();
        for (i, s) in surfaces.iter().enumerate() {
            let s = s.to_lowercase();
            for start in 0..t.len() {
                if t.is_char_boundary(start) && t[start..].starts_with(&s) {
                    let end = start + s.len();
                    let left = t[..start].chars().next_back().is_none_or(|c| !c.is_ascii_alphanumeric());
                    let right = t[end..].chars().next().is_none_or(|c| !c.is_ascii_alphanumeric());
                    if left && right {
                        occ.push((i, start, end));
                    }
                }
            }
        }
        occ.iter()
            .filter(|&&(_, s, e)| !occ.iter().any(|&(_, s2, e2)| e2 - s2 > e - s && s2 <= s && e <= e2))
            .map(|&(i, _, _)| LocationDescriptor::new(i as u8).unwrap())
            .collect()
    }

    #[test]
    fn location_examples() {
        let v = vocab();
        let one = extract_locations("Caries in the upper anterior teeth.", &v, Language::En);
        assert_eq!(one.iter().map(|d| d.index()).collect::<Vec<_>>(), vec![1]);
        assert!(extract_locations("nothing here", &v, Language::En).is_empty());
        let two = extract_locations("upper anterior and lower left posterior", &v, Language::En);
        assert_eq!(two.iter().map(|d| d.index()).collect::<Vec<_>>(), vec![1, 5]);
        let zh = extract_locations("龋坏位于下颌左侧后牙区和上颌前牙区。", &v, Language::Zh);
        assert_eq!(zh.iter().map(|d| d.index()).collect::<Vec<_>>(), vec![1, 5]);
    }

    #[test]
    fn longest_match_wins_on_nested_vocabulary() {
        let mut en: Vec<String> = vocab().surfaces(Language::En).to_vec();
        en[6] = "upper".into();
        let v = LocationVocabulary::new(en, vocab().surfaces(Language::Zh).to_vec()).unwrap();
        let found = extract_locations("upper anterior", &v, Language::En);
        assert_eq!(found.iter().map(|d| d.index()).collect::<Vec<_>>(), vec![1]);
        let found = extract_locations("upper anterior, and the upper arch generally", &v, Language::En);
        assert_eq!(found.iter().map(|d| d.index()).collect::<Vec<_>>(), vec![1, 6]);
    }

    const FILLER: [&str; 6] = ["the ", "lesion ", "is seen ", "in ", "and ", "region "];

    proptest! {
        #[test]
        fn agrees_with_brute_force(picks in proptest::collection::vec((0usize..9, 0usize..6), 0..8)) {
            let v = vocab();
            let surfaces = v.surfaces(Language::En).to_vec();
            let mut text = String::new();
            for (d, f) in &picks {
                text.push_str(FILLER[*f]);
                text.push_str(&surfaces[*d]);
                text.push(' ');
            }
            let got = extract_locations(&text, &v, Language::En);
            prop_assert_eq!(got, scan_oracle(&text, &surfaces));
            let expected: LocationSet = picks.iter().map(|(d, _)| LocationDescriptor::new(*d as u8).unwrap()).collect();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn appending_never_removes(a in "[a-z ]{0,40}", d in 0usize..9, b in "[a-z ]{0,40}") {
            let v = vocab();
            let base = format!("{a} {} ", v.surfaces(Language::En)[d]);
            let before = extract_locations(&base, &v, Language::En);
            let after = extract_locations(&format!("{base}{b}"), &v, Language::En);
            prop_assert!(before.is_subset(after));
        }
    }

    #[test]
    fn answer_examples() {
        let reg = TaskRegistry::default();
        let caries = reg.get("caries").unwrap();
        assert_eq!(normalize_answer("Yes,", caries, Language::En), Answer::single("yes").into());
        assert_eq!(normalize_answer("ＹＥＳ", caries, Language::En), Answer::single("yes").into());
        assert_eq!(normalize_answer(INDETERMINATE_EN, caries, Language::En), Prediction::Indeterminate);
        assert_eq!(normalize_answer(INDETERMINATE_ZH, caries, Language::Zh), Prediction::Indeterminate);
        assert_eq!(normalize_answer("yes or no", caries, Language::En), Prediction::Indeterminate);
        assert_eq!(normalize_answer("", caries, Language::En), Prediction::Indeterminate);
        let types = reg.get("malocclusion_types").unwrap();
        assert_eq!(
            normalize_answer("crowding, deep overbite", types, Language::En),
            Answer::multi(["crowding", "deep overbite"]).into()
        );
        assert_eq!(
            parse_leading_answer("Yes. The occlusal surface shows no enamel loss.", caries, Language::En),
            Answer::single("yes").into()
        );
        assert_eq!(parse_leading_answer("是。远中邻面可见龋坏。", caries, Language::Zh), Answer::single("是").into());
    }

    /// Oracle: each label checked independently as a whole-word substring.
    fn label_oracle(text: &str, labels: &[&str]) -> Vec<String> {
        let words: Vec<&str> = text.split(|c: char| !c.is_ascii_alphanumeric()).filter(|w| !w.is_empty()).collect();
        let mut hits: Vec<(usize, &str)> = Vec::new();
        for l in labels {
            let lw: Vec<&str> = l.split(' ').collect();
            if let Some(pos) = words.windows(lw.len()).position(|w| w == lw.as_slice()) {
                hits.push((pos, l));
            }
        }
        hits.sort();
        hits.into_iter().map(|(_, l)| l.to_string()).collect()
    }

    proptest! {
        #[test]
        fn multi_label_matches_oracle(order in Just((0usize..7).collect::<Vec<_>>()).prop_shuffle(), k in 1usize..7) {
            let reg = TaskRegistry::default();
            let task = reg.get("malocclusion_types").unwrap();
            let space = task.label_space(Language::En);
            let picked: Vec<&str> = order[..k].iter().map(|&i| space[i]).collect();
            let text = format!("findings: {}.", picked.join(", "));
            let got = normalize_answer(&text, task, Language::En);
            let want = label_oracle(&text, &space);
            prop_assert_eq!(got.clone(), Prediction::Answer(Answer::multi(want)));
            if let Prediction::Answer(a) = got {
                prop_assert!(task.check_answer(&a, Language::En).is_ok());
            }
        }
    }
}
