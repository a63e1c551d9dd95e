//! Text folding and exact phrase scanning shared by answer normalization and
//! location extraction.

/// Fold text for matching: full-width forms to ASCII, lowercase, punctuation
/// to spaces, whitespace collapsed.
pub fn fold(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.chars() {
        let c = match c {
            '\u{3000}' => ' ',
            '\u{FF01}'..='\u{FF5E}' => char::from_u32(c as u32 - 0xFEE0).unwrap_or(c),
            _ => c,
        };
        if c.is_whitespace() || is_punctuation(c) {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.extend(c.to_lowercase());
    }
    out
}

fn is_punctuation(c: char) -> bool {
    // Hyphens inside words ("wedge-shaped") are kept; everything else punctuation-like splits.
    c != '-'
        && (c.is_ascii_punctuation()
            || matches!(c, '\u{3001}'..='\u{3003}' | '\u{3008}'..='\u{3011}' | '\u{2018}'..='\u{201F}' | '\u{2026}' | '\u{00B7}'))
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric()
}

/// One kept occurrence of a pattern in folded text (byte offsets into the folded text).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhraseMatch {
    pub pattern: usize,
    pub start: usize,
    pub end: usize,
}

/// Find every occurrence of every pattern in `text`, after folding both.
///
/// Patterns that begin or end with an ASCII letter or digit must sit on a
/// word boundary there, so "class ii" does not fire inside "class iii".
/// An occurrence lying inside an occurrence of a longer pattern is dropped
/// (longest match wins). Results are ordered by start offset.
pub fn scan_phrases<S: AsRef<str>>(text: &str, patterns: &[S]) -> Vec<PhraseMatch> {
    let hay = fold(text);
    let mut found = Vec::new();
    for (pi, p) in patterns.iter().enumerate() {
        let needle = fold(p.as_ref());
        if needle.is_empty() {
            continue;
        }
        let first = needle.chars().next().unwrap();
        let last = needle.chars().next_back().unwrap();
        let mut from = 0;
        while let Some(off) = hay[from..].find(&needle) {
            let start = from + off;
            let end = start + needle.len();
            let left_ok = !is_word_char(first) || !hay[..start].chars().next_back().is_some_and(is_word_char);
            let right_ok = !is_word_char(last) || !hay[end..].chars().next().is_some_and(is_word_char);
            if left_ok && right_ok {
                found.push(PhraseMatch { pattern: pi, start, end });
            }
            from = start + first.len_utf8();
        }
    }
    let kept: Vec<PhraseMatch> = found
        .iter()
        .filter(|m| !found.iter().any(|o| o.end - o.start > m.end - m.start && o.start <= m.start && m.end <= o.end))
        .copied()
        .collect();
    let mut kept = kept;
    kept.sort_by_key(|m| (m.start, m.pattern));
    kept
}

/// Distinct pattern indices found in `text`, in order of first occurrence.
pub fn phrases_in_order<S: AsRef<str>>(text: &str, patterns: &[S]) -> Vec<usize> {
    let mut out = Vec::new();
    for m in scan_phrases(text, patterns) {
        if !out.contains(&m.pattern) {
            out.push(m.pattern);
        }
    }
    out
}

/// Replace `{key}` placeholders in a template.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// Rough token count: one per whitespace-separated word, one per CJK character.
pub fn approx_tokens(s: &str) -> usize {
    let cjk = s.chars().filter(|c| ('\u{4E00}'..='\u{9FFF}').contains(c)).count();
    let words = s.split_whitespace().filter(|w| w.chars().any(|c| !('\u{4E00}'..='\u{9FFF}').contains(&c))).count();
    cjk + words
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_handles_width_case_and_punctuation() {
        assert_eq!(fold("  Yes,  it IS. "), "yes it is");
        assert_eq!(fold("ＹＥＳ！"), "yes");
        assert_eq!(fold("是的，存在龋齿。"), "是的 存在龋齿");
        assert_eq!(fold("wedge-shaped"), "wedge-shaped");
    }

    #[test]
    fn word_boundaries_apply_to_ascii_patterns() {
        let pats = ["class ii", "class iii"];
        assert_eq!(phrases_in_order("Class III molar relation", &pats), vec![1]);
        assert_eq!(phrases_in_order("class ii.", &pats), vec![0]);
        assert!(phrases_in_order("know", &["no"]).is_empty());
    }

    #[test]
    fn longest_match_suppresses_contained_pattern() {
        let pats = ["overbite", "deep overbite"];
        assert_eq!(phrases_in_order("a deep overbite", &pats), vec![1]);
        assert_eq!(phrases_in_order("deep overbite and overbite", &pats), vec![1, 0]);
    }

    #[test]
    fn render_and_token_estimate() {
        assert_eq!(render("Q: {question} A: {answer}", &[("question", "x?"), ("answer", "y")]), "Q: x? A: y");
        assert_eq!(approx_tokens("two words 三个字"), 5);
    }
}
