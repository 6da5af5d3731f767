use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

const NUMERIC_TOLERANCE: f64 = 1e-6;

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d[\d,]*(?:\.\d+)?|-?\.\d+").unwrap());
static ANSWER_LETTER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)answer(?:\s+is)?\s*[:\-]?\s*\(?([A-Z])\)?\b").unwrap());
static LONE_LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b([A-Z])\b").unwrap());

/// Per-example answer scorer; every variant returns a value in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    /// Trimmed string equality.
    ExactMatch,
    /// Last `\boxed{...}` or last number, compared within 1e-6.
    Numeric,
    /// Whitespace-token F1.
    TokenF1,
    /// Single capital-letter choice.
    ChoiceLetter,
}

impl Scorer {
    pub fn score(self, prediction: &str, gold: &str) -> f64 {
        match self {
            Scorer::ExactMatch => bool_score(prediction.trim() == gold.trim()),
            Scorer::Numeric => numeric_match(prediction, gold),
            Scorer::TokenF1 => token_f1(prediction, gold),
            Scorer::ChoiceLetter => match (extract_choice(prediction), extract_choice(gold)) {
                (Some(p), Some(g)) => bool_score(p == g),
                _ => 0.0,
            },
        }
    }

    /// Whether `prediction` counts as fully correct.
    pub fn is_correct(self, prediction: &str, gold: &str) -> bool {
        self.score(prediction, gold) >= 1.0 - 1e-12
    }
}

fn bool_score(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Contents of the last `\boxed{...}`, honouring nested braces.
fn last_boxed(text: &str) -> Option<&str> {
    let start = text.rfind("\\boxed{")? + "\\boxed{".len();
    let mut depth = 1usize;
    for (i, c) in text[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Answer text used by the numeric scorer: the last boxed expression if
/// present, otherwise the last number in the text.
pub fn extract_numeric(text: &str) -> Option<String> {
    if let Some(boxed) = last_boxed(text) {
        return Some(boxed.trim().to_string());
    }
    NUMBER.find_iter(text).last().map(|m| m.as_str().to_string())
}

fn parse_number(s: &str) -> Option<f64> {
    let cleaned: String = s.chars().filter(|c| *c != ',' && *c != '$' && !c.is_whitespace()).collect();
    cleaned.parse::<f64>().ok().or_else(|| {
        NUMBER.find_iter(&cleaned).last().and_then(|m| m.as_str().replace(',', "").parse().ok())
    })
}

fn numeric_match(prediction: &str, gold: &str) -> f64 {
    let (Some(p), Some(g)) = (extract_numeric(prediction), extract_numeric(gold)) else {
        return 0.0;
    };
    match (parse_number(&p), parse_number(&g)) {
        (Some(a), Some(b)) => bool_score((a - b).abs() <= NUMERIC_TOLERANCE),
        _ => bool_score(p == g),
    }
}

/// Harmonic mean of whitespace-token precision and recall (multiset overlap).
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let pred: Vec<&str> = prediction.split_whitespace().collect();
    let gold: Vec<&str> = gold.split_whitespace().collect();
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn extract_choice(text: &str) -> Option<char> {
    let t = text.trim();
    let mut chars = t.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        return c.is_ascii_uppercase().then_some(c);
    }
    ANSWER_LETTER
        .captures_iter(t)
        .last()
        .or_else(|| LONE_LETTER.captures_iter(t).last())
        .and_then(|c| c[1].chars().next())
        .map(|c| c.to_ascii_uppercase())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_cases() {
        assert_eq!(token_f1("a b c", "a b c"), 1.0);
        assert_eq!(token_f1("a b", "c d"), 0.0);
        assert!((token_f1("a b c", "a b d") - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(token_f1("", "  "), 1.0);
        assert_eq!(token_f1("", "a"), 0.0);
        assert_eq!(token_f1("a", ""), 0.0);
    }

    #[test]
    fn numeric_extraction() {
        assert!(Scorer::Numeric.is_correct("so the answer is \\boxed{\\frac{1}{2}}", "\\boxed{\\frac{1}{2}}"));
        assert!(Scorer::Numeric.is_correct("The total is 1,234.", "1234"));
        assert!(Scorer::Numeric.is_correct("x = 3 then 0.5000000001", "0.5"));
        assert!(!Scorer::Numeric.is_correct("42", "43"));
        assert!(Scorer::Numeric.is_correct("\\boxed{7} (not 8)", "7"));
        assert_eq!(Scorer::Numeric.score("no digits", "1"), 0.0);
    }

    #[test]
    fn exact_and_choice() {
        assert!(Scorer::ExactMatch.is_correct("  Paris \n", "Paris"));
        assert!(!Scorer::ExactMatch.is_correct("paris", "Paris"));
        assert!(Scorer::ChoiceLetter.is_correct("B", "B"));
        assert!(Scorer::ChoiceLetter.is_correct("The answer is (C).", "C"));
        assert!(!Scorer::ChoiceLetter.is_correct("A", "D"));
    }

    #[test]
    fn scorers_are_deterministic_and_bounded() {
        for s in [Scorer::ExactMatch, Scorer::Numeric, Scorer::TokenF1, Scorer::ChoiceLetter] {
            for (p, g) in [("a b", "b c"), ("1", "1.0"), ("", ""), ("C", "c")] {
                let x = s.score(p, g);
                assert_eq!(x, s.score(p, g));
                assert!((0.0..=1.0).contains(&x));
            }
        }
    }
}
