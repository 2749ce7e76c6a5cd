//! Core stance domain types and stance-code parsing.
//!
//! Stances are a closed three-valued set. LLM judgments arrive as option
//! codes (`A`/`B`/`C`, optionally with a fine-grained sub-code such as
//! `B.a`) or as bare label words; [`parse_stance_code`] turns either form
//! into a typed [`StanceJudgment`].

use serde::{Deserialize, Serialize};

use crate::error::ParseError;

/// The three stance classes. Binary datasets restrict themselves to
/// `Favor` and `Against`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StanceLabel {
    Favor,
    Against,
    Neutral,
}

impl StanceLabel {
    /// Option code under the fixed A/B/C mapping.
    pub fn option_code(self) -> char {
        match self {
            StanceLabel::Favor => 'A',
            StanceLabel::Against => 'B',
            StanceLabel::Neutral => 'C',
        }
    }

    /// Inverse of [`StanceLabel::option_code`].
    pub fn from_option_code(code: char) -> Option<Self> {
        match code {
            'A' => Some(StanceLabel::Favor),
            'B' => Some(StanceLabel::Against),
            'C' => Some(StanceLabel::Neutral),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StanceLabel::Favor => "Favor",
            StanceLabel::Against => "Against",
            StanceLabel::Neutral => "Neutral",
        }
    }
}

impl std::fmt::Display for StanceLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Language tag used for template and embedding-model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Zh,
    En,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::Zh => "zh",
            Language::En => "en",
        }
    }
}

/// A parsed stance judgment: coarse label, its option code, and an
/// optional fine-grained sub-code (`B.a` style). `raw` preserves the
/// verbatim judgment text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StanceJudgment {
    pub label: StanceLabel,
    pub option_code: char,
    pub sub_code: Option<char>,
    pub raw: String,
}

impl StanceJudgment {
    /// Builds a judgment, deriving the option code from the label and
    /// dropping sub-codes on `Neutral` (only A/B are subdivided).
    pub fn new(label: StanceLabel, sub_code: Option<char>, raw: impl Into<String>) -> Self {
        let sub_code = match label {
            StanceLabel::Neutral => None,
            _ => sub_code,
        };
        StanceJudgment {
            label,
            option_code: label.option_code(),
            sub_code,
            raw: raw.into(),
        }
    }
}

/// One dataset instance: a text and the target it is judged against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub target: String,
    pub text: String,
    pub gold: Option<StanceLabel>,
    pub language: Language,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        target: impl Into<String>,
        text: impl Into<String>,
        gold: Option<StanceLabel>,
        language: Language,
    ) -> Result<Self, ParseError> {
        let target = target.into();
        let text = text.into();
        if target.trim().is_empty() || text.trim().is_empty() {
            return Err(ParseError::EmptyJudgment);
        }
        Ok(Sample {
            id: id.into(),
            target,
            text,
            gold,
            language,
        })
    }
}

/// Target-specific natural-language definitions of the three stance
/// options (what "Favor" and "Against" concretely mean for this target).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplicitStanceLabels {
    pub target: String,
    pub favor_desc: String,
    pub against_desc: String,
    pub neutral_desc: String,
}

pub const DEFAULT_NEUTRAL_DESC: &str = "Neutral/None";

impl ExplicitStanceLabels {
    pub fn new(
        target: impl Into<String>,
        favor_desc: impl Into<String>,
        against_desc: impl Into<String>,
        neutral_desc: Option<String>,
    ) -> Result<Self, ParseError> {
        let favor_desc = favor_desc.into();
        let against_desc = against_desc.into();
        if favor_desc.trim().is_empty() || against_desc.trim().is_empty() {
            return Err(ParseError::DegenerateEsl);
        }
        if favor_desc == against_desc {
            return Err(ParseError::DegenerateEsl);
        }
        let neutral_desc = match neutral_desc {
            Some(n) if !n.trim().is_empty() => n,
            _ => DEFAULT_NEUTRAL_DESC.to_string(),
        };
        Ok(ExplicitStanceLabels {
            target: target.into(),
            favor_desc,
            against_desc,
            neutral_desc,
        })
    }

    /// The three option lines as they appear in prompts.
    pub fn block(&self) -> String {
        format!(
            "A. Favor: {}\nB. Against: {}\nC. {}",
            self.favor_desc, self.against_desc, self.neutral_desc
        )
    }
}

/// Extracts a stance judgment from free-form text.
///
/// Matching order: a leading option code (`B`, `B.a`, `B. Against: ...`)
/// wins; otherwise the first standalone label word (favor/against/
/// neutral/none, case-insensitive). Surrounding whitespace and markdown
/// asterisks are stripped first. Sub-codes are only recognized when
/// `allow_sub` is set and never on option C.
pub fn parse_stance_code(raw_text: &str, allow_sub: bool) -> Result<StanceJudgment, ParseError> {
    if raw_text.trim().is_empty() {
        return Err(ParseError::EmptyJudgment);
    }
    let cleaned = raw_text.trim_matches(|c: char| c == '*' || c.is_whitespace());

    if let Some(judgment) = match_leading_code(cleaned, allow_sub) {
        return Ok(StanceJudgment::new(judgment.0, judgment.1, raw_text));
    }
    if let Some(label) = match_label_word(cleaned) {
        return Ok(StanceJudgment::new(label, None, raw_text));
    }
    Err(ParseError::StanceCode(raw_text.to_string()))
}

fn match_leading_code(s: &str, allow_sub: bool) -> Option<(StanceLabel, Option<char>)> {
    let mut chars = s.chars();
    let first = chars.next()?;
    let label = StanceLabel::from_option_code(first)?;
    let rest = &s[first.len_utf8()..];
    // The code must stand alone: "Against" must not match as code A.
    match rest.chars().next() {
        None => Some((label, None)),
        Some(c) if c.is_alphanumeric() => None,
        Some('.') => {
            let after_dot = &rest[1..];
            let sub = after_dot.chars().next().filter(|c| c.is_ascii_lowercase());
            match sub {
                Some(sub_char) => {
                    // A single letter is a sub-code; a longer run is a word.
                    let tail = &after_dot[sub_char.len_utf8()..];
                    let is_single = tail.chars().next().map_or(true, |c| !c.is_alphanumeric());
                    if is_single && allow_sub {
                        Some((label, Some(sub_char)))
                    } else if is_single {
                        Some((label, None))
                    } else {
                        // e.g. "B.against": treat as code + word tail.
                        Some((label, None))
                    }
                }
                None => Some((label, None)),
            }
        }
        Some(_) => Some((label, None)),
    }
}

fn match_label_word(s: &str) -> Option<StanceLabel> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .find_map(|word| match word.to_ascii_lowercase().as_str() {
            "favor" => Some(StanceLabel::Favor),
            "against" => Some(StanceLabel::Against),
            "neutral" | "none" => Some(StanceLabel::Neutral),
            _ => None,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_code_with_label_and_description() {
        let j = parse_stance_code("B. Against: Oppose atheism and advocate for theism.", true)
            .unwrap();
        assert_eq!(j.label, StanceLabel::Against);
        assert_eq!(j.option_code, 'B');
        assert_eq!(j.sub_code, None);
        assert_eq!(j.raw, "B. Against: Oppose atheism and advocate for theism.");
    }

    #[test]
    fn parses_sub_code() {
        let j = parse_stance_code("B.a", true).unwrap();
        assert_eq!(j.label, StanceLabel::Against);
        assert_eq!(j.sub_code, Some('a'));
    }

    #[test]
    fn parses_bare_code() {
        let j = parse_stance_code("C", true).unwrap();
        assert_eq!(j.label, StanceLabel::Neutral);
        assert_eq!(j.option_code, 'C');
        assert_eq!(j.sub_code, None);
    }

    #[test]
    fn ignores_sub_code_when_disallowed() {
        let j = parse_stance_code("B.a", false).unwrap();
        assert_eq!(j.label, StanceLabel::Against);
        assert_eq!(j.sub_code, None);
    }

    #[test]
    fn drops_sub_code_on_neutral() {
        let j = parse_stance_code("C.a", true).unwrap();
        assert_eq!(j.label, StanceLabel::Neutral);
        assert_eq!(j.sub_code, None);
    }

    #[test]
    fn strips_markdown_asterisks() {
        let j = parse_stance_code("**B. Against**", true).unwrap();
        assert_eq!(j.label, StanceLabel::Against);
    }

    #[test]
    fn falls_back_to_label_word() {
        let j = parse_stance_code("The comment is clearly against the target.", true).unwrap();
        assert_eq!(j.label, StanceLabel::Against);
        let j = parse_stance_code("Stance: FAVOR", true).unwrap();
        assert_eq!(j.label, StanceLabel::Favor);
    }

    #[test]
    fn word_starting_with_code_letter_is_not_a_code() {
        let j = parse_stance_code("Against the proposal", true).unwrap();
        assert_eq!(j.label, StanceLabel::Against);
        assert_eq!(j.raw, "Against the proposal");
    }

    #[test]
    fn rejects_text_without_code_or_word() {
        assert!(parse_stance_code("no opinion detected", true).is_err());
        assert!(parse_stance_code("   ", true).is_err());
    }

    #[test]
    fn code_label_mapping_is_a_bijection() {
        for label in [StanceLabel::Favor, StanceLabel::Against, StanceLabel::Neutral] {
            assert_eq!(StanceLabel::from_option_code(label.option_code()), Some(label));
        }
        assert_eq!(StanceLabel::from_option_code('D'), None);
    }

    #[test]
    fn esl_rejects_equal_descriptions() {
        assert!(ExplicitStanceLabels::new("t", "same", "same", None).is_err());
        assert!(ExplicitStanceLabels::new("t", "", "b", None).is_err());
    }

    #[test]
    fn esl_defaults_neutral() {
        let esl = ExplicitStanceLabels::new("t", "f", "a", None).unwrap();
        assert_eq!(esl.neutral_desc, DEFAULT_NEUTRAL_DESC);
        assert_eq!(esl.block(), "A. Favor: f\nB. Against: a\nC. Neutral/None");
    }

    proptest! {
        // Synthesized judgments of the printed shapes always parse back to
        // their leading letter, with the sub-code surfaced when present.
        #[test]
        fn total_over_synthesized_codes(
            code in prop::sample::select(vec!['A', 'B', 'C']),
            sub in prop::option::of('a'..='e'),
            word in prop::option::of("[A-Z][a-z]{1,8}"),
        ) {
            let mut s = code.to_string();
            if let Some(sub) = sub {
                s.push('.');
                s.push(sub);
            }
            if let Some(w) = &word {
                s.push_str(". ");
                s.push_str(w);
            }
            let j = parse_stance_code(&s, true).unwrap();
            prop_assert_eq!(j.option_code, code);
            if code != 'C' {
                prop_assert_eq!(j.sub_code, sub);
            } else {
                prop_assert_eq!(j.sub_code, None);
            }
            prop_assert_eq!(j.label.option_code(), code);
        }
    }
}
