//! Tolerant section parsing for expert transcripts.
//!
//! Transcripts mark sections with headers like `***Stance Judgment**:`;
//! the asterisk count and trailing colon vary between responses, and
//! header names are matched case-insensitively. A line counts as a
//! header only when it carries asterisks or a colon, so prose beginning
//! with a header word does not split a section.

use std::sync::OnceLock;

use regex::Regex;

use crate::error::ParseError;

pub const KNOWN_HEADERS: [&str; 7] = [
    "Refined knowledge",
    "Reasoning",
    "Fine-grained Stance Labels",
    "Analysis",
    "Rhetorical Devices",
    "Stance Judgment",
    "Explicit Stance Labels",
];

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let names = KNOWN_HEADERS
            .iter()
            .map(|h| regex::escape(h))
            .collect::<Vec<_>>()
            .join("|");
        Regex::new(&format!(
            r"(?i)^\s*(?P<stars>\*{{1,3}})?\s*(?P<name>{names})\s*(?:\([^)]*\))?\s*\*{{0,3}}\s*(?P<colon>:)?\s*(?P<rest>.*)$"
        ))
        .unwrap()
    })
}

/// Ordered (canonical header, value) list extracted from a transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sections(Vec<(String, String)>);

impl Sections {
    /// First section matching `name`, case-insensitively.
    pub fn get(&self, name: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn get_required(&self, name: &'static str) -> Result<&str, ParseError> {
        self.get(name).ok_or(ParseError::MissingSection(name))
    }

    /// Like [`Sections::get_required`] but rejecting empty values.
    pub fn get_non_empty(&self, name: &'static str) -> Result<&str, ParseError> {
        let value = self.get_required(name)?;
        if value.trim().is_empty() {
            Err(ParseError::EmptySection(name))
        } else {
            Ok(value)
        }
    }
}

/// Splits a transcript into header-delimited sections. Text before the
/// first header is dropped.
pub fn split_sections(text: &str) -> Sections {
    let re = header_re();
    let mut sections: Vec<(String, String)> = Vec::new();
    let mut current: Option<(String, Vec<String>)> = None;

    for line in text.lines() {
        let header = re.captures(line).and_then(|caps| {
            let has_stars = caps.name("stars").is_some();
            let has_colon = caps.name("colon").is_some();
            if has_stars || has_colon {
                Some((
                    canonical_header(caps.name("name").unwrap().as_str()),
                    caps.name("rest").map_or("", |m| m.as_str()).to_string(),
                ))
            } else {
                None
            }
        });
        match header {
            Some((name, first_value)) => {
                if let Some((prev_name, lines)) = current.take() {
                    sections.push((prev_name, finish_value(lines)));
                }
                current = Some((name.to_string(), vec![first_value]));
            }
            None => {
                if let Some((_, lines)) = current.as_mut() {
                    lines.push(line.to_string());
                }
            }
        }
    }
    if let Some((name, lines)) = current {
        sections.push((name, finish_value(lines)));
    }
    Sections(sections)
}

fn canonical_header(name: &str) -> &'static str {
    KNOWN_HEADERS
        .iter()
        .find(|h| h.eq_ignore_ascii_case(name))
        .expect("regex only matches known headers")
}

fn finish_value(lines: Vec<String>) -> String {
    lines.join("\n").trim().to_string()
}

/// One retained fact and the inference drawn from it.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct KnowledgeConclusionPair {
    pub knowledge: String,
    pub conclusion: String,
}

/// Parses numbered `<knowledge> --> <conclusion>` lines.
pub fn parse_pairs(value: &str) -> Result<Vec<KnowledgeConclusionPair>, ParseError> {
    static NUM: OnceLock<Regex> = OnceLock::new();
    let num = NUM.get_or_init(|| Regex::new(r"^\s*\d+\s*[.)]?\s*").unwrap());

    let mut pairs = Vec::new();
    for line in value.lines() {
        let body = num.replace(line, "");
        if let Some((knowledge, conclusion)) = body.split_once("-->") {
            let knowledge = knowledge.trim();
            let conclusion = conclusion.trim();
            if !knowledge.is_empty() && !conclusion.is_empty() {
                pairs.push(KnowledgeConclusionPair {
                    knowledge: knowledge.to_string(),
                    conclusion: conclusion.to_string(),
                });
            }
        }
    }
    if pairs.is_empty() {
        return Err(ParseError::NoPairs);
    }
    Ok(pairs)
}

/// Splits a refined-knowledge value on `;` separators that sit outside
/// double quotes, so quoted sentences keep their internal semicolons.
pub fn split_refined(value: &str) -> Vec<String> {
    let mut items = Vec::new();
    let mut current = String::new();
    let mut in_quotes = false;
    for c in value.chars() {
        match c {
            '"' => {
                in_quotes = !in_quotes;
                current.push(c);
            }
            ';' if !in_quotes => {
                items.push(std::mem::take(&mut current));
            }
            _ => current.push(c),
        }
    }
    items.push(current);
    items
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Fine-grained sub-labels for Favor and Against. Neutral is never
/// subdivided.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FineGrainedLabels {
    pub favor_sub: Vec<(char, String)>,
    pub against_sub: Vec<(char, String)>,
}

impl FineGrainedLabels {
    pub fn sub_desc(&self, label: crate::stance::StanceLabel, code: char) -> Option<&str> {
        let list = match label {
            crate::stance::StanceLabel::Favor => &self.favor_sub,
            crate::stance::StanceLabel::Against => &self.against_sub,
            crate::stance::StanceLabel::Neutral => return None,
        };
        list.iter().find(|(c, _)| *c == code).map(|(_, d)| d.as_str())
    }
}

/// Parses the fine-grained label block:
/// `A. Favor:` / `a. ...` lines, `B. Against:` / `a. ...` lines,
/// terminated by the `C.` line.
pub fn parse_fsl(value: &str) -> Result<FineGrainedLabels, ParseError> {
    #[derive(PartialEq)]
    enum Group {
        None,
        Favor,
        Against,
    }
    let mut group = Group::None;
    let mut favor_sub: Vec<(char, String)> = Vec::new();
    let mut against_sub: Vec<(char, String)> = Vec::new();

    for line in value.lines() {
        let line = line.trim().trim_matches('*').trim();
        if line.is_empty() {
            continue;
        }
        let mut chars = line.chars();
        let first = chars.next().unwrap();
        let second = chars.next();
        match (first, second) {
            ('A', Some('.' | ')')) => group = Group::Favor,
            ('B', Some('.' | ')')) => group = Group::Against,
            ('C', None | Some('.' | ')')) => group = Group::None,
            (c, Some('.' | ')')) if c.is_ascii_lowercase() => {
                let desc = line[2..].trim();
                if desc.is_empty() {
                    continue;
                }
                match group {
                    Group::Favor => favor_sub.push((c, desc.to_string())),
                    Group::Against => against_sub.push((c, desc.to_string())),
                    Group::None => {}
                }
            }
            _ => {}
        }
    }

    if favor_sub.is_empty() {
        return Err(ParseError::MissingFslGroup('A'));
    }
    if against_sub.is_empty() {
        return Err(ParseError::MissingFslGroup('B'));
    }
    for list in [&favor_sub, &against_sub] {
        for (i, (code, _)) in list.iter().enumerate() {
            if *code != (b'a' + i as u8) as char {
                return Err(ParseError::NonConsecutiveFsl);
            }
        }
    }
    Ok(FineGrainedLabels {
        favor_sub,
        against_sub,
    })
}

/// Parses a rhetorical-device list: `none` means no devices, otherwise
/// a comma-separated list, each name normalized.
pub fn parse_devices(value: &str) -> Result<Vec<String>, ParseError> {
    let trimmed = value.trim();
    if trimmed.is_empty() {
        return Err(ParseError::EmptySection("Rhetorical Devices"));
    }
    if trimmed.trim_end_matches('.').eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    let devices: Vec<String> = trimmed
        .split(',')
        .map(normalize_device)
        .filter(|d| !d.is_empty())
        .collect();
    if devices.is_empty() {
        return Err(ParseError::EmptySection("Rhetorical Devices"));
    }
    Ok(devices)
}

/// Trims punctuation and markdown, then title-cases each word:
/// `"Yes, rhetorical question."` ends up as `Rhetorical Question`.
pub fn normalize_device(s: &str) -> String {
    let s = s.trim().trim_matches('*').trim_end_matches('.').trim();
    s.split_whitespace()
        .map(|word| {
            let mut chars = word.chars();
            match chars.next() {
                Some(first) => {
                    first.to_uppercase().collect::<String>() + &chars.as_str().to_lowercase()
                }
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}
