//! Prompt template registry with placeholder substitution.
//!
//! Templates ship embedded in the binary and can be overridden per role
//! and language by dropping files into a prompt directory
//! (`prompts/<role>.<lang>.txt`). A template file holds an optional
//! system section and a user section:
//!
//! ```text
//! <<<system>>>
//! ...system message...
//! <<<user>>>
//! ...user message with {placeholders}...
//! ```
//!
//! Placeholders use single-brace `{name}` syntax and are substituted in
//! one pass; values are never re-scanned, so substituted text may safely
//! contain braces.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::ParseError;

/// Prompt roles, one per pipeline call site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PromptRole {
    Esl,
    KnowledgeExpert,
    LabelExpert,
    PragmaticExpert,
    MetaJudge,
    Rhetoric,
    Integrated,
    NoExpert,
    Base,
}

impl PromptRole {
    pub fn stem(self) -> &'static str {
        match self {
            PromptRole::Esl => "esl",
            PromptRole::KnowledgeExpert => "knowledge_expert",
            PromptRole::LabelExpert => "label_expert",
            PromptRole::PragmaticExpert => "pragmatic_expert",
            PromptRole::MetaJudge => "meta_judge",
            PromptRole::Rhetoric => "rhetoric",
            PromptRole::Integrated => "integrated",
            PromptRole::NoExpert => "no_expert",
            PromptRole::Base => "base",
        }
    }

    pub const ALL: [PromptRole; 9] = [
        PromptRole::Esl,
        PromptRole::KnowledgeExpert,
        PromptRole::LabelExpert,
        PromptRole::PragmaticExpert,
        PromptRole::MetaJudge,
        PromptRole::Rhetoric,
        PromptRole::Integrated,
        PromptRole::NoExpert,
        PromptRole::Base,
    ];
}

/// A template split into its system and user parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    /// Parses the `<<<system>>>` / `<<<user>>>` file format. A file
    /// without markers is treated as a user-only template.
    pub fn from_file_text(text: &str) -> Self {
        let text = text.strip_suffix('\n').unwrap_or(text);
        if let Some(rest) = text.strip_prefix("<<<system>>>") {
            if let Some((system, user)) = rest.split_once("<<<user>>>") {
                return PromptTemplate {
                    system: strip_section(system),
                    user: strip_section(user),
                };
            }
        }
        PromptTemplate {
            system: String::new(),
            user: text.to_string(),
        }
    }

    /// Substitutes `{name}` placeholders. Unknown placeholders are an
    /// error so template typos surface immediately.
    pub fn render(&self, vars: &BTreeMap<&str, String>) -> Result<RenderedPrompt, ParseError> {
        Ok(RenderedPrompt {
            system: substitute(&self.system, vars)?,
            user: substitute(&self.user, vars)?,
        })
    }
}

/// A fully rendered prompt ready for a chat request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

fn strip_section(s: &str) -> String {
    // Marker lines own their trailing newline; the section owns the rest.
    let s = s.strip_prefix('\n').unwrap_or(s);
    let s = s.strip_suffix('\n').unwrap_or(s);
    s.to_string()
}

fn substitute(template: &str, vars: &BTreeMap<&str, String>) -> Result<String, ParseError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if after[..close].chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && close > 0 => {
                let name = &after[..close];
                match vars.get(name) {
                    Some(value) => out.push_str(value),
                    None => return Err(ParseError::UnknownPlaceholder(name.to_string())),
                }
                rest = &after[close + 1..];
            }
            _ => {
                // A brace that does not open a placeholder is literal text.
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

use crate::stance::Language;

macro_rules! builtin {
    ($role:expr, $lang:expr, $file:expr) => {
        (($role, $lang), include_str!(concat!("prompts/templates/", $file)))
    };
}

const BUILTIN: [((PromptRole, Language), &str); 18] = [
    builtin!(PromptRole::Esl, Language::En, "esl.en.txt"),
    builtin!(PromptRole::Esl, Language::Zh, "esl.zh.txt"),
    builtin!(PromptRole::KnowledgeExpert, Language::En, "knowledge_expert.en.txt"),
    builtin!(PromptRole::KnowledgeExpert, Language::Zh, "knowledge_expert.zh.txt"),
    builtin!(PromptRole::LabelExpert, Language::En, "label_expert.en.txt"),
    builtin!(PromptRole::LabelExpert, Language::Zh, "label_expert.zh.txt"),
    builtin!(PromptRole::PragmaticExpert, Language::En, "pragmatic_expert.en.txt"),
    builtin!(PromptRole::PragmaticExpert, Language::Zh, "pragmatic_expert.zh.txt"),
    builtin!(PromptRole::MetaJudge, Language::En, "meta_judge.en.txt"),
    builtin!(PromptRole::MetaJudge, Language::Zh, "meta_judge.zh.txt"),
    builtin!(PromptRole::Rhetoric, Language::En, "rhetoric.en.txt"),
    builtin!(PromptRole::Rhetoric, Language::Zh, "rhetoric.zh.txt"),
    builtin!(PromptRole::Integrated, Language::En, "integrated.en.txt"),
    builtin!(PromptRole::Integrated, Language::Zh, "integrated.zh.txt"),
    builtin!(PromptRole::NoExpert, Language::En, "no_expert.en.txt"),
    builtin!(PromptRole::NoExpert, Language::Zh, "no_expert.zh.txt"),
    builtin!(PromptRole::Base, Language::En, "base.en.txt"),
    builtin!(PromptRole::Base, Language::Zh, "base.zh.txt"),
];

/// Registry resolving (role, language) to a template, with optional
/// on-disk overrides. The zh templates mirror the en structure and are
/// best-effort translations; en is canonical.
#[derive(Debug, Clone)]
pub struct PromptRegistry {
    override_dir: Option<PathBuf>,
}

impl PromptRegistry {
    /// Registry backed only by the embedded templates.
    pub fn builtin() -> Self {
        PromptRegistry { override_dir: None }
    }

    /// Registry that prefers `<dir>/<role>.<lang>.txt` when present.
    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        PromptRegistry {
            override_dir: Some(dir.into()),
        }
    }

    pub fn get(&self, role: PromptRole, lang: Language) -> Result<PromptTemplate, ParseError> {
        if let Some(dir) = &self.override_dir {
            let path = template_path(dir, role, lang);
            if path.is_file() {
                let text = std::fs::read_to_string(&path)
                    .map_err(|_| ParseError::TemplateNotFound(path.display().to_string()))?;
                return Ok(PromptTemplate::from_file_text(&text));
            }
        }
        BUILTIN
            .iter()
            .find(|((r, l), _)| *r == role && *l == lang)
            .map(|(_, text)| PromptTemplate::from_file_text(text))
            .ok_or_else(|| {
                ParseError::TemplateNotFound(format!("{}.{}", role.stem(), lang.as_str()))
            })
    }

    pub fn render(
        &self,
        role: PromptRole,
        lang: Language,
        vars: &BTreeMap<&str, String>,
    ) -> Result<RenderedPrompt, ParseError> {
        self.get(role, lang)?.render(vars)
    }
}

fn template_path(dir: &Path, role: PromptRole, lang: Language) -> PathBuf {
    dir.join(format!("{}.{}.txt", role.stem(), lang.as_str()))
}
