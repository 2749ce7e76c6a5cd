//! Stage 1: knowledge preparation.
//!
//! For each target: retrieve pages, chunk them, embed and deduplicate
//! down to the top-3 relevant chunks, and generate explicit stance
//! labels. The result persists as `knowledge/<target-slug>.json` and
//! feeds every later stage. Targets shipping their own background text
//! bypass retrieval and wrap it as a single chunk.

mod chunker;
mod retrieval;
mod select;

pub use chunker::{
    chunk_text, token_count, tokenize, TokenSpan, DEFAULT_CHUNK_SIZE, DEFAULT_OVERLAP,
    SENTENCE_ENDINGS,
};
pub use retrieval::{
    strip_html, FixtureSearchProvider, HttpSearchProvider, PageText, SearchProvider,
    DEFAULT_SEARCH_TIMEOUT,
};
pub use select::{greedy_select, select_raw_knowledge, DEFAULT_DEDUP_THRESHOLD, DEFAULT_TOP_K};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KnowledgeError, ParseError};
use crate::gateway::{EmbeddingBackend, EmbeddingVector, GatewayScope, ModelRouter, Role};
use crate::prompts::{PromptRegistry, PromptRole};
use crate::retry::chat_parsed;
use crate::stance::{ExplicitStanceLabels, Language};

/// One contiguous piece of source text with its token span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeChunk {
    pub text: String,
    pub token_span: (usize, usize),
    pub source_url: Option<String>,
    #[serde(skip)]
    pub embedding: Option<EmbeddingVector>,
}

impl KnowledgeChunk {
    pub fn token_len(&self) -> usize {
        self.token_span.1 - self.token_span.0
    }
}

/// The retrieved background for a target: deduplicated chunks in
/// relevance order plus their concatenation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawKnowledge {
    pub target: String,
    pub chunks: Vec<KnowledgeChunk>,
    pub concatenated: String,
}

impl RawKnowledge {
    pub fn from_chunks(target: impl Into<String>, chunks: Vec<KnowledgeChunk>) -> Self {
        let concatenated = chunks
            .iter()
            .map(|c| c.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        RawKnowledge {
            target: target.into(),
            chunks,
            concatenated,
        }
    }

    /// Wraps dataset-provided background text as a single chunk.
    pub fn provided(target: impl Into<String>, background: impl Into<String>) -> Self {
        let background = background.into();
        let tokens = token_count(&background);
        RawKnowledge::from_chunks(
            target,
            vec![KnowledgeChunk {
                text: background,
                token_span: (0, tokens),
                source_url: None,
                embedding: None,
            }],
        )
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

/// Injects target-irrelevant chunks at the same scale as the original
/// knowledge: one distractor per original chunk, interleaved
/// deterministically with originals first.
pub fn inject_noise(
    raw: &RawKnowledge,
    distractor_chunks: &[KnowledgeChunk],
) -> Result<RawKnowledge, KnowledgeError> {
    let needed = raw.chunks.len();
    if distractor_chunks.len() < needed {
        return Err(KnowledgeError::InsufficientDistractors {
            needed,
            available: distractor_chunks.len(),
        });
    }
    let mut mixed = Vec::with_capacity(needed * 2);
    for (original, distractor) in raw.chunks.iter().zip(distractor_chunks) {
        mixed.push(original.clone());
        mixed.push(distractor.clone());
    }
    Ok(RawKnowledge::from_chunks(raw.target.clone(), mixed))
}

/// Lowercased, hyphenated, Unicode-preserving directory-safe name.
pub fn slugify(target: &str) -> String {
    let mut slug = String::new();
    let mut pending_sep = false;
    for c in target.chars() {
        if c.is_alphanumeric() {
            if pending_sep && !slug.is_empty() {
                slug.push('-');
            }
            pending_sep = false;
            for lower in c.to_lowercase() {
                slug.push(lower);
            }
        } else {
            pending_sep = true;
        }
    }
    slug
}

/// The on-disk record for one prepared target
/// (`knowledge/<target-slug>.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedKnowledge {
    pub target: String,
    pub esl: EslRecord,
    pub chunks: Vec<PreparedChunk>,
    pub provided_background: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EslRecord {
    pub favor: String,
    pub against: String,
    pub neutral: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedChunk {
    pub text: String,
    pub source_url: Option<String>,
}

impl PreparedKnowledge {
    pub fn esl(&self) -> Result<ExplicitStanceLabels, ParseError> {
        ExplicitStanceLabels::new(
            &self.target,
            &self.esl.favor,
            &self.esl.against,
            Some(self.esl.neutral.clone()),
        )
    }

    pub fn raw_knowledge(&self) -> RawKnowledge {
        let chunks = self
            .chunks
            .iter()
            .map(|c| KnowledgeChunk {
                text: c.text.clone(),
                token_span: (0, token_count(&c.text)),
                source_url: c.source_url.clone(),
                embedding: None,
            })
            .collect();
        RawKnowledge::from_chunks(&self.target, chunks)
    }

    pub fn save(&self, dir: &Path) -> Result<std::path::PathBuf, KnowledgeError> {
        std::fs::create_dir_all(dir).map_err(|source| KnowledgeError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let path = dir.join(format!("{}.json", slugify(&self.target)));
        let body = serde_json::to_vec_pretty(self).expect("prepared knowledge serializes");
        std::fs::write(&path, body).map_err(|source| KnowledgeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        let bytes = std::fs::read(path).map_err(|source| KnowledgeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| KnowledgeError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })
    }
}

/// Every prepared target, keyed by slug.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeStore {
    by_slug: BTreeMap<String, PreparedKnowledge>,
}

impl KnowledgeStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prepared: PreparedKnowledge) {
        self.by_slug.insert(slugify(&prepared.target), prepared);
    }

    pub fn get(&self, target: &str) -> Option<&PreparedKnowledge> {
        self.by_slug.get(&slugify(target))
    }

    pub fn targets(&self) -> impl Iterator<Item = &PreparedKnowledge> {
        self.by_slug.values()
    }

    pub fn load_dir(dir: &Path) -> Result<Self, KnowledgeError> {
        let mut store = KnowledgeStore::new();
        let rd = std::fs::read_dir(dir).map_err(|source| KnowledgeError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for entry in rd.filter_map(Result::ok) {
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "json") {
                store.insert(PreparedKnowledge::load(&path)?);
            }
        }
        Ok(store)
    }

    /// Distractor pool for one target: the other targets' chunks in slug
    /// order, which are target-irrelevant by construction.
    pub fn distractors_for(&self, target: &str) -> Vec<KnowledgeChunk> {
        let own = slugify(target);
        self.by_slug
            .iter()
            .filter(|(slug, _)| **slug != own)
            .flat_map(|(_, pk)| pk.raw_knowledge().chunks)
            .collect()
    }
}

/// Generates explicit stance labels for a target through the few-shot
/// prompt, retrying once with a format reminder before giving up.
pub fn generate_esl(
    target: &str,
    lang: Language,
    registry: &PromptRegistry,
    router: &ModelRouter,
    scope: &GatewayScope<'_>,
) -> Result<ExplicitStanceLabels, KnowledgeError> {
    let vars = BTreeMap::from([("target", target.to_string())]);
    let prompt = registry.render(PromptRole::Esl, lang, &vars)?;
    let outcome = chat_parsed(scope, Role::Esl, router, &prompt, |content| {
        parse_esl(content, target)
    })?;
    match outcome {
        crate::retry::ChatParseOutcome::Parsed(esl) => Ok(esl),
        crate::retry::ChatParseOutcome::Failed { error, .. } => Err(error.into()),
    }
}

/// Parses the `A. Favor: ... / B. Against: ... / C. ...` block.
pub fn parse_esl(content: &str, target: &str) -> Result<ExplicitStanceLabels, ParseError> {
    let mut favor = None;
    let mut against = None;
    let mut neutral = None;
    for line in content.lines() {
        let line = line.trim().trim_matches('*').trim();
        if let Some(rest) = strip_option_prefix(line, 'A') {
            let rest = rest.trim_start_matches(|c: char| c.is_whitespace());
            if let Some(desc) = strip_label_word(rest, "Favor") {
                favor.get_or_insert(desc.trim().to_string());
            }
        } else if let Some(rest) = strip_option_prefix(line, 'B') {
            let rest = rest.trim_start_matches(|c: char| c.is_whitespace());
            if let Some(desc) = strip_label_word(rest, "Against") {
                against.get_or_insert(desc.trim().to_string());
            }
        } else if let Some(rest) = strip_option_prefix(line, 'C') {
            let text = rest.trim().trim_end_matches('.').trim().to_string();
            neutral.get_or_insert(text);
        }
    }
    let favor = favor.filter(|s| !s.is_empty()).ok_or(ParseError::MissingEslLine('A'))?;
    let against = against
        .filter(|s| !s.is_empty())
        .ok_or(ParseError::MissingEslLine('B'))?;
    ExplicitStanceLabels::new(target, favor, against, neutral.filter(|s| !s.is_empty()))
}

fn strip_option_prefix(line: &str, option: char) -> Option<&str> {
    let rest = line.strip_prefix(option)?;
    rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))
}

fn strip_label_word<'a>(s: &'a str, word: &str) -> Option<&'a str> {
    if s.len() < word.len() || !s[..word.len()].eq_ignore_ascii_case(word) {
        return None;
    }
    let rest = &s[word.len()..];
    Some(rest.strip_prefix(':').unwrap_or(rest))
}

/// Full preparation for one target: retrieve, chunk, embed, select,
/// generate labels. `provided` short-circuits retrieval with dataset-
/// supplied background and (optionally) labels.
#[allow(clippy::too_many_arguments)]
pub fn prepare_target(
    target: &str,
    provided: Option<&ProvidedTargetInfo>,
    search: &dyn SearchProvider,
    embedder: &dyn EmbeddingBackend,
    registry: &PromptRegistry,
    router: &ModelRouter,
    scope: &GatewayScope<'_>,
    params: &PrepareParams,
) -> Result<PreparedKnowledge, KnowledgeError> {
    let lang = crate::gateway::detect_language(target);

    let (chunks, provided_background) = match provided.and_then(|p| p.background.as_deref()) {
        Some(background) => {
            let raw = RawKnowledge::provided(target, background);
            (raw.chunks, true)
        }
        None => {
            let pages = search.retrieve(target, params.top_k)?;
            let mut all_chunks = Vec::new();
            for page in &pages {
                for mut chunk in chunk_text(&page.text, params.chunk_size, params.overlap) {
                    chunk.source_url = page.url.clone();
                    chunk.embedding = Some(embedder.embed(&chunk.text, lang)?);
                    all_chunks.push(chunk);
                }
            }
            let target_embedding = embedder.embed(target, lang)?;
            let raw = select_raw_knowledge(
                target,
                all_chunks,
                &target_embedding,
                params.top_k,
                params.dedup_threshold,
            )?;
            (raw.chunks, false)
        }
    };

    let esl = match provided.and_then(|p| p.esl.as_ref()) {
        Some(esl) => ExplicitStanceLabels::new(
            target,
            &esl.favor,
            &esl.against,
            esl.neutral.clone(),
        )?,
        None => generate_esl(target, lang, registry, router, scope)?,
    };

    Ok(PreparedKnowledge {
        target: target.to_string(),
        esl: EslRecord {
            favor: esl.favor_desc,
            against: esl.against_desc,
            neutral: esl.neutral_desc,
        },
        chunks: chunks
            .into_iter()
            .map(|c| PreparedChunk {
                text: c.text,
                source_url: c.source_url,
            })
            .collect(),
        provided_background,
        incomplete: false,
    })
}

/// Retrieval knobs, mirroring the configuration defaults.
#[derive(Debug, Clone)]
pub struct PrepareParams {
    pub top_k: usize,
    pub chunk_size: usize,
    pub overlap: usize,
    pub dedup_threshold: f64,
}

impl Default for PrepareParams {
    fn default() -> Self {
        PrepareParams {
            top_k: DEFAULT_TOP_K,
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_OVERLAP,
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
        }
    }
}

/// Sidecar-provided target information (background text and labels).
#[derive(Debug, Clone, Default)]
pub struct ProvidedTargetInfo {
    pub background: Option<String>,
    pub esl: Option<ProvidedEsl>,
}

#[derive(Debug, Clone)]
pub struct ProvidedEsl {
    pub favor: String,
    pub against: String,
    pub neutral: Option<String>,
}
