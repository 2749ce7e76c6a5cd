//! Stage 2: the three reasoning experts.
//!
//! The Knowledge Expert runs first; the sentences it retains become the
//! shared background for the Label and Pragmatic experts and the
//! meta-judge. Each expert renders its template, calls the gateway, and
//! parses the structured transcript. A response that stays unparseable
//! after one format-reminder retry produces a flagged placeholder
//! output (judgment Neutral) so batch runs never abort.

mod sections;

pub use sections::{
    normalize_device, parse_devices, parse_fsl, parse_pairs, split_refined, split_sections,
    FineGrainedLabels, KnowledgeConclusionPair, Sections, KNOWN_HEADERS,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{GatewayError, ParseError};
use crate::gateway::{GatewayScope, ModelRouter, Role};
use crate::knowledge::{tokenize, RawKnowledge, SENTENCE_ENDINGS};
use crate::prompts::{PromptRegistry, PromptRole};
use crate::retry::{chat_parsed, ChatParseOutcome};
use crate::stance::{parse_stance_code, ExplicitStanceLabels, Language, Sample, StanceJudgment, StanceLabel};

/// Infrastructure failures an expert call can hit. Parse failures are
/// not errors; they yield flagged outputs.
#[derive(Debug, Error)]
pub enum ExpertError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("template error: {0}")]
    Template(#[from] ParseError),
}

/// Shared handles threaded through every expert call.
pub struct PipelineCtx<'a> {
    pub registry: &'a PromptRegistry,
    pub router: &'a ModelRouter,
    pub lang: Language,
}

/// Minimum token overlap for a refined item to count as drawn from the
/// raw knowledge.
const PROVENANCE_OVERLAP: f64 = 0.9;

/// Knowledge Expert result: retained sentences, knowledge→conclusion
/// pairs, and a coarse judgment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeExpertOutput {
    /// Individual retained sentences.
    pub refined: Vec<String>,
    /// The retained sentences exactly as the transcript printed them;
    /// downstream prompts embed this verbatim.
    pub refined_text: String,
    pub pairs: Vec<KnowledgeConclusionPair>,
    pub judgment: StanceJudgment,
    pub raw: String,
    pub flagged: bool,
    pub warnings: Vec<String>,
}

impl KnowledgeExpertOutput {
    fn flagged_placeholder(content: String, error: &ParseError) -> Self {
        KnowledgeExpertOutput {
            refined: Vec::new(),
            refined_text: String::new(),
            pairs: Vec::new(),
            judgment: StanceJudgment::new(StanceLabel::Neutral, None, ""),
            raw: content,
            flagged: true,
            warnings: vec![format!("knowledge expert parse failure: {error}")],
        }
    }

    /// Canonical transcript form; parsing it again reproduces the same
    /// structured value.
    pub fn canonical(&self) -> String {
        let mut out = format!("***Refined knowledge**: {}\n\n**Reasoning**:\n", self.refined_text);
        for (i, pair) in self.pairs.iter().enumerate() {
            out.push_str(&format!("{}. {} --> {}\n", i + 1, pair.knowledge, pair.conclusion));
        }
        out.push_str(&format!("\n**Stance Judgment**: {}", judgment_code(&self.judgment)));
        out
    }
}

/// Label Expert result: the fine-grained label system plus a judgment
/// that usually carries a sub-code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelExpertOutput {
    pub fsl: FineGrainedLabels,
    pub analysis: String,
    pub judgment: StanceJudgment,
    pub raw: String,
    pub flagged: bool,
    pub warnings: Vec<String>,
}

impl LabelExpertOutput {
    fn flagged_placeholder(content: String, error: &ParseError) -> Self {
        LabelExpertOutput {
            fsl: FineGrainedLabels {
                favor_sub: Vec::new(),
                against_sub: Vec::new(),
            },
            analysis: String::new(),
            judgment: StanceJudgment::new(StanceLabel::Neutral, None, ""),
            raw: content,
            flagged: true,
            warnings: vec![format!("label expert parse failure: {error}")],
        }
    }

    pub fn canonical(&self) -> String {
        let mut out = String::from("***Fine-grained Stance Labels**:\n");
        out.push_str(&fsl_block(&self.fsl));
        out.push_str(&format!("\n**Analysis**: {}", self.analysis));
        out.push_str(&format!(
            "\n**Stance Judgment**: {}",
            judgment_code(&self.judgment)
        ));
        out
    }
}

/// Pragmatic Expert result: detected devices (empty means the
/// transcript said `none`) and the intent analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PragmaticExpertOutput {
    pub devices: Vec<String>,
    pub intent_analysis: String,
    pub judgment: StanceJudgment,
    pub raw: String,
    pub flagged: bool,
    pub warnings: Vec<String>,
}

impl PragmaticExpertOutput {
    fn flagged_placeholder(content: String, error: &ParseError) -> Self {
        PragmaticExpertOutput {
            devices: Vec::new(),
            intent_analysis: String::new(),
            judgment: StanceJudgment::new(StanceLabel::Neutral, None, ""),
            raw: content,
            flagged: true,
            warnings: vec![format!("pragmatic expert parse failure: {error}")],
        }
    }

    pub fn canonical(&self) -> String {
        format!(
            "***Rhetorical Devices**: {}\n**Analysis**: {}\n**Stance Judgment**: {}",
            devices_line(&self.devices),
            self.intent_analysis,
            judgment_code(&self.judgment)
        )
    }
}

pub(crate) fn judgment_code(judgment: &StanceJudgment) -> String {
    match judgment.sub_code {
        Some(sub) => format!("{}.{}", judgment.option_code, sub),
        None => judgment.option_code.to_string(),
    }
}

pub(crate) fn fsl_block(fsl: &FineGrainedLabels) -> String {
    let mut out = String::from("A. Favor:\n");
    for (code, desc) in &fsl.favor_sub {
        out.push_str(&format!("{code}. {desc}\n"));
    }
    out.push_str("B. Against:\n");
    for (code, desc) in &fsl.against_sub {
        out.push_str(&format!("{code}. {desc}\n"));
    }
    out.push_str("C. Neutral/None");
    out
}

pub(crate) fn devices_line(devices: &[String]) -> String {
    if devices.is_empty() {
        "none".to_string()
    } else {
        devices.join(", ")
    }
}

/// Distills the raw knowledge against the sample and reasons from it.
pub fn knowledge_expert(
    ctx: &PipelineCtx<'_>,
    scope: &GatewayScope<'_>,
    sample: &Sample,
    raw: &RawKnowledge,
    esl: &ExplicitStanceLabels,
) -> Result<KnowledgeExpertOutput, ExpertError> {
    let vars = BTreeMap::from([
        ("target", sample.target.clone()),
        ("raw_knowledge", raw.concatenated.clone()),
        ("esl_block", esl.block()),
        ("comment", sample.text.clone()),
    ]);
    let prompt = ctx
        .registry
        .render(PromptRole::KnowledgeExpert, ctx.lang, &vars)?;
    let outcome = chat_parsed(scope, Role::KnowledgeExpert, ctx.router, &prompt, parse_knowledge_transcript)?;
    Ok(match outcome {
        ChatParseOutcome::Parsed(mut output) => {
            output.warnings.extend(provenance_warnings(&output.refined, &raw.concatenated));
            output
        }
        ChatParseOutcome::Failed { error, content } => {
            KnowledgeExpertOutput::flagged_placeholder(content, &error)
        }
    })
}

pub fn parse_knowledge_transcript(content: &str) -> Result<KnowledgeExpertOutput, ParseError> {
    let sections = split_sections(content);
    let refined_text = sections.get_non_empty("Refined knowledge")?.to_string();
    let refined = split_refined(&refined_text);
    if refined.is_empty() {
        return Err(ParseError::EmptySection("Refined knowledge"));
    }
    let pairs = parse_pairs(sections.get_required("Reasoning")?)?;
    let judgment = parse_stance_code(sections.get_non_empty("Stance Judgment")?, false)?;
    Ok(KnowledgeExpertOutput {
        refined,
        refined_text,
        pairs,
        judgment,
        raw: content.to_string(),
        flagged: false,
        warnings: Vec::new(),
    })
}

/// Soft provenance check: each refined item should be a sentence drawn
/// from the raw knowledge (substring, or >= 0.9 token overlap with some
/// raw sentence). Violations warn; models drift.
fn provenance_warnings(refined: &[String], raw: &str) -> Vec<String> {
    let raw_sentences = split_sentences(raw);
    let raw_token_sets: Vec<std::collections::BTreeSet<String>> = raw_sentences
        .iter()
        .map(|s| token_set(s))
        .collect();
    refined
        .iter()
        .filter(|item| {
            if raw.contains(item.trim_end_matches('.')) {
                return false;
            }
            let item_tokens = token_set(item);
            if item_tokens.is_empty() {
                return false;
            }
            let best = raw_token_sets
                .iter()
                .map(|s| {
                    item_tokens.intersection(s).count() as f64 / item_tokens.len() as f64
                })
                .fold(0.0f64, f64::max);
            best < PROVENANCE_OVERLAP
        })
        .map(|item| format!("refined item not traceable to raw knowledge: {:.60}", item))
        .collect()
}

fn split_sentences(text: &str) -> Vec<&str> {
    let mut sentences = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if SENTENCE_ENDINGS.contains(&c) {
            let end = i + c.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() {
                sentences.push(s);
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail);
    }
    sentences
}

fn token_set(text: &str) -> std::collections::BTreeSet<String> {
    tokenize(text)
        .into_iter()
        .map(|t| text[t.byte_start..t.byte_end].to_lowercase())
        .collect()
}

/// Builds the fine-grained label system and judges against it.
/// `background` is the Knowledge Expert's retained text, or the raw
/// concatenation when that expert is disabled.
pub fn label_expert(
    ctx: &PipelineCtx<'_>,
    scope: &GatewayScope<'_>,
    sample: &Sample,
    background: &str,
    esl: &ExplicitStanceLabels,
) -> Result<LabelExpertOutput, ExpertError> {
    let vars = BTreeMap::from([
        ("target", sample.target.clone()),
        ("background", background.to_string()),
        ("esl_block", esl.block()),
        ("comment", sample.text.clone()),
    ]);
    let prompt = ctx.registry.render(PromptRole::LabelExpert, ctx.lang, &vars)?;
    let outcome = chat_parsed(scope, Role::LabelExpert, ctx.router, &prompt, parse_label_transcript)?;
    Ok(match outcome {
        ChatParseOutcome::Parsed(mut output) => {
            // A sub-code must name a parsed sub-label; otherwise degrade
            // to the coarse label and warn.
            if let Some(sub) = output.judgment.sub_code {
                if output.fsl.sub_desc(output.judgment.label, sub).is_none() {
                    output.warnings.push(format!(
                        "unknown sub-code {}.{sub}; downgraded to coarse label",
                        output.judgment.option_code
                    ));
                    output.judgment.sub_code = None;
                }
            }
            output
        }
        ChatParseOutcome::Failed { error, content } => {
            LabelExpertOutput::flagged_placeholder(content, &error)
        }
    })
}

pub fn parse_label_transcript(content: &str) -> Result<LabelExpertOutput, ParseError> {
    let sections = split_sections(content);
    let fsl = parse_fsl(sections.get_required("Fine-grained Stance Labels")?)?;
    let analysis = sections.get_required("Analysis")?.to_string();
    let judgment = parse_stance_code(sections.get_non_empty("Stance Judgment")?, true)?;
    Ok(LabelExpertOutput {
        fsl,
        analysis,
        judgment,
        raw: content.to_string(),
        flagged: false,
        warnings: Vec::new(),
    })
}

/// Detects rhetorical devices and infers the intent behind them.
pub fn pragmatic_expert(
    ctx: &PipelineCtx<'_>,
    scope: &GatewayScope<'_>,
    sample: &Sample,
    background: &str,
    esl: &ExplicitStanceLabels,
) -> Result<PragmaticExpertOutput, ExpertError> {
    let vars = BTreeMap::from([
        ("target", sample.target.clone()),
        ("background", background.to_string()),
        ("esl_block", esl.block()),
        ("comment", sample.text.clone()),
    ]);
    let prompt = ctx
        .registry
        .render(PromptRole::PragmaticExpert, ctx.lang, &vars)?;
    let outcome = chat_parsed(scope, Role::PragmaticExpert, ctx.router, &prompt, parse_pragmatic_transcript)?;
    Ok(match outcome {
        ChatParseOutcome::Parsed(output) => output,
        ChatParseOutcome::Failed { error, content } => {
            PragmaticExpertOutput::flagged_placeholder(content, &error)
        }
    })
}

pub fn parse_pragmatic_transcript(content: &str) -> Result<PragmaticExpertOutput, ParseError> {
    let sections = split_sections(content);
    let devices = parse_devices(sections.get_required("Rhetorical Devices")?)?;
    let intent_analysis = sections.get_required("Analysis")?.to_string();
    let judgment = parse_stance_code(sections.get_non_empty("Stance Judgment")?, false)?;
    Ok(PragmaticExpertOutput {
        devices,
        intent_analysis,
        judgment,
        raw: content.to_string(),
        flagged: false,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_knowledge_transcript() {
        let out = parse_knowledge_transcript(
            "**Refined knowledge**: X\n**Reasoning**:\n1. X --> Y\n**Stance Judgment**: C",
        )
        .unwrap();
        assert_eq!(out.refined, vec!["X"]);
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.judgment.label, StanceLabel::Neutral);
        assert!(!out.flagged);
    }

    #[test]
    fn knowledge_transcript_without_pairs_fails() {
        let err = parse_knowledge_transcript(
            "**Refined knowledge**: X\n**Reasoning**:\nprose only\n**Stance Judgment**: C",
        )
        .unwrap_err();
        assert!(matches!(err, ParseError::NoPairs));
    }

    #[test]
    fn label_transcript_with_sub_code() {
        let content = "***Fine-grained Stance Labels**:\nA. Favor:\na. one\nB. Against:\na. two\nb. three\nC. Neutral/None\n**Analysis**: text\n**Stance Judgment**: B.b";
        let out = parse_label_transcript(content).unwrap();
        assert_eq!(out.judgment.label, StanceLabel::Against);
        assert_eq!(out.judgment.sub_code, Some('b'));
        assert_eq!(out.fsl.sub_desc(StanceLabel::Against, 'b'), Some("three"));
    }

    #[test]
    fn neutral_judgment_has_no_sub() {
        let content = "***Fine-grained Stance Labels**:\nA. Favor:\na. one\nB. Against:\na. two\nC. Neutral/None\n**Analysis**: t\n**Stance Judgment**: C";
        let out = parse_label_transcript(content).unwrap();
        assert_eq!(out.judgment.label, StanceLabel::Neutral);
        assert_eq!(out.judgment.sub_code, None);
    }

    #[test]
    fn pragmatic_none_devices() {
        let content = "***Rhetorical Devices**: none\n**Analysis**: literal reading\n**Stance Judgment**: A";
        let out = parse_pragmatic_transcript(content).unwrap();
        assert!(out.devices.is_empty());
        assert_eq!(out.judgment.label, StanceLabel::Favor);
    }

    #[test]
    fn pragmatic_single_device() {
        let content = "***Rhetorical Devices**: Metaphor\n**Analysis**: x\n**Stance Judgment**: A. Favor";
        let out = parse_pragmatic_transcript(content).unwrap();
        assert_eq!(out.devices, vec!["Metaphor"]);
        assert_eq!(out.judgment.label, StanceLabel::Favor);
    }

    #[test]
    fn canonical_round_trips() {
        let ke = parse_knowledge_transcript(
            "**Refined knowledge**: Fact one.; Fact two.\n**Reasoning**:\n1. Fact one. --> C1\n2. Fact two. --> C2\n**Stance Judgment**: B",
        )
        .unwrap();
        let re = parse_knowledge_transcript(&ke.canonical()).unwrap();
        assert_eq!(re.refined, ke.refined);
        assert_eq!(re.refined_text, ke.refined_text);
        assert_eq!(re.pairs, ke.pairs);
        assert_eq!(re.judgment.label, ke.judgment.label);
        assert_eq!(re.judgment.sub_code, ke.judgment.sub_code);

        let le = parse_label_transcript(
            "**Fine-grained Stance Labels**:\nA. Favor:\na. one\nb. two\nB. Against:\na. three\nC. Neutral/None\n**Analysis**: because\n**Stance Judgment**: A.b",
        )
        .unwrap();
        let re = parse_label_transcript(&le.canonical()).unwrap();
        assert_eq!(re.fsl, le.fsl);
        assert_eq!(re.analysis, le.analysis);
        assert_eq!(re.judgment.label, le.judgment.label);
        assert_eq!(re.judgment.sub_code, le.judgment.sub_code);

        let pe = parse_pragmatic_transcript(
            "**Rhetorical Devices**: Irony, Allusion\n**Analysis**: layered\n**Stance Judgment**: B",
        )
        .unwrap();
        let re = parse_pragmatic_transcript(&pe.canonical()).unwrap();
        assert_eq!(re.devices, pe.devices);
        assert_eq!(re.intent_analysis, pe.intent_analysis);
        assert_eq!(re.judgment.label, pe.judgment.label);
    }

    #[test]
    fn provenance_flags_fabricated_items() {
        let raw = "Atheism is a rejection of belief. Theism is the opposite position.";
        let warnings = provenance_warnings(
            &["Atheism is a rejection of belief.".to_string()],
            raw,
        );
        assert!(warnings.is_empty());
        let warnings = provenance_warnings(
            &["Something entirely different about clouds and weather patterns.".to_string()],
            raw,
        );
        assert_eq!(warnings.len(), 1);
    }
}
