//! Stage 3: decision aggregation.
//!
//! The meta-judge combines whichever experts ran into a final stance.
//! The module also carries the comparison aggregators (majority vote
//! and the single-prompt integrated run), the direct baselines, and the
//! three-model majority-vote rhetoric detector.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, ParseError};
use crate::experts::{
    devices_line, fsl_block, judgment_code, normalize_device, split_sections, ExpertError,
    KnowledgeExpertOutput, LabelExpertOutput, PipelineCtx, PragmaticExpertOutput,
};
use crate::gateway::{GatewayScope, Role};
use crate::knowledge::RawKnowledge;
use crate::prompts::PromptRole;
use crate::retry::{chat_parsed, ChatParseOutcome};
use crate::stance::{parse_stance_code, ExplicitStanceLabels, Sample, StanceJudgment, StanceLabel};

/// Which aggregation path produced a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    MetaJudge,
    Vote,
    Integrated,
    Base,
    NoExpert,
}

/// The three experts, also used as ablation-mask members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExpertKind {
    #[serde(rename = "KE")]
    Knowledge,
    #[serde(rename = "LE")]
    Label,
    #[serde(rename = "PE")]
    Pragmatic,
}

impl ExpertKind {
    pub const ALL: [ExpertKind; 3] = [ExpertKind::Knowledge, ExpertKind::Label, ExpertKind::Pragmatic];

    pub fn tag(self) -> &'static str {
        match self {
            ExpertKind::Knowledge => "KE",
            ExpertKind::Label => "LE",
            ExpertKind::Pragmatic => "PE",
        }
    }
}

/// An expert's judgment as it entered aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributingJudgment {
    pub expert: ExpertKind,
    pub judgment: StanceJudgment,
}

/// The per-sample outcome of stage 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalDecision {
    pub stance: StanceLabel,
    pub analysis: String,
    pub mode: DecisionMode,
    pub contributing: Vec<ContributingJudgment>,
    pub flagged: bool,
}

impl FinalDecision {
    pub fn flagged_neutral(mode: DecisionMode, contributing: Vec<ContributingJudgment>) -> Self {
        FinalDecision {
            stance: StanceLabel::Neutral,
            analysis: String::new(),
            mode,
            contributing,
            flagged: true,
        }
    }
}

fn expert_blocks(
    ke: Option<&KnowledgeExpertOutput>,
    le: Option<&LabelExpertOutput>,
    pe: Option<&PragmaticExpertOutput>,
) -> String {
    let mut blocks = Vec::new();
    if let Some(ke) = ke {
        let pairs = ke
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{}. {} --> {}", i + 1, p.knowledge, p.conclusion))
            .collect::<Vec<_>>()
            .join("\n");
        blocks.push(format!("#Knowledge Expert#:\n***Reasoning**:\n{pairs}"));
    }
    if let Some(le) = le {
        blocks.push(format!(
            "#Label Expert#:\n***Fine-grained Stance Labels**:\n{}\n**Analysis**: {}",
            fsl_block(&le.fsl),
            le.analysis
        ));
    }
    if let Some(pe) = pe {
        blocks.push(format!(
            "#Pragmatic Expert#:\n***Rhetorical Devices**: {}\n**Analysis**: {}",
            devices_line(&pe.devices),
            pe.intent_analysis
        ));
    }
    blocks.join("\n")
}

fn contributions(
    ke: Option<&KnowledgeExpertOutput>,
    le: Option<&LabelExpertOutput>,
    pe: Option<&PragmaticExpertOutput>,
) -> Vec<ContributingJudgment> {
    let mut list = Vec::new();
    if let Some(ke) = ke {
        list.push(ContributingJudgment {
            expert: ExpertKind::Knowledge,
            judgment: ke.judgment.clone(),
        });
    }
    if let Some(le) = le {
        list.push(ContributingJudgment {
            expert: ExpertKind::Label,
            judgment: le.judgment.clone(),
        });
    }
    if let Some(pe) = pe {
        list.push(ContributingJudgment {
            expert: ExpertKind::Pragmatic,
            judgment: pe.judgment.clone(),
        });
    }
    list
}

/// Synthesizes the enabled experts' analyses into the final stance.
/// Disabled experts' blocks are omitted from the prompt entirely.
pub fn meta_judge(
    ctx: &PipelineCtx<'_>,
    scope: &GatewayScope<'_>,
    sample: &Sample,
    esl: &ExplicitStanceLabels,
    background: &str,
    ke: Option<&KnowledgeExpertOutput>,
    le: Option<&LabelExpertOutput>,
    pe: Option<&PragmaticExpertOutput>,
) -> Result<FinalDecision, ExpertError> {
    assert!(
        ke.is_some() || le.is_some() || pe.is_some(),
        "meta_judge requires at least one expert output"
    );
    let vars = BTreeMap::from([
        ("target", sample.target.clone()),
        ("esl_block", esl.block()),
        ("background", background.to_string()),
        ("comment", sample.text.clone()),
        ("expert_blocks", expert_blocks(ke, le, pe)),
    ]);
    let prompt = ctx.registry.render(PromptRole::MetaJudge, ctx.lang, &vars)?;
    let contributing = contributions(ke, le, pe);
    let outcome = chat_parsed(scope, Role::MetaJudge, ctx.router, &prompt, parse_decision_transcript)?;
    Ok(match outcome {
        ChatParseOutcome::Parsed((stance, analysis)) => FinalDecision {
            stance,
            analysis,
            mode: DecisionMode::MetaJudge,
            contributing,
            flagged: false,
        },
        ChatParseOutcome::Failed { .. } => {
            FinalDecision::flagged_neutral(DecisionMode::MetaJudge, contributing)
        }
    })
}

/// Parses a final-decision transcript: optional Analysis plus the
/// required Stance Judgment.
pub fn parse_decision_transcript(content: &str) -> Result<(StanceLabel, String), ParseError> {
    let sections = split_sections(content);
    let judgment = parse_stance_code(sections.get_non_empty("Stance Judgment")?, false)?;
    let analysis = sections.get("Analysis").unwrap_or("").to_string();
    Ok((judgment.label, analysis))
}

/// Majority vote over expert judgments; full ties resolve by the fixed
/// expert priority Knowledge > Label > Pragmatic.
pub fn vote_aggregate(
    judgments: &[(ExpertKind, StanceLabel)],
) -> Result<StanceLabel, EvalError> {
    if judgments.is_empty() {
        return Err(EvalError::EmptyJudgments);
    }
    let mut counts: BTreeMap<StanceLabel, usize> = BTreeMap::new();
    for (_, label) in judgments {
        *counts.entry(*label).or_default() += 1;
    }
    let best = *counts.values().max().unwrap();
    let tied: Vec<StanceLabel> = counts
        .iter()
        .filter(|(_, &c)| c == best)
        .map(|(l, _)| *l)
        .collect();
    if tied.len() == 1 {
        return Ok(tied[0]);
    }
    // Tie: highest-priority expert whose label is still in contention.
    for kind in ExpertKind::ALL {
        if let Some((_, label)) = judgments
            .iter()
            .find(|(k, l)| *k == kind && tied.contains(l))
        {
            log::info!("vote tie resolved by expert priority: {} -> {label}", kind.tag());
            return Ok(*label);
        }
    }
    Ok(tied[0])
}

/// Runs expert reasoning and aggregation as one prompt, for the
/// decision-capability comparison.
pub fn integrated_run(
    ctx: &PipelineCtx<'_>,
    scope: &GatewayScope<'_>,
    sample: &Sample,
    esl: &ExplicitStanceLabels,
    raw: &RawKnowledge,
) -> Result<FinalDecision, ExpertError> {
    let vars = BTreeMap::from([
        ("target", sample.target.clone()),
        ("raw_knowledge", raw.concatenated.clone()),
        ("esl_block", esl.block()),
        ("comment", sample.text.clone()),
    ]);
    let prompt = ctx.registry.render(PromptRole::Integrated, ctx.lang, &vars)?;
    let outcome = chat_parsed(scope, Role::Integrated, ctx.router, &prompt, parse_decision_transcript)?;
    Ok(decision_from_outcome(outcome, DecisionMode::Integrated))
}

/// Classification from ESL + raw knowledge alone (the no-expert
/// ablation row).
pub fn no_expert_run(
    ctx: &PipelineCtx<'_>,
    scope: &GatewayScope<'_>,
    sample: &Sample,
    esl: &ExplicitStanceLabels,
    raw: &RawKnowledge,
) -> Result<FinalDecision, ExpertError> {
    let vars = BTreeMap::from([
        ("target", sample.target.clone()),
        ("raw_knowledge", raw.concatenated.clone()),
        ("esl_block", esl.block()),
        ("comment", sample.text.clone()),
    ]);
    let prompt = ctx.registry.render(PromptRole::NoExpert, ctx.lang, &vars)?;
    let outcome = chat_parsed(scope, Role::NoExpert, ctx.router, &prompt, parse_decision_transcript)?;
    Ok(decision_from_outcome(outcome, DecisionMode::NoExpert))
}

/// Bare-label direct prompt, the weakest comparison baseline.
pub fn base_run(
    ctx: &PipelineCtx<'_>,
    scope: &GatewayScope<'_>,
    sample: &Sample,
) -> Result<FinalDecision, ExpertError> {
    let vars = BTreeMap::from([
        ("target", sample.target.clone()),
        ("comment", sample.text.clone()),
    ]);
    let prompt = ctx.registry.render(PromptRole::Base, ctx.lang, &vars)?;
    let outcome = chat_parsed(scope, Role::Base, ctx.router, &prompt, parse_decision_transcript)?;
    Ok(decision_from_outcome(outcome, DecisionMode::Base))
}

fn decision_from_outcome(
    outcome: ChatParseOutcome<(StanceLabel, String)>,
    mode: DecisionMode,
) -> FinalDecision {
    match outcome {
        ChatParseOutcome::Parsed((stance, analysis)) => FinalDecision {
            stance,
            analysis,
            mode,
            contributing: Vec::new(),
            flagged: false,
        },
        ChatParseOutcome::Failed { .. } => FinalDecision::flagged_neutral(mode, Vec::new()),
    }
}

/// One voter's answer in the rhetoric-detection vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoterVote {
    pub model_id: String,
    pub answered_yes: bool,
    pub devices: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Three-model majority vote on whether a text contains rhetoric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhetoricVote {
    pub per_model: Vec<VoterVote>,
    pub has_rhetoric: bool,
    pub devices_union: Vec<String>,
}

/// Asks three voter models whether the sample contains rhetorical
/// devices; two or more yes answers set the flag. An answer starting
/// with neither yes nor no counts as no, with a warning.
pub fn detect_rhetoric(
    ctx: &PipelineCtx<'_>,
    scope: &GatewayScope<'_>,
    sample: &Sample,
    voters: &[String],
) -> Result<RhetoricVote, ExpertError> {
    assert_eq!(voters.len(), 3, "rhetoric detection takes exactly 3 voters");
    let vars = BTreeMap::from([
        ("target", sample.target.clone()),
        ("comment", sample.text.clone()),
    ]);
    let prompt = ctx.registry.render(PromptRole::Rhetoric, ctx.lang, &vars)?;

    let mut per_model = Vec::with_capacity(3);
    for model in voters {
        let request = ctx
            .router
            .request_for_model(model, &prompt.system, &prompt.user);
        let response = scope.chat(Role::RhetoricVoter, &request)?;
        per_model.push(parse_vote(model, &response.content));
    }

    let yes_count = per_model.iter().filter(|v| v.answered_yes).count();
    let mut devices_union: Vec<String> = Vec::new();
    for vote in per_model.iter().filter(|v| v.answered_yes) {
        for device in &vote.devices {
            if !devices_union.contains(device) {
                devices_union.push(device.clone());
            }
        }
    }
    Ok(RhetoricVote {
        per_model,
        has_rhetoric: yes_count >= 2,
        devices_union,
    })
}

/// Parses one voter response of the form `Yes, Allusion.` or `No`.
pub fn parse_vote(model_id: &str, content: &str) -> VoterVote {
    let cleaned = content.trim_matches(|c: char| c == '*' || c.is_whitespace());
    if cleaned.get(..3).is_some_and(|s| s.eq_ignore_ascii_case("yes")) {
        let rest = cleaned[3..].trim_start_matches([',', ':', '.', ' ', '!']);
        let devices = rest
            .split(',')
            .map(normalize_device)
            .filter(|d| !d.is_empty())
            .collect();
        VoterVote {
            model_id: model_id.to_string(),
            answered_yes: true,
            devices,
            warning: None,
        }
    } else if cleaned.get(..2).is_some_and(|s| s.eq_ignore_ascii_case("no")) {
        VoterVote {
            model_id: model_id.to_string(),
            answered_yes: false,
            devices: Vec::new(),
            warning: None,
        }
    } else {
        VoterVote {
            model_id: model_id.to_string(),
            answered_yes: false,
            devices: Vec::new(),
            warning: Some(format!("unparseable vote counted as no: {:.60}", content)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_majority_two_of_three() {
        let result = vote_aggregate(&[
            (ExpertKind::Knowledge, StanceLabel::Against),
            (ExpertKind::Label, StanceLabel::Against),
            (ExpertKind::Pragmatic, StanceLabel::Favor),
        ])
        .unwrap();
        assert_eq!(result, StanceLabel::Against);
    }

    #[test]
    fn vote_three_way_tie_uses_expert_priority() {
        // All three disagree; the Knowledge Expert outranks the others.
        let result = vote_aggregate(&[
            (ExpertKind::Knowledge, StanceLabel::Favor),
            (ExpertKind::Label, StanceLabel::Against),
            (ExpertKind::Pragmatic, StanceLabel::Neutral),
        ])
        .unwrap();
        assert_eq!(result, StanceLabel::Favor);
    }

    #[test]
    fn vote_two_way_tie_uses_expert_priority() {
        let result = vote_aggregate(&[
            (ExpertKind::Label, StanceLabel::Against),
            (ExpertKind::Pragmatic, StanceLabel::Neutral),
        ])
        .unwrap();
        assert_eq!(result, StanceLabel::Against);
    }

    #[test]
    fn vote_single_judgment_passes_through() {
        let result = vote_aggregate(&[(ExpertKind::Knowledge, StanceLabel::Neutral)]).unwrap();
        assert_eq!(result, StanceLabel::Neutral);
    }

    #[test]
    fn vote_empty_is_an_error() {
        assert!(matches!(vote_aggregate(&[]), Err(EvalError::EmptyJudgments)));
    }

    #[test]
    fn vote_unanimity_property() {
        for label in [StanceLabel::Favor, StanceLabel::Against, StanceLabel::Neutral] {
            for n in 1..=3usize {
                let judgments: Vec<(ExpertKind, StanceLabel)> = ExpertKind::ALL
                    .into_iter()
                    .take(n)
                    .map(|k| (k, label))
                    .collect();
                assert_eq!(vote_aggregate(&judgments).unwrap(), label);
            }
        }
    }

    #[test]
    fn parse_vote_forms() {
        let v = parse_vote("m1", "Yes, Allusion.");
        assert!(v.answered_yes);
        assert_eq!(v.devices, vec!["Allusion"]);
        let v = parse_vote("m1", "Yes, Irony, Metaphor");
        assert_eq!(v.devices, vec!["Irony", "Metaphor"]);
        let v = parse_vote("m1", "No");
        assert!(!v.answered_yes);
        assert!(v.warning.is_none());
        let v = parse_vote("m1", "Maybe?");
        assert!(!v.answered_yes);
        assert!(v.warning.is_some());
    }

    #[test]
    fn decision_transcript_parses_judgment_and_analysis() {
        let (stance, analysis) =
            parse_decision_transcript("***Analysis**: combined reading\n**Stance Judgment**: B. Against")
                .unwrap();
        assert_eq!(stance, StanceLabel::Against);
        assert_eq!(analysis, "combined reading");
        // Judgment alone still parses; analysis defaults to empty.
        let (stance, analysis) = parse_decision_transcript("**Stance Judgment**: A").unwrap();
        assert_eq!(stance, StanceLabel::Favor);
        assert!(analysis.is_empty());
        // No judgment at all fails.
        assert!(parse_decision_transcript("**Analysis**: only prose").is_err());
    }
}
