//! Pipeline runner: executes a configured mode over a dataset and
//! assembles a deterministic run manifest.
//!
//! Per-sample failures (backend faults, replay misses, unparseable
//! output) flag the sample and score it Neutral; only configuration
//! problems abort a run. Manifests exclude wall-clock data, so two runs
//! with the same configuration and cache serialize byte-identically;
//! timestamps live in a separate header file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::aggregation::{
    base_run, integrated_run, meta_judge, no_expert_run, vote_aggregate, ContributingJudgment,
    DecisionMode, ExpertKind, FinalDecision,
};
use crate::config::{PromptLang, RunConfig, RunMode};
use crate::error::EvalError;
use crate::evaluation::dataset::{Dataset, DatasetKind};
use crate::evaluation::metrics::{f1_per_class, f_avg, macro_f1};
use crate::experts::{
    knowledge_expert, label_expert, pragmatic_expert, ExpertError, KnowledgeExpertOutput,
    LabelExpertOutput, PipelineCtx, PragmaticExpertOutput,
};
use crate::gateway::{CallRecord, Gateway, GatewayScope};
use crate::knowledge::{inject_noise, KnowledgeChunk, KnowledgeStore, RawKnowledge};
use crate::prompts::PromptRegistry;
use crate::stance::{Language, Sample, StanceLabel};

pub const MANIFEST_VERSION: u32 = 1;

/// Everything the runner needs besides configuration.
pub struct PipelineDeps<'a> {
    pub gateway: &'a Gateway,
    pub registry: &'a PromptRegistry,
    pub knowledge: &'a KnowledgeStore,
}

/// Knowledge snapshot for one sample's run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeUse {
    pub provided_background: bool,
    pub noisy: bool,
    pub original_chunks: usize,
    pub chunk_count: usize,
    pub background: String,
}

/// Full trace for one sample: every call, parsed outputs, decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub id: String,
    pub target: String,
    pub gold: Option<StanceLabel>,
    pub language: Language,
    pub knowledge: KnowledgeUse,
    pub calls: Vec<CallRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge_expert: Option<KnowledgeExpertOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_expert: Option<LabelExpertOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pragmatic_expert: Option<PragmaticExpertOutput>,
    pub decision: FinalDecision,
    pub warnings: Vec<String>,
}

/// Aggregate scores over one slice of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub n: usize,
    pub f_avg: f64,
    pub macro_f1: f64,
    pub per_class: BTreeMap<String, f64>,
    pub flag_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: MetricSet,
    pub per_target: BTreeMap<String, MetricSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub kind: DatasetKind,
    pub sample_count: usize,
    pub label_set: Vec<StanceLabel>,
    pub per_target_counts: BTreeMap<String, usize>,
}

/// The audited output of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub config: RunConfig,
    pub dataset: DatasetSummary,
    pub samples: Vec<SampleTrace>,
    pub metrics: MetricsReport,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Writes `manifest.json` plus a `header.json` holding the
    /// timestamp, keeping the manifest itself reproducible.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, EvalError> {
        std::fs::create_dir_all(dir).map_err(|source| EvalError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let path = dir.join("manifest.json");
        std::fs::write(&path, self.to_json()).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let header = serde_json::json!({
            "created_unix_secs": std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            "manifest_version": self.version,
        });
        let header_path = dir.join("header.json");
        std::fs::write(&header_path, serde_json::to_string_pretty(&header).unwrap()).map_err(
            |source| EvalError::Io {
                path: header_path.display().to_string(),
                source,
            },
        )?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let body = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let manifest: RunManifest =
            serde_json::from_str(&body).map_err(|source| EvalError::Json {
                path: path.display().to_string(),
                source,
            })?;
        if manifest.version != MANIFEST_VERSION {
            return Err(EvalError::ManifestVersionMismatch {
                found: manifest.version,
                expected: MANIFEST_VERSION,
            });
        }
        Ok(manifest)
    }

    /// Final stances in sample order.
    pub fn stances(&self) -> Vec<StanceLabel> {
        self.samples.iter().map(|s| s.decision.stance).collect()
    }
}

/// Computes a metric set over parallel prediction/gold/flag slices.
pub fn metric_set(
    preds: &[StanceLabel],
    golds: &[StanceLabel],
    flags: &[bool],
    label_set: &[StanceLabel],
) -> Result<MetricSet, EvalError> {
    let mut per_class = BTreeMap::new();
    for class in label_set {
        per_class.insert(class.as_str().to_string(), f1_per_class(preds, golds, *class)?);
    }
    Ok(MetricSet {
        n: preds.len(),
        f_avg: f_avg(preds, golds)?,
        macro_f1: macro_f1(preds, golds, label_set)?,
        per_class,
        flag_rate: flags.iter().filter(|f| **f).count() as f64 / flags.len().max(1) as f64,
    })
}

/// Metrics for a subset of traces selected by `keep`.
pub fn metrics_for(
    samples: &[SampleTrace],
    label_set: &[StanceLabel],
    keep: impl Fn(&SampleTrace) -> bool,
) -> Result<Option<MetricSet>, EvalError> {
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    let mut flags = Vec::new();
    for trace in samples.iter().filter(|t| keep(t)) {
        let Some(gold) = trace.gold else { continue };
        preds.push(trace.decision.stance);
        golds.push(gold);
        flags.push(trace.decision.flagged);
    }
    if preds.is_empty() {
        return Ok(None);
    }
    Ok(Some(metric_set(&preds, &golds, &flags, label_set)?))
}

fn compute_metrics(
    samples: &[SampleTrace],
    dataset: &Dataset,
) -> Result<MetricsReport, EvalError> {
    let overall = metrics_for(samples, &dataset.label_set, |_| true)?
        .ok_or_else(|| EvalError::EmptyDataset(dataset.name.clone()))?;
    let mut per_target = BTreeMap::new();
    for target in dataset.per_target_counts.keys() {
        if let Some(set) = metrics_for(samples, &dataset.label_set, |t| &t.target == target)? {
            per_target.insert(target.clone(), set);
        }
    }
    Ok(MetricsReport {
        overall,
        per_target,
    })
}

/// Distractor pools per target for noise injection.
struct NoisePools {
    shared: Option<Vec<KnowledgeChunk>>,
}

impl NoisePools {
    fn build(config: &RunConfig) -> Result<Self, EvalError> {
        let shared = match &config.noise.distractors {
            Some(path) => {
                let body = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                let texts: Vec<String> =
                    serde_json::from_str(&body).map_err(|source| EvalError::Json {
                        path: path.display().to_string(),
                        source,
                    })?;
                Some(
                    texts
                        .into_iter()
                        .map(|text| {
                            let tokens = crate::knowledge::token_count(&text);
                            KnowledgeChunk {
                                text,
                                token_span: (0, tokens),
                                source_url: None,
                                embedding: None,
                            }
                        })
                        .collect(),
                )
            }
            None => None,
        };
        Ok(NoisePools { shared })
    }

    fn pool_for(&self, store: &KnowledgeStore, target: &str) -> Vec<KnowledgeChunk> {
        match &self.shared {
            Some(pool) => pool.clone(),
            None => store.distractors_for(target),
        }
    }
}

/// Executes the configured mode over every sample and assembles the
/// manifest. Aborts only on configuration-level errors; per-sample
/// failures flag the sample.
pub fn run_pipeline(
    config: &RunConfig,
    dataset: &Dataset,
    deps: &PipelineDeps<'_>,
) -> Result<RunManifest, EvalError> {
    config
        .validate()
        .map_err(|e| EvalError::SchemaError { line: 0, reason: e.to_string() })?;
    let router = config.router();

    // Missing knowledge or thin distractor pools are configuration
    // errors; surface them before burning any backend calls.
    let noise_pools = NoisePools::build(config)?;
    for target in dataset.per_target_counts.keys() {
        let pk = deps
            .knowledge
            .get(target)
            .ok_or_else(|| EvalError::MissingKnowledge(target.clone()))?;
        if config.noise.enabled {
            let pool = noise_pools.pool_for(deps.knowledge, target);
            if pool.len() < pk.chunks.len() {
                return Err(EvalError::Knowledge(
                    crate::error::KnowledgeError::InsufficientDistractors {
                        needed: pk.chunks.len(),
                        available: pool.len(),
                    },
                ));
            }
        }
    }

    let samples = &dataset.samples;
    let slots: Vec<Mutex<Option<SampleTrace>>> =
        samples.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.run.parallelism.min(samples.len()).max(1);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= samples.len() {
                    break;
                }
                let trace = process_sample(
                    &samples[i],
                    config,
                    deps,
                    &router,
                    &noise_pools,
                    &dataset.label_set,
                );
                *slots[i].lock().unwrap() = Some(trace);
            });
        }
    });

    let samples: Vec<SampleTrace> = slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every slot filled"))
        .collect();
    let metrics = compute_metrics(&samples, dataset)?;

    Ok(RunManifest {
        version: MANIFEST_VERSION,
        config: config.clone(),
        dataset: DatasetSummary {
            name: dataset.name.clone(),
            kind: dataset.kind,
            sample_count: dataset.samples.len(),
            label_set: dataset.label_set.clone(),
            per_target_counts: dataset.per_target_counts.clone(),
        },
        samples,
        metrics,
    })
}

struct SampleOutputs {
    knowledge: KnowledgeUse,
    ke: Option<KnowledgeExpertOutput>,
    le: Option<LabelExpertOutput>,
    pe: Option<PragmaticExpertOutput>,
    decision: FinalDecision,
}

fn process_sample(
    sample: &Sample,
    config: &RunConfig,
    deps: &PipelineDeps<'_>,
    router: &crate::gateway::ModelRouter,
    noise_pools: &NoisePools,
    label_set: &[StanceLabel],
) -> SampleTrace {
    let scope = deps.gateway.scope();
    let lang = match config.run.prompt_lang {
        PromptLang::En => Language::En,
        PromptLang::Zh => Language::Zh,
        PromptLang::Auto => sample.language,
    };
    let ctx = PipelineCtx {
        registry: deps.registry,
        router,
        lang,
    };
    let mut warnings = Vec::new();

    let outputs = run_sample_mode(sample, config, deps, &ctx, &scope, noise_pools, label_set);
    let (knowledge, ke, le, pe, decision) = match outputs {
        Ok(out) => (out.knowledge, out.ke, out.le, out.pe, out.decision),
        Err(failure) => {
            warnings.push(failure);
            let mode = match config.run.mode {
                RunMode::Msme if config.run.mask.is_empty() => DecisionMode::NoExpert,
                RunMode::Msme => DecisionMode::MetaJudge,
                RunMode::Vote => DecisionMode::Vote,
                RunMode::Integrated => DecisionMode::Integrated,
                RunMode::Base => DecisionMode::Base,
                RunMode::NoExpert => DecisionMode::NoExpert,
            };
            (
                KnowledgeUse {
                    provided_background: false,
                    noisy: config.noise.enabled,
                    original_chunks: 0,
                    chunk_count: 0,
                    background: String::new(),
                },
                None,
                None,
                None,
                FinalDecision::flagged_neutral(mode, Vec::new()),
            )
        }
    };

    for output_warnings in [
        ke.as_ref().map(|o| o.warnings.clone()),
        le.as_ref().map(|o| o.warnings.clone()),
        pe.as_ref().map(|o| o.warnings.clone()),
    ]
    .into_iter()
    .flatten()
    {
        warnings.extend(output_warnings);
    }

    SampleTrace {
        id: sample.id.clone(),
        target: sample.target.clone(),
        gold: sample.gold,
        language: sample.language,
        knowledge,
        calls: scope.into_calls(),
        knowledge_expert: ke,
        label_expert: le,
        pragmatic_expert: pe,
        decision,
        warnings,
    }
}

fn run_sample_mode(
    sample: &Sample,
    config: &RunConfig,
    deps: &PipelineDeps<'_>,
    ctx: &PipelineCtx<'_>,
    scope: &GatewayScope<'_>,
    noise_pools: &NoisePools,
    label_set: &[StanceLabel],
) -> Result<SampleOutputs, String> {
    let err = |stage: &str| move |e: ExpertError| format!("{stage}: {e}");

    let pk = deps
        .knowledge
        .get(&sample.target)
        .ok_or_else(|| format!("no prepared knowledge for {:?}", sample.target))?;
    let esl = pk.esl().map_err(|e| format!("bad stored labels: {e}"))?;
    let mut raw = pk.raw_knowledge();
    let original_chunks = raw.chunks.len();
    if config.noise.enabled {
        let pool = noise_pools.pool_for(deps.knowledge, &sample.target);
        raw = inject_noise(&raw, &pool).map_err(|e| format!("noise injection: {e}"))?;
    }
    let knowledge = KnowledgeUse {
        provided_background: pk.provided_background,
        noisy: config.noise.enabled,
        original_chunks,
        chunk_count: raw.chunks.len(),
        background: raw.concatenated.clone(),
    };

    let mask = &config.run.mask;
    match config.run.mode {
        RunMode::Msme | RunMode::Vote if !mask.is_empty() => {
            let (ke, le, pe, background) =
                run_experts(sample, ctx, scope, &raw, &esl, mask).map_err(|e| e.to_string())?;
            let ke_ok = ke.as_ref().filter(|o| !o.flagged);
            let le_ok = le.as_ref().filter(|o| !o.flagged);
            let pe_ok = pe.as_ref().filter(|o| !o.flagged);

            let decision = if config.run.mode == RunMode::Msme {
                if ke_ok.is_none() && le_ok.is_none() && pe_ok.is_none() {
                    FinalDecision::flagged_neutral(DecisionMode::MetaJudge, Vec::new())
                } else {
                    meta_judge(ctx, scope, sample, &esl, &background, ke_ok, le_ok, pe_ok)
                        .map_err(err("meta judge"))?
                }
            } else {
                vote_decision(ke_ok, le_ok, pe_ok, label_set)
            };
            Ok(SampleOutputs {
                knowledge,
                ke,
                le,
                pe,
                decision,
            })
        }
        RunMode::Msme | RunMode::NoExpert | RunMode::Vote => {
            // Empty mask: classification from ESL + raw knowledge alone.
            let decision =
                no_expert_run(ctx, scope, sample, &esl, &raw).map_err(err("no expert"))?;
            Ok(SampleOutputs {
                knowledge,
                ke: None,
                le: None,
                pe: None,
                decision,
            })
        }
        RunMode::Integrated => {
            let decision =
                integrated_run(ctx, scope, sample, &esl, &raw).map_err(err("integrated"))?;
            Ok(SampleOutputs {
                knowledge,
                ke: None,
                le: None,
                pe: None,
                decision,
            })
        }
        RunMode::Base => {
            let decision = base_run(ctx, scope, sample).map_err(err("base"))?;
            Ok(SampleOutputs {
                knowledge,
                ke: None,
                le: None,
                pe: None,
                decision,
            })
        }
    }
}

type ExpertTriple = (
    Option<KnowledgeExpertOutput>,
    Option<LabelExpertOutput>,
    Option<PragmaticExpertOutput>,
    String,
);

/// Runs the masked experts in pipeline order: the Knowledge Expert
/// first, its retained text becoming the others' background; without it
/// they consume the raw concatenation.
fn run_experts(
    sample: &Sample,
    ctx: &PipelineCtx<'_>,
    scope: &GatewayScope<'_>,
    raw: &RawKnowledge,
    esl: &crate::stance::ExplicitStanceLabels,
    mask: &std::collections::BTreeSet<ExpertKind>,
) -> Result<ExpertTriple, ExpertError> {
    let ke = if mask.contains(&ExpertKind::Knowledge) {
        Some(knowledge_expert(ctx, scope, sample, raw, esl)?)
    } else {
        None
    };
    let background = match &ke {
        Some(out) if !out.flagged && !out.refined_text.is_empty() => out.refined_text.clone(),
        _ => raw.concatenated.clone(),
    };
    let le = if mask.contains(&ExpertKind::Label) {
        Some(label_expert(ctx, scope, sample, &background, esl)?)
    } else {
        None
    };
    let pe = if mask.contains(&ExpertKind::Pragmatic) {
        Some(pragmatic_expert(ctx, scope, sample, &background, esl)?)
    } else {
        None
    };
    Ok((ke, le, pe, background))
}

/// Majority vote over the usable expert judgments. Labels outside the
/// dataset's label set are not votable; when filtering would discard
/// every judgment, the unfiltered set decides.
fn vote_decision(
    ke: Option<&KnowledgeExpertOutput>,
    le: Option<&LabelExpertOutput>,
    pe: Option<&PragmaticExpertOutput>,
    label_set: &[StanceLabel],
) -> FinalDecision {
    let mut judgments: Vec<(ExpertKind, StanceLabel)> = Vec::new();
    let mut contributing = Vec::new();
    if let Some(out) = ke {
        judgments.push((ExpertKind::Knowledge, out.judgment.label));
        contributing.push(ContributingJudgment {
            expert: ExpertKind::Knowledge,
            judgment: out.judgment.clone(),
        });
    }
    if let Some(out) = le {
        judgments.push((ExpertKind::Label, out.judgment.label));
        contributing.push(ContributingJudgment {
            expert: ExpertKind::Label,
            judgment: out.judgment.clone(),
        });
    }
    if let Some(out) = pe {
        judgments.push((ExpertKind::Pragmatic, out.judgment.label));
        contributing.push(ContributingJudgment {
            expert: ExpertKind::Pragmatic,
            judgment: out.judgment.clone(),
        });
    }

    let votable: Vec<(ExpertKind, StanceLabel)> = judgments
        .iter()
        .filter(|(_, l)| label_set.contains(l))
        .copied()
        .collect();
    let effective = if votable.is_empty() { &judgments } else { &votable };
    match vote_aggregate(effective) {
        Ok(stance) => FinalDecision {
            stance,
            analysis: String::new(),
            mode: DecisionMode::Vote,
            contributing,
            flagged: false,
        },
        Err(_) => FinalDecision::flagged_neutral(DecisionMode::Vote, contributing),
    }
}
