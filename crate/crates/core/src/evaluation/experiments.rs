//! The ablation matrix and the four supplementary experiments: noise
//! injection, neutral-label detection, the rhetoric subset, and the
//! decision-capability comparison.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregation::{detect_rhetoric, ExpertKind, RhetoricVote, VoterVote};
use crate::config::{RunConfig, RunMode};
use crate::error::EvalError;
use crate::evaluation::dataset::{Dataset, DatasetKind};
use crate::evaluation::runner::{metrics_for, run_pipeline, MetricSet, PipelineDeps, RunManifest};
use crate::experts::PipelineCtx;
use crate::stance::{Language, StanceLabel};

/// The eight expert masks in presentation order: all, leave-one-out,
/// only-one, none.
pub fn ablation_masks() -> Vec<BTreeSet<ExpertKind>> {
    use ExpertKind::{Knowledge as KE, Label as LE, Pragmatic as PE};
    vec![
        BTreeSet::from([KE, LE, PE]),
        BTreeSet::from([LE, PE]),
        BTreeSet::from([KE, PE]),
        BTreeSet::from([KE, LE]),
        BTreeSet::from([KE]),
        BTreeSet::from([LE]),
        BTreeSet::from([PE]),
        BTreeSet::new(),
    ]
}

/// Short name for a mask, used in run directories and report rows.
pub fn mask_slug(mask: &BTreeSet<ExpertKind>) -> String {
    if mask.is_empty() {
        return "none".to_string();
    }
    mask.iter()
        .map(|k| k.tag().to_lowercase())
        .collect::<Vec<_>>()
        .join("-")
}

/// The dataset's headline metric: Macro-F1 for the Chinese set, F_avg
/// for the English benchmarks.
pub fn primary_metric(kind: DatasetKind, set: &MetricSet) -> f64 {
    match kind {
        DatasetKind::Weibo => set.macro_f1,
        _ => set.f_avg,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mask: String,
    pub ke: bool,
    pub le: bool,
    pub pe: bool,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub name: String,
    pub score: f64,
    pub flag_rate: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhetoricSliceReport {
    pub slice_size: usize,
    pub rows: Vec<LabeledScore>,
}

/// Results of the full experiment bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentsReport {
    pub ablation: Vec<AblationRow>,
    pub noise: Vec<LabeledScore>,
    pub neutral: Vec<LabeledScore>,
    pub rhetoric: RhetoricSliceReport,
    pub decision: Vec<LabeledScore>,
}

/// One stored rhetoric judgment, one line of `rhetoric/<dataset>.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhetoricRecord {
    pub id: String,
    pub has_rhetoric: bool,
    pub devices: Vec<String>,
    pub votes: Vec<VoterVote>,
}

impl RhetoricRecord {
    pub fn from_vote(id: impl Into<String>, vote: &RhetoricVote) -> Self {
        RhetoricRecord {
            id: id.into(),
            has_rhetoric: vote.has_rhetoric,
            devices: vote.devices_union.clone(),
            votes: vote.per_model.clone(),
        }
    }
}

pub fn save_rhetoric_labels(path: &Path, records: &[RhetoricRecord]) -> Result<(), EvalError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| EvalError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    let mut body = String::new();
    for record in records {
        body.push_str(&serde_json::to_string(record).expect("record serializes"));
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_rhetoric_labels(path: &Path) -> Result<Vec<RhetoricRecord>, EvalError> {
    let body = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    body.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| EvalError::SchemaError {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Runs the three-model rhetoric vote over every sample.
pub fn build_rhetoric_labels(
    dataset: &Dataset,
    deps: &PipelineDeps<'_>,
    config: &RunConfig,
) -> Result<Vec<RhetoricRecord>, EvalError> {
    let router = config.router();
    let voters = router.voters();
    let mut records = Vec::with_capacity(dataset.samples.len());
    for sample in &dataset.samples {
        let scope = deps.gateway.scope();
        let lang = match config.run.prompt_lang {
            crate::config::PromptLang::Zh => Language::Zh,
            crate::config::PromptLang::En => Language::En,
            crate::config::PromptLang::Auto => sample.language,
        };
        let ctx = PipelineCtx {
            registry: deps.registry,
            router: &router,
            lang,
        };
        let vote = detect_rhetoric(&ctx, &scope, sample, &voters)
            .map_err(|e| EvalError::SchemaError {
                line: 0,
                reason: format!("rhetoric vote for {}: {e}", sample.id),
            })?;
        records.push(RhetoricRecord::from_vote(&sample.id, &vote));
    }
    Ok(records)
}

fn with_mode(
    config: &RunConfig,
    mode: RunMode,
    mask: BTreeSet<ExpertKind>,
    noise: bool,
) -> RunConfig {
    let mut config = config.clone();
    config.run.mode = mode;
    config.run.mask = mask;
    config.noise.enabled = noise;
    config
}

fn full_mask() -> BTreeSet<ExpertKind> {
    ExpertKind::ALL.into_iter().collect()
}

/// Executes the 8-row ablation matrix plus the four supplementary
/// experiments. Returns the report and every manifest produced, keyed
/// by run name. Experiment 3 needs stored rhetoric labels.
pub fn run_experiments(
    config: &RunConfig,
    dataset: &Dataset,
    deps: &PipelineDeps<'_>,
    rhetoric_labels: Option<&[RhetoricRecord]>,
) -> Result<(ExperimentsReport, Vec<(String, RunManifest)>), EvalError> {
    let rhetoric_labels = rhetoric_labels.ok_or_else(|| {
        EvalError::MissingRhetoricLabels(format!("rhetoric/{}.jsonl", dataset.name))
    })?;

    let mut manifests: Vec<(String, RunManifest)> = Vec::new();
    let mut run = |name: String, cfg: RunConfig| -> Result<usize, EvalError> {
        let manifest = run_pipeline(&cfg, dataset, deps)?;
        manifests.push((name, manifest));
        Ok(manifests.len() - 1)
    };

    // Table-2 matrix.
    let mut ablation = Vec::new();
    let mut index_of_mask = std::collections::BTreeMap::new();
    for mask in ablation_masks() {
        let slug = mask_slug(&mask);
        let idx = run(
            format!("msme-{slug}"),
            with_mode(config, RunMode::Msme, mask.clone(), false),
        )?;
        index_of_mask.insert(slug.clone(), idx);
        ablation.push(AblationRow {
            mask: slug,
            ke: mask.contains(&ExpertKind::Knowledge),
            le: mask.contains(&ExpertKind::Label),
            pe: mask.contains(&ExpertKind::Pragmatic),
            metrics: manifests[idx].1.metrics.overall.clone(),
        });
    }
    let kind = dataset.kind;
    let score_of = |m: &RunManifest| primary_metric(kind, &m.metrics.overall);
    let labeled = |name: &str, m: &RunManifest| LabeledScore {
        name: name.to_string(),
        score: score_of(m),
        flag_rate: m.metrics.overall.flag_rate,
        n: m.metrics.overall.n,
    };

    // Experiment 1: noise injection.
    let no_ke_mask = BTreeSet::from([ExpertKind::Label, ExpertKind::Pragmatic]);
    let no_ke_noise = run(
        "noise-no-ke".into(),
        with_mode(config, RunMode::Msme, no_ke_mask.clone(), true),
    )?;
    let msme_noise = run(
        "noise-msme".into(),
        with_mode(config, RunMode::Msme, full_mask(), true),
    )?;
    let msme_idx = index_of_mask["ke-le-pe"];
    let no_ke_idx = index_of_mask["le-pe"];
    let noise = vec![
        labeled("No KE + Noise", &manifests[no_ke_noise].1),
        labeled("No KE", &manifests[no_ke_idx].1),
        labeled("MSME + Noise", &manifests[msme_noise].1),
        labeled("MSME", &manifests[msme_idx].1),
    ];

    // Baselines shared by experiments 2-4.
    let base_idx = run("base".into(), with_mode(config, RunMode::Base, full_mask(), false))?;
    let vote_idx = run("vote".into(), with_mode(config, RunMode::Vote, full_mask(), false))?;
    let integrated_idx = run(
        "integrated".into(),
        with_mode(config, RunMode::Integrated, full_mask(), false),
    )?;
    let none_idx = index_of_mask["none"];

    // Experiment 2: F1 on the neutral label per mode.
    let neutral_f1 = |m: &RunManifest| -> f64 {
        m.metrics
            .overall
            .per_class
            .get(StanceLabel::Neutral.as_str())
            .copied()
            .unwrap_or(f64::NAN)
    };
    let neutral = [
        ("Base", base_idx),
        ("No Expert", none_idx),
        ("Label Expert", index_of_mask["le"]),
        ("MSME", msme_idx),
    ]
    .into_iter()
    .map(|(name, idx)| {
        let m = &manifests[idx].1;
        LabeledScore {
            name: name.to_string(),
            score: neutral_f1(m),
            flag_rate: m.metrics.overall.flag_rate,
            n: m.metrics.overall.n,
        }
    })
    .collect();

    // Experiment 3: the rhetoric-marked slice.
    let rhetorical_ids: BTreeSet<&str> = rhetoric_labels
        .iter()
        .filter(|r| r.has_rhetoric)
        .map(|r| r.id.as_str())
        .collect();
    let slice_rows = [
        ("Base", base_idx),
        ("No Expert", none_idx),
        ("Pragmatic Expert", index_of_mask["pe"]),
        ("MSME", msme_idx),
    ]
    .into_iter()
    .map(|(name, idx)| {
        let m = &manifests[idx].1;
        let slice = metrics_for(&m.samples, &m.dataset.label_set, |t| {
            rhetorical_ids.contains(t.id.as_str())
        })?;
        Ok(match slice {
            Some(set) => LabeledScore {
                name: name.to_string(),
                score: primary_metric(kind, &set),
                flag_rate: set.flag_rate,
                n: set.n,
            },
            None => LabeledScore {
                name: name.to_string(),
                score: f64::NAN,
                flag_rate: 0.0,
                n: 0,
            },
        })
    })
    .collect::<Result<Vec<_>, EvalError>>()?;
    let rhetoric = RhetoricSliceReport {
        slice_size: dataset
            .samples
            .iter()
            .filter(|s| rhetorical_ids.contains(s.id.as_str()))
            .count(),
        rows: slice_rows,
    };

    // Experiment 4: decision capability.
    let decision = vec![
        labeled("Integrated", &manifests[integrated_idx].1),
        labeled("Vote", &manifests[vote_idx].1),
        labeled("MSME", &manifests[msme_idx].1),
    ];

    Ok((
        ExperimentsReport {
            ablation,
            noise,
            neutral,
            rhetoric,
            decision,
        },
        manifests,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_masks_in_matrix_order() {
        let masks = ablation_masks();
        assert_eq!(masks.len(), 8);
        assert_eq!(masks[0].len(), 3);
        assert_eq!(mask_slug(&masks[0]), "ke-le-pe");
        assert_eq!(mask_slug(&masks[7]), "none");
        assert_eq!(mask_slug(&masks[5]), "le");
        // All distinct.
        let unique: BTreeSet<String> = masks.iter().map(mask_slug).collect();
        assert_eq!(unique.len(), 8);
    }

    #[test]
    fn rhetoric_records_round_trip_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rhetoric").join("mini.jsonl");
        let records = vec![
            RhetoricRecord {
                id: "s01".into(),
                has_rhetoric: true,
                devices: vec!["Irony".into()],
                votes: vec![],
            },
            RhetoricRecord {
                id: "s02".into(),
                has_rhetoric: false,
                devices: vec![],
                votes: vec![],
            },
        ];
        save_rhetoric_labels(&path, &records).unwrap();
        let back = load_rhetoric_labels(&path).unwrap();
        assert_eq!(back, records);
    }
}
