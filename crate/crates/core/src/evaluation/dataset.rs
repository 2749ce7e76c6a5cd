//! Dataset loading: JSON-lines rows plus an optional `targets.json`
//! sidecar carrying per-target background text and provided labels.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::gateway::detect_language;
use crate::stance::{Sample, StanceLabel};

/// Which benchmark shape a file follows; decides the label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Sem16,
    PStance,
    Weibo,
}

impl DatasetKind {
    pub fn label_set(self) -> Vec<StanceLabel> {
        match self {
            DatasetKind::PStance => vec![StanceLabel::Favor, StanceLabel::Against],
            _ => vec![
                StanceLabel::Favor,
                StanceLabel::Against,
                StanceLabel::Neutral,
            ],
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sem16" => Ok(DatasetKind::Sem16),
            "pstance" | "p-stance" => Ok(DatasetKind::PStance),
            "weibo" | "weibo-sd" | "weibosd" => Ok(DatasetKind::Weibo),
            other => Err(format!("unknown dataset kind {other:?}")),
        }
    }
}

/// Sidecar entry: a target plus optional provided background and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetInfo {
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub esl: Option<SidecarEsl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarEsl {
    pub favor: String,
    pub against: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neutral: Option<String>,
}

/// A loaded evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub kind: DatasetKind,
    pub samples: Vec<Sample>,
    pub label_set: Vec<StanceLabel>,
    pub targets: Vec<TargetInfo>,
    pub per_target_counts: BTreeMap<String, usize>,
}

#[derive(Deserialize)]
struct RawRow {
    id: String,
    target: String,
    text: String,
    label: String,
}

fn parse_label(raw: &str, line: usize) -> Result<StanceLabel, EvalError> {
    match raw {
        "FAVOR" => Ok(StanceLabel::Favor),
        "AGAINST" => Ok(StanceLabel::Against),
        "NONE" => Ok(StanceLabel::Neutral),
        other => Err(EvalError::SchemaError {
            line,
            reason: format!("unknown label {other:?} (expected FAVOR/AGAINST/NONE)"),
        }),
    }
}

/// Loads a JSON-lines dataset, validating every row against the kind's
/// label set. Blank lines are permitted; anything else malformed is a
/// schema error naming the offending line.
pub fn load_dataset(
    path: &Path,
    kind: DatasetKind,
    sidecar: Option<&Path>,
) -> Result<Dataset, EvalError> {
    let body = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let label_set = kind.label_set();

    let mut samples = Vec::new();
    let mut per_target_counts: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, line) in body.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: RawRow = serde_json::from_str(line).map_err(|e| EvalError::SchemaError {
            line: line_no,
            reason: e.to_string(),
        })?;
        let gold = parse_label(&row.label, line_no)?;
        if !label_set.contains(&gold) {
            return Err(EvalError::SchemaError {
                line: line_no,
                reason: format!(
                    "label {gold} is outside the {kind:?} label set",
                    kind = kind
                ),
            });
        }
        let language = detect_language(&format!("{} {}", row.target, row.text));
        let sample = Sample::new(row.id, row.target, row.text, Some(gold), language).map_err(
            |_| EvalError::SchemaError {
                line: line_no,
                reason: "target and text must be non-empty".to_string(),
            },
        )?;
        *per_target_counts.entry(sample.target.clone()).or_default() += 1;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(EvalError::EmptyDataset(path.display().to_string()));
    }

    let mut targets: Vec<TargetInfo> = match sidecar {
        Some(sidecar_path) => {
            let body = std::fs::read_to_string(sidecar_path).map_err(|source| EvalError::Io {
                path: sidecar_path.display().to_string(),
                source,
            })?;
            serde_json::from_str(&body).map_err(|source| EvalError::Json {
                path: sidecar_path.display().to_string(),
                source,
            })?
        }
        None => Vec::new(),
    };
    // Every target present in the data is listed, sidecar or not.
    for target in per_target_counts.keys() {
        if !targets.iter().any(|t| &t.target == target) {
            targets.push(TargetInfo {
                target: target.clone(),
                background: None,
                esl: None,
            });
        }
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    Ok(Dataset {
        name,
        kind,
        samples,
        label_set,
        targets,
        per_target_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stance::Language;
    use std::io::Write;

    fn write_jsonl(rows: &[serde_json::Value]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for row in rows {
            writeln!(f, "{row}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    fn row(id: &str, target: &str, text: &str, label: &str) -> serde_json::Value {
        serde_json::json!({"id": id, "target": target, "text": text, "label": label})
    }

    #[test]
    fn loads_sem16_shaped_rows() {
        let f = write_jsonl(&[
            row("1", "Atheism", "tweet one", "AGAINST"),
            row("2", "Atheism", "tweet two", "FAVOR"),
            row("3", "Hillary Clinton", "tweet three", "NONE"),
        ]);
        let ds = load_dataset(f.path(), DatasetKind::Sem16, None).unwrap();
        assert_eq!(ds.samples.len(), 3);
        assert_eq!(ds.label_set.len(), 3);
        assert_eq!(ds.per_target_counts["Atheism"], 2);
        assert_eq!(ds.targets.len(), 2);
        assert_eq!(ds.samples[0].language, Language::En);
    }

    #[test]
    fn unknown_label_is_schema_error() {
        let f = write_jsonl(&[row("1", "T", "text", "MAYBE")]);
        match load_dataset(f.path(), DatasetKind::Sem16, None) {
            Err(EvalError::SchemaError { line: 1, reason }) => {
                assert!(reason.contains("MAYBE"))
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_schema_error_with_line() {
        let f = write_jsonl(&[
            row("1", "T", "text", "FAVOR"),
            serde_json::json!({"id": "2", "target": "T", "label": "FAVOR"}),
        ]);
        match load_dataset(f.path(), DatasetKind::Sem16, None) {
            Err(EvalError::SchemaError { line: 2, .. }) => {}
            other => panic!("expected schema error at line 2, got {other:?}"),
        }
    }

    #[test]
    fn pstance_restricts_label_set() {
        let f = write_jsonl(&[
            row("1", "Donald Trump", "text", "FAVOR"),
            row("2", "Joe Biden", "text", "AGAINST"),
        ]);
        let ds = load_dataset(f.path(), DatasetKind::PStance, None).unwrap();
        assert_eq!(
            ds.label_set,
            vec![StanceLabel::Favor, StanceLabel::Against]
        );
        let f = write_jsonl(&[row("1", "Donald Trump", "text", "NONE")]);
        assert!(matches!(
            load_dataset(f.path(), DatasetKind::PStance, None),
            Err(EvalError::SchemaError { line: 1, .. })
        ));
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let f = write_jsonl(&[]);
        assert!(matches!(
            load_dataset(f.path(), DatasetKind::Sem16, None),
            Err(EvalError::EmptyDataset(_))
        ));
    }

    #[test]
    fn sidecar_attaches_background_and_labels() {
        let f = write_jsonl(&[row("1", "胡鑫宇案", "某条评论内容", "FAVOR")]);
        let dir = tempfile::tempdir().unwrap();
        let sidecar = dir.path().join("targets.json");
        std::fs::write(
            &sidecar,
            serde_json::json!([{
                "target": "胡鑫宇案",
                "background": "案件背景说明。",
                "esl": {"favor": "支持通报", "against": "质疑通报"}
            }])
            .to_string(),
        )
        .unwrap();
        let ds = load_dataset(f.path(), DatasetKind::Weibo, Some(&sidecar)).unwrap();
        assert_eq!(ds.targets.len(), 1);
        assert_eq!(
            ds.targets[0].background.as_deref(),
            Some("案件背景说明。")
        );
        assert_eq!(ds.samples[0].language, Language::Zh);
    }
}
