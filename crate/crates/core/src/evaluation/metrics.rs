//! Stance classification metrics: per-class F1, F_avg, Macro-F1.

use crate::error::EvalError;
use crate::stance::StanceLabel;

fn check_lengths(preds: &[StanceLabel], golds: &[StanceLabel]) -> Result<(), EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::LengthMismatch { preds: 0, golds: 0 });
    }
    Ok(())
}

/// Standard F1 for one class.
///
/// Convention: a class absent from both predictions and golds scores
/// 1.0 (vacuous perfection, logged), which keeps Neutral out of scoring
/// on binary datasets; TP = 0 with any FP or FN scores 0.
pub fn f1_per_class(
    preds: &[StanceLabel],
    golds: &[StanceLabel],
    class: StanceLabel,
) -> Result<f64, EvalError> {
    check_lengths(preds, golds)?;
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (p, g) in preds.iter().zip(golds) {
        match (*p == class, *g == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 && fp == 0 && fn_ == 0 {
        log::debug!("class {class} absent from preds and golds; F1 vacuously 1.0");
        return Ok(1.0);
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Mean of the Favor and Against F1 scores. Neutral predictions count
/// only as errors against the two scored classes.
pub fn f_avg(preds: &[StanceLabel], golds: &[StanceLabel]) -> Result<f64, EvalError> {
    let favor = f1_per_class(preds, golds, StanceLabel::Favor)?;
    let against = f1_per_class(preds, golds, StanceLabel::Against)?;
    Ok((favor + against) / 2.0)
}

/// Unweighted mean of per-class F1 over the dataset's label set.
pub fn macro_f1(
    preds: &[StanceLabel],
    golds: &[StanceLabel],
    label_set: &[StanceLabel],
) -> Result<f64, EvalError> {
    let mut sum = 0.0;
    for class in label_set {
        sum += f1_per_class(preds, golds, *class)?;
    }
    Ok(sum / label_set.len() as f64)
}

pub const THREE_CLASSES: [StanceLabel; 3] = [
    StanceLabel::Favor,
    StanceLabel::Against,
    StanceLabel::Neutral,
];

#[cfg(test)]
mod tests {
    use super::*;
    use StanceLabel::{Against as A, Favor as F, Neutral as N};

    const GOLDS: [StanceLabel; 5] = [F, F, A, A, N];
    const PREDS: [StanceLabel; 5] = [F, A, A, A, N];

    #[test]
    fn five_row_fixture_matches_hand_counts() {
        // Favor: TP=1 FP=0 FN=1; Against: TP=2 FP=1 FN=0; Neutral: perfect.
        assert!((f1_per_class(&PREDS, &GOLDS, F).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((f1_per_class(&PREDS, &GOLDS, A).unwrap() - 0.8).abs() < 1e-12);
        assert!((f1_per_class(&PREDS, &GOLDS, N).unwrap() - 1.0).abs() < 1e-12);
        assert!((f_avg(&PREDS, &GOLDS).unwrap() - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-9);
        assert!(
            (macro_f1(&PREDS, &GOLDS, &THREE_CLASSES).unwrap() - (2.0 / 3.0 + 0.8 + 1.0) / 3.0)
                .abs()
                < 1e-9
        );
    }

    #[test]
    fn perfect_predictions_score_one() {
        assert_eq!(f1_per_class(&GOLDS, &GOLDS, F).unwrap(), 1.0);
        assert_eq!(f_avg(&GOLDS, &GOLDS).unwrap(), 1.0);
        assert_eq!(macro_f1(&GOLDS, &GOLDS, &THREE_CLASSES).unwrap(), 1.0);
    }

    #[test]
    fn totally_wrong_predictions_score_zero() {
        let preds = [F, F, F];
        let golds = [A, A, A];
        assert_eq!(f1_per_class(&preds, &golds, F).unwrap(), 0.0);
        assert_eq!(f_avg(&preds, &golds).unwrap(), 0.0);
    }

    #[test]
    fn vacuous_class_scores_one() {
        let preds = [F, A];
        let golds = [F, A];
        assert_eq!(f1_per_class(&preds, &golds, N).unwrap(), 1.0);
    }

    #[test]
    fn binary_macro_ignores_neutral() {
        let preds = [F, A, N];
        let golds = [F, A, A];
        let binary = [F, A];
        let m = macro_f1(&preds, &golds, &binary).unwrap();
        // Favor perfect; Against: TP=1 FP=0 FN=1 -> 2/3.
        assert!((m - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn order_invariance() {
        let preds = [F, A, A, N, F];
        let golds = [F, F, A, N, A];
        let base = f_avg(&preds, &golds).unwrap();
        let perm = [4usize, 2, 0, 3, 1];
        let preds_p: Vec<_> = perm.iter().map(|&i| preds[i]).collect();
        let golds_p: Vec<_> = perm.iter().map(|&i| golds[i]).collect();
        assert_eq!(base, f_avg(&preds_p, &golds_p).unwrap());
        assert_eq!(
            macro_f1(&preds, &golds, &THREE_CLASSES).unwrap(),
            macro_f1(&preds_p, &golds_p, &THREE_CLASSES).unwrap()
        );
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            f_avg(&[F], &[F, A]),
            Err(EvalError::LengthMismatch { preds: 1, golds: 2 })
        ));
        assert!(f_avg(&[], &[]).is_err());
    }
}
