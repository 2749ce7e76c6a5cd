//! Paired significance testing between two runs.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::EvalError;

/// Two-tailed paired t-test result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub significant_at_05: bool,
}

/// Two-tailed paired t-test on per-unit score differences.
///
/// Degenerate variance (all differences equal) follows a documented
/// convention: zero difference gives p = 1.0, a nonzero constant
/// difference gives p = 0.0.
pub fn paired_t_test(scores_a: &[f64], scores_b: &[f64]) -> Result<TestResult, EvalError> {
    if scores_a.len() != scores_b.len() {
        return Err(EvalError::LengthMismatch {
            preds: scores_a.len(),
            golds: scores_b.len(),
        });
    }
    let n = scores_a.len();
    if n < 2 {
        return Err(EvalError::NotEnoughData { needed: 2, got: n });
    }

    let diffs: Vec<f64> = scores_a.iter().zip(scores_b).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;

    if var == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        };
        return Ok(TestResult {
            t_statistic: t,
            degrees_of_freedom: df,
            p_value: p,
            significant_at_05: p < 0.05,
        });
    }

    let se = (var / n as f64).sqrt();
    let t = mean / se;
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("valid t distribution");
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TestResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: p,
        significant_at_05: p < 0.05,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_example() {
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!((r.t_statistic - 3.4641).abs() < 1e-3);
        assert_eq!(r.degrees_of_freedom, 2);
        assert!((r.p_value - 0.0742).abs() < 1e-3);
        assert!(!r.significant_at_05);
    }

    #[test]
    fn identical_vectors_give_p_one() {
        let a = [0.5, 0.6, 0.7];
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.t_statistic, 0.0);
        assert!(!r.significant_at_05);
    }

    #[test]
    fn constant_nonzero_difference_gives_p_zero() {
        let r = paired_t_test(&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert!(r.t_statistic.is_infinite());
        assert!(r.significant_at_05);
    }

    #[test]
    fn swapping_negates_t_and_preserves_p() {
        let a = [1.0, 2.0, 3.0, 2.5];
        let b = [0.5, 1.0, 0.0, 2.0];
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        assert!((ab.t_statistic + ba.t_statistic).abs() < 1e-12);
        assert!((ab.p_value - ba.p_value).abs() < 1e-12);
    }

    #[test]
    fn input_validation() {
        assert!(matches!(
            paired_t_test(&[1.0], &[1.0, 2.0]),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            paired_t_test(&[1.0], &[1.0]),
            Err(EvalError::NotEnoughData { needed: 2, got: 1 })
        ));
    }
}
