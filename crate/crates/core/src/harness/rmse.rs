//! RMSE computation against ground-truth states.
//!
//! The primary definition normalizes by the state dimension
//! (per-component RMSE); the non-normalized per-step state-norm variant
//! is reported alongside so either reading can be compared.

use crate::harness::{Arm, HarnessError};
use crate::ssm::ScenarioConfig;

/// Per-step and aggregate RMSE of posterior means against truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseReport {
    pub per_step: Vec<f64>,
    pub per_step_unnorm: Vec<f64>,
    pub overall: f64,
    pub overall_unnorm: f64,
    pub n_test: usize,
    pub arm: Arm,
    pub scenario: ScenarioConfig,
    pub jitter_applications: u64,
}

/// `RMSE_k = sqrt( (1/(N·n_x)) Σ_i ‖x̂_k^i − x_k^i‖² )`.
pub fn rmse_per_step(
    estimates: &[Vec<Vec<f64>>],
    truths: &[Vec<Vec<f64>>],
) -> Result<Vec<f64>, HarnessError> {
    let (sums, n, nx, t) = squared_error_sums(estimates, truths)?;
    Ok(sums
        .iter()
        .map(|s| (s / (n * nx) as f64).sqrt())
        .take(t)
        .collect())
}

/// `sqrt` of the mean squared error over all `(i, k, component)` triples;
/// equals `sqrt(mean_k RMSE_k²)`.
pub fn rmse_overall(
    estimates: &[Vec<Vec<f64>>],
    truths: &[Vec<Vec<f64>>],
) -> Result<f64, HarnessError> {
    let (sums, n, nx, t) = squared_error_sums(estimates, truths)?;
    let total: f64 = sums.iter().sum();
    Ok((total / (n * nx * t) as f64).sqrt())
}

fn squared_error_sums(
    estimates: &[Vec<Vec<f64>>],
    truths: &[Vec<Vec<f64>>],
) -> Result<(Vec<f64>, usize, usize, usize), HarnessError> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(HarnessError::LengthMismatch(format!(
            "{} estimate sequences against {} truth sequences",
            estimates.len(),
            truths.len()
        )));
    }
    let t = estimates[0].len();
    let nx = estimates[0]
        .first()
        .map(|x| x.len())
        .ok_or_else(|| HarnessError::LengthMismatch("empty sequence".into()))?;
    let mut sums = vec![0.0; t];
    for (est_seq, truth_seq) in estimates.iter().zip(truths) {
        if est_seq.len() != t || truth_seq.len() != t {
            return Err(HarnessError::LengthMismatch(format!(
                "sequence lengths {} and {} do not match T={t}",
                est_seq.len(),
                truth_seq.len()
            )));
        }
        for (k, (est, truth)) in est_seq.iter().zip(truth_seq).enumerate() {
            if est.len() != nx || truth.len() != nx {
                return Err(HarnessError::LengthMismatch(
                    "state dimension mismatch".into(),
                ));
            }
            for (a, b) in est.iter().zip(truth) {
                sums[k] += (a - b) * (a - b);
            }
        }
    }
    Ok((sums, estimates.len(), nx, t))
}

/// Build the full report from posterior means and ground truth.
pub fn compute_report(
    estimates: &[Vec<Vec<f64>>],
    truths: &[Vec<Vec<f64>>],
    arm: Arm,
    scenario: &ScenarioConfig,
    jitter_applications: u64,
) -> Result<RmseReport, HarnessError> {
    let (sums, n, nx, t) = squared_error_sums(estimates, truths)?;
    let per_step: Vec<f64> = sums.iter().map(|s| (s / (n * nx) as f64).sqrt()).collect();
    let per_step_unnorm: Vec<f64> = sums.iter().map(|s| (s / n as f64).sqrt()).collect();
    let overall = (per_step.iter().map(|r| r * r).sum::<f64>() / t as f64).sqrt();
    let overall_unnorm =
        (per_step_unnorm.iter().map(|r| r * r).sum::<f64>() / t as f64).sqrt();
    Ok(RmseReport {
        per_step,
        per_step_unnorm,
        overall,
        overall_unnorm,
        n_test: n,
        arm,
        scenario: scenario.clone(),
        jitter_applications,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn seqs(values: &[&[&[f64]]]) -> Vec<Vec<Vec<f64>>> {
        values
            .iter()
            .map(|seq| seq.iter().map(|x| x.to_vec()).collect())
            .collect()
    }

    #[test]
    fn zero_error_gives_zero_rmse() {
        let a = seqs(&[&[&[1.0, 2.0], &[3.0, 4.0]]]);
        let r = rmse_per_step(&a, &a).unwrap();
        assert_eq!(r, vec![0.0, 0.0]);
        assert_eq!(rmse_overall(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn single_scalar_error() {
        let est = seqs(&[&[&[3.0]]]);
        let truth = seqs(&[&[&[0.0]]]);
        assert_eq!(rmse_per_step(&est, &truth).unwrap(), vec![3.0]);
    }

    #[test]
    fn mean_of_squares_across_sequences() {
        // two sequences, scalar state, squared errors 2 and 4 at step 1
        let est = seqs(&[&[&[2.0f64.sqrt()]], &[&[2.0]]]);
        let truth = seqs(&[&[&[0.0]], &[&[0.0]]]);
        let r = rmse_per_step(&est, &truth).unwrap();
        assert_abs_diff_eq!(r[0], 3.0f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn overall_aggregates_per_step() {
        // per-step RMSEs {1, √3} -> overall √2
        let est = seqs(&[&[&[1.0], &[3.0f64.sqrt()]]]);
        let truth = seqs(&[&[&[0.0], &[0.0]]]);
        let per = rmse_per_step(&est, &truth).unwrap();
        assert_abs_diff_eq!(per[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(per[1], 3.0f64.sqrt(), epsilon = 1e-15);
        let overall = rmse_overall(&est, &truth).unwrap();
        assert_abs_diff_eq!(overall, 2.0f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn constant_per_step_rmse_is_overall() {
        let est = seqs(&[&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]]]);
        let truth = seqs(&[&[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]]);
        let per = rmse_per_step(&est, &truth).unwrap();
        let overall = rmse_overall(&est, &truth).unwrap();
        assert_abs_diff_eq!(overall, per[0], epsilon = 1e-15);
    }

    #[test]
    fn report_self_consistency() {
        let est = seqs(&[
            &[&[1.0, 2.0], &[0.5, -0.5]],
            &[&[0.0, 1.0], &[2.0, 2.0]],
        ]);
        let truth = seqs(&[
            &[&[0.0, 0.0], &[0.0, 0.0]],
            &[&[1.0, 1.0], &[1.0, 1.0]],
        ]);
        let report = compute_report(
            &est,
            &truth,
            Arm::KnownAll,
            &ScenarioConfig::bilateration_defaults(),
            0,
        )
        .unwrap();
        let mean_sq: f64 =
            report.per_step.iter().map(|r| r * r).sum::<f64>() / report.per_step.len() as f64;
        assert!((report.overall * report.overall - mean_sq).abs() < 1e-12);
        // direct overall equals the aggregated one
        let direct = rmse_overall(&est, &truth).unwrap();
        assert!((report.overall - direct).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_detected() {
        let est = seqs(&[&[&[1.0]]]);
        let truth = seqs(&[&[&[1.0], &[2.0]]]);
        assert!(matches!(
            rmse_per_step(&est, &truth),
            Err(HarnessError::LengthMismatch(_))
        ));
    }
}
