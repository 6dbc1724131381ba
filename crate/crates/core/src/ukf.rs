//! Scaled sigma-point unscented Kalman filter.
//!
//! Works with any [`DynamicModel`]/[`MeasurementModel`] pair, analytic or
//! learned. Sigma points are re-drawn from the predicted Gaussian before
//! the measurement update (standard additive-noise form). All covariance
//! reconstructions are symmetrized; when a factorization fails, one jitter
//! retry is attempted and counted before the step errors out.

use crate::numerics::{Mat, NumericError, SpdMat};
use crate::ssm::{DynamicModel, GaussianPrior, MeasurementModel};
use thiserror::Error;

/// Jitter magnitude used when a reconstructed covariance loses SPD-ness.
pub const UKF_JITTER: f64 = 1e-9;

/// Scaled unscented-transform parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UtParams {
    fn default() -> Self {
        UtParams {
            alpha: 0.1,
            beta: 3.0,
            kappa: 0.0,
        }
    }
}

impl UtParams {
    pub fn lambda(&self, n: usize) -> f64 {
        self.alpha * self.alpha * (n as f64 + self.kappa) - n as f64
    }
}

/// Mean and covariance of a filtering distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: Vec<f64>,
    pub cov: SpdMat,
}

/// 2n+1 sigma points with mean and covariance weights.
#[derive(Debug, Clone)]
pub struct SigmaSet {
    pub points: Vec<Vec<f64>>,
    pub w_mean: Vec<f64>,
    pub w_cov: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("filter failed at time step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: NumericError,
    },
}

/// Scaled sigma points `{μ, μ ± √(n+λ)·L_i}` with
/// `w_mean[0] = λ/(n+λ)`, `w_cov[0] = w_mean[0] + 1 − α² + β`,
/// `w[i>=1] = 1/(2(n+λ))`.
///
/// With α = 0.1 the scaling λ is negative, but `n + λ = α²(n+κ) > 0`, so
/// the scaled covariance square root always exists.
pub fn sigma_points(g: &GaussianState, p: &UtParams) -> SigmaSet {
    let n = g.mean.len();
    assert_eq!(g.cov.dim(), n);
    let lambda = p.lambda(n);
    let n_lambda = n as f64 + lambda;
    assert!(n_lambda > 0.0, "n + lambda must be positive");
    let scale = n_lambda.sqrt();
    let l = g.cov.cholesky();

    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(g.mean.clone());
    for i in 0..n {
        let mut plus = g.mean.clone();
        let mut minus = g.mean.clone();
        for j in 0..n {
            let step = scale * l[(j, i)];
            plus[j] += step;
            minus[j] -= step;
        }
        points.push(plus);
        points.push(minus);
    }

    let w0 = lambda / n_lambda;
    let wi = 1.0 / (2.0 * n_lambda);
    let mut w_mean = vec![wi; 2 * n + 1];
    let mut w_cov = vec![wi; 2 * n + 1];
    w_mean[0] = w0;
    w_cov[0] = w0 + (1.0 - p.alpha * p.alpha + p.beta);

    SigmaSet {
        points,
        w_mean,
        w_cov,
    }
}

/// Push a sigma set through `f` and recover mean, covariance (plus the
/// additive noise term, symmetrized) and input-output cross covariance.
pub fn unscented_transform<F>(
    s: &SigmaSet,
    f: F,
    additive_cov: &SpdMat,
) -> (Vec<f64>, Mat, Mat)
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n_in = s.points[0].len();
    let images: Vec<Vec<f64>> = s.points.iter().map(|pt| f(pt)).collect();
    let n_out = images[0].len();
    assert_eq!(
        additive_cov.dim(),
        n_out,
        "additive covariance dimension must match the function output"
    );

    let mut mean = vec![0.0; n_out];
    for (w, img) in s.w_mean.iter().zip(&images) {
        assert_eq!(img.len(), n_out, "function output dimension");
        for (m, &y) in mean.iter_mut().zip(img) {
            *m += w * y;
        }
    }

    let mut cov = Mat::zeros(n_out, n_out);
    let mut cross = Mat::zeros(n_in, n_out);
    let center = &s.points[0];
    for ((w, img), pt) in s.w_cov.iter().zip(&images).zip(&s.points) {
        let dev: Vec<f64> = img.iter().zip(&mean).map(|(y, m)| y - m).collect();
        for i in 0..n_out {
            let wdi = w * dev[i];
            let row = cov.row_mut(i);
            for (r, &dj) in row.iter_mut().zip(&dev) {
                *r += wdi * dj;
            }
        }
        for i in 0..n_in {
            let wdx = w * (pt[i] - center[i]);
            let row = cross.row_mut(i);
            for (r, &dj) in row.iter_mut().zip(&dev) {
                *r += wdx * dj;
            }
        }
    }
    let cov = cov.add(&additive_cov.as_mat()).symmetrized();
    (mean, cov, cross)
}

/// Wrap a symmetric matrix into [`SpdMat`], retrying once with diagonal
/// jitter; each applied jitter increments `jitter_count`.
fn spd_with_jitter(
    m: Mat,
    jitter: f64,
    jitter_count: &mut u64,
) -> Result<SpdMat, NumericError> {
    match SpdMat::new(m.clone()) {
        Ok(s) => Ok(s),
        Err(NumericError::NonPositivePivot { .. }) => {
            *jitter_count += 1;
            SpdMat::new(m.add_diagonal(jitter))
        }
        Err(e) => Err(e),
    }
}

/// One predict/update cycle.
pub fn ukf_step(
    prior: &GaussianState,
    z: &[f64],
    dynamic: &DynamicModel,
    measurement: &MeasurementModel,
    p: &UtParams,
    jitter_count: &mut u64,
) -> Result<GaussianState, NumericError> {
    // Predict.
    let sig = sigma_points(prior, p);
    let (pred_mean, pred_cov_mat, _) =
        unscented_transform(&sig, |x| dynamic.mean.eval(x), &dynamic.noise_cov);
    let pred_cov = spd_with_jitter(pred_cov_mat, UKF_JITTER, jitter_count)?;
    let predicted = GaussianState {
        mean: pred_mean,
        cov: pred_cov,
    };

    // Update with sigma points re-drawn from the predicted Gaussian.
    let sig = sigma_points(&predicted, p);
    let (z_pred, s_mat, cross) =
        unscented_transform(&sig, |x| measurement.mean.eval(x), &measurement.noise_cov);
    let nz = z_pred.len();
    assert_eq!(z.len(), nz, "measurement dimension");
    let s_jitter = UKF_JITTER * s_mat.trace() / nz as f64;
    let s = spd_with_jitter(s_mat, s_jitter, jitter_count)?;

    // K = C S⁻¹, computed as (S⁻¹ Cᵀ)ᵀ through the Cholesky factor.
    let gain = s.solve_mat(&cross.transpose()).transpose();

    let innovation: Vec<f64> = z.iter().zip(&z_pred).map(|(a, b)| a - b).collect();
    let correction = gain.matvec(&innovation);
    let mean: Vec<f64> = predicted
        .mean
        .iter()
        .zip(&correction)
        .map(|(m, c)| m + c)
        .collect();

    let ks = gain.matmul(&s.as_mat());
    let ksk = ks.matmul_bt(&gain);
    let post_cov_mat = predicted.cov.as_mat().sub(&ksk).symmetrized();
    let cov = spd_with_jitter(post_cov_mat, UKF_JITTER, jitter_count)?;

    Ok(GaussianState { mean, cov })
}

/// Posterior sequence from folding [`ukf_step`] over the measurements.
#[derive(Debug, Clone)]
pub struct FilterRun {
    pub posteriors: Vec<GaussianState>,
    pub jitter_applications: u64,
}

pub fn filter_sequence(
    prior: &GaussianPrior,
    measurements: &[Vec<f64>],
    dynamic: &DynamicModel,
    measurement: &MeasurementModel,
    p: &UtParams,
) -> Result<FilterRun, FilterError> {
    let mut state = GaussianState {
        mean: prior.mean.clone(),
        cov: prior.cov.clone(),
    };
    let mut posteriors = Vec::with_capacity(measurements.len());
    let mut jitter = 0u64;
    for (k, z) in measurements.iter().enumerate() {
        state = ukf_step(&state, z, dynamic, measurement, p, &mut jitter)
            .map_err(|source| FilterError::Step { step: k + 1, source })?;
        posteriors.push(state.clone());
    }
    Ok(FilterRun {
        posteriors,
        jitter_applications: jitter,
    })
}
