//! State-space model abstractions and the concrete scenario functions.
//!
//! Analytic and neural mean functions share the [`MeanKind`] interface so
//! the filter and trainer are agnostic to which one is plugged in; the
//! four experiment arms are exactly interface swaps.

use crate::mlp::{InputNorm, MlpParams};
use crate::numerics::{taylor_matrix_exp, Mat, SpdMat};

/// Distance between the two range anchors at (0,0) and (150,0).
pub const RADAR_SEPARATION: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Bilateration,
    Lorenz,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scenario::Bilateration => write!(f, "bilateration"),
            Scenario::Lorenz => write!(f, "lorenz"),
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bilateration" => Ok(Scenario::Bilateration),
            "lorenz" => Ok(Scenario::Lorenz),
            other => Err(format!("unknown scenario `{other}`")),
        }
    }
}

/// Gaussian prior over the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub cov: SpdMat,
}

/// Full generative configuration of one scenario.
///
/// Fields irrelevant to the selected scenario keep their defaults and are
/// ignored. All noise variances must be positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub t_steps: usize,
    pub m_train: usize,
    pub m_test: usize,
    pub seed: u64,
    // bilateration
    pub tau: f64,
    pub sigma_u_sq: f64,
    pub sigma_r_sq: f64,
    // lorenz
    pub dt: f64,
    pub j_terms: usize,
    pub r_noise: f64,
    pub nu: f64,
    pub gamma_sq: f64,
}

impl ScenarioConfig {
    pub fn bilateration_defaults() -> Self {
        ScenarioConfig {
            scenario: Scenario::Bilateration,
            t_steps: 50,
            m_train: 1000,
            m_test: 200,
            seed: 0,
            tau: 0.5,
            sigma_u_sq: 1e-3,
            sigma_r_sq: 1e-3,
            dt: 0.02,
            j_terms: 5,
            r_noise: 1e-3,
            nu: 0.01,
            gamma_sq: 1e-2,
        }
    }

    pub fn lorenz_defaults() -> Self {
        ScenarioConfig {
            scenario: Scenario::Lorenz,
            t_steps: 25,
            ..ScenarioConfig::bilateration_defaults()
        }
    }

    pub fn defaults_for(scenario: Scenario) -> Self {
        match scenario {
            Scenario::Bilateration => ScenarioConfig::bilateration_defaults(),
            Scenario::Lorenz => ScenarioConfig::lorenz_defaults(),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.scenario {
            Scenario::Bilateration => 4,
            Scenario::Lorenz => 3,
        }
    }

    pub fn meas_dim(&self) -> usize {
        match self.scenario {
            Scenario::Bilateration => 2,
            Scenario::Lorenz => 1,
        }
    }

    /// Process-noise variance `q² = ν r²` for the Lorenz scenario.
    pub fn q_sq(&self) -> f64 {
        self.nu * self.r_noise * self.r_noise
    }

    pub fn prior(&self) -> GaussianPrior {
        match self.scenario {
            Scenario::Bilateration => GaussianPrior {
                mean: vec![100.0, 1.0, 0.0, 2.0],
                cov: SpdMat::diagonal(&[1.0, 0.1, 1.0, 0.1]).expect("prior covariance"),
            },
            Scenario::Lorenz => GaussianPrior {
                mean: vec![1.0, 1.0, 1.0],
                cov: SpdMat::scaled_identity(3, self.gamma_sq).expect("prior covariance"),
            },
        }
    }

    pub fn true_process_cov(&self) -> SpdMat {
        match self.scenario {
            Scenario::Bilateration => ncv_process_cov(self.sigma_u_sq, self.tau),
            Scenario::Lorenz => SpdMat::scaled_identity(3, self.q_sq()).expect("Q"),
        }
    }

    pub fn true_measurement_cov(&self) -> SpdMat {
        match self.scenario {
            Scenario::Bilateration => {
                SpdMat::scaled_identity(2, self.sigma_r_sq).expect("R")
            }
            Scenario::Lorenz => {
                SpdMat::scaled_identity(1, self.r_noise * self.r_noise).expect("R")
            }
        }
    }

    pub fn true_dynamic_mean(&self) -> MeanKind {
        match self.scenario {
            Scenario::Bilateration => MeanKind::NcvTransition { tau: self.tau },
            Scenario::Lorenz => MeanKind::LorenzTransition {
                dt: self.dt,
                j_terms: self.j_terms,
            },
        }
    }

    pub fn true_measurement_mean(&self) -> MeanKind {
        match self.scenario {
            Scenario::Bilateration => MeanKind::BilaterationRanges,
            Scenario::Lorenz => MeanKind::SphericalRadius,
        }
    }

    pub fn true_dynamic_model(&self) -> DynamicModel {
        DynamicModel {
            mean: self.true_dynamic_mean(),
            noise_cov: self.true_process_cov(),
        }
    }

    pub fn true_measurement_model(&self) -> MeasurementModel {
        MeasurementModel {
            mean: self.true_measurement_mean(),
            noise_cov: self.true_measurement_cov(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.t_steps < 1 {
            return Err("T must be >= 1".into());
        }
        match self.scenario {
            Scenario::Bilateration => {
                if self.tau <= 0.0 || self.sigma_u_sq <= 0.0 || self.sigma_r_sq <= 0.0 {
                    return Err("tau, sigma_u_sq and sigma_r_sq must be positive".into());
                }
            }
            Scenario::Lorenz => {
                if self.dt <= 0.0 || self.r_noise <= 0.0 || self.nu <= 0.0 || self.gamma_sq <= 0.0
                {
                    return Err("dt, r, nu and gamma_sq must be positive".into());
                }
                if self.j_terms < 1 {
                    return Err("j_terms must be >= 1".into());
                }
            }
        }
        Ok(())
    }
}

/// A mean function, analytic or learned.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanKind {
    /// Nearly-constant-velocity transition `F(τ)·x`.
    NcvTransition { tau: f64 },
    /// Ranges to the two anchors.
    BilaterationRanges,
    /// Discretised Lorenz transition `F(x)·x` with the truncated series.
    LorenzTransition { dt: f64, j_terms: usize },
    /// Radial distance from the origin.
    SphericalRadius,
    /// Arbitrary linear map `H·x`.
    Linear { mat: Mat },
    /// Learned measurement function `net(x)`.
    Neural {
        params: MlpParams,
        norm: Option<InputNorm>,
    },
    /// Learned delta-parameterized dynamic function `x + net(x)`.
    NeuralDelta {
        params: MlpParams,
        norm: Option<InputNorm>,
    },
}

impl MeanKind {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            MeanKind::NcvTransition { tau } => ncv_transition(x, *tau),
            MeanKind::BilaterationRanges => bilateration_h(x),
            MeanKind::LorenzTransition { dt, j_terms } => lorenz_f(x, *dt, *j_terms),
            MeanKind::SphericalRadius => vec![spherical_h(x)],
            MeanKind::Linear { mat } => mat.matvec(x),
            MeanKind::Neural { params, norm } => match norm {
                Some(n) => params.eval(&n.apply(x)),
                None => params.eval(x),
            },
            MeanKind::NeuralDelta { params, norm } => {
                let delta = match norm {
                    Some(n) => params.eval(&n.apply(x)),
                    None => params.eval(x),
                };
                x.iter().zip(&delta).map(|(a, d)| a + d).collect()
            }
        }
    }
}

/// Transition density mean plus process noise covariance `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicModel {
    pub mean: MeanKind,
    pub noise_cov: SpdMat,
}

/// Measurement density mean plus measurement noise covariance `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub mean: MeanKind,
    pub noise_cov: SpdMat,
}

pub fn ncv_transition_matrix(tau: f64) -> Mat {
    Mat::from_rows(&[
        &[1.0, tau, 0.0, 0.0],
        &[0.0, 1.0, 0.0, 0.0],
        &[0.0, 0.0, 1.0, tau],
        &[0.0, 0.0, 0.0, 1.0],
    ])
}

/// `F(τ)·x` for the state layout `[px, vx, py, vy]`.
pub fn ncv_transition(x: &[f64], tau: f64) -> Vec<f64> {
    assert_eq!(x.len(), 4, "NCV state is 4-dimensional");
    vec![x[0] + tau * x[1], x[1], x[2] + tau * x[3], x[3]]
}

/// Continuous-white-noise-acceleration discretization: per-axis block
/// `σ_u² [[τ³/3, τ²/2], [τ²/2, τ]]`.
pub fn ncv_process_cov(sigma_u_sq: f64, tau: f64) -> SpdMat {
    assert!(sigma_u_sq > 0.0 && tau > 0.0);
    let t3 = tau * tau * tau / 3.0;
    let t2 = tau * tau / 2.0;
    let mut m = Mat::zeros(4, 4);
    for axis in 0..2 {
        let o = 2 * axis;
        m[(o, o)] = sigma_u_sq * t3;
        m[(o, o + 1)] = sigma_u_sq * t2;
        m[(o + 1, o)] = sigma_u_sq * t2;
        m[(o + 1, o + 1)] = sigma_u_sq * tau;
    }
    SpdMat::new(m).expect("NCV process covariance is SPD")
}

/// Ranges from `[px, vx, py, vy]` to the anchors at (0,0) and (150,0).
pub fn bilateration_h(x: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), 4);
    let (px, py) = (x[0], x[2]);
    vec![
        (px * px + py * py).sqrt(),
        ((px - RADAR_SEPARATION) * (px - RADAR_SEPARATION) + py * py).sqrt(),
    ]
}

/// State-dependent Lorenz linearization.
pub fn lorenz_a(x: &[f64]) -> Mat {
    assert_eq!(x.len(), 3);
    let x1 = x[0];
    Mat::from_rows(&[
        &[-10.0, 10.0, 0.0],
        &[28.0, -1.0, -x1],
        &[0.0, x1, -8.0 / 3.0],
    ])
}

/// Discrete Lorenz transition `F(x)·x` with
/// `F(x) = I + Σ_{j=1}^{J} (A(x)·Δk)^j / j!`.
pub fn lorenz_f(x: &[f64], dt: f64, j_terms: usize) -> Vec<f64> {
    let f = taylor_matrix_exp(&lorenz_a(x), dt, j_terms).expect("3x3 is square");
    f.matvec(x)
}

/// Radial distance of the state from the origin.
pub fn spherical_h(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::taylor_matrix_exp;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn ncv_examples() {
        assert_eq!(
            ncv_transition(&[100.0, 1.0, 0.0, 2.0], 0.5),
            vec![100.5, 1.0, 1.0, 2.0]
        );
        assert_eq!(ncv_transition(&[0.0; 4], 0.7), vec![0.0; 4]);
        assert_eq!(
            ncv_transition(&[1.0, -2.0, 3.0, 4.0], 0.5),
            vec![0.0, -2.0, 5.0, 4.0]
        );
    }

    #[test]
    fn ncv_process_cov_blocks() {
        let q = ncv_process_cov(1.0, 1.0);
        for o in [0usize, 2] {
            assert_abs_diff_eq!(q.get(o, o), 1.0 / 3.0, epsilon = 1e-15);
            assert_abs_diff_eq!(q.get(o, o + 1), 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(q.get(o + 1, o), 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(q.get(o + 1, o + 1), 1.0, epsilon = 1e-15);
        }
        assert_eq!(q.get(0, 2), 0.0);

        let q = ncv_process_cov(0.001, 0.5);
        assert_abs_diff_eq!(q.get(0, 0), 0.001 * 0.125 / 3.0, epsilon = 1e-18);
        assert_abs_diff_eq!(q.get(0, 1), 0.001 * 0.125, epsilon = 1e-18);
        assert_abs_diff_eq!(q.get(1, 1), 0.001 * 0.5, epsilon = 1e-18);
    }

    #[test]
    fn ncv_process_cov_is_spd_at_paper_scales() {
        // constructor already Cholesky-validates; just exercise both scales
        for sigma_u_sq in [1e-3, 1e-1] {
            let _ = ncv_process_cov(sigma_u_sq, 0.5);
        }
    }

    #[test]
    fn bilateration_examples() {
        let r = bilateration_h(&[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(r, vec![0.0, 150.0]);
        let r = bilateration_h(&[150.0, 0.0, 0.0, 0.0]);
        assert_eq!(r, vec![150.0, 0.0]);
        let r = bilateration_h(&[75.0, 0.0, 100.0, 0.0]);
        assert_abs_diff_eq!(r[0], 125.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], 125.0, epsilon = 1e-12);
    }

    #[test]
    fn lorenz_a_entries() {
        let a = lorenz_a(&[0.0, 5.0, -3.0]);
        assert_eq!(a.row(0), &[-10.0, 10.0, 0.0]);
        assert_eq!(a.row(1), &[28.0, -1.0, 0.0]);
        assert_eq!(a.row(2), &[0.0, 0.0, -8.0 / 3.0]);

        let a = lorenz_a(&[1.0, 0.0, 0.0]);
        assert_eq!(a[(1, 2)], -1.0);
        assert_eq!(a[(2, 1)], 1.0);
        // the x1-dependent pair is antisymmetric
        assert_eq!(a[(1, 2)] + a[(2, 1)], 0.0);
    }

    #[test]
    fn lorenz_f_at_origin() {
        assert_eq!(lorenz_f(&[0.0, 0.0, 0.0], 0.02, 5), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn lorenz_f_first_order_limit() {
        let x = [1.0, 2.0, 3.0];
        let dt = 1e-9;
        let y = lorenz_f(&x, dt, 1);
        let ax = lorenz_a(&x).matvec(&x);
        for i in 0..3 {
            assert_abs_diff_eq!(y[i], x[i] + dt * ax[i], epsilon = 1e-15);
        }
    }

    /// Independent evaluation of the truncated series: accumulate powers of
    /// (A·dt) by explicit triple loops, then multiply by x.
    fn lorenz_f_oracle(x: &[f64], dt: f64, j_terms: usize) -> Vec<f64> {
        let a = lorenz_a(x);
        let n = 3;
        let mut scaled = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                scaled[i * n + j] = a[(i, j)] * dt;
            }
        }
        let mut f = vec![0.0; n * n];
        for i in 0..n {
            f[i * n + i] = 1.0;
        }
        let mut power = f.clone(); // (A·dt)^0
        let mut factorial = 1.0;
        for j in 1..=j_terms {
            factorial *= j as f64;
            let mut next = vec![0.0; n * n];
            for r in 0..n {
                for c in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += power[r * n + k] * scaled[k * n + c];
                    }
                    next[r * n + c] = s;
                }
            }
            power = next;
            for (fv, pv) in f.iter_mut().zip(&power) {
                *fv += pv / factorial;
            }
        }
        (0..n)
            .map(|i| (0..n).map(|j| f[i * n + j] * x[j]).sum())
            .collect()
    }

    #[test]
    fn lorenz_f_matches_series_oracle() {
        let x = [1.0, 1.0, 1.0];
        let got = lorenz_f(&x, 0.02, 5);
        let want = lorenz_f_oracle(&x, 0.02, 5);
        for i in 0..3 {
            assert_abs_diff_eq!(got[i], want[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn lorenz_attractor_stays_bounded() {
        let mut x = vec![1.0, 1.0, 1.0];
        for _ in 0..1000 {
            x = lorenz_f(&x, 0.02, 5);
            let norm = spherical_h(&x);
            assert!(norm < 100.0, "attractor escaped: ‖x‖ = {norm}");
        }
    }

    #[test]
    fn spherical_examples() {
        assert_eq!(spherical_h(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(spherical_h(&[3.0, 4.0, 0.0]), 5.0);
        assert_abs_diff_eq!(spherical_h(&[1.0, 1.0, 1.0]), 3.0f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn neural_means() {
        let zero = MlpParams::zeros(4, 3, 4, 0.0);
        let m = MeanKind::NeuralDelta {
            params: zero.clone(),
            norm: None,
        };
        let x = [100.0, 1.0, 0.0, 2.0];
        assert_eq!(m.eval(&x), x.to_vec());

        let zero_meas = MlpParams::zeros(4, 3, 2, 0.0);
        let m = MeanKind::Neural {
            params: zero_meas,
            norm: None,
        };
        assert_eq!(m.eval(&x), vec![0.0, 0.0]);
    }

    #[test]
    fn neural_delta_consistency() {
        let mut rng = crate::rng::CounterRng::new(21, 0);
        let p = MlpParams::init(4, 8, 4, 0.0, &mut rng);
        let x = [1.0, -2.0, 0.5, 3.0];
        let delta_model = MeanKind::NeuralDelta {
            params: p.clone(),
            norm: None,
        };
        let y = delta_model.eval(&x);
        let net = p.eval(&x);
        for i in 0..4 {
            assert_eq!(y[i].to_bits(), (x[i] + net[i]).to_bits());
        }
    }

    #[test]
    fn lorenz_series_tail_within_analytic_bound() {
        // Over the attractor range the J=5 -> J=20 difference obeys the
        // series tail bound Σ_{j=6}^{20} ‖A·dt‖_F^j / j!.
        for x1 in [-30.0, -10.0, 0.0, 1.0, 10.0, 30.0] {
            let a = lorenz_a(&[x1, 0.0, 0.0]);
            let dt = 0.02;
            let f5 = taylor_matrix_exp(&a, dt, 5).unwrap();
            let f20 = taylor_matrix_exp(&a, dt, 20).unwrap();
            let diff = f20.sub(&f5).frobenius();
            let norm = a.frobenius() * dt;
            let mut bound = 0.0;
            let mut factorial = 120.0; // 5!
            let mut power = norm.powi(5);
            for j in 6..=20 {
                factorial *= j as f64;
                power *= norm;
                bound += power / factorial;
            }
            assert!(
                diff <= bound * (1.0 + 1e-12) + 1e-30,
                "diff {diff} exceeds tail bound {bound} at x1 = {x1}"
            );
        }
    }

    proptest! {
        #[test]
        fn bilateration_triangle_bound(px in -500.0f64..500.0, py in -500.0f64..500.0) {
            let r = bilateration_h(&[px, 0.0, py, 0.0]);
            prop_assert!((r[0] - r[1]).abs() <= RADAR_SEPARATION + 1e-9);
            prop_assert!(r[0] + r[1] >= RADAR_SEPARATION - 1e-9);
        }

        #[test]
        fn spherical_homogeneity(x in prop::array::uniform3(-50.0f64..50.0), c in -10.0f64..10.0) {
            let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
            let lhs = spherical_h(&scaled);
            let rhs = c.abs() * spherical_h(&x);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1.0));
        }
    }
}
