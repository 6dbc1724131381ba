//! Experiment configuration files: flat `key=value` lines with `#`
//! comments. Unknown keys and duplicates are errors; everything except
//! `scenario` and `arm` has a default.

use crate::harness::Arm;
use crate::numerics::SpdMat;
use crate::ssm::{Scenario, ScenarioConfig};
use crate::trainer::{TargetKind, TrainConfig};
use crate::ukf::UtParams;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("missing required key `{0}`")]
    MissingRequiredKey(String),
    #[error("line {line}: {msg}")]
    BadValue { line: usize, msg: String },
}

const KNOWN_KEYS: &[&str] = &[
    "scenario",
    "arm",
    "seed",
    "T",
    "m_train",
    "m_test",
    // bilateration
    "tau",
    "sigma_u_sq",
    "sigma_r_sq",
    // lorenz
    "dt",
    "j_terms",
    "r",
    "nu",
    "gamma_sq",
    // unscented transform
    "ut_alpha",
    "ut_beta",
    "ut_kappa",
    // dynamic-function training
    "f_hidden",
    "f_learning_rate",
    "f_n_coord",
    "f_n_epochs",
    "f_batch_size",
    "f_dropout",
    // measurement-function training
    "h_hidden",
    "h_learning_rate",
    "h_n_coord",
    "h_n_epochs",
    "h_batch_size",
    "h_dropout",
    // switches
    "normalize_inputs",
    "epochs_total_mode",
    "early_stop",
    "early_stop_tol",
];

/// Everything one experiment needs: scenario, arm, training setups and
/// filter parameters.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub arm: Arm,
    pub f_train: Option<TrainConfig>,
    pub h_train: Option<TrainConfig>,
    pub ut: UtParams,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Re-derive every stage seed from a new master seed (the CLI
    /// `--seed` override).
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.scenario.seed = seed;
        if let Some(cfg) = &mut self.f_train {
            cfg.seed = derive_train_seed(seed, TargetKind::Dynamic);
        }
        if let Some(cfg) = &mut self.h_train {
            cfg.seed = derive_train_seed(seed, TargetKind::Measurement);
        }
    }
}

/// Per-target training seed derived from the experiment seed.
pub fn derive_train_seed(seed: u64, kind: TargetKind) -> u64 {
    let tag = match kind {
        TargetKind::Dynamic => 0xF0,
        TargetKind::Measurement => 0xA0,
    };
    crate::rng::keyed(seed, 0x8000_0000_0000_0010 | tag, 0, 0)
}

struct RawConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.entries.get(key) {
            None => Ok(default),
            Some((line, raw)) => raw.parse().map_err(|_| ConfigError::BadValue {
                line: *line,
                msg: format!("cannot parse `{key}={raw}`"),
            }),
        }
    }

    fn parse_positive(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v: f64 = self.parse(key, default)?;
        if v <= 0.0 || !v.is_finite() {
            let line = self.entries.get(key).map(|(l, _)| *l).unwrap_or(0);
            return Err(ConfigError::BadValue {
                line,
                msg: format!("`{key}` must be positive and finite, got {v}"),
            });
        }
        Ok(v)
    }
}

fn parse_lines(text: &str) -> Result<RawConfig, ConfigError> {
    let mut entries = BTreeMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.split_once('#') {
            Some((before, _)) => before,
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::BadValue {
            line: line_no,
            msg: format!("expected `key=value`, got `{line}`"),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { line: line_no, key });
        }
        if entries.contains_key(&key) {
            return Err(ConfigError::BadValue {
                line: line_no,
                msg: format!("duplicate key `{key}`"),
            });
        }
        entries.insert(key, (line_no, value));
    }
    Ok(RawConfig { entries })
}

/// Hyper-parameter defaults for the dynamic function `f`:
/// (hidden, learning rate, N_c, N_e, batch).
fn f_defaults(scenario: Scenario, pinned_cov: bool) -> (usize, f64, usize, usize, usize) {
    match scenario {
        Scenario::Bilateration => (600, 1e-4, if pinned_cov { 1 } else { 10 }, 150, 32),
        Scenario::Lorenz => (
            400,
            1e-3,
            if pinned_cov { 1 } else { 50 },
            if pinned_cov { 300 } else { 2000 },
            32,
        ),
    }
}

/// Hyper-parameter defaults for the measurement function `h`.
fn h_defaults(scenario: Scenario, pinned_cov: bool) -> (usize, f64, usize, usize, usize) {
    match scenario {
        Scenario::Bilateration => (
            256,
            1e-3,
            if pinned_cov { 1 } else { 10 },
            if pinned_cov { 600 } else { 800 },
            160,
        ),
        Scenario::Lorenz => (
            400,
            1e-3,
            if pinned_cov { 1 } else { 40 },
            if pinned_cov { 1500 } else { 3000 },
            32,
        ),
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw = parse_lines(text)?;

    let scenario_name = raw
        .get("scenario")
        .ok_or_else(|| ConfigError::MissingRequiredKey("scenario".into()))?;
    let scenario_kind: Scenario = scenario_name.parse().map_err(|msg| {
        let line = raw.entries.get("scenario").map(|(l, _)| *l).unwrap_or(0);
        ConfigError::BadValue { line, msg }
    })?;
    let arm_name = raw
        .get("arm")
        .ok_or_else(|| ConfigError::MissingRequiredKey("arm".into()))?;
    let arm: Arm = arm_name.parse().map_err(|msg| {
        let line = raw.entries.get("arm").map(|(l, _)| *l).unwrap_or(0);
        ConfigError::BadValue { line, msg }
    })?;

    let mut scenario = ScenarioConfig::defaults_for(scenario_kind);
    let seed: u64 = raw.parse("seed", 0)?;
    scenario.seed = seed;
    scenario.t_steps = raw.parse("T", scenario.t_steps)?;
    scenario.m_train = raw.parse("m_train", scenario.m_train)?;
    scenario.m_test = raw.parse("m_test", scenario.m_test)?;
    scenario.tau = raw.parse_positive("tau", scenario.tau)?;
    scenario.sigma_u_sq = raw.parse_positive("sigma_u_sq", scenario.sigma_u_sq)?;
    scenario.sigma_r_sq = raw.parse_positive("sigma_r_sq", scenario.sigma_r_sq)?;
    scenario.dt = raw.parse_positive("dt", scenario.dt)?;
    scenario.j_terms = raw.parse("j_terms", scenario.j_terms)?;
    scenario.r_noise = raw.parse_positive("r", scenario.r_noise)?;
    scenario.nu = raw.parse_positive("nu", scenario.nu)?;
    scenario.gamma_sq = raw.parse_positive("gamma_sq", scenario.gamma_sq)?;
    if let Err(msg) = scenario.validate() {
        return Err(ConfigError::BadValue { line: 0, msg });
    }

    let ut = UtParams {
        alpha: raw.parse_positive("ut_alpha", 0.1)?,
        beta: raw.parse("ut_beta", 3.0)?,
        kappa: raw.parse("ut_kappa", 0.0)?,
    };

    let normalize_inputs: bool = raw.parse("normalize_inputs", false)?;
    let epochs_total_mode: bool = raw.parse("epochs_total_mode", false)?;
    let early_stop: bool = raw.parse("early_stop", false)?;
    let early_stop_tol: f64 = raw.parse("early_stop_tol", 1e-6)?;

    let trains_nets = matches!(arm, Arm::UnknownFnKnownCov | Arm::UnknownAll);
    let pinned_cov = matches!(arm, Arm::UnknownFnKnownCov);

    let build_train = |kind: TargetKind| -> Result<TrainConfig, ConfigError> {
        let (hidden, lr, n_coord, n_epochs, batch) = match kind {
            TargetKind::Dynamic => f_defaults(scenario_kind, pinned_cov),
            TargetKind::Measurement => h_defaults(scenario_kind, pinned_cov),
        };
        let prefix = match kind {
            TargetKind::Dynamic => "f",
            TargetKind::Measurement => "h",
        };
        let key = |suffix: &str| format!("{prefix}_{suffix}");
        let dim = match kind {
            TargetKind::Dynamic => scenario.state_dim(),
            TargetKind::Measurement => scenario.meas_dim(),
        };
        // the known-covariance arm pins the true covariance; the rest start
        // from the identity initial guess
        let q_init = if pinned_cov {
            match kind {
                TargetKind::Dynamic => scenario.true_process_cov(),
                TargetKind::Measurement => scenario.true_measurement_cov(),
            }
        } else {
            SpdMat::identity(dim)
        };
        let dropout: f64 = raw.parse(&key("dropout"), 0.1)?;
        if !(0.0..1.0).contains(&dropout) {
            let line = raw
                .entries
                .get(&key("dropout"))
                .map(|(l, _)| *l)
                .unwrap_or(0);
            return Err(ConfigError::BadValue {
                line,
                msg: format!("dropout must be in [0, 1), got {dropout}"),
            });
        }
        let cfg = TrainConfig {
            target_kind: kind,
            n_coord: raw.parse(&key("n_coord"), n_coord)?,
            n_epochs: raw.parse(&key("n_epochs"), n_epochs)?,
            batch_size: raw.parse(&key("batch_size"), batch)?,
            learning_rate: raw.parse_positive(&key("learning_rate"), lr)?,
            hidden_dim: raw.parse(&key("hidden"), hidden)?,
            dropout_rate: dropout,
            q_init,
            seed: derive_train_seed(seed, kind),
            pin_cov: pinned_cov,
            normalize_inputs,
            epochs_total_mode,
            early_stop_tol: early_stop.then_some(early_stop_tol),
        };
        if cfg.n_coord < 1 || cfg.n_epochs < 1 || cfg.batch_size < 1 {
            return Err(ConfigError::BadValue {
                line: 0,
                msg: format!("{prefix}: counts must be >= 1"),
            });
        }
        if cfg.batch_size > scenario.m_train * scenario.t_steps {
            return Err(ConfigError::BadValue {
                line: 0,
                msg: format!(
                    "{}: batch size {} exceeds M*T = {}",
                    prefix,
                    cfg.batch_size,
                    scenario.m_train * scenario.t_steps
                ),
            });
        }
        Ok(cfg)
    };

    let (f_train, h_train) = if trains_nets {
        (
            Some(build_train(TargetKind::Dynamic)?),
            Some(build_train(TargetKind::Measurement)?),
        )
    } else {
        (None, None)
    };

    Ok(ExperimentConfig {
        scenario,
        arm,
        f_train,
        h_train,
        ut,
        seed,
    })
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_paper_defaults() {
        let cfg = parse_config_str("scenario=bilateration\narm=known_all\n").unwrap();
        assert_eq!(cfg.scenario.tau, 0.5);
        assert_eq!(cfg.ut.alpha, 0.1);
        assert_eq!(cfg.ut.beta, 3.0);
        assert_eq!(cfg.ut.kappa, 0.0);
        assert_eq!(cfg.scenario.m_train, 1000);
        assert_eq!(cfg.scenario.m_test, 200);
        // known_all carries no training configs
        assert!(cfg.f_train.is_none() && cfg.h_train.is_none());
    }

    #[test]
    fn paper_table_defaults_scenario1() {
        let cfg =
            parse_config_str("scenario=bilateration\narm=unknown_all\n").unwrap();
        let f = cfg.f_train.unwrap();
        assert_eq!(f.hidden_dim, 600);
        assert_eq!(f.learning_rate, 1e-4);
        assert_eq!(f.n_coord, 10);
        assert_eq!(f.n_epochs, 150);
        assert_eq!(f.batch_size, 32);
        assert!(!f.pin_cov);
        let h = cfg.h_train.unwrap();
        assert_eq!(h.hidden_dim, 256);
        assert_eq!(h.learning_rate, 1e-3);
        assert_eq!(h.n_coord, 10);
        assert_eq!(h.n_epochs, 800);
        assert_eq!(h.batch_size, 160);
    }

    #[test]
    fn paper_table_defaults_scenario2_pinned() {
        let cfg = parse_config_str("scenario=lorenz\narm=unknown_fn_known_cov\n").unwrap();
        let f = cfg.f_train.unwrap();
        assert_eq!(f.hidden_dim, 400);
        assert_eq!(f.n_epochs, 300);
        assert_eq!(f.n_coord, 1);
        assert!(f.pin_cov);
        // pinned covariance equals the generative Q = q² I with q² = ν r²
        assert!((f.q_init.get(0, 0) - 1e-8).abs() < 1e-20);
        let h = cfg.h_train.unwrap();
        assert_eq!(h.n_epochs, 1500);
        assert!((h.q_init.get(0, 0) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn unknown_key_is_error() {
        match parse_config_str("scenario=lorenz\narm=known_all\nfrobnicate=1\n") {
            Err(ConfigError::UnknownKey { line, key }) => {
                assert_eq!(line, 3);
                assert_eq!(key, "frobnicate");
            }
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn bad_arm_is_error() {
        assert!(matches!(
            parse_config_str("scenario=lorenz\narm=frobnicate\n"),
            Err(ConfigError::BadValue { line: 2, .. })
        ));
    }

    #[test]
    fn duplicate_key_is_error() {
        assert!(matches!(
            parse_config_str("scenario=lorenz\narm=known_all\nseed=1\nseed=2\n"),
            Err(ConfigError::BadValue { line: 4, .. })
        ));
    }

    #[test]
    fn missing_required_keys() {
        assert!(matches!(
            parse_config_str("arm=known_all\n"),
            Err(ConfigError::MissingRequiredKey(k)) if k == "scenario"
        ));
        assert!(matches!(
            parse_config_str("scenario=lorenz\n"),
            Err(ConfigError::MissingRequiredKey(k)) if k == "arm"
        ));
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let cfg = parse_config_str(
            "# experiment\nscenario=lorenz # trailing comment\n\narm=known_all\nseed=9\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.scenario.scenario, Scenario::Lorenz);
    }

    #[test]
    fn non_positive_variance_rejected() {
        assert!(matches!(
            parse_config_str("scenario=bilateration\narm=known_all\nsigma_u_sq=0\n"),
            Err(ConfigError::BadValue { line: 3, .. })
        ));
    }

    #[test]
    fn seed_override_rederives_training_seeds() {
        let mut cfg =
            parse_config_str("scenario=lorenz\narm=unknown_all\nseed=1\n").unwrap();
        let f1 = cfg.f_train.as_ref().unwrap().seed;
        cfg.set_seed(2);
        let f2 = cfg.f_train.as_ref().unwrap().seed;
        assert_ne!(f1, f2);
        assert_eq!(cfg.scenario.seed, 2);
        // deterministic derivation
        assert_eq!(f2, derive_train_seed(2, TargetKind::Dynamic));
    }

    #[test]
    fn oversized_batch_rejected() {
        let err = parse_config_str(
            "scenario=bilateration\narm=unknown_all\nm_train=2\nT=10\nf_batch_size=100\n",
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { .. }));
    }
}
