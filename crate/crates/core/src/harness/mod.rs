//! Experiment orchestration: the four arms of known/unknown functions and
//! covariances, test-time filtering, and report emission.

pub mod config;
pub mod rmse;

use crate::container::{Container, ContainerError};
use crate::datagen::{read_scenario_header, write_scenario_header, Dataset};
use crate::mlp::{InputNorm, MlpParams};
use crate::numerics::{Mat, NumericError, SpdMat};
use crate::ssm::{MeanKind, ScenarioConfig};
use crate::trainer::{
    closed_form_noise_cov, coordinate_ascent_train, TargetKind, TrainError, TrainingReport,
};
use crate::ukf::{filter_sequence, FilterError};
use config::ExperimentConfig;
use rayon::prelude::*;
use rmse::{compute_report, RmseReport};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 2 configuration, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Container(_)
            | HarnessError::Io(_)
            | HarnessError::LengthMismatch(_)
            | HarnessError::Train(TrainError::EmptyDataset) => 3,
            HarnessError::Train(_) | HarnessError::Filter(_) | HarnessError::Numeric(_) => 4,
        }
    }
}

/// The four experiment arms over known/unknown functions and covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    KnownAll,
    KnownFnUnknownCov,
    UnknownFnKnownCov,
    UnknownAll,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Arm::KnownAll => "known_all",
            Arm::KnownFnUnknownCov => "known_fn_unknown_cov",
            Arm::UnknownFnKnownCov => "unknown_fn_known_cov",
            Arm::UnknownAll => "unknown_all",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Arm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "known_all" => Ok(Arm::KnownAll),
            "known_fn_unknown_cov" => Ok(Arm::KnownFnUnknownCov),
            "unknown_fn_known_cov" => Ok(Arm::UnknownFnKnownCov),
            "unknown_all" => Ok(Arm::UnknownAll),
            other => Err(format!("unknown arm `{other}`")),
        }
    }
}

/// The dynamic and measurement models an arm filters with, plus training
/// traces when nets were trained.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub dynamic: crate::ssm::DynamicModel,
    pub measurement: crate::ssm::MeasurementModel,
    pub f_report: Option<TrainingReport>,
    pub h_report: Option<TrainingReport>,
}

/// Arm dispatch: produce the models to filter with.
///
/// * `known_all` — the generative models.
/// * `known_fn_unknown_cov` — generative means, closed-form covariance
///   estimates (no neural training).
/// * `unknown_fn_known_cov` — coordinate ascent with the covariance pinned
///   to the generative one.
/// * `unknown_all` — full coordinate ascent for both models.
pub fn train_models(
    cfg: &ExperimentConfig,
    train: &Dataset,
) -> Result<TrainedModels, HarnessError> {
    let scen = &cfg.scenario;
    match cfg.arm {
        Arm::KnownAll => Ok(TrainedModels {
            dynamic: scen.true_dynamic_model(),
            measurement: scen.true_measurement_model(),
            f_report: None,
            h_report: None,
        }),
        Arm::KnownFnUnknownCov => {
            let f_mean = scen.true_dynamic_mean();
            let h_mean = scen.true_measurement_mean();
            let q = closed_form_noise_cov(train, TargetKind::Dynamic, &f_mean)?;
            let r = closed_form_noise_cov(train, TargetKind::Measurement, &h_mean)?;
            Ok(TrainedModels {
                dynamic: crate::ssm::DynamicModel {
                    mean: f_mean,
                    noise_cov: q,
                },
                measurement: crate::ssm::MeasurementModel {
                    mean: h_mean,
                    noise_cov: r,
                },
                f_report: None,
                h_report: None,
            })
        }
        Arm::UnknownFnKnownCov | Arm::UnknownAll => {
            let f_cfg = cfg
                .f_train
                .as_ref()
                .expect("training arms carry an f config");
            let h_cfg = cfg
                .h_train
                .as_ref()
                .expect("training arms carry an h config");
            let (f_res, h_res) = rayon::join(
                || coordinate_ascent_train(train, f_cfg),
                || coordinate_ascent_train(train, h_cfg),
            );
            let f_report = f_res?;
            let h_report = h_res?;
            Ok(TrainedModels {
                dynamic: crate::ssm::DynamicModel {
                    mean: MeanKind::NeuralDelta {
                        params: f_report.final_params.clone(),
                        norm: f_report.input_norm.clone(),
                    },
                    noise_cov: f_report.final_cov.clone(),
                },
                measurement: crate::ssm::MeasurementModel {
                    mean: MeanKind::Neural {
                        params: h_report.final_params.clone(),
                        norm: h_report.input_norm.clone(),
                    },
                    noise_cov: h_report.final_cov.clone(),
                },
                f_report: Some(f_report),
                h_report: Some(h_report),
            })
        }
    }
}

/// Posterior means per test sequence plus the RMSE report.
#[derive(Debug, Clone)]
pub struct FilterOutputs {
    pub posterior_means: Vec<Vec<Vec<f64>>>,
    pub jitter_applications: u64,
    pub report: RmseReport,
}

/// Filter every test sequence (in parallel; outputs are index-ordered and
/// schedule-independent) and compare posterior means against the truth.
pub fn filter_dataset(
    cfg: &ExperimentConfig,
    test: &Dataset,
    models: &TrainedModels,
) -> Result<FilterOutputs, HarnessError> {
    if test.is_empty() {
        return Err(HarnessError::Train(TrainError::EmptyDataset));
    }
    let prior = cfg.scenario.prior();
    let runs: Result<Vec<_>, FilterError> = test
        .trajectories
        .par_iter()
        .map(|traj| {
            filter_sequence(
                &prior,
                &traj.measurements,
                &models.dynamic,
                &models.measurement,
                &cfg.ut,
            )
        })
        .collect();
    let runs = runs?;

    let jitter_applications: u64 = runs.iter().map(|r| r.jitter_applications).sum();
    let posterior_means: Vec<Vec<Vec<f64>>> = runs
        .iter()
        .map(|r| r.posteriors.iter().map(|g| g.mean.clone()).collect())
        .collect();
    let truths: Vec<Vec<Vec<f64>>> = test
        .trajectories
        .iter()
        .map(|t| t.states[1..].to_vec())
        .collect();
    let report = compute_report(
        &posterior_means,
        &truths,
        cfg.arm,
        &cfg.scenario,
        jitter_applications,
    )?;
    Ok(FilterOutputs {
        posterior_means,
        jitter_applications,
        report,
    })
}

/// End-to-end in-memory experiment: generate, train, filter.
pub struct ExperimentRun {
    pub train: Dataset,
    pub test: Dataset,
    pub models: TrainedModels,
    pub outputs: FilterOutputs,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun, HarnessError> {
    let (train, test) = crate::datagen::generate_dataset(&cfg.scenario);
    let models = train_models(cfg, &train)?;
    let outputs = filter_dataset(cfg, &test, &models)?;
    Ok(ExperimentRun {
        train,
        test,
        models,
        outputs,
    })
}

// ---------------------------------------------------------------------------
// Checkpoint and report containers
// ---------------------------------------------------------------------------

fn mat_values(m: &Mat) -> Vec<f64> {
    m.data().to_vec()
}

/// Serialize a model (mean function plus noise covariance) as a
/// checkpoint container.
pub fn model_to_container(
    target: TargetKind,
    mean: &MeanKind,
    noise_cov: &SpdMat,
    scen: &ScenarioConfig,
    seed: u64,
) -> Container {
    let mut c = Container::new("checkpoint");
    write_scenario_header(&mut c, scen);
    c.set("seed", seed);
    c.set("target", target);
    c.push_array("noise_cov", noise_cov.data().to_vec());
    match mean {
        MeanKind::NcvTransition { tau } => {
            c.set("mean", "ncv");
            c.set("mean_tau", *tau);
        }
        MeanKind::BilaterationRanges => c.set("mean", "bilateration"),
        MeanKind::LorenzTransition { dt, j_terms } => {
            c.set("mean", "lorenz");
            c.set("mean_dt", *dt);
            c.set("mean_j_terms", *j_terms);
        }
        MeanKind::SphericalRadius => c.set("mean", "spherical"),
        MeanKind::Linear { mat } => {
            c.set("mean", "linear");
            c.set("mean_rows", mat.rows());
            c.set("mean_cols", mat.cols());
            c.push_array("h_matrix", mat_values(mat));
        }
        MeanKind::Neural { params, norm } | MeanKind::NeuralDelta { params, norm } => {
            let delta = matches!(mean, MeanKind::NeuralDelta { .. });
            c.set("mean", if delta { "neural_delta" } else { "neural" });
            c.set("in_dim", params.in_dim);
            c.set("hidden_dim", params.hidden_dim);
            c.set("out_dim", params.out_dim);
            c.set("dropout_rate", params.dropout_rate);
            c.push_array("w1", mat_values(&params.w1));
            c.push_array("b1", params.b1.clone());
            c.push_array("w2", mat_values(&params.w2));
            c.push_array("b2", params.b2.clone());
            c.push_array("w3", mat_values(&params.w3));
            c.push_array("b3", params.b3.clone());
            if let Some(n) = norm {
                c.push_array("norm_mean", n.mean.clone());
                c.push_array("norm_inv_std", n.inv_std.clone());
            }
        }
    }
    c
}

fn checked_mat(
    c: &Container,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<Mat, ContainerError> {
    let data = c.array(name)?;
    if data.len() != rows * cols {
        return Err(ContainerError::CountMismatch(format!(
            "array `{name}` holds {} values, expected {rows}x{cols}",
            data.len()
        )));
    }
    Ok(Mat::from_vec(rows, cols, data.to_vec()))
}

/// Deserialize a checkpoint container back into a model.
pub fn model_from_container(c: &Container) -> Result<(MeanKind, SpdMat), HarnessError> {
    if c.kind() != "checkpoint" {
        return Err(ContainerError::BadHeader(format!(
            "expected kind=checkpoint, found `{}`",
            c.kind()
        ))
        .into());
    }
    let mean = match c.require("mean")? {
        "ncv" => MeanKind::NcvTransition {
            tau: c.parse("mean_tau")?,
        },
        "bilateration" => MeanKind::BilaterationRanges,
        "lorenz" => MeanKind::LorenzTransition {
            dt: c.parse("mean_dt")?,
            j_terms: c.parse("mean_j_terms")?,
        },
        "spherical" => MeanKind::SphericalRadius,
        "linear" => {
            let rows: usize = c.parse("mean_rows")?;
            let cols: usize = c.parse("mean_cols")?;
            MeanKind::Linear {
                mat: checked_mat(c, "h_matrix", rows, cols)?,
            }
        }
        kind @ ("neural" | "neural_delta") => {
            let in_dim: usize = c.parse("in_dim")?;
            let hidden: usize = c.parse("hidden_dim")?;
            let out_dim: usize = c.parse("out_dim")?;
            let params = MlpParams {
                in_dim,
                hidden_dim: hidden,
                out_dim,
                w1: checked_mat(c, "w1", hidden, in_dim)?,
                b1: c.array("b1")?.to_vec(),
                w2: checked_mat(c, "w2", hidden, hidden)?,
                b2: c.array("b2")?.to_vec(),
                w3: checked_mat(c, "w3", out_dim, hidden)?,
                b3: c.array("b3")?.to_vec(),
                dropout_rate: c.parse("dropout_rate")?,
            };
            if params.b1.len() != hidden || params.b2.len() != hidden || params.b3.len() != out_dim
            {
                return Err(ContainerError::CountMismatch("bias lengths".into()).into());
            }
            let norm = if c.has_array("norm_mean") {
                Some(InputNorm {
                    mean: c.array("norm_mean")?.to_vec(),
                    inv_std: c.array("norm_inv_std")?.to_vec(),
                })
            } else {
                None
            };
            if kind == "neural_delta" {
                MeanKind::NeuralDelta { params, norm }
            } else {
                MeanKind::Neural { params, norm }
            }
        }
        other => {
            return Err(
                ContainerError::BadHeader(format!("unknown mean kind `{other}`")).into(),
            )
        }
    };

    let cov_data = c.array("noise_cov")?;
    let n = (cov_data.len() as f64).sqrt().round() as usize;
    if n * n != cov_data.len() {
        return Err(ContainerError::CountMismatch(format!(
            "noise_cov holds {} values, not a square matrix",
            cov_data.len()
        ))
        .into());
    }
    let cov = SpdMat::new(Mat::from_vec(n, n, cov_data.to_vec()))?;
    Ok((mean, cov))
}

/// Serialize filtering outputs (posterior means + RMSE report).
pub fn report_to_container(outputs: &FilterOutputs, seed: u64) -> Container {
    let report = &outputs.report;
    let mut c = Container::new("report");
    write_scenario_header(&mut c, &report.scenario);
    c.set("seed", seed);
    c.set("arm", report.arm);
    c.set("M", report.n_test);
    c.set("jitter_applications", report.jitter_applications);
    c.push_array("per_step_rmse", report.per_step.clone());
    c.push_array("per_step_rmse_unnorm", report.per_step_unnorm.clone());
    c.push_array("overall", vec![report.overall]);
    c.push_array("overall_unnorm", vec![report.overall_unnorm]);
    let mut means = Vec::new();
    for seq in &outputs.posterior_means {
        for x in seq {
            means.extend_from_slice(x);
        }
    }
    c.push_array("posterior_means", means);
    c
}

/// Deserialize filtering outputs.
pub fn report_from_container(c: &Container) -> Result<FilterOutputs, HarnessError> {
    if c.kind() != "report" {
        return Err(ContainerError::BadHeader(format!(
            "expected kind=report, found `{}`",
            c.kind()
        ))
        .into());
    }
    let seed: u64 = c.parse("seed")?;
    let scenario = read_scenario_header(c, seed)?;
    let arm: Arm = c
        .require("arm")?
        .parse()
        .map_err(ContainerError::BadHeader)?;
    let n_test: usize = c.parse("M")?;
    let jitter: u64 = c.parse("jitter_applications")?;
    let t = scenario.t_steps;
    let nx = scenario.state_dim();

    let per_step = c.array("per_step_rmse")?.to_vec();
    let per_step_unnorm = c.array("per_step_rmse_unnorm")?.to_vec();
    if per_step.len() != t || per_step_unnorm.len() != t {
        return Err(ContainerError::CountMismatch("per-step RMSE length".into()).into());
    }
    let overall = c.array("overall")?;
    let overall_unnorm = c.array("overall_unnorm")?;
    if overall.len() != 1 || overall_unnorm.len() != 1 {
        return Err(ContainerError::CountMismatch("overall RMSE length".into()).into());
    }
    let means = c.array("posterior_means")?;
    if means.len() != n_test * t * nx {
        return Err(ContainerError::CountMismatch(format!(
            "posterior_means holds {} values, header declares M={n_test}, T={t}, nx={nx}",
            means.len()
        ))
        .into());
    }
    let posterior_means: Vec<Vec<Vec<f64>>> = (0..n_test)
        .map(|i| {
            (0..t)
                .map(|k| {
                    let base = (i * t + k) * nx;
                    means[base..base + nx].to_vec()
                })
                .collect()
        })
        .collect();
    Ok(FilterOutputs {
        posterior_means,
        jitter_applications: jitter,
        report: RmseReport {
            per_step,
            per_step_unnorm,
            overall: overall[0],
            overall_unnorm: overall_unnorm[0],
            n_test,
            arm,
            scenario,
            jitter_applications: jitter,
        },
    })
}

pub fn save_model(
    path: &Path,
    target: TargetKind,
    mean: &MeanKind,
    noise_cov: &SpdMat,
    scen: &ScenarioConfig,
    seed: u64,
) -> Result<(), HarnessError> {
    model_to_container(target, mean, noise_cov, scen, seed).save(path)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(MeanKind, SpdMat), HarnessError> {
    model_from_container(&Container::load(path)?)
}
