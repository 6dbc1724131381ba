//! Supervised maximum-likelihood learning of Gaussian state-space models.
//!
//! The library learns dynamic and measurement models — neural mean
//! functions plus process/measurement noise covariances — from sequences
//! of ground-truth states and measurements by coordinate-ascent MLE, then
//! runs an unscented Kalman filter with the learned models and reports
//! RMSE against the truth.
//!
//! Modules:
//! * [`numerics`] — small dense matrix kernels, SPD factorization.
//! * [`rng`] — counter-based deterministic random number generation.
//! * [`mlp`] — the three-layer perceptron with hand-rolled backprop.
//! * [`ssm`] — scenario models and the shared mean-function interface.
//! * [`ukf`] — scaled sigma-point unscented Kalman filter.
//! * [`datagen`] — trajectory sampling and dataset files.
//! * [`container`] — the binary container format.
//! * [`trainer`] — coordinate-ascent MLE training.
//! * [`harness`] — experiment arms, RMSE reports, config files.

pub mod container;
pub mod datagen;
pub mod harness;
pub mod mlp;
pub mod numerics;
pub mod rng;
pub mod ssm;
pub mod trainer;
pub mod ukf;

pub use container::{Container, ContainerError};
pub use datagen::{generate_dataset, sample_trajectory, Dataset, Split, Trajectory};
pub use harness::config::{parse_config, parse_config_str, ConfigError, ExperimentConfig};
pub use harness::rmse::{rmse_overall, rmse_per_step, RmseReport};
pub use harness::{
    filter_dataset, run_experiment, train_models, Arm, FilterOutputs, HarnessError,
    TrainedModels,
};
pub use mlp::{AdamState, DropoutMask, InputNorm, MlpGrads, MlpParams};
pub use numerics::{taylor_matrix_exp, Mat, NumericError, SpdMat};
pub use rng::CounterRng;
pub use ssm::{
    DynamicModel, GaussianPrior, MeanKind, MeasurementModel, Scenario, ScenarioConfig,
};
pub use trainer::{
    build_pairs, coordinate_ascent_train, update_cov_closed_form, TargetKind, TrainConfig,
    TrainError, TrainingReport,
};
pub use ukf::{
    filter_sequence, sigma_points, ukf_step, unscented_transform, FilterRun, GaussianState,
    SigmaSet, UtParams,
};
