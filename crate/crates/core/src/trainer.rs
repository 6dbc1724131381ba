//! Coordinate-ascent maximum-likelihood training.
//!
//! Alternates (a) epochs of shuffled mini-batch Adam on the Mahalanobis
//! loss with the noise covariance frozen, and (b) the closed-form
//! covariance update `Q̂ = (1/MT) Σ r rᵀ`. The dynamic model trains on
//! pairs `(x_{k-1}, Δx_k)` (delta parameterization); the measurement
//! model on `(x_k, z_k)`. Dynamic and measurement jobs share no state and
//! may run concurrently.

use crate::datagen::Dataset;
use crate::mlp::{
    adam_step, loss_and_output_grad, AdamState, DropoutMask, InputNorm, MlpParams,
};
use crate::numerics::{Mat, NumericError, SpdMat};
use crate::rng::CounterRng;
use std::io::Write;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Diagonal regularization added to every closed-form covariance update
/// so rank-deficient residuals still produce an SPD matrix.
pub const COV_JITTER: f64 = 1e-9;

// Stream ids for the per-job generators; the high bit keeps them disjoint
// from trajectory-sampling keys.
pub const STREAM_INIT: u64 = 0x8000_0000_0000_0001;
pub const STREAM_SHUFFLE: u64 = 0x8000_0000_0000_0002;
pub const STREAM_DROPOUT: u64 = 0x8000_0000_0000_0003;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Dynamic,
    Measurement,
}

impl std::fmt::Display for TargetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TargetKind::Dynamic => write!(f, "dynamic"),
            TargetKind::Measurement => write!(f, "measurement"),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error(
        "non-finite loss at outer iteration {outer_iter}, epoch {epoch} \
         (learning rate too high?)"
    )]
    NonFiniteLoss { outer_iter: usize, epoch: usize },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Hyper-parameters of one coordinate-ascent job.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub target_kind: TargetKind,
    pub n_coord: usize,
    pub n_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub q_init: SpdMat,
    pub seed: u64,
    /// Freeze the covariance at `q_init` (the known-covariance arm).
    pub pin_cov: bool,
    pub normalize_inputs: bool,
    /// Spread `n_epochs` across the outer iterations instead of running
    /// `n_epochs` per iteration.
    pub epochs_total_mode: bool,
    /// Optional relative objective tolerance for early stopping.
    pub early_stop_tol: Option<f64>,
}

impl TrainConfig {
    pub fn new(target_kind: TargetKind, q_init: SpdMat, seed: u64) -> Self {
        TrainConfig {
            target_kind,
            n_coord: 1,
            n_epochs: 1,
            batch_size: 32,
            learning_rate: 1e-3,
            hidden_dim: 64,
            dropout_rate: 0.1,
            q_init,
            seed,
            pin_cov: false,
            normalize_inputs: false,
            epochs_total_mode: false,
            early_stop_tol: None,
        }
    }
}

/// Flattened training pairs, one sample per row.
#[derive(Debug, Clone)]
pub struct SupervisedPairs {
    pub in_dim: usize,
    pub out_dim: usize,
    pub count: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl SupervisedPairs {
    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.in_dim..(i + 1) * self.in_dim]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.out_dim..(i + 1) * self.out_dim]
    }

    pub fn from_rows(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Self {
        assert_eq!(inputs.len(), targets.len());
        assert!(!inputs.is_empty());
        let in_dim = inputs[0].len();
        let out_dim = targets[0].len();
        SupervisedPairs {
            in_dim,
            out_dim,
            count: inputs.len(),
            inputs: inputs.into_iter().flatten().collect(),
            targets: targets.into_iter().flatten().collect(),
        }
    }
}

/// Flatten a dataset into training pairs.
///
/// Dynamic kind emits `(x_{k-1}, x_k − x_{k-1})`, measurement kind
/// `(x_k, z_k)`, ordered by trajectory then step.
pub fn build_pairs(ds: &Dataset, kind: TargetKind) -> Result<SupervisedPairs, TrainError> {
    if ds.is_empty() || ds.scenario.t_steps == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let nx = ds.scenario.state_dim();
    let nz = ds.scenario.meas_dim();
    let t = ds.scenario.t_steps;
    let count = ds.len() * t;
    let (in_dim, out_dim) = match kind {
        TargetKind::Dynamic => (nx, nx),
        TargetKind::Measurement => (nx, nz),
    };
    let mut inputs = Vec::with_capacity(count * in_dim);
    let mut targets = Vec::with_capacity(count * out_dim);
    for traj in &ds.trajectories {
        for k in 1..=t {
            match kind {
                TargetKind::Dynamic => {
                    inputs.extend_from_slice(&traj.states[k - 1]);
                    for (a, b) in traj.states[k].iter().zip(&traj.states[k - 1]) {
                        targets.push(a - b);
                    }
                }
                TargetKind::Measurement => {
                    inputs.extend_from_slice(&traj.states[k]);
                    targets.extend_from_slice(&traj.measurements[k - 1]);
                }
            }
        }
    }
    Ok(SupervisedPairs {
        in_dim,
        out_dim,
        count,
        inputs,
        targets,
    })
}

/// Population mean/std transform over the pair inputs.
pub fn fit_input_norm(pairs: &SupervisedPairs) -> InputNorm {
    let d = pairs.in_dim;
    let n = pairs.count as f64;
    let mut mean = vec![0.0; d];
    for i in 0..pairs.count {
        for (m, &v) in mean.iter_mut().zip(pairs.input(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; d];
    for i in 0..pairs.count {
        for ((s, &v), m) in var.iter_mut().zip(pairs.input(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let inv_std = var
        .iter()
        .map(|&v| {
            let s = (v / n).sqrt();
            if s > 1e-12 {
                1.0 / s
            } else {
                1.0
            }
        })
        .collect();
    InputNorm { mean, inv_std }
}

fn gather_batch(
    pairs: &SupervisedPairs,
    indices: &[u32],
    norm: Option<&InputNorm>,
) -> (Mat, Mat) {
    let b = indices.len();
    let mut xs = Mat::zeros(pairs.in_dim, b);
    let mut ts = Mat::zeros(pairs.out_dim, b);
    for (j, &idx) in indices.iter().enumerate() {
        let x = pairs.input(idx as usize);
        match norm {
            Some(n) => {
                for i in 0..pairs.in_dim {
                    xs[(i, j)] = (x[i] - n.mean[i]) * n.inv_std[i];
                }
            }
            None => {
                for i in 0..pairs.in_dim {
                    xs[(i, j)] = x[i];
                }
            }
        }
        let t = pairs.target(idx as usize);
        for i in 0..pairs.out_dim {
            ts[(i, j)] = t[i];
        }
    }
    (xs, ts)
}

/// Evaluation-mode residual columns `target − net(input)` for a slice of
/// sample indices.
fn residual_block(
    pairs: &SupervisedPairs,
    params: &MlpParams,
    norm: Option<&InputNorm>,
    start: usize,
    end: usize,
) -> Mat {
    let idx: Vec<u32> = (start as u32..end as u32).collect();
    let (xs, ts) = gather_batch(pairs, &idx, norm);
    let masks = vec![DropoutMask::all_kept(params.hidden_dim); idx.len()];
    let cache = params.forward_batch(&xs, &masks);
    ts.sub(&cache.out)
}

/// Full-data objective `MT·ln|Q| + Σ rᵀ Q⁻¹ r`, dropout disabled.
pub fn full_objective(
    pairs: &SupervisedPairs,
    params: &MlpParams,
    cov: &SpdMat,
    norm: Option<&InputNorm>,
) -> f64 {
    let mut quad = 0.0;
    let block = 1024;
    let mut start = 0;
    while start < pairs.count {
        let end = (start + block).min(pairs.count);
        let residuals = residual_block(pairs, params, norm, start, end);
        let solved = cov.solve_mat(&residuals);
        quad += crate::numerics::dot(residuals.data(), solved.data());
        start = end;
    }
    pairs.count as f64 * cov.log_det() + quad
}

/// Symmetrized empirical covariance of the residuals, before jitter.
pub fn empirical_residual_cov(
    pairs: &SupervisedPairs,
    params: &MlpParams,
    norm: Option<&InputNorm>,
) -> Mat {
    let d = pairs.out_dim;
    let mut acc = Mat::zeros(d, d);
    let block = 1024;
    let mut start = 0;
    while start < pairs.count {
        let end = (start + block).min(pairs.count);
        let residuals = residual_block(pairs, params, norm, start, end);
        for j in 0..residuals.cols() {
            for i in 0..d {
                let ri = residuals[(i, j)];
                for l in 0..d {
                    acc[(i, l)] += ri * residuals[(l, j)];
                }
            }
        }
        start = end;
    }
    acc.scale(1.0 / pairs.count as f64).symmetrized()
}

/// Closed-form covariance update: `(1/MT) Σ r rᵀ` around zero mean, plus
/// diagonal jitter.
pub fn update_cov_closed_form(
    pairs: &SupervisedPairs,
    params: &MlpParams,
    norm: Option<&InputNorm>,
) -> Result<SpdMat, TrainError> {
    if pairs.count == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let m = empirical_residual_cov(pairs, params, norm).add_diagonal(COV_JITTER);
    Ok(SpdMat::new(m)?)
}

/// Closed-form noise covariance for a *known* mean function: the
/// Kalman-MLE reduction needs no neural training at all.
pub fn closed_form_noise_cov(
    ds: &Dataset,
    kind: TargetKind,
    mean: &crate::ssm::MeanKind,
) -> Result<SpdMat, TrainError> {
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let t = ds.scenario.t_steps;
    let d = match kind {
        TargetKind::Dynamic => ds.scenario.state_dim(),
        TargetKind::Measurement => ds.scenario.meas_dim(),
    };
    let mut acc = Mat::zeros(d, d);
    let mut count = 0usize;
    for traj in &ds.trajectories {
        for k in 1..=t {
            let (pred, truth): (Vec<f64>, &[f64]) = match kind {
                TargetKind::Dynamic => (mean.eval(&traj.states[k - 1]), &traj.states[k]),
                TargetKind::Measurement => (mean.eval(&traj.states[k]), &traj.measurements[k - 1]),
            };
            let r: Vec<f64> = truth.iter().zip(&pred).map(|(a, b)| a - b).collect();
            for i in 0..d {
                for j in 0..d {
                    acc[(i, j)] += r[i] * r[j];
                }
            }
            count += 1;
        }
    }
    let m = acc
        .scale(1.0 / count as f64)
        .symmetrized()
        .add_diagonal(COV_JITTER);
    Ok(SpdMat::new(m)?)
}

/// One theta phase: `epochs` epochs of shuffled mini-batch Adam on the
/// Mahalanobis loss with `cov_fixed` frozen (its factorization is reused
/// across every mini-batch).
#[allow(clippy::too_many_arguments)]
pub fn update_theta(
    pairs: &SupervisedPairs,
    params: MlpParams,
    cov_fixed: &SpdMat,
    cfg: &TrainConfig,
    epochs: usize,
    shuffle_rng: &mut CounterRng,
    dropout_rng: &mut CounterRng,
    norm: Option<&InputNorm>,
    outer_iter: usize,
) -> Result<MlpParams, TrainError> {
    if pairs.count == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let mut params = params;
    let mut adam = AdamState::new(&params, cfg.learning_rate);
    let mut order: Vec<u32> = (0..pairs.count as u32).collect();
    for epoch in 0..epochs {
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let (xs, ts) = gather_batch(pairs, chunk, norm);
            let masks: Vec<DropoutMask> = (0..chunk.len())
                .map(|_| DropoutMask::sample(params.hidden_dim, cfg.dropout_rate, dropout_rng))
                .collect();
            let cache = params.forward_batch(&xs, &masks);
            let (loss, grad_out) = loss_and_output_grad(&ts, &cache.out, cov_fixed);
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { outer_iter, epoch });
            }
            let grads = params
                .backward_batch(&cache, &grad_out)
                .expect("cache produced by the same forward pass");
            let (next, next_adam) = adam_step(params, &grads, adam);
            params = next;
            adam = next_adam;
        }
    }
    Ok(params)
}

/// Per-job training trace.
#[derive(Debug, Clone)]
pub struct TrainingReport {
    /// Objective at initialization, before any update.
    pub nll_initial: f64,
    /// Objective after each theta phase, with the pre-update covariance.
    pub nll_after_theta: Vec<f64>,
    /// Objective after each covariance update (one entry per outer iteration).
    pub nll_trace: Vec<f64>,
    /// Covariance estimate after each outer iteration.
    pub cov_trace: Vec<SpdMat>,
    pub final_params: MlpParams,
    pub final_cov: SpdMat,
    pub input_norm: Option<InputNorm>,
    pub wall_time: Duration,
}

/// Full coordinate-ascent run.
pub fn coordinate_ascent_train(
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainingReport, TrainError> {
    let start = Instant::now();
    let pairs = build_pairs(ds, cfg.target_kind)?;
    let mut init_rng = CounterRng::new(cfg.seed, STREAM_INIT);
    let mut shuffle_rng = CounterRng::new(cfg.seed, STREAM_SHUFFLE);
    let mut dropout_rng = CounterRng::new(cfg.seed, STREAM_DROPOUT);

    let mut params = MlpParams::init(
        pairs.in_dim,
        cfg.hidden_dim,
        pairs.out_dim,
        cfg.dropout_rate,
        &mut init_rng,
    );
    if cfg.q_init.dim() != pairs.out_dim {
        return Err(TrainError::Numeric(NumericError::DimensionMismatch(
            format!(
                "initial covariance is {}x{}, targets are {}-dimensional",
                cfg.q_init.dim(),
                cfg.q_init.dim(),
                pairs.out_dim
            ),
        )));
    }
    let norm = cfg.normalize_inputs.then(|| fit_input_norm(&pairs));
    let mut cov = cfg.q_init.clone();

    let nll_initial = full_objective(&pairs, &params, &cov, norm.as_ref());
    let epochs_per_iter = if cfg.epochs_total_mode {
        (cfg.n_epochs / cfg.n_coord).max(1)
    } else {
        cfg.n_epochs
    };

    let mut nll_after_theta = Vec::with_capacity(cfg.n_coord);
    let mut nll_trace = Vec::with_capacity(cfg.n_coord);
    let mut cov_trace = Vec::with_capacity(cfg.n_coord);
    for j in 1..=cfg.n_coord {
        params = update_theta(
            &pairs,
            params,
            &cov,
            cfg,
            epochs_per_iter,
            &mut shuffle_rng,
            &mut dropout_rng,
            norm.as_ref(),
            j,
        )?;
        let after_theta = full_objective(&pairs, &params, &cov, norm.as_ref());
        if !after_theta.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                outer_iter: j,
                epoch: epochs_per_iter,
            });
        }
        nll_after_theta.push(after_theta);

        if !cfg.pin_cov {
            cov = update_cov_closed_form(&pairs, &params, norm.as_ref())?;
        }
        let after_cov = full_objective(&pairs, &params, &cov, norm.as_ref());
        nll_trace.push(after_cov);
        cov_trace.push(cov.clone());

        if let Some(tol) = cfg.early_stop_tol {
            if j >= 2 {
                let prev = nll_trace[j - 2];
                if (prev - after_cov).abs() <= tol * prev.abs().max(1.0) {
                    break;
                }
            }
        }
    }

    Ok(TrainingReport {
        nll_initial,
        nll_after_theta,
        nll_trace,
        cov_trace,
        final_params: params,
        final_cov: cov,
        input_norm: norm,
        wall_time: start.elapsed(),
    })
}

/// Training-report file: one line per outer iteration,
/// `iter,nll,logdetq,frobenius_q`.
pub fn write_training_report_csv<W: Write>(
    report: &TrainingReport,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "iter,nll,logdetq,frobenius_q")?;
    for (i, (nll, cov)) in report.nll_trace.iter().zip(&report.cov_trace).enumerate() {
        writeln!(
            out,
            "{},{},{},{}",
            i + 1,
            nll,
            cov.log_det(),
            cov.as_mat().frobenius()
        )?;
    }
    Ok(())
}
