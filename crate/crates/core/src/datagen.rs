//! Ground-truth trajectory sampling and dataset file I/O.
//!
//! Every trajectory is addressed by its global index: all Gaussian draws
//! are keyed `(seed, trajectory, step, draw)`, so generation order and
//! thread count never change the sampled bytes, and regenerating any
//! split reproduces it exactly.

use crate::container::{Container, ContainerError};
use crate::numerics::Mat;
use crate::rng::keyed_normal;
use crate::ssm::{Scenario, ScenarioConfig};
use rayon::prelude::*;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// One sampled sequence: states `x_0..x_T` and measurements `z_1..z_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub measurements: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn t_steps(&self) -> usize {
        self.measurements.len()
    }
}

/// A split of sampled trajectories plus its generation metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub scenario: ScenarioConfig,
    pub split: Split,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Lower-triangular matvec `L·u` (the factor of a covariance).
fn correlate(l: &Mat, u: &[f64]) -> Vec<f64> {
    l.matvec(u)
}

/// Sample one trajectory at a global index.
///
/// Draw layout per trajectory: the prior uses step 0, draws `0..nx`; each
/// step `k >= 1` uses draws `0..nx` for process noise and `nx..nx+nz` for
/// measurement noise.
pub fn sample_trajectory(cfg: &ScenarioConfig, seed: u64, traj_index: u64) -> Trajectory {
    let nx = cfg.state_dim();
    let nz = cfg.meas_dim();
    let prior = cfg.prior();
    let dynamic = cfg.true_dynamic_model();
    let measurement = cfg.true_measurement_model();
    let l0 = prior.cov.cholesky();
    let lq = dynamic.noise_cov.cholesky();
    let lr = measurement.noise_cov.cholesky();

    let draw = |step: usize, base: usize, count: usize| -> Vec<f64> {
        (0..count)
            .map(|i| keyed_normal(seed, traj_index, step as u64, (base + i) as u64))
            .collect()
    };

    let mut states = Vec::with_capacity(cfg.t_steps + 1);
    let w0 = correlate(&l0, &draw(0, 0, nx));
    let x0: Vec<f64> = prior.mean.iter().zip(&w0).map(|(m, w)| m + w).collect();
    states.push(x0);

    let mut measurements = Vec::with_capacity(cfg.t_steps);
    for k in 1..=cfg.t_steps {
        let prev = states.last().unwrap();
        let w = correlate(&lq, &draw(k, 0, nx));
        let x: Vec<f64> = dynamic
            .mean
            .eval(prev)
            .iter()
            .zip(&w)
            .map(|(m, n)| m + n)
            .collect();
        let v = correlate(&lr, &draw(k, nx, nz));
        let z: Vec<f64> = measurement
            .mean
            .eval(&x)
            .iter()
            .zip(&v)
            .map(|(m, n)| m + n)
            .collect();
        states.push(x);
        measurements.push(z);
    }

    Trajectory {
        states,
        measurements,
    }
}

/// Sample `m_train + m_test` trajectories; the first `m_train` global
/// indices form the training split, the remainder the test split.
pub fn generate_dataset(cfg: &ScenarioConfig) -> (Dataset, Dataset) {
    let total = cfg.m_train + cfg.m_test;
    let mut trajectories: Vec<Trajectory> = (0..total as u64)
        .into_par_iter()
        .map(|i| sample_trajectory(cfg, cfg.seed, i))
        .collect();
    let test_trajs = trajectories.split_off(cfg.m_train);
    (
        Dataset {
            trajectories,
            scenario: cfg.clone(),
            split: Split::Train,
            seed: cfg.seed,
        },
        Dataset {
            trajectories: test_trajs,
            scenario: cfg.clone(),
            split: Split::Test,
            seed: cfg.seed,
        },
    )
}

/// Write the scenario parameters into a container header.
pub fn write_scenario_header(c: &mut Container, cfg: &ScenarioConfig) {
    c.set("scenario", cfg.scenario);
    c.set("T", cfg.t_steps);
    c.set("nx", cfg.state_dim());
    c.set("nz", cfg.meas_dim());
    c.set("m_train", cfg.m_train);
    c.set("m_test", cfg.m_test);
    match cfg.scenario {
        Scenario::Bilateration => {
            c.set("tau", cfg.tau);
            c.set("sigma_u_sq", cfg.sigma_u_sq);
            c.set("sigma_r_sq", cfg.sigma_r_sq);
        }
        Scenario::Lorenz => {
            c.set("dt", cfg.dt);
            c.set("j_terms", cfg.j_terms);
            c.set("r", cfg.r_noise);
            c.set("nu", cfg.nu);
            c.set("gamma_sq", cfg.gamma_sq);
        }
    }
}

/// Rebuild a [`ScenarioConfig`] from a container header.
pub fn read_scenario_header(c: &Container, seed: u64) -> Result<ScenarioConfig, ContainerError> {
    let scenario: Scenario = c
        .require("scenario")?
        .parse()
        .map_err(|e: String| ContainerError::BadHeader(e))?;
    let mut cfg = ScenarioConfig::defaults_for(scenario);
    cfg.seed = seed;
    cfg.t_steps = c.parse("T")?;
    cfg.m_train = c.parse("m_train")?;
    cfg.m_test = c.parse("m_test")?;
    match scenario {
        Scenario::Bilateration => {
            cfg.tau = c.parse("tau")?;
            cfg.sigma_u_sq = c.parse("sigma_u_sq")?;
            cfg.sigma_r_sq = c.parse("sigma_r_sq")?;
        }
        Scenario::Lorenz => {
            cfg.dt = c.parse("dt")?;
            cfg.j_terms = c.parse("j_terms")?;
            cfg.r_noise = c.parse("r")?;
            cfg.nu = c.parse("nu")?;
            cfg.gamma_sq = c.parse("gamma_sq")?;
        }
    }
    Ok(cfg)
}

pub fn dataset_to_container(ds: &Dataset) -> Container {
    let mut c = Container::new("dataset");
    write_scenario_header(&mut c, &ds.scenario);
    c.set("split", ds.split);
    c.set("M", ds.len());
    c.set("seed", ds.seed);

    let nx = ds.scenario.state_dim();
    let nz = ds.scenario.meas_dim();
    let t = ds.scenario.t_steps;
    let mut states = Vec::with_capacity(ds.len() * (t + 1) * nx);
    let mut measurements = Vec::with_capacity(ds.len() * t * nz);
    for traj in &ds.trajectories {
        for x in &traj.states {
            states.extend_from_slice(x);
        }
        for z in &traj.measurements {
            measurements.extend_from_slice(z);
        }
    }
    c.push_array("states", states);
    c.push_array("measurements", measurements);
    c
}

pub fn dataset_from_container(c: &Container) -> Result<Dataset, ContainerError> {
    if c.kind() != "dataset" {
        return Err(ContainerError::BadHeader(format!(
            "expected kind=dataset, found `{}`",
            c.kind()
        )));
    }
    let seed: u64 = c.parse("seed")?;
    let scenario = read_scenario_header(c, seed)?;
    let split: Split = c
        .require("split")?
        .parse()
        .map_err(|e: String| ContainerError::BadHeader(e))?;
    let m: usize = c.parse("M")?;
    let t = scenario.t_steps;
    let nx = scenario.state_dim();
    let nz = scenario.meas_dim();

    let states = c.array("states")?;
    let measurements = c.array("measurements")?;
    if states.len() != m * (t + 1) * nx {
        return Err(ContainerError::CountMismatch(format!(
            "states holds {} values, header declares M={m}, T={t}, nx={nx}",
            states.len()
        )));
    }
    if measurements.len() != m * t * nz {
        return Err(ContainerError::CountMismatch(format!(
            "measurements holds {} values, header declares M={m}, T={t}, nz={nz}",
            measurements.len()
        )));
    }

    let mut trajectories = Vec::with_capacity(m);
    for i in 0..m {
        let sbase = i * (t + 1) * nx;
        let zbase = i * t * nz;
        trajectories.push(Trajectory {
            states: (0..=t)
                .map(|k| states[sbase + k * nx..sbase + (k + 1) * nx].to_vec())
                .collect(),
            measurements: (0..t)
                .map(|k| measurements[zbase + k * nz..zbase + (k + 1) * nz].to_vec())
                .collect(),
        });
    }
    Ok(Dataset {
        trajectories,
        scenario,
        split,
        seed,
    })
}

/// CSV dump: one row per (trajectory, step); measurement columns are
/// blank at `k = 0`.
pub fn write_csv<W: Write>(ds: &Dataset, out: &mut W) -> std::io::Result<()> {
    let nx = ds.scenario.state_dim();
    let nz = ds.scenario.meas_dim();
    write!(out, "traj,k")?;
    for i in 1..=nx {
        write!(out, ",x_{i}")?;
    }
    for i in 1..=nz {
        write!(out, ",z_{i}")?;
    }
    writeln!(out)?;
    for (i, traj) in ds.trajectories.iter().enumerate() {
        for (k, x) in traj.states.iter().enumerate() {
            write!(out, "{i},{k}")?;
            for v in x {
                write!(out, ",{v}")?;
            }
            if k == 0 {
                for _ in 0..nz {
                    write!(out, ",")?;
                }
            } else {
                for v in &traj.measurements[k - 1] {
                    write!(out, ",{v}")?;
                }
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
