//! Command-line pipeline: generate data, train models, filter test
//! sequences, and emit RMSE reports. Stages communicate only through
//! files, so any stage can be re-run in isolation.

use clap::{Parser, Subcommand};
use nkmle::container::Container;
use nkmle::datagen::{dataset_from_container, dataset_to_container, generate_dataset, write_csv};
use nkmle::harness::config::{parse_config, ExperimentConfig};
use nkmle::harness::{
    filter_dataset, model_from_container, model_to_container, report_from_container,
    report_to_container, train_models, Arm, HarnessError, TrainedModels,
};
use nkmle::ssm::{DynamicModel, MeasurementModel};
use nkmle::trainer::{write_training_report_csv, TargetKind};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

pub const TRAIN_FILE: &str = "train.nkmle";
pub const TEST_FILE: &str = "test.nkmle";
pub const DYNAMIC_MODEL_FILE: &str = "dynamic_model.nkmle";
pub const MEASUREMENT_MODEL_FILE: &str = "measurement_model.nkmle";
pub const FILTER_REPORT_FILE: &str = "filter_report.nkmle";
pub const FAILURE_MARKER: &str = "FAILED";

#[derive(Parser)]
#[command(
    name = "nkmle",
    about = "Learn Gaussian state-space models by coordinate-ascent MLE and filter with a UKF"
)]
struct Cli {
    /// Override the config seed for every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Thread count never changes outputs.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Print progress to stderr.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample train/test datasets and write them as containers.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce the models for the configured arm (training them when the
    /// arm calls for it) and write checkpoints plus training CSVs.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter the test split with saved models and write posterior means
    /// plus the RMSE report.
    Filter {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit a `k,rmse` CSV and a one-line summary from a filter report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Dump a dataset container as CSV for inspection.
    Dump {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = parse_config(path)?;
    if let Some(seed) = seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn cmd_generate(cfg: &ExperimentConfig, out: &Path, verbose: bool) -> Result<(), HarnessError> {
    fs::create_dir_all(out)?;
    let (train, test) = generate_dataset(&cfg.scenario);
    if verbose {
        eprintln!(
            "generated {} train and {} test trajectories (T={}, scenario={})",
            train.len(),
            test.len(),
            cfg.scenario.t_steps,
            cfg.scenario.scenario
        );
    }
    dataset_to_container(&train).save(&out.join(TRAIN_FILE))?;
    dataset_to_container(&test).save(&out.join(TEST_FILE))?;
    Ok(())
}

fn cmd_train(
    cfg: &ExperimentConfig,
    data: &Path,
    out: &Path,
    verbose: bool,
) -> Result<(), HarnessError> {
    fs::create_dir_all(out)?;
    let train = dataset_from_container(&Container::load(&data.join(TRAIN_FILE))?)?;
    if verbose {
        eprintln!("training arm {} on {} trajectories", cfg.arm, train.len());
    }
    let models = train_models(cfg, &train)?;
    model_to_container(
        TargetKind::Dynamic,
        &models.dynamic.mean,
        &models.dynamic.noise_cov,
        &cfg.scenario,
        cfg.seed,
    )
    .save(&out.join(DYNAMIC_MODEL_FILE))?;
    model_to_container(
        TargetKind::Measurement,
        &models.measurement.mean,
        &models.measurement.noise_cov,
        &cfg.scenario,
        cfg.seed,
    )
    .save(&out.join(MEASUREMENT_MODEL_FILE))?;
    if let Some(report) = &models.f_report {
        let mut buf = Vec::new();
        write_training_report_csv(report, &mut buf)?;
        fs::write(out.join("training_report_dynamic.csv"), buf)?;
    }
    if let Some(report) = &models.h_report {
        let mut buf = Vec::new();
        write_training_report_csv(report, &mut buf)?;
        fs::write(out.join("training_report_measurement.csv"), buf)?;
    }
    if verbose {
        if let Some(r) = &models.f_report {
            eprintln!(
                "dynamic model trained in {:.1?} ({} outer iterations)",
                r.wall_time,
                r.nll_trace.len()
            );
        }
        if let Some(r) = &models.h_report {
            eprintln!(
                "measurement model trained in {:.1?} ({} outer iterations)",
                r.wall_time,
                r.nll_trace.len()
            );
        }
    }
    Ok(())
}

fn cmd_filter(
    cfg: &ExperimentConfig,
    data: &Path,
    models_dir: &Path,
    out: &Path,
    verbose: bool,
) -> Result<(), HarnessError> {
    fs::create_dir_all(out)?;
    let test = dataset_from_container(&Container::load(&data.join(TEST_FILE))?)?;
    let (dyn_mean, dyn_cov) =
        model_from_container(&Container::load(&models_dir.join(DYNAMIC_MODEL_FILE))?)?;
    let (meas_mean, meas_cov) =
        model_from_container(&Container::load(&models_dir.join(MEASUREMENT_MODEL_FILE))?)?;
    let models = TrainedModels {
        dynamic: DynamicModel {
            mean: dyn_mean,
            noise_cov: dyn_cov,
        },
        measurement: MeasurementModel {
            mean: meas_mean,
            noise_cov: meas_cov,
        },
        f_report: None,
        h_report: None,
    };
    let outputs = filter_dataset(cfg, &test, &models)?;
    if verbose {
        eprintln!(
            "filtered {} sequences: overall RMSE {:.6} ({} jitter applications)",
            outputs.report.n_test, outputs.report.overall, outputs.jitter_applications
        );
    }
    report_to_container(&outputs, cfg.seed).save(&out.join(FILTER_REPORT_FILE))?;
    Ok(())
}

fn cmd_report(input: &Path, csv: &Path) -> Result<(), HarnessError> {
    let outputs = report_from_container(&Container::load(&input.join(FILTER_REPORT_FILE))?)?;
    let report = &outputs.report;
    let mut buf = String::from("k,rmse\n");
    for (k, r) in report.per_step.iter().enumerate() {
        buf.push_str(&format!("{},{}\n", k + 1, r));
    }
    fs::write(csv, buf)?;
    println!(
        "scenario={} arm={} T={} n_test={} overall_rmse={:.6} overall_rmse_unnormalized={:.6} jitter_applications={}",
        report.scenario.scenario,
        report.arm,
        report.scenario.t_steps,
        report.n_test,
        report.overall,
        report.overall_unnorm,
        report.jitter_applications
    );
    Ok(())
}

fn cmd_dump(input: &Path, csv: &Path) -> Result<(), HarnessError> {
    let ds = dataset_from_container(&Container::load(input)?)?;
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf)?;
    fs::write(csv, buf)?;
    Ok(())
}

/// Flush a failure marker so partial artifacts are recognizable.
fn mark_failure(dir: &Path, err: &HarnessError) {
    if dir.is_dir() {
        let _ = fs::write(dir.join(FAILURE_MARKER), format!("{err}\n"));
    }
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    match &cli.command {
        Command::Generate { config, out } => {
            let cfg = load_config(config, cli.seed)?;
            cmd_generate(&cfg, out, cli.verbose).inspect_err(|e| mark_failure(out, e))
        }
        Command::Train { config, data, out } => {
            let cfg = load_config(config, cli.seed)?;
            cmd_train(&cfg, data, out, cli.verbose).inspect_err(|e| mark_failure(out, e))
        }
        Command::Filter {
            config,
            data,
            models,
            out,
        } => {
            let cfg = load_config(config, cli.seed)?;
            if matches!(cfg.arm, Arm::KnownAll) && cli.verbose {
                eprintln!("filtering with generative models");
            }
            cmd_filter(&cfg, data, models, out, cli.verbose)
                .inspect_err(|e| mark_failure(out, e))
        }
        Command::Report { input, csv } => cmd_report(input, csv),
        Command::Dump { input, csv } => cmd_dump(input, csv),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build();
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot build thread pool: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
