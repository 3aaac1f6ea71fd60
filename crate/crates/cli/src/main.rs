use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::warn;

use mixnoise::fixtures::standard_image;
use mixnoise::harness::{format_table, run_experiment, solver_from_toml, sweep, ExperimentConfig, SweepAxis};
use mixnoise::image::{load_pgm, psnr, save_pgm, Image};
use mixnoise::noise::{estimate_noise_variance, synthesize, NoiseKind, NoiseSpec, VarianceEstimator};
use mixnoise::pipeline::{restore, Mode, SolverConfig};
use mixnoise::Error;

/// Mixed Gaussian / impulse noise removal.
#[derive(Parser)]
#[command(name = "mixnoise", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Mixture,
    RandomValued,
    SaltPepper,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Sigma2,
    Ratio,
}

#[derive(Subcommand)]
enum Command {
    /// Add synthetic noise to an image (written clamped and quantized to 8 bits).
    Synthesize {
        /// PGM file or fixture:<name>
        input: String,
        output: PathBuf,
        #[arg(long, value_enum, default_value = "mixture")]
        kind: Kind,
        /// Mixture ratios, or the impulse ratio r for impulse kinds.
        #[arg(long, value_delimiter = ',', default_value = "0.7,0.3")]
        ratios: Vec<f64>,
        /// Standard deviations on the 0-255 scale.
        #[arg(long, value_delimiter = ',', default_value = "10,50")]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Restore a noisy image.
    Restore {
        input: String,
        output: PathBuf,
        /// TOML file; only its [solver] section is read.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Clean reference for PSNR reporting.
        #[arg(long)]
        clean: Option<String>,
        /// Treat the input as Gaussian plus impulse noise.
        #[arg(long)]
        impulse: bool,
        /// Directory for the final weight maps.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Per-iteration CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Run a batch experiment from a config file.
    Experiment { config: PathBuf },
    /// Sweep one noise parameter; axis and values default to the [sweep] section.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Option<Axis>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Estimate the global noise variance (0-255 scale).
    Estimate {
        input: String,
        /// Use the literal mean-Laplacian formula instead of Immerkaer's.
        #[arg(long)]
        literal: bool,
    },
}

/// Exit status: 0 success, 1 partial or runtime failure, 2 bad configuration.
enum Outcome {
    Done,
    Partial,
}

fn read_image(spec: &str) -> Result<Image> {
    match spec.strip_prefix("fixture:") {
        Some(name) => Ok(standard_image(name)?),
        None => load_pgm(spec).with_context(|| format!("reading {spec}")),
    }
}

fn solver_config(path: Option<&Path>) -> Result<SolverConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            Ok(solver_from_toml(&text)?)
        }
        None => Ok(SolverConfig::default()),
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Synthesize {
            input,
            output,
            kind,
            ratios,
            sigmas,
            seed,
        } => {
            let clean = read_image(&input)?;
            let spec = match kind {
                Kind::Mixture => NoiseSpec::gaussian_mixture(&ratios, &sigmas, seed),
                Kind::RandomValued | Kind::SaltPepper => {
                    let (&[r], &[s]) = (ratios.as_slice(), sigmas.as_slice()) else {
                        return Err(Error::Config("impulse kinds take one ratio and one sigma".into()).into());
                    };
                    NoiseSpec {
                        kind: match kind {
                            Kind::RandomValued => NoiseKind::GaussianPlusRandomValued,
                            _ => NoiseKind::GaussianPlusSaltPepper,
                        },
                        ratios: vec![1.0 - r, r],
                        sigmas: vec![s],
                        seed,
                    }
                }
            };
            spec.validate().map_err(config_err)?;
            let noisy = synthesize(&clean, &spec)?.noisy;
            save_pgm(&noisy, &output)?;
            println!("psnr {:.4}", psnr(&clean, &noisy)?);
        }
        Command::Restore {
            input,
            output,
            config,
            clean,
            impulse,
            weights,
            history,
        } => {
            let mut cfg = solver_config(config.as_deref())?;
            if impulse {
                cfg.mode = Mode::GaussianImpulse;
            }
            cfg.validate()?;
            let noisy = read_image(&input)?;
            let reference = clean.as_deref().map(read_image).transpose()?;
            let (u, state) = restore(&noisy, &cfg, reference.as_ref())?;
            save_pgm(&u, &output)?;
            if let Some(dir) = weights {
                std::fs::create_dir_all(&dir)?;
                for k in 0..state.w.components() {
                    save_pgm(&state.w.map_image(k), dir.join(format!("w{}.pgm", k + 1)))?;
                }
            }
            if let Some(path) = history {
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["iteration", "neg_log_likelihood", "relative_change", "psnr", "level"])?;
                for r in &state.history {
                    w.write_record([
                        r.iteration.to_string(),
                        r.neg_log_likelihood.to_string(),
                        r.relative_change.to_string(),
                        r.psnr.map(|p| p.to_string()).unwrap_or_default(),
                        r.level.to_string(),
                    ])?;
                }
                w.flush()?;
            }
            println!(
                "iterations {} ratios {:?} sigmas {:?}",
                state.iteration,
                state.params.ratios(),
                state.params.sigmas_255()
            );
            if let Some(c) = &reference {
                println!("psnr noisy {:.4} restored {:.4}", psnr(c, &noisy)?, psnr(c, &u)?);
            }
        }
        Command::Experiment { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let report = run_experiment(&cfg)?;
            print!("{}", format_table(&report.rows));
            if report.is_partial() {
                for (src, why) in &report.failures {
                    warn!("{src}: {why}");
                }
                return Ok(Outcome::Partial);
            }
        }
        Command::Sweep { config, axis, values } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let section = cfg.sweep.clone();
            let axis = match (axis, &section) {
                (Some(Axis::Sigma2), _) => SweepAxis::Sigma2,
                (Some(Axis::Ratio), _) => SweepAxis::Ratio,
                (None, Some(s)) => s.axis,
                (None, None) => return Err(Error::Config("no sweep axis given".into()).into()),
            };
            let values = match (values, section) {
                (Some(v), _) => v,
                (None, Some(s)) => s.values,
                (None, None) => return Err(Error::Config("no sweep values given".into()).into()),
            };
            let (points, reports) = sweep(&cfg, axis, &values)?;
            println!("value,noisy_psnr,restored_psnr");
            for p in &points {
                println!("{},{:.4},{:.4}", p.value, p.noisy_psnr, p.restored_psnr);
            }
            if reports.iter().any(|r| r.is_partial()) {
                return Ok(Outcome::Partial);
            }
        }
        Command::Estimate { input, literal } => {
            let img = read_image(&input)?;
            let est = if literal {
                VarianceEstimator::Literal
            } else {
                VarianceEstimator::Immerkaer
            };
            let var = estimate_noise_variance(&img, est)?;
            if var < 0.0 {
                bail!("estimate is negative ({var}); the literal formula is not a variance");
            }
            println!("variance {var:.4} std {:.4}", var.sqrt());
        }
    }
    Ok(Outcome::Done)
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Argument(m) => Error::Config(m),
        other => other,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_config = e.chain().any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::Config(_))));
            ExitCode::from(if is_config { 2 } else { 1 })
        }
    }
}
