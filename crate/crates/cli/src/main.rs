//! `copsurv` command-line harness: data generation, copula fitting,
//! metric evaluation and bias sweeps.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use copsurv::copula::{CopulaSpec, Family};
use copsurv::datagen::{semisynth_build, synth_generate, DGPConfig, SemiSynthConfig, Strategy};
use copsurv::dataset::{stratified_split, Preprocessor, SurvivalDataset};
use copsurv::experiment::{bias_sweep, copula_for, write_bias_csv, ExperimentConfig};
use copsurv::fitting::{fit_joint, select_copula, FitConfig, JointFit, SelectionCriterion};
use copsurv::metrics::{evaluate_all, time_grid, true_metrics, write_reports_csv, MetricReport, PredictionSet};
use copsurv::models::{coxph_fit, COX_RIDGE};

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const SPLIT: (f64, f64, f64) = (0.7, 0.1, 0.2);

#[derive(Parser, Debug)]
#[command(name = "copsurv", version, about = "Survival metrics under dependent censoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic Weibull/copula dataset.
    Generate {
        /// JSON file with generator settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        family: Option<Family>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resample censoring for a real dataset with a known event time per row.
    Semisynth {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// `original`, `top-k:K` or `random:P` with P in (0, 1].
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit Weibull marginals and a copula by maximum likelihood.
    FitCopula {
        #[arg(long)]
        input: PathBuf,
        /// JSON file with optimizer settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fit one family; all candidates are compared when omitted.
        #[arg(long)]
        family: Option<Family>,
        #[arg(long, value_enum, default_value_t = Criterion::ValNll)]
        criterion: Criterion,
        /// Seed of the train/validation/test split.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output JSON; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit Cox on the training split and report every metric on the test split.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        /// Assumed copula family for the dependent metrics.
        #[arg(long)]
        family: Option<Family>,
        /// Assumed Kendall's tau for the dependent metrics.
        #[arg(long)]
        tau: Option<f64>,
        /// Take the assumed copula from a `fit-copula` result instead.
        #[arg(long, conflicts_with_all = ["family", "tau"])]
        copula: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the synthetic bias experiment and write one row per metric and run.
    BiasSweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated list of true Kendall's tau values.
        #[arg(long, value_delimiter = ',')]
        tau: Option<Vec<f64>>,
        /// Comma-separated list of true copula families.
        #[arg(long, value_delimiter = ',')]
        family: Option<Vec<Family>>,
        /// Number of data seeds per cell.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Criterion {
    ValNll,
    Aic,
    Bic,
}

impl From<Criterion> for SelectionCriterion {
    fn from(c: Criterion) -> Self {
        match c {
            Criterion::ValNll => SelectionCriterion::ValNll,
            Criterion::Aic => SelectionCriterion::Aic,
            Criterion::Bic => SelectionCriterion::Bic,
        }
    }
}

/// Failure that should end the process with a specific exit code.
#[derive(Debug)]
struct Exit {
    code: u8,
    message: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, message) = match e.downcast_ref::<Exit>() {
                Some(x) => (x.code, x.message.clone()),
                None => (exit_code_for(&e), format!("{e:#}")),
            };
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    use copsurv::Error as E;
    match e.chain().find_map(|c| c.downcast_ref::<E>()) {
        Some(E::Numerical(_) | E::NotConverged { .. } | E::Diverged { .. }) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { config, n, tau, family, seed, out } => {
            let mut cfg: DGPConfig = load_config(config.as_deref())?;
            if let Some(v) = n {
                cfg.n = v;
            }
            if let Some(v) = tau {
                cfg.tau = v;
            }
            if let Some(v) = family {
                cfg.family = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            let ds = synth_generate(&cfg)?;
            log::info!("generated {} rows, censoring rate {:.3}", ds.len(), ds.censoring_rate());
            ds.write_csv(output(out.as_deref())?)?;
        }
        Command::Semisynth { input, config, strategy, seed, out } => {
            let mut cfg: SemiSynthConfig = load_config(config.as_deref())?;
            if let Some(s) = strategy {
                cfg.strategy = parse_strategy(&s)?;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            let raw = load_dataset(&input)?;
            let ds = semisynth_build(&raw, &cfg)?;
            log::info!("semi-synthetic data: {} rows, censoring rate {:.3}", ds.len(), ds.censoring_rate());
            ds.write_csv(output(out.as_deref())?)?;
        }
        Command::FitCopula { input, config, family, criterion, seed, out } => {
            let cfg: FitConfig = load_config(config.as_deref())?;
            let (train, val, _) = split_standardized(&load_dataset(&input)?, seed)?;
            let fit = match family {
                Some(f) => fit_joint(&train, &val, f, &cfg)?,
                None => {
                    let (fit, rows) =
                        select_copula(&train, &val, &[Family::Clayton, Family::Frank], &cfg, criterion.into())?;
                    for r in &rows {
                        eprintln!(
                            "{:<12} theta {:>9.4} tau {:>7.4} val_nll {:>9.5} aic {:>11.2} bic {:>11.2}{}",
                            r.family.name(),
                            r.theta,
                            r.tau,
                            r.val_nll,
                            r.aic,
                            r.bic,
                            if r.converged { "" } else { " (failed)" }
                        );
                    }
                    fit
                }
            };
            let mut w = output(out.as_deref())?;
            writeln!(w, "{}", fit.to_json()?)?;
            w.flush()?;
        }
        Command::Evaluate { input, family, tau, copula, seed, out } => {
            let spec = match copula {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    JointFit::from_json(&text)?.copula
                }
                None => match (family, tau) {
                    (Some(f), Some(t)) => copula_for(f, t)?,
                    (None, None) => CopulaSpec::independence(),
                    (Some(Family::Independence), None) => CopulaSpec::independence(),
                    _ => bail!(Exit { code: EXIT_USAGE, message: "--family and --tau must be given together".into() }),
                },
            };
            let reports = evaluate(&load_dataset(&input)?, &spec, seed)?;
            write_reports_csv(&reports, output(out.as_deref())?)?;
        }
        Command::BiasSweep { config, n, tau, family, seeds, out } => {
            let mut cfg: ExperimentConfig = load_config(config.as_deref())?;
            if let Some(v) = n {
                cfg.n = v;
            }
            if let Some(v) = tau {
                cfg.taus = v;
            }
            if let Some(v) = family {
                cfg.families = v;
            }
            if let Some(v) = seeds {
                cfg.n_seeds = v;
            }
            let outcome = bias_sweep(&cfg)?;
            write_bias_csv(&outcome.rows, output(out.as_deref())?)?;
            let rate = outcome.failure_rate();
            if rate > cfg.failure_threshold {
                bail!(Exit {
                    code: EXIT_NUMERICAL,
                    message: format!(
                        "{} of {} runs failed ({:.1}% > {:.1}% threshold)",
                        outcome.failed.len(),
                        outcome.total,
                        100.0 * rate,
                        100.0 * cfg.failure_threshold
                    ),
                });
            }
        }
    }
    Ok(())
}

fn usage(message: String) -> anyhow::Error {
    anyhow!(Exit { code: EXIT_USAGE, message })
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> anyhow::Result<SurvivalDataset> {
    SurvivalDataset::load_csv(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| usage(format!("creating {}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn parse_strategy(s: &str) -> anyhow::Result<Strategy> {
    let bad = || usage(format!("unknown strategy `{s}`; use original, top-k:K or random:P"));
    match s.split_once(':') {
        None if s == "original" => Ok(Strategy::Original),
        Some(("top-k", k)) => Ok(Strategy::TopK(k.parse().map_err(|_| bad())?)),
        Some(("random", p)) => Ok(Strategy::RandomPct(p.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

fn split_standardized(
    ds: &SurvivalDataset,
    seed: u64,
) -> anyhow::Result<(SurvivalDataset, SurvivalDataset, SurvivalDataset)> {
    let sp = stratified_split(ds, SPLIT, seed)?;
    let pre = Preprocessor::fit(&sp.train)?;
    Ok((pre.apply(&sp.train)?, pre.apply(&sp.val)?, pre.apply(&sp.test)?))
}

/// Every censored metric on the test split, followed by the ground-truth
/// metrics when the input carries latent times.
fn evaluate(ds: &SurvivalDataset, spec: &CopulaSpec, seed: u64) -> anyhow::Result<Vec<MetricReport>> {
    let (train, _, test) = split_standardized(ds, seed)?;
    let model = coxph_fit(&train, COX_RIDGE)?;
    let preds = PredictionSet::from_cox(&model, &test)?;
    let grid = time_grid(train.max_time(), copsurv::metrics::GRID_POINTS);
    let mut reports = evaluate_all(&test, &preds, &train.times(), &train.events(), spec, &grid)?;
    if test.ground_truth.is_some() {
        let t = true_metrics(&test, &preds, &grid)?;
        reports.extend([t.ci, t.ibs, t.mae]);
    }
    Ok(reports)
}
