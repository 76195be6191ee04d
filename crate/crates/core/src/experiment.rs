//! Bias sweeps: generate data, fit Cox on the training split, and compare
//! every censored metric on the test split with its ground-truth value.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::{CopulaSpec, Family};
use crate::datagen::{sub_seed, synth_generate, DGPConfig};
use crate::dataset::{stratified_split, Preprocessor};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_all, time_grid, true_metrics, truth_for, PredictionSet, GRID_POINTS};
use crate::models::{coxph_fit, COX_RIDGE};

/// Which copula the dependent metrics assume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assumption {
    Known,
    WrongFamily,
    /// Kendall's tau replaced by `0.8 - tau`.
    WrongTau,
    Both,
}

impl Assumption {
    pub fn name(&self) -> &'static str {
        match self {
            Assumption::Known => "known",
            Assumption::WrongFamily => "wrong_family",
            Assumption::WrongTau => "wrong_tau",
            Assumption::Both => "both",
        }
    }

    /// Assumed (family, tau) for a true (family, tau).
    pub fn apply(&self, family: Family, tau: f64) -> (Family, f64) {
        let wrong_tau = 0.8 - tau;
        match self {
            Assumption::Known => (family, tau),
            Assumption::WrongFamily => (family.swapped(), tau),
            Assumption::WrongTau => (family, wrong_tau),
            Assumption::Both => (family.swapped(), wrong_tau),
        }
    }
}

/// Copula for a (family, tau) pair; tau = 0 is the independence copula.
pub fn copula_for(family: Family, tau: f64) -> Result<CopulaSpec> {
    if tau == 0.0 || family == Family::Independence {
        Ok(CopulaSpec::independence())
    } else {
        CopulaSpec::from_tau(family, tau)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n: usize,
    pub d: usize,
    pub taus: Vec<f64>,
    pub families: Vec<Family>,
    /// Censoring Weibull scales; smaller values censor more.
    pub censor_scales: Vec<f64>,
    pub assumptions: Vec<Assumption>,
    pub n_seeds: usize,
    pub first_seed: u64,
    pub fractions: (f64, f64, f64),
    pub grid_points: usize,
    /// Fraction of failed runs above which the sweep reports failure.
    pub failure_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let dgp = DGPConfig::default();
        Self {
            n: 2000,
            d: 10,
            taus: vec![0.0, 0.25, 0.5, 0.8],
            families: vec![Family::Clayton],
            censor_scales: vec![dgp.scale_censor],
            assumptions: vec![Assumption::Known],
            n_seeds: 20,
            first_seed: 0,
            fractions: (0.7, 0.1, 0.2),
            grid_points: GRID_POINTS,
            failure_threshold: 0.2,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(Error::InvalidInput("n_seeds must be >= 1".into()));
        }
        if self.taus.is_empty() || self.families.is_empty() || self.censor_scales.is_empty() || self.assumptions.is_empty() {
            return Err(Error::InvalidInput("sweep axes must be nonempty".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidInput("grid_points must be >= 2".into()));
        }
        for &tau in &self.taus {
            if !(0.0..1.0).contains(&tau) {
                return Err(Error::OutOfDomain { what: "sweep tau [0, 1)", value: tau });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub seed: u64,
    pub tau_true: f64,
    pub family_true: Family,
    pub assumption: Assumption,
    pub family_assumed: Family,
    pub tau_assumed: f64,
    pub censor_scale: f64,
    pub censoring_rate: f64,
    /// Lower edge of the 10-point censoring-rate bin, in percent.
    pub censoring_bin: u32,
    pub metric: String,
    pub censored: f64,
    pub truth: f64,
    pub bias: f64,
}

pub fn censoring_bin(rate: f64) -> u32 {
    ((rate * 10.0).floor().clamp(0.0, 9.0) as u32) * 10
}

/// One sweep cell: a data seed with fixed true copula and censor scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub seed: u64,
    pub tau: f64,
    pub family: Family,
    pub censor_scale: f64,
}

/// Rows for one cell and every assumption in `assumptions`.
pub fn run_cell(config: &ExperimentConfig, cell: Cell) -> Result<Vec<BiasRow>> {
    let dgp = DGPConfig {
        n: config.n,
        d: config.d,
        family: cell.family,
        tau: cell.tau,
        scale_censor: cell.censor_scale,
        seed: sub_seed(cell.seed, "data"),
        ..DGPConfig::default()
    };
    let ds = synth_generate(&dgp)?;
    let rate = ds.censoring_rate();
    let split = stratified_split(&ds, config.fractions, sub_seed(cell.seed, "split"))?;
    let pre = Preprocessor::fit(&split.train)?;
    let train = pre.apply(&split.train)?;
    let test = pre.apply(&split.test)?;
    let model = coxph_fit(&train, COX_RIDGE)?;
    let preds = PredictionSet::from_cox(&model, &test)?;
    let grid = time_grid(train.max_time(), config.grid_points);
    let truth = true_metrics(&test, &preds, &grid)?;
    let (tt, te) = (train.times(), train.events());

    let mut rows = Vec::new();
    for &assumption in &config.assumptions {
        let (family_assumed, tau_assumed) = assumption.apply(cell.family, cell.tau);
        let spec = copula_for(family_assumed, tau_assumed)?;
        for report in evaluate_all(&test, &preds, &tt, &te, &spec, &grid)? {
            let true_value = match truth_for(&report.name) {
                Some("true_ci") => truth.ci.value,
                Some("true_ibs") => truth.ibs.value,
                Some("true_mae") => truth.mae.value,
                _ => continue,
            };
            rows.push(BiasRow {
                seed: cell.seed,
                tau_true: cell.tau,
                family_true: cell.family,
                assumption,
                family_assumed,
                tau_assumed,
                censor_scale: cell.censor_scale,
                censoring_rate: rate,
                censoring_bin: censoring_bin(rate),
                bias: (report.value - true_value).abs(),
                metric: report.name,
                censored: report.value,
                truth: true_value,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<BiasRow>,
    pub failed: Vec<(Cell, String)>,
    pub total: usize,
}

impl SweepOutcome {
    pub fn failure_rate(&self) -> f64 {
        self.failed.len() as f64 / self.total.max(1) as f64
    }
}

pub fn cells(config: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &family in &config.families {
        for &tau in &config.taus {
            for &censor_scale in &config.censor_scales {
                for k in 0..config.n_seeds as u64 {
                    out.push(Cell { seed: config.first_seed + k, tau, family, censor_scale });
                }
            }
        }
    }
    out
}

/// Runs every cell in parallel. Rows come back in cell order; failed cells
/// are logged and listed in the outcome.
pub fn bias_sweep(config: &ExperimentConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let cells = cells(config);
    let results: Vec<Result<Vec<BiasRow>>> = cells.par_iter().map(|&c| run_cell(config, c)).collect();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for (cell, res) in cells.iter().zip(results) {
        match res {
            Ok(r) => rows.extend(r),
            Err(e) => {
                log::warn!("cell {cell:?} failed: {e}");
                failed.push((*cell, e.to_string()));
            }
        }
    }
    Ok(SweepOutcome { rows, failed, total: cells.len() })
}

pub fn write_bias_csv<W: Write>(rows: &[BiasRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean bias per metric over `rows` matching `keep`.
pub fn mean_bias<F: Fn(&BiasRow) -> bool>(rows: &[BiasRow], metric: &str, keep: F) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| r.metric == metric && keep(r)).map(|r| r.bias).collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assumption_mapping() {
        assert_eq!(Assumption::Known.apply(Family::Clayton, 0.5), (Family::Clayton, 0.5));
        assert_eq!(Assumption::WrongFamily.apply(Family::Clayton, 0.5), (Family::Frank, 0.5));
        let (f, t) = Assumption::WrongTau.apply(Family::Frank, 0.25);
        assert_eq!(f, Family::Frank);
        assert!((t - 0.55).abs() < 1e-15);
        assert_eq!(Assumption::Both.apply(Family::Frank, 0.8).0, Family::Clayton);
        assert!(copula_for(Family::Clayton, 0.0).unwrap().is_independence());
    }

    #[test]
    fn bins() {
        assert_eq!(censoring_bin(0.0), 0);
        assert_eq!(censoring_bin(0.199), 10);
        assert_eq!(censoring_bin(0.45), 40);
        assert_eq!(censoring_bin(1.0), 90);
    }

    #[test]
    fn small_sweep_rows_are_consistent() {
        let cfg = ExperimentConfig {
            n: 400,
            taus: vec![0.0, 0.5],
            assumptions: vec![Assumption::Known, Assumption::WrongTau],
            n_seeds: 2,
            ..ExperimentConfig::default()
        };
        let out = bias_sweep(&cfg).unwrap();
        assert!(out.failed.is_empty());
        assert_eq!(out.total, 4);
        assert_eq!(out.rows.len(), 4 * 2 * 9);
        for r in &out.rows {
            assert_eq!(r.bias, (r.censored - r.truth).abs());
            if r.assumption == Assumption::WrongTau {
                assert!((r.tau_assumed - (0.8 - r.tau_true)).abs() < 1e-12);
            }
        }
        let again = bias_sweep(&cfg).unwrap();
        assert_eq!(out.rows, again.rows);
        let mut buf = Vec::new();
        write_bias_csv(&out.rows[..1], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "seed,tau_true,family_true,assumption,family_assumed,tau_assumed,censor_scale,censoring_rate,censoring_bin,metric,censored,truth,bias\n"
        ));
    }

    #[test]
    fn rejects_empty_axes() {
        let cfg = ExperimentConfig { taus: vec![], ..ExperimentConfig::default() };
        assert!(bias_sweep(&cfg).is_err());
        let cfg = ExperimentConfig { n_seeds: 0, ..ExperimentConfig::default() };
        assert!(bias_sweep(&cfg).is_err());
    }
}
