//! Censored-data evaluation metrics and their ground-truth counterparts.
//!
//! Baselines: Harrell's and Uno's concordance, IPCW Brier/IBS, hinge and
//! margin MAE. Dependent variants swap the Kaplan-Meier marginals for
//! Copula-Graphic curves fitted on training data: CI-Dep reweights with the
//! CG censoring curve, BS/IBS-Dep impute margin times for censored rows, and
//! MAE-Dep takes both the margin times and their confidence weights from the
//! CG event curve.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::copula::CopulaSpec;
use crate::dataset::SurvivalDataset;
use crate::error::{Error, Result};
use crate::estimators::{censoring_curve, cg_fit, km_fit, margin_time, StepCurve};
use crate::models::CoxPHModel;
use crate::quad::trapezoid;

/// Censoring-survival values are floored here before inversion.
pub const IPCW_FLOOR: f64 = 1e-4;
pub const GRID_POINTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    /// Higher means an earlier expected event.
    pub risks: Vec<f64>,
    pub curves: Vec<StepCurve>,
    pub time_predictions: Vec<f64>,
}

impl PredictionSet {
    pub fn new(risks: Vec<f64>, curves: Vec<StepCurve>, time_predictions: Vec<f64>) -> Result<Self> {
        if risks.len() != curves.len() || risks.len() != time_predictions.len() {
            return Err(Error::InvalidInput("prediction vectors differ in length".into()));
        }
        if risks.iter().chain(&time_predictions).any(|v| v.is_nan()) {
            return Err(Error::InvalidInput("predictions contain NaN".into()));
        }
        if time_predictions.iter().any(|&t| t < 0.0) {
            return Err(Error::InvalidInput("time predictions must be nonnegative".into()));
        }
        Ok(Self { risks, curves, time_predictions })
    }

    /// Cox predictions: curve per row, median time as the point estimate and
    /// the negated median as the risk score.
    pub fn from_cox(model: &CoxPHModel, ds: &SurvivalDataset) -> Result<Self> {
        let mut risks = Vec::with_capacity(ds.len());
        let mut curves = Vec::with_capacity(ds.len());
        let mut times = Vec::with_capacity(ds.len());
        for r in &ds.records {
            let t = model.median_time(&r.features);
            risks.push(-t);
            times.push(t);
            curves.push(model.predict_curve(&r.features));
        }
        Self::new(risks, curves, times)
    }

    pub fn len(&self) -> usize {
        self.risks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.risks.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    /// Comparable pairs for concordance, records otherwise.
    pub n_used: usize,
    /// Censoring-survival evaluations that hit [`IPCW_FLOOR`].
    #[serde(skip)]
    pub n_floored: usize,
}

impl MetricReport {
    fn new(name: &str, value: f64, n_used: usize) -> Self {
        Self { name: name.to_string(), value, n_used, n_floored: 0 }
    }
}

#[derive(Serialize)]
struct ReportRow<'a> {
    metric: &'a str,
    value: f64,
    n_used: usize,
}

pub fn write_reports_csv<W: Write>(reports: &[MetricReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(ReportRow { metric: &r.name, value: r.value, n_used: r.n_used })?;
    }
    w.flush()?;
    Ok(())
}

/// `points` equally spaced times `k * t_max / points`, `k = 1..=points`.
pub fn time_grid(t_max: f64, points: usize) -> Vec<f64> {
    (1..=points).map(|k| k as f64 * t_max / points as f64).collect()
}

fn check_len(ds: &SurvivalDataset, n: usize, what: &str) -> Result<()> {
    if ds.len() != n {
        return Err(Error::InvalidInput(format!(
            "{what} has {n} entries for {} records",
            ds.len()
        )));
    }
    Ok(())
}

/// Fenwick tree over integer counts.
struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    fn add(&mut self, i: usize) {
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] += 1;
            k += k & k.wrapping_neg();
        }
    }

    /// Count of inserted positions `< i`.
    fn prefix(&self, i: usize) -> u64 {
        let mut k = i;
        let mut s = 0;
        while k > 0 {
            s += self.tree[k];
            k -= k & k.wrapping_neg();
        }
        s
    }
}

/// Per comparable-pair anchor `i` (an event): counts of later rows with
/// lower risk, equal risk, and in total.
struct PairCounts {
    index: usize,
    lower: u64,
    equal: u64,
    total: u64,
}

fn concordance_counts(times: &[f64], events: &[bool], risks: &[f64]) -> Result<Vec<PairCounts>> {
    if risks.iter().any(|r| r.is_nan()) {
        return Err(Error::InvalidInput("risk scores contain NaN".into()));
    }
    let n = times.len();
    let mut sorted_risks: Vec<f64> = risks.to_vec();
    sorted_risks.sort_by(f64::total_cmp);
    sorted_risks.dedup();
    let rank: Vec<usize> = risks
        .iter()
        .map(|r| sorted_risks.partition_point(|s| s < r))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut fen = Fenwick::new(sorted_risks.len());
    let mut inserted = 0u64;
    let mut out = Vec::new();
    let mut g = 0;
    while g < n {
        let t = times[order[g]];
        let mut h = g;
        while h < n && times[order[h]] == t {
            h += 1;
        }
        for &i in &order[g..h] {
            if events[i] && inserted > 0 {
                let lower = fen.prefix(rank[i]);
                let equal = fen.prefix(rank[i] + 1) - lower;
                out.push(PairCounts { index: i, lower, equal, total: inserted });
            }
        }
        for &i in &order[g..h] {
            fen.add(rank[i]);
            inserted += 1;
        }
        g = h;
    }
    Ok(out)
}

/// Harrell's concordance: among pairs with `delta_i = 1` and `t_i < t_j`,
/// the fraction where `risk_i > risk_j`; risk ties score 1/2.
pub fn harrell_ci(ds: &SurvivalDataset, risks: &[f64]) -> Result<MetricReport> {
    check_len(ds, risks.len(), "risks")?;
    harrell_from(&ds.times(), &ds.events(), risks, "harrell_ci")
}

fn harrell_from(times: &[f64], events: &[bool], risks: &[f64], name: &str) -> Result<MetricReport> {
    let counts = concordance_counts(times, events, risks)?;
    let (mut twice_num, mut pairs) = (0u64, 0u64);
    for c in &counts {
        twice_num += 2 * c.lower + c.equal;
        pairs += c.total;
    }
    if pairs == 0 {
        return Err(Error::InvalidInput("no comparable pairs".into()));
    }
    Ok(MetricReport::new(name, twice_num as f64 / (2 * pairs) as f64, pairs as usize))
}

fn floored(g: f64, hits: &mut usize) -> f64 {
    if g < IPCW_FLOOR {
        *hits += 1;
        IPCW_FLOOR
    } else {
        g
    }
}

/// Uno's IPCW concordance with weights `G(t_i-)^-2` on each comparable pair.
pub fn uno_ci(ds: &SurvivalDataset, risks: &[f64], censor_curve: &StepCurve) -> Result<MetricReport> {
    uno_named(ds, risks, censor_curve, "uno_ci")
}

fn uno_named(ds: &SurvivalDataset, risks: &[f64], censor_curve: &StepCurve, name: &str) -> Result<MetricReport> {
    check_len(ds, risks.len(), "risks")?;
    let times = ds.times();
    let counts = concordance_counts(&times, &ds.events(), risks)?;
    let (mut num, mut den, mut pairs, mut hits) = (0.0, 0.0, 0u64, 0usize);
    for c in &counts {
        let g = floored(censor_curve.eval_left(times[c.index]), &mut hits);
        let w = 1.0 / (g * g);
        num += w * (c.lower as f64 + 0.5 * c.equal as f64);
        den += w * c.total as f64;
        pairs += c.total;
    }
    if pairs == 0 {
        return Err(Error::InvalidInput("no comparable pairs".into()));
    }
    if hits > 0 {
        log::warn!("{name}: {hits} censoring weights hit the floor {IPCW_FLOOR}");
    }
    let mut r = MetricReport::new(name, num / den, pairs as usize);
    r.n_floored = hits;
    Ok(r)
}

/// Uno's concordance with the censoring curve estimated by the
/// Copula-Graphic estimator under `spec` on the training rows.
pub fn ci_dep(
    ds: &SurvivalDataset,
    risks: &[f64],
    spec: &CopulaSpec,
    train_times: &[f64],
    train_events: &[bool],
) -> Result<MetricReport> {
    let g = censoring_curve(train_times, train_events, spec)?;
    uno_named(ds, risks, &g, "ci_dep")
}

/// Graf's IPCW Brier score at `t_star`.
pub fn brier_ipcw(ds: &SurvivalDataset, curves: &[StepCurve], censor_curve: &StepCurve, t_star: f64) -> Result<MetricReport> {
    check_len(ds, curves.len(), "curves")?;
    let mut hits = 0;
    let value = brier_ipcw_at(ds, curves, censor_curve, t_star, &mut hits);
    let mut r = MetricReport::new("brier_ipcw", value, ds.len());
    r.n_floored = hits;
    Ok(r)
}

fn brier_ipcw_at(ds: &SurvivalDataset, curves: &[StepCurve], g: &StepCurve, t_star: f64, hits: &mut usize) -> f64 {
    let g_star = floored(g.eval(t_star), hits);
    let mut total = 0.0;
    for (r, c) in ds.records.iter().zip(curves) {
        let s = c.eval(t_star);
        if r.time <= t_star {
            if r.event {
                total += s * s / floored(g.eval_left(r.time), hits);
            }
        } else {
            total += (1.0 - s) * (1.0 - s) / g_star;
        }
    }
    total / ds.len() as f64
}

fn integrate_over(grid: &[f64], values: &[f64]) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::InvalidInput("time grid needs at least two points".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("time grid must be strictly increasing".into()));
    }
    Ok(trapezoid(grid, values) / (grid[grid.len() - 1] - grid[0]))
}

/// Trapezoid average of [`brier_ipcw`] over `grid`.
pub fn ibs_ipcw(ds: &SurvivalDataset, curves: &[StepCurve], censor_curve: &StepCurve, grid: &[f64]) -> Result<MetricReport> {
    check_len(ds, curves.len(), "curves")?;
    let mut hits = 0;
    let values: Vec<f64> = grid.iter().map(|&t| brier_ipcw_at(ds, curves, censor_curve, t, &mut hits)).collect();
    let mut r = MetricReport::new("ibs_ipcw", integrate_over(grid, &values)?, ds.len());
    if hits > 0 {
        log::warn!("ibs_ipcw: {hits} censoring weights hit the floor {IPCW_FLOOR}");
    }
    r.n_floored = hits;
    Ok(r)
}

/// Observed times with censored rows replaced by margin times from
/// `event_curve`.
pub fn imputed_times(ds: &SurvivalDataset, event_curve: &StepCurve) -> Result<Vec<f64>> {
    let mut degenerate = 0;
    let out = ds
        .records
        .iter()
        .map(|r| {
            if r.event {
                Ok(r.time)
            } else {
                let m = margin_time(event_curve, r.time)?;
                degenerate += m.degenerate as usize;
                Ok(m.time)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    if degenerate > 0 {
        log::debug!("{degenerate} censored rows had no survival mass left for a margin time");
    }
    Ok(out)
}

fn plain_brier(times: &[f64], curves: &[StepCurve], t_star: f64) -> f64 {
    let total: f64 = times
        .iter()
        .zip(curves)
        .map(|(&e, c)| {
            let alive = if e > t_star { 1.0 } else { 0.0 };
            let d = alive - c.eval(t_star);
            d * d
        })
        .sum();
    total / times.len() as f64
}

/// Unweighted Brier score at `t_star` with margin-time imputation from
/// `event_curve`.
pub fn bs_margin(ds: &SurvivalDataset, curves: &[StepCurve], event_curve: &StepCurve, t_star: f64) -> Result<MetricReport> {
    check_len(ds, curves.len(), "curves")?;
    let e = imputed_times(ds, event_curve)?;
    Ok(MetricReport::new("bs_margin", plain_brier(&e, curves, t_star), ds.len()))
}

pub fn ibs_margin(ds: &SurvivalDataset, curves: &[StepCurve], event_curve: &StepCurve, grid: &[f64]) -> Result<MetricReport> {
    check_len(ds, curves.len(), "curves")?;
    let e = imputed_times(ds, event_curve)?;
    let values: Vec<f64> = grid.iter().map(|&t| plain_brier(&e, curves, t)).collect();
    Ok(MetricReport::new("ibs_margin", integrate_over(grid, &values)?, ds.len()))
}

pub fn bs_dep(
    ds: &SurvivalDataset,
    curves: &[StepCurve],
    spec: &CopulaSpec,
    train_times: &[f64],
    train_events: &[bool],
    t_star: f64,
) -> Result<MetricReport> {
    let s = cg_fit(train_times, train_events, spec)?;
    let mut r = bs_margin(ds, curves, &s, t_star)?;
    r.name = "bs_dep".into();
    Ok(r)
}

pub fn ibs_dep(
    ds: &SurvivalDataset,
    curves: &[StepCurve],
    spec: &CopulaSpec,
    train_times: &[f64],
    train_events: &[bool],
    grid: &[f64],
) -> Result<MetricReport> {
    let s = cg_fit(train_times, train_events, spec)?;
    let mut r = ibs_margin(ds, curves, &s, grid)?;
    r.name = "ibs_dep".into();
    Ok(r)
}

/// [`ibs_margin`] with Kaplan-Meier margin times.
pub fn ibs_dep_km(
    ds: &SurvivalDataset,
    curves: &[StepCurve],
    train_times: &[f64],
    train_events: &[bool],
    grid: &[f64],
) -> Result<MetricReport> {
    let s = km_fit(train_times, train_events)?;
    let mut r = ibs_margin(ds, curves, &s, grid)?;
    r.name = "ibs_dep_km".into();
    Ok(r)
}

/// Events contribute `|t - t_hat|`, censored rows `max(t - t_hat, 0)`.
pub fn mae_hinge(ds: &SurvivalDataset, time_predictions: &[f64]) -> Result<MetricReport> {
    check_len(ds, time_predictions.len(), "time predictions")?;
    let total: f64 = ds
        .records
        .iter()
        .zip(time_predictions)
        .map(|(r, &p)| if r.event { (r.time - p).abs() } else { (r.time - p).max(0.0) })
        .sum();
    Ok(MetricReport::new("mae_hinge", total / ds.len() as f64, ds.len()))
}

/// Censored rows use the margin time from `event_curve`, weighted by
/// `1 - S(t_i)`; events have weight 1.
pub fn mae_margin(ds: &SurvivalDataset, time_predictions: &[f64], event_curve: &StepCurve) -> Result<MetricReport> {
    mae_margin_named(ds, time_predictions, event_curve, "mae_margin")
}

fn mae_margin_named(ds: &SurvivalDataset, time_predictions: &[f64], curve: &StepCurve, name: &str) -> Result<MetricReport> {
    check_len(ds, time_predictions.len(), "time predictions")?;
    let e = imputed_times(ds, curve)?;
    let (mut num, mut den, mut used) = (0.0, 0.0, 0);
    for ((r, &p), &t) in ds.records.iter().zip(time_predictions).zip(&e) {
        let w = if r.event { 1.0 } else { 1.0 - curve.eval(r.time) };
        if w > 0.0 {
            num += w * (t - p).abs();
            den += w;
            used += 1;
        }
    }
    if den == 0.0 {
        return Err(Error::InvalidInput(format!("{name}: every record has zero weight")));
    }
    Ok(MetricReport::new(name, num / den, used))
}

pub fn mae_dep(
    ds: &SurvivalDataset,
    time_predictions: &[f64],
    spec: &CopulaSpec,
    train_times: &[f64],
    train_events: &[bool],
) -> Result<MetricReport> {
    let s = cg_fit(train_times, train_events, spec)?;
    mae_margin_named(ds, time_predictions, &s, "mae_dep")
}

/// Metrics computed from the latent event times, as if nothing were
/// censored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueMetrics {
    pub ci: MetricReport,
    pub ibs: MetricReport,
    pub mae: MetricReport,
}

pub fn true_metrics(ds: &SurvivalDataset, preds: &PredictionSet, grid: &[f64]) -> Result<TrueMetrics> {
    let gt = ds
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("true metrics need ground-truth event times".into()))?;
    check_len(ds, preds.len(), "predictions")?;
    let e: Vec<f64> = gt.iter().map(|g| g.event_time).collect();
    let all = vec![true; e.len()];
    let ci = harrell_from(&e, &all, &preds.risks, "true_ci")?;
    let values: Vec<f64> = grid.iter().map(|&t| plain_brier(&e, &preds.curves, t)).collect();
    let ibs = MetricReport::new("true_ibs", integrate_over(grid, &values)?, e.len());
    let mae_total: f64 = e.iter().zip(&preds.time_predictions).map(|(a, b)| (a - b).abs()).sum();
    let mae = MetricReport::new("true_mae", mae_total / e.len() as f64, e.len());
    Ok(TrueMetrics { ci, ibs, mae })
}

/// Which true metric a censored metric estimates.
pub fn truth_for(metric: &str) -> Option<&'static str> {
    match metric {
        "harrell_ci" | "uno_ci" | "ci_dep" => Some("true_ci"),
        "ibs_ipcw" | "ibs_dep" | "ibs_dep_km" => Some("true_ibs"),
        "mae_hinge" | "mae_margin" | "mae_dep" => Some("true_mae"),
        _ => None,
    }
}

/// Every censored metric for one test set. Marginal curves come from the
/// training rows; dependent variants use `spec`.
pub fn evaluate_all(
    test: &SurvivalDataset,
    preds: &PredictionSet,
    train_times: &[f64],
    train_events: &[bool],
    spec: &CopulaSpec,
    grid: &[f64],
) -> Result<Vec<MetricReport>> {
    check_len(test, preds.len(), "predictions")?;
    let g_km = censoring_curve(train_times, train_events, &CopulaSpec::independence())?;
    let s_km = km_fit(train_times, train_events)?;
    Ok(vec![
        harrell_ci(test, &preds.risks)?,
        uno_ci(test, &preds.risks, &g_km)?,
        ci_dep(test, &preds.risks, spec, train_times, train_events)?,
        ibs_ipcw(test, &preds.curves, &g_km, grid)?,
        ibs_dep(test, &preds.curves, spec, train_times, train_events, grid)?,
        ibs_dep_km(test, &preds.curves, train_times, train_events, grid)?,
        mae_hinge(test, &preds.time_predictions)?,
        mae_margin(test, &preds.time_predictions, &s_km)?,
        mae_dep(test, &preds.time_predictions, spec, train_times, train_events)?,
    ])
}
