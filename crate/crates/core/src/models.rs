//! Weibull proportional hazards and Cox regression with a Breslow baseline.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SurvivalDataset;
use crate::error::{Error, Result};
use crate::estimators::StepCurve;

pub const COX_MAX_ITER: usize = 100;
pub const COX_TOL: f64 = 1e-9;
pub const COX_RIDGE: f64 = 1e-4;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Weibull PH model: `Lambda(t|x) = (t/scale)^shape * exp(x . coefficients)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeibullPH {
    pub shape: f64,
    pub scale: f64,
    pub coefficients: Vec<f64>,
}

impl WeibullPH {
    pub fn new(shape: f64, scale: f64, coefficients: Vec<f64>) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(Error::OutOfDomain { what: "Weibull shape (> 0)", value: shape });
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::OutOfDomain { what: "Weibull scale (> 0)", value: scale });
        }
        Ok(Self { shape, scale, coefficients })
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        dot(&self.coefficients, x)
    }

    pub fn cumulative_hazard(&self, t: f64, x: &[f64]) -> f64 {
        (t / self.scale).powf(self.shape) * self.linear_predictor(x).exp()
    }

    pub fn hazard(&self, t: f64, x: &[f64]) -> f64 {
        self.shape / self.scale
            * (t / self.scale).powf(self.shape - 1.0)
            * self.linear_predictor(x).exp()
    }

    pub fn survival(&self, t: f64, x: &[f64]) -> f64 {
        (-self.cumulative_hazard(t, x)).exp()
    }

    pub fn density(&self, t: f64, x: &[f64]) -> f64 {
        self.hazard(t, x) * self.survival(t, x)
    }

    /// `ln f(t|x)` for `t > 0`, computed without forming `f`.
    pub fn log_density(&self, t: f64, x: &[f64]) -> f64 {
        let eta = self.linear_predictor(x);
        let z = t.ln() - self.scale.ln();
        self.shape.ln() - self.scale.ln() + (self.shape - 1.0) * z + eta
            - (self.shape * z + eta).exp()
    }

    /// Time at which the survival probability equals `p`.
    pub fn inverse_survival(&self, p: f64, x: &[f64]) -> Result<f64> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::OutOfDomain { what: "survival probability (0, 1]", value: p });
        }
        let eta = self.linear_predictor(x);
        Ok(self.scale * (-p.ln() * (-eta).exp()).powf(1.0 / self.shape))
    }
}

pub fn weibull_survival(m: &WeibullPH, t: f64, x: &[f64]) -> f64 {
    m.survival(t, x)
}

pub fn weibull_density(m: &WeibullPH, t: f64, x: &[f64]) -> f64 {
    m.density(t, x)
}

pub fn weibull_inverse_survival(m: &WeibullPH, p: f64, x: &[f64]) -> Result<f64> {
    m.inverse_survival(p, x)
}

/// Nondecreasing step function starting at 0, right-continuous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeHazard {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl CumulativeHazard {
    pub fn eval(&self, t: f64) -> f64 {
        match self.knots.partition_point(|&k| k <= t) {
            0 => 0.0,
            k => self.values[k - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxPHModel {
    pub coefficients: Vec<f64>,
    pub baseline: CumulativeHazard,
    /// Largest observed training time.
    pub t_max: f64,
    pub iterations: usize,
}

/// Value, gradient and Hessian of the Breslow partial log-likelihood.
pub(crate) struct PartialLik {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<Vec<f64>>,
}

fn time_order(ds: &SurvivalDataset) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| {
        ds.records[b]
            .time
            .partial_cmp(&ds.records[a].time)
            .unwrap_or(Ordering::Equal)
    });
    order
}

/// Walks distinct times from latest to earliest, calling `visit` with the
/// time, the event rows at that time and the risk-set sums after every row
/// with time `>= t` has been added.
fn sweep_risk_sets<F>(ds: &SurvivalDataset, beta: &[f64], shift: f64, order: &[usize], mut visit: F)
where
    F: FnMut(f64, &[usize], f64, &[f64], &[Vec<f64>]),
{
    let d = beta.len();
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; d];
    let mut s2 = vec![vec![0.0; d]; d];
    let mut events = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let t = ds.records[order[i]].time;
        events.clear();
        while i < order.len() && ds.records[order[i]].time == t {
            let r = &ds.records[order[i]];
            let w = (dot(beta, &r.features) - shift).exp();
            s0 += w;
            for a in 0..d {
                s1[a] += w * r.features[a];
                for b in 0..=a {
                    s2[a][b] += w * r.features[a] * r.features[b];
                }
            }
            if r.event {
                events.push(order[i]);
            }
            i += 1;
        }
        if !events.is_empty() {
            visit(t, &events, s0, &s1, &s2);
        }
    }
}

fn max_eta(ds: &SurvivalDataset, beta: &[f64]) -> f64 {
    ds.records
        .iter()
        .map(|r| dot(beta, &r.features))
        .fold(f64::NEG_INFINITY, f64::max)
}

pub(crate) fn partial_loglik(ds: &SurvivalDataset, beta: &[f64]) -> PartialLik {
    let d = beta.len();
    let order = time_order(ds);
    let shift = max_eta(ds, beta);
    let mut value = 0.0;
    let mut grad = vec![0.0; d];
    let mut hess = vec![vec![0.0; d]; d];
    sweep_risk_sets(ds, beta, shift, &order, |_, events, s0, s1, s2| {
        let m = events.len() as f64;
        let log_s0 = s0.ln() + shift;
        for &e in events {
            let x = &ds.records[e].features;
            value += dot(beta, x) - log_s0;
            for a in 0..d {
                grad[a] += x[a];
            }
        }
        for a in 0..d {
            let ma = s1[a] / s0;
            grad[a] -= m * ma;
            for b in 0..=a {
                let mb = s1[b] / s0;
                hess[a][b] -= m * (s2[a][b] / s0 - ma * mb);
            }
        }
    });
    for a in 0..d {
        for b in a + 1..d {
            hess[a][b] = hess[b][a];
        }
    }
    PartialLik { value, grad, hess }
}

fn penalized(ds: &SurvivalDataset, beta: &[f64], ridge: f64) -> f64 {
    -partial_loglik(ds, beta).value + 0.5 * ridge * dot(beta, beta)
}

/// Newton iterations on the ridge-penalized negative partial likelihood,
/// with step halving when the objective does not decrease.
pub fn coxph_fit(ds: &SurvivalDataset, ridge: f64) -> Result<CoxPHModel> {
    if !(ridge >= 0.0) {
        return Err(Error::OutOfDomain { what: "ridge penalty (>= 0)", value: ridge });
    }
    if ds.event_count() == 0 {
        return Err(Error::InvalidInput("Cox regression needs at least one event".into()));
    }
    if ds.records.iter().any(|r| r.features.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("Cox regression needs finite features".into()));
    }
    let d = ds.n_features();
    let mut beta = vec![0.0; d];
    let mut objective = penalized(ds, &beta, ridge);
    let mut iterations = 0;
    let mut converged = d == 0;
    while !converged && iterations < COX_MAX_ITER {
        iterations += 1;
        let pl = partial_loglik(ds, &beta);
        let g = DVector::from_fn(d, |a, _| -pl.grad[a] + ridge * beta[a]);
        let h = DMatrix::from_fn(d, d, |a, b| -pl.hess[a][b] + if a == b { ridge } else { 0.0 });
        let chol = h
            .cholesky()
            .ok_or_else(|| Error::Numerical("singular Cox Hessian".into()))?;
        let step = chol.solve(&g);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = (0..d).map(|a| beta[a] - scale * step[a]).collect();
            let obj = penalized(ds, &cand, ridge);
            if obj.is_finite() && obj <= objective + 1e-12 * objective.abs().max(1.0) {
                accepted = Some((cand, obj));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, obj)) = accepted else {
            // No descent possible along the Newton direction: at optimum.
            break;
        };
        let max_delta = cand
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta = cand;
        objective = obj;
        converged = max_delta < COX_TOL;
    }
    if !converged {
        let pl = partial_loglik(ds, &beta);
        let gnorm = (0..d)
            .map(|a| (-pl.grad[a] + ridge * beta[a]).powi(2))
            .sum::<f64>()
            .sqrt();
        if gnorm > 1e-6 {
            return Err(Error::NotConverged { iterations });
        }
    }
    log::debug!("coxph converged in {iterations} iterations");

    let order = time_order(ds);
    let shift = max_eta(ds, &beta);
    let mut knots = Vec::new();
    let mut jumps = Vec::new();
    sweep_risk_sets(ds, &beta, shift, &order, |t, events, s0, _, _| {
        knots.push(t);
        jumps.push(events.len() as f64 / s0 * (-shift).exp());
    });
    knots.reverse();
    jumps.reverse();
    let mut acc = 0.0;
    let values = jumps
        .iter()
        .map(|j| {
            acc += j;
            acc
        })
        .collect();
    Ok(CoxPHModel {
        coefficients: beta,
        baseline: CumulativeHazard { knots, values },
        t_max: ds.max_time(),
        iterations,
    })
}

impl CoxPHModel {
    /// Linear risk `x . beta`; larger means earlier events.
    pub fn risk(&self, x: &[f64]) -> f64 {
        dot(&self.coefficients, x)
    }

    pub fn predict_curve(&self, x: &[f64]) -> StepCurve {
        let hr = self.risk(x).exp();
        StepCurve {
            knots: self.baseline.knots.clone(),
            values: self.baseline.values.iter().map(|h| (-h * hr).exp()).collect(),
            t_max: self.t_max,
        }
    }

    pub fn survival(&self, t: f64, x: &[f64]) -> f64 {
        (-self.baseline.eval(t) * self.risk(x).exp()).exp()
    }

    /// First knot where the predicted survival is at or below 1/2, or
    /// `t_max` if the curve never gets there.
    pub fn median_time(&self, x: &[f64]) -> f64 {
        let hr = self.risk(x).exp();
        let target = std::f64::consts::LN_2;
        let k = self.baseline.values.partition_point(|h| h * hr < target);
        self.baseline.knots.get(k).copied().unwrap_or(self.t_max)
    }

    /// Inverse-transform draw on the step curve; `+inf` when the curve
    /// never falls to the drawn level.
    pub fn sample_time<R: Rng>(&self, x: &[f64], rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        self.time_at_level(x, u)
    }

    /// Smallest knot with `S(t|x) <= u`.
    pub fn time_at_level(&self, x: &[f64], u: f64) -> f64 {
        let hr = self.risk(x).exp();
        let target = -u.ln();
        let k = self.baseline.values.partition_point(|h| h * hr < target);
        match self.baseline.knots.get(k) {
            // Guard the boundary against rounding in the log transform.
            Some(&t) if self.survival(t, x) <= u => t,
            Some(_) => self.baseline.knots.get(k + 1).copied().unwrap_or(f64::INFINITY),
            None => f64::INFINITY,
        }
    }
}

pub fn coxph_predict_curve(m: &CoxPHModel, x: &[f64]) -> StepCurve {
    m.predict_curve(x)
}

pub fn coxph_risk(m: &CoxPHModel, x: &[f64]) -> f64 {
    m.risk(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Preprocessor, SurvivalRecord};
    use crate::quad::adaptive_simpson;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ds_from(rows: Vec<(Vec<f64>, f64, bool)>) -> SurvivalDataset {
        let d = rows[0].0.len();
        let records = rows
            .into_iter()
            .map(|(features, time, event)| SurvivalRecord { features, time, event })
            .collect();
        SurvivalDataset::new(records, (0..d).map(|i| format!("x{i}")).collect(), None).unwrap()
    }

    fn weibull_rows(n: usize, d: usize, psi: &[f64], censor: bool, seed: u64) -> Vec<(Vec<f64>, f64, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = WeibullPH::new(2.0, 10.0, psi.to_vec()).unwrap();
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let t = m.inverse_survival(rng.sample(Open01), &x).unwrap();
                if censor {
                    let c = rng.random::<f64>() * 20.0;
                    (x, t.min(c), t <= c)
                } else {
                    (x, t, true)
                }
            })
            .collect()
    }

    #[test]
    fn weibull_boundaries_and_exponential_case() {
        let m = WeibullPH::new(1.0, 1.0, vec![0.0]).unwrap();
        assert_eq!(m.survival(0.0, &[3.0]), 1.0);
        assert!((m.survival(1.0, &[0.7]) - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(m.inverse_survival(1.0, &[0.0]).unwrap(), 0.0);
        assert!((m.inverse_survival((-1f64).exp(), &[0.0]).unwrap() - 1.0).abs() < 1e-14);
        assert!(m.inverse_survival(0.0, &[0.0]).is_err());
        assert!(WeibullPH::new(0.0, 1.0, vec![]).is_err());
        assert!(WeibullPH::new(1.0, -1.0, vec![]).is_err());
    }

    #[test]
    fn weibull_density_integrates_to_one() {
        for (v, rho, eta) in [(4.0, 17.0, 0.3), (6.0, 19.0, -0.5), (1.0, 2.0, 0.0), (1.5, 5.0, 1.0)] {
            let m = WeibullPH::new(v, rho, vec![eta]).unwrap();
            let upper = m.inverse_survival(1e-14, &[1.0]).unwrap();
            let f = |t: f64| m.density(t, &[1.0]);
            let mass = adaptive_simpson(&f, 0.0, upper, 1e-10);
            assert!((mass - 1.0).abs() < 1e-6, "({v},{rho},{eta}) -> {mass}");
        }
    }

    #[test]
    fn weibull_log_density_matches_density() {
        let m = WeibullPH::new(4.0, 17.0, vec![0.2, -0.4]).unwrap();
        for t in [0.5, 5.0, 17.0, 30.0] {
            let x = [0.3, 0.9];
            assert!((m.log_density(t, &x) - m.density(t, &x).ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn weibull_inverse_round_trip() {
        let m = WeibullPH::new(4.0, 17.0, vec![0.5, -1.0]).unwrap();
        for &p in &[1e-6, 0.01, 0.3, 0.5, 0.9, 1.0] {
            for x in [[0.0, 0.0], [1.0, 0.5], [-0.3, 0.8]] {
                let t = m.inverse_survival(p, &x).unwrap();
                assert!((m.survival(t, &x) - p).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let ds = ds_from(weibull_rows(40, 3, &[0.8, -0.5, 0.3], true, 7));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let beta: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let pl = partial_loglik(&ds, &beta);
            let h = 1e-5;
            for a in 0..3 {
                let mut up = beta.clone();
                let mut dn = beta.clone();
                up[a] += h;
                dn[a] -= h;
                let fd = (partial_loglik(&ds, &up).value - partial_loglik(&ds, &dn).value) / (2.0 * h);
                assert!((fd - pl.grad[a]).abs() <= 1e-4 * pl.grad[a].abs().max(1.0));
                let gu = partial_loglik(&ds, &up).grad;
                let gd = partial_loglik(&ds, &dn).grad;
                for b in 0..3 {
                    let fd = (gu[b] - gd[b]) / (2.0 * h);
                    assert!((fd - pl.hess[b][a]).abs() <= 1e-4 * pl.hess[b][a].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn fitted_coefficients_are_stationary() {
        let ds = ds_from(weibull_rows(300, 3, &[1.0, -0.5, 0.0], true, 3));
        let m = coxph_fit(&ds, COX_RIDGE).unwrap();
        let pl = partial_loglik(&ds, &m.coefficients);
        let g: f64 = (0..3)
            .map(|a| (-pl.grad[a] + COX_RIDGE * m.coefficients[a]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(g < 1e-6, "gradient norm {g}");
    }

    #[test]
    fn null_feature_gives_small_coefficient() {
        for seed in 0..10 {
            let mut rows = weibull_rows(200, 1, &[1.0], true, 100 + seed);
            let mut xs: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
            xs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            for (r, x) in rows.iter_mut().zip(xs) {
                r.0 = x;
            }
            let raw = ds_from(rows);
            let ds = Preprocessor::fit(&raw).unwrap().apply(&raw).unwrap();
            let m = coxph_fit(&ds, COX_RIDGE).unwrap();
            assert!(m.coefficients[0].abs() < 0.3, "seed {seed}: {:?}", m.coefficients);
        }
    }

    /// Breslow partial likelihood straight from its definition, O(n^2).
    fn brute_partial_loglik(rows: &[(Vec<f64>, f64, bool)], beta: f64) -> f64 {
        let mut ll = 0.0;
        for (x, t, e) in rows {
            if !e {
                continue;
            }
            let denom: f64 = rows
                .iter()
                .filter(|r| r.1 >= *t)
                .map(|r| (beta * r.0[0]).exp())
                .sum();
            ll += beta * x[0] - denom.ln();
        }
        ll
    }

    #[test]
    fn newton_agrees_with_grid_search() {
        let rows = weibull_rows(5000, 1, &[1.0], false, 21);
        // Grid search on a subsample keeps the O(n^2) oracle cheap; the
        // full fit is compared against the subsample's optimum and the
        // generating coefficient.
        let sub: Vec<_> = rows[..600].to_vec();
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 0..=300 {
            let b = k as f64 * 0.01;
            let ll = brute_partial_loglik(&sub, b);
            if ll > best.0 {
                best = (ll, b);
            }
        }
        let sub_fit = coxph_fit(&ds_from(sub), 0.0).unwrap();
        assert!((sub_fit.coefficients[0] - best.1).abs() <= 0.01);
        let full = coxph_fit(&ds_from(rows), COX_RIDGE).unwrap();
        assert!((full.coefficients[0] - 1.0).abs() < 0.15, "{:?}", full.coefficients);
    }

    #[test]
    fn tied_pair_smoke_test() {
        let ds = ds_from(vec![(vec![0.5], 3.0, true), (vec![0.5], 3.0, false)]);
        let m = coxph_fit(&ds, COX_RIDGE).unwrap();
        assert_eq!(m.baseline.knots, vec![3.0]);
        assert!((m.baseline.values[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn rejects_data_without_events() {
        let ds = ds_from(vec![(vec![0.5], 3.0, false), (vec![0.1], 2.0, false)]);
        assert!(coxph_fit(&ds, COX_RIDGE).is_err());
    }

    #[test]
    fn breslow_baseline_by_hand() {
        // beta = 0 when the only feature is constant: H0 is Nelson-Aalen.
        let ds = ds_from(vec![
            (vec![1.0], 1.0, true),
            (vec![1.0], 2.0, false),
            (vec![1.0], 3.0, true),
            (vec![1.0], 3.0, true),
            (vec![1.0], 4.0, false),
        ]);
        let m = coxph_fit(&ds, COX_RIDGE).unwrap();
        assert!(m.coefficients[0].abs() < 1e-9);
        assert_eq!(m.baseline.knots, vec![1.0, 3.0]);
        let h1 = 1.0 / 5.0;
        let h2 = h1 + 2.0 / 3.0;
        assert!((m.baseline.values[0] - h1).abs() < 1e-12);
        assert!((m.baseline.values[1] - h2).abs() < 1e-12);
        let c = m.predict_curve(&[0.0]);
        assert!((c.eval(3.5) - (-h2).exp()).abs() < 1e-12);
        assert_eq!(c.t_max, 4.0);
    }

    #[test]
    fn prediction_structure_and_ordering() {
        let ds = ds_from(weibull_rows(200, 2, &[1.0, -1.0], true, 5));
        let m = coxph_fit(&ds, COX_RIDGE).unwrap();
        assert!(m.baseline.values.windows(2).all(|w| w[0] <= w[1]));
        assert!(m.baseline.values[0] >= 0.0);
        let zero = m.predict_curve(&[0.0, 0.0]);
        for (k, &h) in m.baseline.values.iter().enumerate() {
            assert!((zero.values[k] - (-h).exp()).abs() < 1e-15);
        }
        let (x1, x2) = ([1.0, -1.0], [-1.0, 1.0]);
        assert!(m.risk(&x1) > m.risk(&x2));
        let (c1, c2) = (m.predict_curve(&x1), m.predict_curve(&x2));
        assert!(c1.is_valid() && c2.is_valid());
        assert_eq!(c1.eval(0.0), 1.0);
        for &t in &m.baseline.knots {
            assert!(c1.eval(t) <= c2.eval(t));
        }
        assert!(m.median_time(&x1) <= m.median_time(&x2));
    }

    #[test]
    fn median_and_level_times() {
        let m = CoxPHModel {
            coefficients: vec![0.0],
            baseline: CumulativeHazard { knots: vec![1.0, 2.0, 3.0], values: vec![0.1, 0.5, 1.0] },
            t_max: 5.0,
            iterations: 0,
        };
        // S = e^-0.1, e^-0.5, e^-1 = 0.905, 0.607, 0.368
        assert_eq!(m.median_time(&[0.0]), 3.0);
        assert_eq!(m.time_at_level(&[0.0], 0.95), 1.0);
        assert_eq!(m.time_at_level(&[0.0], 0.6), 3.0);
        assert_eq!(m.time_at_level(&[0.0], (-0.5f64).exp()), 2.0);
        assert_eq!(m.time_at_level(&[0.0], 0.2), f64::INFINITY);
        let never = CoxPHModel { baseline: CumulativeHazard { knots: vec![1.0], values: vec![0.1] }, ..m };
        assert_eq!(never.median_time(&[0.0]), 5.0);
    }
}
