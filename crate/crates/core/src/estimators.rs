//! Nonparametric marginal survival curves: Kaplan-Meier and the
//! Copula-Graphic generalization, plus step-curve evaluation, exact
//! integration and margin ("best guess") times.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::copula::CopulaSpec;
use crate::error::{Error, Result};

/// Survival below this is treated as zero when renormalizing.
pub const MARGIN_SURVIVAL_FLOOR: f64 = 1e-12;

/// Right-continuous nonincreasing step function. `values[k]` holds on
/// `[knots[k], knots[k + 1])`; before the first knot the curve is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCurve {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub t_max: f64,
}

impl StepCurve {
    pub fn new(knots: Vec<f64>, values: Vec<f64>, t_max: f64) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::InvalidInput("knots and values differ in length".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("knots must be strictly increasing".into()));
        }
        let mut prev = 1.0;
        for &v in &values {
            if !(0.0..=1.0).contains(&v) || v > prev {
                return Err(Error::InvalidInput(format!(
                    "curve values must be nonincreasing in [0,1], got {v}"
                )));
            }
            prev = v;
        }
        Ok(Self { knots, values, t_max })
    }

    /// The constant curve 1 on `[0, t_max]`.
    pub fn flat(t_max: f64) -> Self {
        Self { knots: Vec::new(), values: Vec::new(), t_max }
    }

    /// Number of knots `<= t`.
    fn rank(&self, t: f64) -> usize {
        self.knots.partition_point(|&k| k <= t)
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.rank(t) {
            0 => 1.0,
            k => self.values[k - 1],
        }
    }

    /// Left limit `S(t-)`.
    pub fn eval_left(&self, t: f64) -> f64 {
        match self.knots.partition_point(|&k| k < t) {
            0 => 1.0,
            k => self.values[k - 1],
        }
    }

    /// Exact integral over `[a, b]`; the last value extends past the final
    /// knot.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        let mut total = 0.0;
        let mut left = a;
        let mut current = self.eval(a);
        for (k, &knot) in self.knots.iter().enumerate().skip(self.rank(a)) {
            if knot >= b {
                break;
            }
            total += current * (knot - left);
            left = knot;
            current = self.values[k];
        }
        total + current * (b - left)
    }

    /// First time where the curve is at or below `p`, if any.
    pub fn first_crossing(&self, p: f64) -> Option<f64> {
        self.values.iter().position(|&v| v <= p).map(|k| self.knots[k])
    }

    pub fn is_valid(&self) -> bool {
        let mut prev = 1.0;
        self.knots.windows(2).all(|w| w[0] < w[1])
            && self.values.iter().all(|&v| {
                let ok = (0.0..=1.0).contains(&v) && v <= prev;
                prev = v;
                ok
            })
    }
}

pub fn curve_eval(curve: &StepCurve, t: f64) -> f64 {
    curve.eval(t)
}

pub fn curve_integral(curve: &StepCurve, a: f64, b: f64) -> f64 {
    curve.integral(a, b)
}

/// Distinct observed times with their at-risk, event and censor counts.
struct RiskTable {
    times: Vec<f64>,
    at_risk: Vec<usize>,
    events: Vec<usize>,
    n: usize,
    t_max: f64,
}

fn risk_table(times: &[f64], events: &[bool]) -> Result<RiskTable> {
    if times.is_empty() {
        return Err(Error::InvalidInput("survival curve needs at least one observation".into()));
    }
    if times.len() != events.len() {
        return Err(Error::InvalidInput("times and events differ in length".into()));
    }
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::OutOfDomain { what: "observed time (>= 0)", value: *t });
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap_or(Ordering::Equal));
    let n = times.len();
    let mut table = RiskTable {
        times: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
        n,
        t_max: times[order[n - 1]],
    };
    let mut i = 0;
    while i < n {
        let t = times[order[i]];
        let mut d = 0;
        let mut j = i;
        while j < n && times[order[j]] == t {
            d += events[order[j]] as usize;
            j += 1;
        }
        table.times.push(t);
        table.at_risk.push(n - i);
        table.events.push(d);
        i = j;
    }
    Ok(table)
}

/// Kaplan-Meier estimator with the aggregated `(1 - d/n)` factor at ties.
pub fn km_fit(times: &[f64], events: &[bool]) -> Result<StepCurve> {
    let rt = risk_table(times, events)?;
    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut s = 1.0;
    for k in 0..rt.times.len() {
        let d = rt.events[k];
        if d == 0 {
            continue;
        }
        s *= 1.0 - d as f64 / rt.at_risk[k] as f64;
        knots.push(rt.times[k]);
        values.push(s);
    }
    Ok(StepCurve { knots, values, t_max: rt.t_max })
}

/// Copula-Graphic estimator under an assumed Archimedean copula between
/// event and censoring times. Tied events contribute one generator
/// increment each, with the at-risk count decremented in between.
pub fn cg_fit(times: &[f64], events: &[bool], spec: &CopulaSpec) -> Result<StepCurve> {
    let rt = risk_table(times, events)?;
    let n = rt.n as f64;
    let phi = |m: usize| spec.generator(m as f64 / n);
    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut acc = 0.0;
    for k in 0..rt.times.len() {
        let d = rt.events[k];
        if d == 0 {
            continue;
        }
        let r = rt.at_risk[k];
        for step in 0..d {
            let m = r - step;
            acc += phi(m - 1)? - phi(m)?;
        }
        knots.push(rt.times[k]);
        values.push(spec.inverse_generator(acc).clamp(0.0, 1.0));
    }
    // Rounding in the generator round trip can leave ulp-sized increases.
    for k in 1..values.len() {
        if values[k] > values[k - 1] {
            values[k] = values[k - 1];
        }
    }
    Ok(StepCurve { knots, values, t_max: rt.t_max })
}

/// Marginal survival curve of the censoring time: the CG estimator with
/// the event indicator flipped.
pub fn censoring_curve(times: &[f64], events: &[bool], spec: &CopulaSpec) -> Result<StepCurve> {
    let flipped: Vec<bool> = events.iter().map(|e| !e).collect();
    cg_fit(times, &flipped, spec)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginTime {
    pub time: f64,
    /// Set when the curve had (numerically) no mass left at the censor
    /// time, in which case `time` is the censor time itself.
    pub degenerate: bool,
}

/// Conditional mean event time given survival past `t_c`, using the
/// curve up to its `t_max` and zero beyond it.
pub fn margin_time(curve: &StepCurve, t_c: f64) -> Result<MarginTime> {
    if !(t_c >= 0.0) {
        return Err(Error::OutOfDomain { what: "censor time (>= 0)", value: t_c });
    }
    if t_c >= curve.t_max {
        return Ok(MarginTime { time: t_c, degenerate: false });
    }
    let s = curve.eval(t_c);
    if s < MARGIN_SURVIVAL_FLOOR {
        return Ok(MarginTime { time: t_c, degenerate: true });
    }
    Ok(MarginTime {
        time: t_c + curve.integral(t_c, curve.t_max) / s,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::Family;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn km_all_events() {
        let c = km_fit(&[1.0, 2.0, 3.0], &[true, true, true]).unwrap();
        assert!(close(c.eval(1.0), 2.0 / 3.0));
        assert!(close(c.eval(2.0), 1.0 / 3.0));
        assert!(close(c.eval(3.0), 0.0));
        assert_eq!(c.eval(0.5), 1.0);
    }

    #[test]
    fn km_all_censored_is_flat() {
        let c = km_fit(&[1.0, 2.0, 3.0], &[false, false, false]).unwrap();
        for t in [0.0, 1.0, 2.5, 3.0, 10.0] {
            assert_eq!(c.eval(t), 1.0);
        }
        assert_eq!(c.t_max, 3.0);
    }

    #[test]
    fn km_tied_events() {
        let c = km_fit(&[1.0, 1.0, 2.0], &[true, true, false]).unwrap();
        assert!(close(c.eval(1.0), 1.0 / 3.0));
        assert!(close(c.eval(2.0), 1.0 / 3.0));
        assert!(close(c.eval(5.0), 1.0 / 3.0));
    }

    #[test]
    fn km_rejects_empty() {
        assert!(km_fit(&[], &[]).is_err());
        assert!(cg_fit(&[], &[], &CopulaSpec::independence()).is_err());
    }

    #[test]
    fn cg_last_event_collapses_to_zero() {
        for spec in [
            CopulaSpec::independence(),
            CopulaSpec::new(Family::Clayton, 2.0).unwrap(),
            CopulaSpec::new(Family::Frank, 3.0).unwrap(),
        ] {
            let c = cg_fit(&[1.0, 2.0, 3.0], &[false, true, true], &spec).unwrap();
            assert_eq!(c.eval(3.0), 0.0);
        }
    }

    #[test]
    fn cg_clayton_matches_closed_form_on_hand_data() {
        let times = [2.0, 3.0, 3.0, 5.0, 7.0, 8.0];
        let events = [true, false, true, true, false, true];
        let theta = 2.0;
        let spec = CopulaSpec::new(Family::Clayton, theta).unwrap();
        let c = cg_fit(&times, &events, &spec).unwrap();
        let n = 6.0f64;
        // at-risk counts at the events: 6, 5, 3, 1
        let term = |r: f64| ((r - 1.0) / n).powf(-theta) - (r / n).powf(-theta);
        let s1 = (1.0 + term(6.0)).powf(-1.0 / theta);
        let s2 = (1.0 + term(6.0) + term(5.0)).powf(-1.0 / theta);
        let s3 = (1.0 + term(6.0) + term(5.0) + term(3.0)).powf(-1.0 / theta);
        assert!((c.eval(2.5) - s1).abs() < 1e-12);
        assert!((c.eval(3.0) - s2).abs() < 1e-12);
        assert!((c.eval(6.0) - s3).abs() < 1e-12);
        assert_eq!(c.eval(8.0), 0.0);
    }

    #[test]
    fn censoring_curve_all_events_is_flat() {
        let spec = CopulaSpec::new(Family::Clayton, 2.0).unwrap();
        let g = censoring_curve(&[1.0, 2.0, 3.0], &[true, true, true], &spec).unwrap();
        assert_eq!(g.eval(10.0), 1.0);
    }

    #[test]
    fn censoring_curve_clayton_hand_evaluation() {
        // Censorings at 1 (n=5) and 4 (n=2); tau = 0.5 -> theta = 2.
        let times = [1.0, 2.0, 3.0, 4.0, 6.0];
        let events = [false, true, true, false, true];
        let spec = CopulaSpec::from_tau(Family::Clayton, 0.5).unwrap();
        let g = censoring_curve(&times, &events, &spec).unwrap();
        let phi = |t: f64| (t.powf(-2.0) - 1.0) / 2.0;
        let inv = |s: f64| (1.0 + 2.0 * s).powf(-0.5);
        let a = phi(4.0 / 5.0) - phi(1.0);
        let b = phi(1.0 / 5.0) - phi(2.0 / 5.0);
        assert!((g.eval(1.0) - inv(a)).abs() < 1e-12);
        assert!((g.eval(5.0) - inv(a + b)).abs() < 1e-12);
        assert_eq!(g.eval(0.99), 1.0);
    }

    #[test]
    fn margin_time_examples() {
        let flat = StepCurve::flat(10.0);
        assert!(close(margin_time(&flat, 4.0).unwrap().time, 10.0));
        let one = StepCurve::new(vec![2.0], vec![0.5], 10.0).unwrap();
        assert!(close(margin_time(&one, 0.0).unwrap().time, 6.0));
        assert_eq!(margin_time(&one, 12.0).unwrap().time, 12.0);
        assert_eq!(margin_time(&one, 10.0).unwrap().time, 10.0);
    }

    #[test]
    fn margin_time_three_knots_by_hand() {
        let c = StepCurve::new(vec![1.0, 2.0, 4.0], vec![0.8, 0.4, 0.1], 6.0).unwrap();
        // from t_c = 1.5: S = 0.8; integral = 0.5*0.8 + 2*0.4 + 2*0.1 = 1.4
        let m = margin_time(&c, 1.5).unwrap();
        assert!(close(m.time, 1.5 + 1.4 / 0.8));
        assert!(!m.degenerate);
    }

    #[test]
    fn margin_time_flags_dead_curve() {
        let c = StepCurve::new(vec![1.0], vec![0.0], 5.0).unwrap();
        let m = margin_time(&c, 2.0).unwrap();
        assert_eq!(m.time, 2.0);
        assert!(m.degenerate);
    }

    #[test]
    fn curve_eval_and_integral_basics() {
        let c = StepCurve::new(vec![1.0, 3.0], vec![0.6, 0.2], 5.0).unwrap();
        assert_eq!(c.eval(0.999), 1.0);
        assert_eq!(c.eval(1.0), 0.6);
        assert_eq!(c.eval_left(1.0), 1.0);
        assert_eq!(c.eval_left(3.0), 0.6);
        assert_eq!(c.integral(2.0, 2.0), 0.0);
        assert!(close(c.integral(0.0, 5.0), 1.0 + 2.0 * 0.6 + 2.0 * 0.2));
        assert!(close(c.integral(1.5, 3.5), 1.5 * 0.6 + 0.5 * 0.2));
    }

    #[test]
    fn integral_matches_riemann_sum() {
        let c = StepCurve::new(vec![0.7, 2.3], vec![0.55, 0.15], 4.0).unwrap();
        let (a, b) = (0.2, 3.1);
        let n = 1_000_000;
        let h = (b - a) / n as f64;
        let riemann: f64 = (0..n).map(|i| c.eval(a + (i as f64 + 0.5) * h) * h).sum();
        assert!((c.integral(a, b) - riemann).abs() < 1e-6);
    }

    #[test]
    fn cg_decreases_with_clayton_dependence() {
        // Brute-force 4-row example: the censored subject at 1 is treated
        // as increasingly likely to fail soon as theta grows.
        let times = [1.0, 2.0, 3.0, 4.0];
        let events = [false, true, false, true];
        let at = |th: f64| {
            let spec = CopulaSpec::new(Family::Clayton, th).unwrap();
            cg_fit(&times, &events, &spec).unwrap().eval(2.5)
        };
        let km = km_fit(&times, &events).unwrap().eval(2.5);
        assert!((at(0.0) - km).abs() < 1e-12);
        let grid = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0];
        let vals: Vec<f64> = grid.iter().map(|&t| at(t)).collect();
        assert!(vals.windows(2).all(|w| w[1] <= w[0] + 1e-15), "{vals:?}");
        assert!(vals[5] < vals[0]);
    }

    proptest! {
        #[test]
        fn cg_independence_equals_km(
            rows in prop::collection::vec((1u32..60, any::<bool>()), 1..120)
        ) {
            let times: Vec<f64> = rows.iter().map(|r| r.0 as f64 * 0.5).collect();
            let events: Vec<bool> = rows.iter().map(|r| r.1).collect();
            let km = km_fit(&times, &events).unwrap();
            let cg = cg_fit(&times, &events, &CopulaSpec::independence()).unwrap();
            prop_assert_eq!(&km.knots, &cg.knots);
            for (a, b) in km.values.iter().zip(&cg.values) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn curves_are_valid(
            rows in prop::collection::vec((1u32..60, any::<bool>()), 1..120),
            theta in 0.0f64..10.0,
            frank in any::<bool>(),
        ) {
            let times: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
            let events: Vec<bool> = rows.iter().map(|r| r.1).collect();
            let spec = if frank {
                CopulaSpec::new(Family::Frank, theta + 0.1).unwrap()
            } else {
                CopulaSpec::new(Family::Clayton, theta).unwrap()
            };
            prop_assert!(km_fit(&times, &events).unwrap().is_valid());
            prop_assert!(cg_fit(&times, &events, &spec).unwrap().is_valid());
            let c = cg_fit(&times, &events, &spec).unwrap();
            for &t in &times {
                prop_assert!(margin_time(&c, t).unwrap().time >= t);
            }
        }
    }
}
