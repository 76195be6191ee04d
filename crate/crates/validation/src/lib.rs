//! Reference implementations used to check `copsurv` on small inputs.
//!
//! Everything here favours the most literal formulation over speed:
//! survival curves are rebuilt by scanning every record at every event time
//! and concordance enumerates all ordered pairs.

pub mod naive {
    use copsurv::copula::CopulaSpec;
    use copsurv::estimators::StepCurve;
    use copsurv::metrics::IPCW_FLOOR;

    /// Right-continuous step curve stored as `(time, value after the drop)`.
    #[derive(Debug, Clone)]
    pub struct NaiveCurve {
        pub steps: Vec<(f64, f64)>,
        pub t_max: f64,
    }

    impl NaiveCurve {
        pub fn eval(&self, t: f64) -> f64 {
            self.steps.iter().filter(|s| s.0 <= t).map(|s| s.1).next_back().unwrap_or(1.0)
        }

        pub fn eval_left(&self, t: f64) -> f64 {
            self.steps.iter().filter(|s| s.0 < t).map(|s| s.1).next_back().unwrap_or(1.0)
        }
    }

    fn distinct_sorted(v: impl Iterator<Item = f64>) -> Vec<f64> {
        let mut v: Vec<f64> = v.collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    fn event_times(t: &[f64], e: &[bool]) -> Vec<f64> {
        distinct_sorted(t.iter().zip(e).filter(|p| *p.1).map(|p| *p.0))
    }

    fn max_time(t: &[f64]) -> f64 {
        t.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn naive_km(t: &[f64], e: &[bool]) -> NaiveCurve {
        let mut s = 1.0;
        let mut steps = Vec::new();
        for x in event_times(t, e) {
            let at_risk = t.iter().filter(|&&y| y >= x).count() as f64;
            let d = t.iter().zip(e).filter(|p| *p.0 == x && *p.1).count() as f64;
            s *= 1.0 - d / at_risk;
            steps.push((x, s));
        }
        NaiveCurve { steps, t_max: max_time(t) }
    }

    /// Copula-Graphic curve: one generator increment per event, with the
    /// at-risk count decremented between tied events.
    pub fn naive_cg(t: &[f64], e: &[bool], c: &CopulaSpec) -> NaiveCurve {
        let n = t.len() as f64;
        let phi = |m: usize| c.generator(m as f64 / n).unwrap();
        let mut acc = 0.0;
        let mut steps = Vec::new();
        for x in event_times(t, e) {
            let mut r = t.iter().filter(|&&y| y >= x).count();
            for _ in t.iter().zip(e).filter(|p| *p.0 == x && *p.1) {
                acc += phi(r - 1) - phi(r);
                r -= 1;
            }
            steps.push((x, c.inverse_generator(acc)));
        }
        NaiveCurve { steps, t_max: max_time(t) }
    }

    pub fn naive_margin(s: &NaiveCurve, tc: f64) -> f64 {
        if tc >= s.t_max || s.eval(tc) < 1e-12 {
            return tc;
        }
        let mut pts = vec![tc];
        pts.extend(s.steps.iter().map(|p| p.0).filter(|&x| x > tc && x < s.t_max));
        pts.push(s.t_max);
        let area: f64 = pts.windows(2).map(|w| (w[1] - w[0]) * s.eval(w[0])).sum();
        tc + area / s.eval(tc)
    }

    /// Weighted concordance over ordered pairs with `e_i` and `t_i < t_j`.
    pub fn naive_concordance(t: &[f64], e: &[bool], risk: &[f64], w: impl Fn(usize) -> f64) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..t.len() {
            for j in 0..t.len() {
                if e[i] && t[i] < t[j] {
                    let s = if risk[i] > risk[j] {
                        1.0
                    } else if risk[i] == risk[j] {
                        0.5
                    } else {
                        0.0
                    };
                    num += w(i) * s;
                    den += w(i);
                }
            }
        }
        num / den
    }

    pub fn naive_uno(t: &[f64], e: &[bool], risk: &[f64], g: &NaiveCurve) -> f64 {
        naive_concordance(t, e, risk, |i| g.eval_left(t[i]).max(IPCW_FLOOR).powi(-2))
    }

    pub fn naive_brier(t: &[f64], e: &[bool], curves: &[StepCurve], g: &NaiveCurve, ts: f64) -> f64 {
        let fl = |x: f64| x.max(IPCW_FLOOR);
        let mut total = 0.0;
        for i in 0..t.len() {
            let s = curves[i].eval(ts);
            if t[i] <= ts && e[i] {
                total += s * s / fl(g.eval_left(t[i]));
            } else if t[i] > ts {
                total += (1.0 - s) * (1.0 - s) / fl(g.eval(ts));
            }
        }
        total / t.len() as f64
    }

    /// Brier score against fully known (or imputed) event times.
    pub fn naive_plain_brier(times: &[f64], curves: &[StepCurve], ts: f64) -> f64 {
        let total: f64 = times
            .iter()
            .zip(curves)
            .map(|(&x, c)| ((x > ts) as u8 as f64 - c.eval(ts)).powi(2))
            .sum();
        total / times.len() as f64
    }

    /// Trapezoid average of `f` over `grid`.
    pub fn naive_integrate(grid: &[f64], f: impl Fn(f64) -> f64) -> f64 {
        let mut area = 0.0;
        for k in 0..grid.len() - 1 {
            area += (grid[k + 1] - grid[k]) * (f(grid[k]) + f(grid[k + 1])) / 2.0;
        }
        area / (grid[grid.len() - 1] - grid[0])
    }

    pub fn naive_mae_margin(t: &[f64], e: &[bool], pred: &[f64], s: &NaiveCurve) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..t.len() {
            let (w, x) = if e[i] { (1.0, t[i]) } else { (1.0 - s.eval(t[i]), naive_margin(s, t[i])) };
            num += w * (x - pred[i]).abs();
            den += w;
        }
        num / den
    }
}

/// Residuals of `y` after a least-squares line in `x`.
pub fn residuals(y: &[f64], x: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    y.iter().zip(x).map(|(b, a)| b - my - slope * (a - mx)).collect()
}

#[cfg(test)]
mod tests {
    use super::naive::*;
    use super::residuals;
    use copsurv::copula::CopulaSpec;

    #[test]
    fn km_by_hand() {
        // At risk 5, 3 and 1 at the event times 1, 3 and 5.
        let t = [1.0, 2.0, 3.0, 3.0, 5.0];
        let e = [true, false, true, true, true];
        let km = naive_km(&t, &e);
        assert_eq!(km.eval(0.5), 1.0);
        assert_eq!(km.eval(1.0), 0.8);
        assert!((km.eval(3.0) - 0.8 / 3.0).abs() < 1e-15);
        assert_eq!(km.eval(5.0), 0.0);
        assert_eq!(km.eval_left(1.0), 1.0);
    }

    #[test]
    fn independence_cg_is_km() {
        let t = [1.0, 2.0, 3.0, 3.0, 5.0, 6.0];
        let e = [true, false, true, true, false, true];
        let km = naive_km(&t, &e);
        let cg = naive_cg(&t, &e, &CopulaSpec::independence());
        for x in [0.0, 1.0, 2.5, 3.0, 5.5, 6.0] {
            assert!((km.eval(x) - cg.eval(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn margin_of_a_flat_then_dead_curve() {
        let s = NaiveCurve { steps: vec![(4.0, 0.0)], t_max: 4.0 };
        assert_eq!(naive_margin(&s, 1.0), 4.0);
        assert_eq!(naive_margin(&s, 4.0), 4.0);
    }

    #[test]
    fn concordance_and_trapezoid() {
        let t = [1.0, 2.0, 3.0];
        let e = [true, true, false];
        assert_eq!(naive_concordance(&t, &e, &[3.0, 2.0, 1.0], |_| 1.0), 1.0);
        assert_eq!(naive_concordance(&t, &e, &[1.0, 1.0, 1.0], |_| 1.0), 0.5);
        assert!((naive_integrate(&[0.0, 1.0, 3.0], |x| x) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn residuals_remove_the_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let r = residuals(&[1.0, 3.0, 5.0, 7.0], &x);
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }
}
