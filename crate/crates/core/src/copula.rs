//! Bivariate Archimedean copulas (independence, Clayton, Frank).
//!
//! Every family is written through its generator `phi`:
//! `C(u, v) = phi^{-1}(phi(u) + phi(v))`. Closed forms are used for the CDF,
//! the partial derivatives and the conditional inverse used for sampling.
//! The log partial derivatives needed by the likelihood are also available
//! on the cumulative-hazard scale `u = exp(-a)`, `v = exp(-b)`, which keeps
//! them finite far into the tails.

use std::fmt;
use std::str::FromStr;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::adaptive_simpson;

/// Parameters below this magnitude are evaluated as the independence copula.
pub const INDEPENDENCE_EPS: f64 = 1e-6;

const BISECT_EPS: f64 = 1e-12;
const BISECT_TOL: f64 = 1e-10;
const TAU_THETA_TOL: f64 = 1e-8;
const FRANK_THETA_MAX: f64 = 50.0;
const DEBYE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Independence,
    Clayton,
    Frank,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Independence => "independence",
            Family::Clayton => "clayton",
            Family::Frank => "frank",
        }
    }

    /// The other dependent family; used to build wrong-family scenarios.
    pub fn swapped(&self) -> Family {
        match self {
            Family::Clayton => Family::Frank,
            Family::Frank => Family::Clayton,
            Family::Independence => Family::Independence,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independence" | "indep" | "independent" => Ok(Family::Independence),
            "clayton" => Ok(Family::Clayton),
            "frank" => Ok(Family::Frank),
            other => Err(Error::InvalidInput(format!("unknown copula family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    pub family: Family,
    pub theta: f64,
}

/// `log dC/du` evaluated at `u = exp(-a)`, `v = exp(-b)`, with its
/// derivatives with respect to `a`, `b` and `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPartial {
    pub value: f64,
    pub d_a: f64,
    pub d_b: f64,
    pub d_theta: f64,
}

fn check_unit(what: &'static str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::OutOfDomain { what, value: x })
    }
}

/// `ln(e^a + e^b - 1)` for `a, b >= 0`.
fn ln_sum_exp_minus_one(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m < 1.0 {
        (a.exp_m1() + b.exp_m1()).ln_1p()
    } else {
        m + ((a - m).exp() + (b - m).exp() - (-m).exp()).ln()
    }
}

/// `ln|expm1(-theta * exp(-h))|`, stable when `exp(-h)` underflows.
fn ln_abs_frank_term(theta: f64, h: f64) -> f64 {
    let x = theta * (-h).exp();
    if x.abs() < 1e-8 {
        theta.abs().ln() - h - 0.5 * x
    } else {
        (-x).exp_m1().abs().ln()
    }
}

/// `exp(-h) / expm1(-theta * exp(-h))`, stable when `exp(-h)` underflows.
fn frank_ratio(theta: f64, h: f64) -> f64 {
    let v = (-h).exp();
    let x = theta * v;
    if x.abs() < 1e-8 {
        -(1.0 + 0.5 * x) / theta
    } else {
        v / (-x).exp_m1()
    }
}

impl CopulaSpec {
    pub fn new(family: Family, theta: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::OutOfDomain { what: "copula theta", value: theta });
        }
        match family {
            Family::Clayton if theta < 0.0 => {
                Err(Error::OutOfDomain { what: "Clayton theta (>= 0)", value: theta })
            }
            Family::Frank if theta == 0.0 => {
                Err(Error::OutOfDomain { what: "Frank theta (!= 0)", value: theta })
            }
            _ => Ok(Self { family, theta }),
        }
    }

    pub fn independence() -> Self {
        Self { family: Family::Independence, theta: 0.0 }
    }

    pub fn from_tau(family: Family, tau: f64) -> Result<Self> {
        tau_to_theta(family, tau)
    }

    /// Family actually used for evaluation: near-zero parameters collapse to
    /// independence.
    pub fn effective_family(&self) -> Family {
        match self.family {
            Family::Clayton | Family::Frank if self.theta.abs() < INDEPENDENCE_EPS => {
                Family::Independence
            }
            f => f,
        }
    }

    pub fn is_independence(&self) -> bool {
        self.effective_family() == Family::Independence
    }

    /// Generator `phi(t)`; `phi(0) = +inf`, `phi(1) = 0`.
    pub fn generator(&self, t: f64) -> Result<f64> {
        check_unit("generator argument", t)?;
        if t == 0.0 {
            return Ok(f64::INFINITY);
        }
        let th = self.theta;
        Ok(match self.effective_family() {
            Family::Independence => -t.ln(),
            Family::Clayton => (-th * t.ln()).exp_m1() / th,
            Family::Frank => -((-th * t).exp_m1() / (-th).exp_m1()).ln(),
        })
    }

    /// Inverse generator; `+inf` maps to exactly 0.
    pub fn inverse_generator(&self, s: f64) -> f64 {
        if s == f64::INFINITY {
            return 0.0;
        }
        let s = s.max(0.0);
        let th = self.theta;
        match self.effective_family() {
            Family::Independence => (-s).exp(),
            Family::Clayton => (-(th * s).ln_1p() / th).exp(),
            Family::Frank => -((-s).exp() * (-th).exp_m1()).ln_1p() / th,
        }
    }

    pub fn cdf(&self, u: f64, v: f64) -> Result<f64> {
        check_unit("copula u", u)?;
        check_unit("copula v", v)?;
        if u == 0.0 || v == 0.0 {
            return Ok(0.0);
        }
        let th = self.theta;
        Ok(match self.effective_family() {
            Family::Independence => u * v,
            Family::Clayton => {
                let w = ln_sum_exp_minus_one(-th * u.ln(), -th * v.ln());
                (-w / th).exp()
            }
            Family::Frank => {
                let num = (-th * u).exp_m1() * (-th * v).exp_m1();
                -(num / (-th).exp_m1()).ln_1p() / th
            }
        })
    }

    /// `dC/du (u, v)`.
    pub fn partial_u(&self, u: f64, v: f64) -> Result<f64> {
        check_unit("copula u", u)?;
        check_unit("copula v", v)?;
        if u == 0.0 || v == 0.0 {
            return Err(Error::OutOfDomain {
                what: "copula partial derivative argument (> 0)",
                value: 0.0,
            });
        }
        Ok(self.log_partial_hazard(-u.ln(), -v.ln()).value.exp())
    }

    /// `dC/dv (u, v)`; Archimedean copulas are exchangeable.
    pub fn partial_v(&self, u: f64, v: f64) -> Result<f64> {
        self.partial_u(v, u)
    }

    /// `log dC/du` at `u = exp(-a)`, `v = exp(-b)` with gradients.
    /// `log dC/dv` is the same function with `a` and `b` swapped.
    pub fn log_partial_hazard(&self, a: f64, b: f64) -> LogPartial {
        let th = self.theta;
        match self.effective_family() {
            Family::Independence => LogPartial { value: -b, d_a: 0.0, d_b: -1.0, d_theta: 0.0 },
            Family::Clayton => {
                let (ta, tb) = (th * a, th * b);
                let w = ln_sum_exp_minus_one(ta, tb);
                let pa = (ta - w).exp();
                let pb = (tb - w).exp();
                let k = 1.0 / th + 1.0;
                LogPartial {
                    value: (th + 1.0) * a - k * w,
                    d_a: (th + 1.0) * (1.0 - pa),
                    d_b: -(th + 1.0) * pb,
                    d_theta: a + w / (th * th) - k * (a * pa + b * pb),
                }
            }
            Family::Frank => {
                let u = (-a).exp();
                let v = (-b).exp();
                let eu = (-th * u).exp();
                let ev = (-th * v).exp();
                let am1 = (-th * u).exp_m1();
                let bm1 = (-th * v).exp_m1();
                let den = (-th).exp_m1() + am1 * bm1;
                let v_over_b = frank_ratio(th, b);
                let value = -th * u + ln_abs_frank_term(th, b) - den.abs().ln();
                let du = -th + th * eu * bm1 / den;
                let d_b = th * ev * v_over_b - th * v * am1 * ev / den;
                let dden = -(-th).exp() - u * eu * bm1 - v * ev * am1;
                LogPartial {
                    value,
                    d_a: -u * du,
                    d_b,
                    d_theta: -u - ev * v_over_b - dden / den,
                }
            }
        }
    }

    /// Solves `dC/du (u, v) = w` for `v` in closed form.
    pub fn conditional_inverse(&self, u: f64, w: f64) -> f64 {
        let th = self.theta;
        let v = match self.effective_family() {
            Family::Independence => w,
            Family::Clayton => {
                let a = (-th / (1.0 + th) * w.ln()).exp_m1();
                let s = a * (-th * u.ln()).exp();
                (-s.ln_1p() / th).exp()
            }
            Family::Frank => {
                let d = (-th).exp_m1();
                let z = w * d / (w + (1.0 - w) * (-th * u).exp());
                -z.ln_1p() / th
            }
        };
        v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }

    /// Bisection solution of `dC/du (u, v) = w` on `(eps, 1 - eps)`; works
    /// for any family since the partial is nondecreasing in `v`.
    pub fn conditional_inverse_bisect(&self, u: f64, w: f64) -> f64 {
        let (mut lo, mut hi) = (BISECT_EPS, 1.0 - BISECT_EPS);
        while hi - lo > BISECT_TOL {
            let mid = 0.5 * (lo + hi);
            let p = self.partial_u(u, mid).unwrap_or(0.0);
            if p < w {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// `n` pairs `(u, v)` by conditional inversion.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<(f64, f64)> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.sample(Open01);
                let w: f64 = rng.sample(Open01);
                (u, self.conditional_inverse(u, w))
            })
            .collect()
    }

    pub fn tau(&self) -> f64 {
        theta_to_tau(self)
    }
}

/// `D_1(theta) = (1/theta) * int_0^theta t / (e^t - 1) dt`.
pub fn debye1(theta: f64) -> f64 {
    if theta == 0.0 {
        return 1.0;
    }
    let integrand = |t: f64| if t == 0.0 { 1.0 } else { t / t.exp_m1() };
    adaptive_simpson(&integrand, 0.0, theta, DEBYE_TOL) / theta
}

/// Kendall's tau of the copula.
pub fn theta_to_tau(spec: &CopulaSpec) -> f64 {
    let th = spec.theta;
    match spec.effective_family() {
        Family::Independence => 0.0,
        Family::Clayton => th / (th + 2.0),
        Family::Frank => 1.0 - 4.0 / th * (1.0 - debye1(th)),
    }
}

/// Parameter of `family` with Kendall's tau equal to `tau`.
pub fn tau_to_theta(family: Family, tau: f64) -> Result<CopulaSpec> {
    match family {
        Family::Independence => {
            if tau == 0.0 {
                Ok(CopulaSpec::independence())
            } else {
                Err(Error::OutOfDomain { what: "independence tau (= 0)", value: tau })
            }
        }
        Family::Clayton => {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::OutOfDomain { what: "Clayton tau (0, 1)", value: tau });
            }
            CopulaSpec::new(Family::Clayton, 2.0 * tau / (1.0 - tau))
        }
        Family::Frank => {
            if !(tau > -1.0 && tau < 1.0) || tau == 0.0 {
                return Err(Error::OutOfDomain { what: "Frank tau (-1, 1) \\ {0}", value: tau });
            }
            let tau_of = |th: f64| theta_to_tau(&CopulaSpec { family: Family::Frank, theta: th });
            let (mut lo, mut hi) = if tau > 0.0 {
                (INDEPENDENCE_EPS, FRANK_THETA_MAX)
            } else {
                (-FRANK_THETA_MAX, -INDEPENDENCE_EPS)
            };
            if tau < tau_of(lo) || tau > tau_of(hi) {
                return Err(Error::OutOfDomain { what: "Frank achievable tau", value: tau });
            }
            while hi - lo > TAU_THETA_TOL * hi.abs().max(1.0) {
                let mid = 0.5 * (lo + hi);
                if tau_of(mid) < tau {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            CopulaSpec::new(Family::Frank, 0.5 * (lo + hi))
        }
    }
}
