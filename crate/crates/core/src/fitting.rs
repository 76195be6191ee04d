//! Joint maximum-likelihood fit of Weibull PH event and censoring marginals
//! together with an Archimedean copula parameter, and copula selection
//! against a frozen-parameter independence baseline.
//!
//! Parameters are packed as
//! `[ln v_T, ln rho_T, psi_T.., ln v_C, ln rho_C, psi_C.., theta]`.

use serde::{Deserialize, Serialize};

use crate::copula::{CopulaSpec, Family};
use crate::dataset::SurvivalDataset;
use crate::error::{Error, Result};
use crate::models::WeibullPH;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub theta_min: f64,
    /// Multiplier applied to the theta gradient before clipping.
    pub grad_scale: f64,
    pub grad_clip: f64,
    pub freeze_theta: bool,
    /// Carried along for provenance; full-batch training is deterministic.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 10_000,
            patience: 100,
            theta_min: 1e-4,
            grad_scale: 1000.0,
            grad_clip: 0.1,
            freeze_theta: false,
            seed: 0,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("learning rate", self.learning_rate),
            ("theta_min", self.theta_min),
            ("gradient scale", self.grad_scale),
            ("gradient clip", self.grad_clip),
        ];
        for (what, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{what} must be positive, got {v}")));
            }
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidInput("max_epochs and patience must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub train_nll: f64,
    pub val_nll: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFit {
    pub event_model: WeibullPH,
    pub censor_model: WeibullPH,
    pub copula: CopulaSpec,
    /// Mean per-record negative log-likelihood on the training rows.
    pub train_nll: f64,
    pub val_nll: f64,
    pub kendall_tau: f64,
    pub n_train: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    #[serde(skip)]
    pub history: Vec<EpochStat>,
}

impl JointFit {
    pub fn n_params(&self) -> usize {
        let d = self.event_model.coefficients.len();
        if self.copula.family == Family::Independence { 2 * d + 4 } else { 2 * d + 5 }
    }

    pub fn aic(&self) -> f64 {
        2.0 * self.n_params() as f64 + 2.0 * self.n_train as f64 * self.train_nll
    }

    pub fn bic(&self) -> f64 {
        self.n_params() as f64 * (self.n_train as f64).ln()
            + 2.0 * self.n_train as f64 * self.train_nll
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Offsets into the packed parameter vector for `d` features.
#[derive(Debug, Clone, Copy)]
struct Layout {
    d: usize,
}

impl Layout {
    fn event(&self) -> usize {
        0
    }
    fn censor(&self) -> usize {
        self.d + 2
    }
    fn theta(&self) -> usize {
        2 * self.d + 4
    }
    fn len(&self) -> usize {
        2 * self.d + 5
    }
}

fn pack(event: &WeibullPH, censor: &WeibullPH, theta: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(2 * event.coefficients.len() + 5);
    for m in [event, censor] {
        p.push(m.shape.ln());
        p.push(m.scale.ln());
        p.extend_from_slice(&m.coefficients);
    }
    p.push(theta);
    p
}

fn unpack_side(p: &[f64], off: usize, d: usize) -> WeibullPH {
    WeibullPH {
        shape: p[off].exp(),
        scale: p[off + 1].exp(),
        coefficients: p[off + 2..off + 2 + d].to_vec(),
    }
}

/// Per-side quantities for one record.
struct Side {
    v: f64,
    z: f64,
    lambda: f64,
    log_f: f64,
}

fn side(p: &[f64], off: usize, x: &[f64], ln_t: f64) -> Side {
    let v = p[off].exp();
    let ln_rho = p[off + 1];
    let eta: f64 = x.iter().zip(&p[off + 2..off + 2 + x.len()]).map(|(a, b)| a * b).sum();
    let z = ln_t - ln_rho;
    let lambda = (v * z + eta).exp();
    Side {
        v,
        z,
        lambda,
        log_f: p[off] - ln_rho + (v - 1.0) * z + eta - lambda,
    }
}

/// Sum of negative log-likelihood terms over `ds`, with the gradient in the
/// packed parameterization accumulated into `grad` when given.
fn nll_packed(p: &[f64], family: Family, ds: &SurvivalDataset, mut grad: Option<&mut [f64]>) -> Result<f64> {
    let lay = Layout { d: ds.n_features() };
    debug_assert_eq!(p.len(), lay.len());
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|x| *x = 0.0);
    }
    let spec = CopulaSpec { family, theta: p[lay.theta()] };
    let mut total = 0.0;
    for (i, r) in ds.records.iter().enumerate() {
        if !(r.time > 0.0) {
            return Err(Error::OutOfDomain { what: "likelihood time (> 0)", value: r.time });
        }
        let ln_t = r.time.ln();
        let t_side = side(p, lay.event(), &r.features, ln_t);
        let c_side = side(p, lay.censor(), &r.features, ln_t);
        let (own, other, own_off, other_off) = if r.event {
            (&t_side, &c_side, lay.event(), lay.censor())
        } else {
            (&c_side, &t_side, lay.censor(), lay.event())
        };
        let lp = spec.log_partial_hazard(own.lambda, other.lambda);
        let term = own.log_f + lp.value;
        if !term.is_finite() {
            log::warn!("non-finite likelihood term at record {i} (time {})", r.time);
            return Err(Error::Numerical(format!("non-finite likelihood term at record {i}")));
        }
        total -= term;
        if let Some(g) = grad.as_deref_mut() {
            let k_own = 1.0 + (lp.d_a - 1.0) * own.lambda;
            g[own_off] -= 1.0 + own.v * own.z * k_own;
            g[own_off + 1] += own.v * k_own;
            let k_other = lp.d_b * other.lambda;
            g[other_off] -= other.v * other.z * k_other;
            g[other_off + 1] += other.v * k_other;
            for (j, &x) in r.features.iter().enumerate() {
                g[own_off + 2 + j] -= x * k_own;
                g[other_off + 2 + j] -= x * k_other;
            }
            g[lay.theta()] -= lp.d_theta;
        }
    }
    Ok(total)
}

/// Negative dependent-censoring log-likelihood summed over records.
pub fn dependent_nll(
    event_model: &WeibullPH,
    censor_model: &WeibullPH,
    copula: &CopulaSpec,
    ds: &SurvivalDataset,
) -> Result<f64> {
    check_models(event_model, censor_model, ds)?;
    nll_packed(&pack(event_model, censor_model, copula.theta), copula.family, ds, None)
}

/// Gradient of [`dependent_nll`] in the packed parameterization
/// `[ln v_T, ln rho_T, psi_T.., ln v_C, ln rho_C, psi_C.., theta]`.
pub fn dependent_nll_grad(
    event_model: &WeibullPH,
    censor_model: &WeibullPH,
    copula: &CopulaSpec,
    ds: &SurvivalDataset,
) -> Result<(f64, Vec<f64>)> {
    check_models(event_model, censor_model, ds)?;
    let p = pack(event_model, censor_model, copula.theta);
    let mut g = vec![0.0; p.len()];
    let v = nll_packed(&p, copula.family, ds, Some(&mut g))?;
    Ok((v, g))
}

/// Negative log-likelihood under independent censoring:
/// `-sum delta (ln f_T + ln S_C) + (1 - delta)(ln f_C + ln S_T)`.
pub fn factorized_nll(event_model: &WeibullPH, censor_model: &WeibullPH, ds: &SurvivalDataset) -> Result<f64> {
    check_models(event_model, censor_model, ds)?;
    let mut total = 0.0;
    for r in &ds.records {
        let x = &r.features;
        let (f, s) = if r.event { (event_model, censor_model) } else { (censor_model, event_model) };
        total -= f.log_density(r.time, x) - s.cumulative_hazard(r.time, x);
    }
    Ok(total)
}

fn check_models(a: &WeibullPH, b: &WeibullPH, ds: &SurvivalDataset) -> Result<()> {
    let d = ds.n_features();
    if a.coefficients.len() != d || b.coefficients.len() != d {
        return Err(Error::InvalidInput(format!(
            "model coefficient count does not match {d} features"
        )));
    }
    Ok(())
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for k in 0..p.len() {
            self.m[k] = Self::B1 * self.m[k] + (1.0 - Self::B1) * g[k];
            self.v[k] = Self::B2 * self.v[k] + (1.0 - Self::B2) * g[k] * g[k];
            p[k] -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Full-batch Adam on the mean training NLL with early stopping on the
/// validation NLL. The theta gradient is scaled by `grad_scale`, clipped to
/// `[-grad_clip, grad_clip]`, and theta is clamped to `>= theta_min` after
/// every step. Returns the best-validation snapshot.
pub fn fit_joint(
    train: &SurvivalDataset,
    val: &SurvivalDataset,
    family: Family,
    config: &FitConfig,
) -> Result<JointFit> {
    config.validate()?;
    let d = train.n_features();
    if val.n_features() != d {
        return Err(Error::InvalidInput("train and validation feature counts differ".into()));
    }
    if train.event_count() == 0 || train.event_count() == train.len() {
        return Err(Error::InvalidInput("training data needs both events and censorings".into()));
    }
    if val.is_empty() {
        return Err(Error::InvalidInput("validation data is empty".into()));
    }
    let lay = Layout { d };
    let n_train = train.len() as f64;
    let n_val = val.len() as f64;
    let mean_time = train.times().iter().sum::<f64>() / n_train;
    let init = WeibullPH { shape: 1.0, scale: mean_time, coefficients: vec![0.0; d] };
    let mut p = pack(&init, &init, config.theta_min);
    let frozen = config.freeze_theta || family == Family::Independence;

    let mut adam = Adam::new(p.len());
    let mut g = vec![0.0; p.len()];
    let mut best_val = nll_packed(&p, family, val, None)? / n_val;
    let mut best = p.clone();
    let mut best_train = nll_packed(&p, family, train, None)? / n_train;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut epochs = 0;

    for epoch in 1..=config.max_epochs {
        epochs = epoch;
        let train_nll = match nll_packed(&p, family, train, Some(&mut g)) {
            Ok(v) => v / n_train,
            Err(_) => return Err(Error::Diverged { epoch }),
        };
        g.iter_mut().for_each(|x| *x /= n_train);
        let th = lay.theta();
        g[th] = if frozen { 0.0 } else { (g[th] * config.grad_scale).clamp(-config.grad_clip, config.grad_clip) };
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        adam.step(&mut p, &g, config.learning_rate);
        p[th] = if frozen { config.theta_min } else { p[th].max(config.theta_min) };

        let val_nll = match nll_packed(&p, family, val, None) {
            Ok(v) => v / n_val,
            Err(_) => return Err(Error::Diverged { epoch }),
        };
        history.push(EpochStat { train_nll, val_nll, theta: p[th] });
        if val_nll < best_val {
            best_val = val_nll;
            best.copy_from_slice(&p);
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    if best_epoch > 0 {
        best_train = nll_packed(&best, family, train, None)? / n_train;
    }
    let copula = CopulaSpec { family, theta: best[lay.theta()] };
    log::debug!(
        "fit {} stopped after {epochs} epochs (best {best_epoch}), theta {:.4}",
        family.name(),
        copula.theta
    );
    Ok(JointFit {
        event_model: unpack_side(&best, lay.event(), d),
        censor_model: unpack_side(&best, lay.censor(), d),
        kendall_tau: copula.tau(),
        copula,
        train_nll: best_train,
        val_nll: best_val,
        n_train: train.len(),
        epochs,
        best_epoch,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCriterion {
    #[default]
    ValNll,
    Aic,
    Bic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    /// `independence` for the frozen baseline, else the family name.
    pub family: Family,
    pub theta: f64,
    pub tau: f64,
    pub val_nll: f64,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
}

/// Fits the frozen independence baseline and each candidate family, then
/// picks the minimum of the chosen criterion.
pub fn select_copula(
    train: &SurvivalDataset,
    val: &SurvivalDataset,
    families: &[Family],
    config: &FitConfig,
    criterion: SelectionCriterion,
) -> Result<(JointFit, Vec<SelectionRow>)> {
    if families.is_empty() {
        return Err(Error::InvalidInput("no candidate copula families".into()));
    }
    let baseline_cfg = FitConfig { freeze_theta: true, ..config.clone() };
    let mut candidates = vec![(Family::Independence, &baseline_cfg)];
    candidates.extend(families.iter().filter(|f| **f != Family::Independence).map(|f| (*f, config)));

    let mut report = Vec::new();
    let mut best: Option<(f64, JointFit)> = None;
    for (family, cfg) in candidates {
        match fit_joint(train, val, family, cfg) {
            Ok(fit) => {
                let score = match criterion {
                    SelectionCriterion::ValNll => fit.val_nll,
                    SelectionCriterion::Aic => fit.aic(),
                    SelectionCriterion::Bic => fit.bic(),
                };
                report.push(SelectionRow {
                    family,
                    theta: fit.copula.theta,
                    tau: fit.kendall_tau,
                    val_nll: fit.val_nll,
                    aic: fit.aic(),
                    bic: fit.bic(),
                    converged: true,
                });
                if best.as_ref().is_none_or(|(s, _)| score < *s) {
                    best = Some((score, fit));
                }
            }
            Err(e) => {
                log::warn!("{} fit failed: {e}", family.name());
                report.push(SelectionRow {
                    family,
                    theta: f64::NAN,
                    tau: f64::NAN,
                    val_nll: f64::NAN,
                    aic: f64::NAN,
                    bic: f64::NAN,
                    converged: false,
                });
            }
        }
    }
    let (_, chosen) = best.ok_or_else(|| Error::Numerical("every copula fit diverged".into()))?;
    Ok((chosen, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{synth_generate, DGPConfig};
    use crate::dataset::SurvivalRecord;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_data(n: usize, tau: f64, seed: u64) -> SurvivalDataset {
        let cfg = DGPConfig { n, d: 3, family: Family::Clayton, tau, seed, ..DGPConfig::default() };
        synth_generate(&cfg).unwrap()
    }

    fn random_models(rng: &mut ChaCha8Rng, d: usize) -> (WeibullPH, WeibullPH) {
        let mut m = || WeibullPH {
            shape: rng.random_range(0.7..5.0),
            scale: rng.random_range(8.0..25.0),
            coefficients: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        (m(), m())
    }

    #[test]
    fn independence_matches_factorized_likelihood() {
        let ds = small_data(200, 0.3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let (t, c) = random_models(&mut rng, 3);
            let dep = dependent_nll(&t, &c, &CopulaSpec::independence(), &ds).unwrap();
            let fac = factorized_nll(&t, &c, &ds).unwrap();
            assert!((dep - fac).abs() < 1e-9, "{dep} vs {fac}");
        }
    }

    #[test]
    fn single_event_record_by_hand() {
        let ds = SurvivalDataset::new(
            vec![SurvivalRecord { features: vec![0.5], time: 10.0, event: true }],
            vec!["x".into()],
            None,
        )
        .unwrap();
        let t = WeibullPH { shape: 4.0, scale: 17.0, coefficients: vec![0.4] };
        let c = WeibullPH { shape: 6.0, scale: 19.0, coefficients: vec![-0.6] };
        let theta: f64 = 2.0;
        let spec = CopulaSpec::new(Family::Clayton, theta).unwrap();
        // Closed-form terms: density, hazard-scale survivals and the
        // Clayton partial u^{-theta-1} (u^-theta + v^-theta - 1)^{-1/theta-1}.
        let lt = (10.0f64 / 17.0).powf(4.0) * (0.2f64).exp();
        let lc = (10.0f64 / 19.0).powf(6.0) * (-0.3f64).exp();
        let f = 4.0 / 17.0 * (10.0f64 / 17.0).powf(3.0) * (0.2f64).exp() * (-lt).exp();
        let (u, v) = ((-lt).exp(), (-lc).exp());
        let partial = u.powf(-theta - 1.0) * (u.powf(-theta) + v.powf(-theta) - 1.0).powf(-1.0 / theta - 1.0);
        let expected = -(f.ln() + partial.ln());
        let got = dependent_nll(&t, &c, &spec, &ds).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ds = small_data(50, 0.5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in 0..20 {
            let family = if k % 2 == 0 { Family::Clayton } else { Family::Frank };
            let (t, c) = random_models(&mut rng, 3);
            let theta = rng.random_range(0.05..8.0);
            let p = pack(&t, &c, theta);
            let mut g = vec![0.0; p.len()];
            nll_packed(&p, family, &ds, Some(&mut g)).unwrap();
            let h = 1e-6;
            for j in 0..p.len() {
                let mut up = p.clone();
                let mut dn = p.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (nll_packed(&up, family, &ds, None).unwrap()
                    - nll_packed(&dn, family, &ds, None).unwrap())
                    / (2.0 * h);
                let rel = (fd - g[j]).abs() / g[j].abs().max(1.0);
                assert!(rel < 1e-4, "{family:?} param {j}: fd {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn nll_is_finite_over_theta_grid() {
        let ds = small_data(1000, 0.5, 5);
        let t = WeibullPH { shape: 4.0, scale: 17.0, coefficients: vec![0.1; 3] };
        let c = WeibullPH { shape: 6.0, scale: 19.0, coefficients: vec![-0.1; 3] };
        for theta in [1e-4, 0.5, 2.0, 8.0] {
            for family in [Family::Clayton, Family::Frank] {
                let v = dependent_nll(&t, &c, &CopulaSpec { family, theta }, &ds).unwrap();
                assert!(v.is_finite());
            }
        }
    }

    fn quick_config() -> FitConfig {
        FitConfig { max_epochs: 300, ..FitConfig::default() }
    }

    #[test]
    fn frozen_fit_keeps_theta_at_minimum() {
        let ds = small_data(300, 0.5, 6);
        let cfg = FitConfig { freeze_theta: true, ..quick_config() };
        let fit = fit_joint(&ds, &ds, Family::Clayton, &cfg).unwrap();
        assert_eq!(fit.copula.theta, cfg.theta_min);
        assert!(fit.kendall_tau.abs() < 1e-4);
        assert!(fit.history.iter().all(|h| h.theta == cfg.theta_min));
    }

    #[test]
    fn fit_is_deterministic_and_respects_constraints() {
        let ds = small_data(300, 0.5, 7);
        let val = small_data(100, 0.5, 8);
        let a = fit_joint(&ds, &val, Family::Clayton, &quick_config()).unwrap();
        let b = fit_joint(&ds, &val, Family::Clayton, &quick_config()).unwrap();
        assert_eq!(a, b);
        assert!(a.history.iter().all(|h| h.theta >= 1e-4));
        let mut best = f64::INFINITY;
        let mut trace = Vec::new();
        for h in &a.history {
            best = best.min(h.val_nll);
            trace.push(best);
        }
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        assert!((a.kendall_tau - a.copula.tau()).abs() < 1e-15);
        assert!(a.val_nll.is_finite());
        let back = JointFit::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back.copula, a.copula);
        assert_eq!(back.event_model, a.event_model);
    }

    #[test]
    fn selection_report_has_one_row_per_candidate() {
        let ds = small_data(300, 0.0, 9);
        let val = small_data(100, 0.0, 10);
        let (chosen, report) =
            select_copula(&ds, &val, &[Family::Clayton, Family::Frank], &quick_config(), SelectionCriterion::ValNll)
                .unwrap();
        assert_eq!(report.len(), 3);
        assert_eq!(report[0].family, Family::Independence);
        let min = report.iter().map(|r| r.val_nll).fold(f64::INFINITY, f64::min);
        assert_eq!(chosen.val_nll, min);
        assert!(select_copula(&ds, &val, &[], &quick_config(), SelectionCriterion::Aic).is_err());
    }

    #[test]
    fn parameter_counts() {
        let ds = small_data(200, 0.5, 11);
        let cfg = FitConfig { max_epochs: 5, ..FitConfig::default() };
        let dep = fit_joint(&ds, &ds, Family::Clayton, &cfg).unwrap();
        let ind = fit_joint(&ds, &ds, Family::Independence, &cfg).unwrap();
        assert_eq!(dep.n_params(), 11);
        assert_eq!(ind.n_params(), 10);
        let n = 200.0f64;
        assert!((dep.bic() - (11.0 * n.ln() + 2.0 * n * dep.train_nll)).abs() < 1e-9);
        assert!((ind.aic() - (20.0 + 2.0 * n * ind.train_nll)).abs() < 1e-9);
    }
}
