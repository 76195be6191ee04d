//! Synthetic Weibull/copula data and the semi-synthetic censoring pipeline.

use rand::distr::Open01;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::copula::{CopulaSpec, Family};
use crate::dataset::{GroundTruth, Preprocessor, SurvivalDataset};
use crate::error::{Error, Result};
use crate::metrics::harrell_ci;
use crate::models::{coxph_fit, WeibullPH, COX_RIDGE};

/// Derives an independent seed for a named purpose (SplitMix64 finalizer
/// over the seed combined with an FNV-1a hash of the label).
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DGPConfig {
    pub n: usize,
    pub d: usize,
    pub family: Family,
    /// Kendall's tau of the latent copula; 0 gives independent uniforms.
    pub tau: f64,
    pub shape_event: f64,
    pub shape_censor: f64,
    pub scale_event: f64,
    pub scale_censor: f64,
    pub seed: u64,
}

impl Default for DGPConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            d: 10,
            family: Family::Clayton,
            tau: 0.5,
            shape_event: 4.0,
            shape_censor: 6.0,
            scale_event: 17.0,
            scale_censor: 19.0,
            seed: 0,
        }
    }
}

impl DGPConfig {
    pub fn copula(&self) -> Result<CopulaSpec> {
        if self.tau == 0.0 {
            Ok(CopulaSpec::independence())
        } else {
            CopulaSpec::from_tau(self.family, self.tau)
        }
    }
}

/// Generated data together with the generating models.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: SurvivalDataset,
    pub event_model: WeibullPH,
    pub censor_model: WeibullPH,
    pub copula: CopulaSpec,
}

pub fn synth_generate(config: &DGPConfig) -> Result<SurvivalDataset> {
    Ok(synth_generate_full(config)?.dataset)
}

/// Features i.i.d. U(0,1), coefficients U(-1,1) drawn once per seed, latent
/// uniforms from the copula, times by inverting the Weibull survivals.
pub fn synth_generate_full(config: &DGPConfig) -> Result<SynthData> {
    let copula = config.copula()?;
    let d = config.d;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let coefs = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let psi_t = coefs(&mut rng);
    let psi_c = coefs(&mut rng);
    let event_model = WeibullPH::new(config.shape_event, config.scale_event, psi_t)?;
    let censor_model = WeibullPH::new(config.shape_censor, config.scale_censor, psi_c)?;
    let features: Vec<Vec<f64>> = (0..config.n)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect();
    let pairs = copula.sample_with(config.n, &mut rng);
    let mut truth = Vec::with_capacity(config.n);
    for (x, (u1, u2)) in features.iter().zip(pairs) {
        truth.push(GroundTruth {
            event_time: event_model.inverse_survival(u1, x)?,
            censor_time: censor_model.inverse_survival(u2, x)?,
        });
    }
    let names = (0..d).map(|j| format!("x{j}")).collect();
    Ok(SynthData {
        dataset: SurvivalDataset::from_ground_truth(features, names, truth)?,
        event_model,
        censor_model,
        copula,
    })
}

/// Swaps the roles of events and censorings. Ground truth is dropped since
/// the flipped flags no longer follow the min rule on it.
pub fn flip_events(ds: &SurvivalDataset) -> SurvivalDataset {
    let mut out = ds.clone();
    for r in &mut out.records {
        r.event = !r.event;
    }
    out.ground_truth = None;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub index: usize,
    pub importance: f64,
}

pub const IMPORTANCE_REPEATS: usize = 5;

/// Drop in Harrell's CI of a Cox model when each column is shuffled,
/// averaged over `repeats` shuffles; sorted by descending importance.
pub fn permutation_importance(ds: &SurvivalDataset, repeats: usize, seed: u64) -> Result<Vec<FeatureImportance>> {
    if repeats == 0 {
        return Err(Error::InvalidInput("permutation importance needs repeats >= 1".into()));
    }
    let std = Preprocessor::fit(ds)?.apply(ds)?;
    let model = coxph_fit(&std, COX_RIDGE)?;
    let risks: Vec<f64> = std.records.iter().map(|r| model.risk(&r.features)).collect();
    let base = harrell_ci(&std, &risks)?.value;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(std.n_features());
    for j in 0..std.n_features() {
        let mut column: Vec<f64> = std.records.iter().map(|r| r.features[j]).collect();
        let mut drop = 0.0;
        for _ in 0..repeats {
            column.shuffle(&mut rng);
            let risks: Vec<f64> = std
                .records
                .iter()
                .zip(&column)
                .map(|(r, &v)| {
                    let mut x = r.features.clone();
                    x[j] = v;
                    model.risk(&x)
                })
                .collect();
            drop += base - harrell_ci(&std, &risks)?.value;
        }
        out.push(FeatureImportance { index: j, importance: drop / repeats as f64 });
    }
    out.sort_by(|a, b| b.importance.total_cmp(&a.importance).then(a.index.cmp(&b.index)));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Original,
    TopK(usize),
    RandomPct(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemiSynthConfig {
    pub strategy: Strategy,
    pub seed: u64,
    pub ridge: f64,
    pub importance_repeats: usize,
}

impl Default for SemiSynthConfig {
    fn default() -> Self {
        Self { strategy: Strategy::Original, seed: 0, ridge: COX_RIDGE, importance_repeats: IMPORTANCE_REPEATS }
    }
}

/// Feature columns kept by `strategy`, in ascending column order.
pub fn select_columns(raw: &SurvivalDataset, strategy: Strategy, repeats: usize, seed: u64) -> Result<Vec<usize>> {
    let d = raw.n_features();
    let mut cols = match strategy {
        Strategy::Original => (0..d).collect(),
        Strategy::TopK(k) => {
            if k == 0 || k > d {
                return Err(Error::InvalidInput(format!("top-k needs 1 <= k <= {d}, got {k}")));
            }
            let ranked = permutation_importance(raw, repeats, sub_seed(seed, "importance"))?;
            ranked.iter().take(k).map(|f| f.index).collect::<Vec<_>>()
        }
        Strategy::RandomPct(p) => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::OutOfDomain { what: "random feature fraction (0, 1]", value: p });
            }
            let k = ((p * d as f64).ceil() as usize).clamp(1, d);
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "columns"));
            index::sample(&mut rng, d, k).into_vec()
        }
    };
    cols.sort_unstable();
    Ok(cols)
}

/// Semi-synthetic dataset: keeps the observed events as true event times,
/// resamples censoring from a Cox model of the raw censoring process on the
/// full covariates, and exposes only the selected feature columns.
pub fn semisynth_build(raw: &SurvivalDataset, config: &SemiSynthConfig) -> Result<SurvivalDataset> {
    let n_events = raw.event_count();
    if n_events == 0 || n_events == raw.len() {
        return Err(Error::InvalidInput("semi-synthetic input needs both events and censorings".into()));
    }
    let pre = Preprocessor::fit(raw)?;
    let std = pre.apply(raw)?;
    let censor_model = coxph_fit(&flip_events(&std), config.ridge)?;
    let cols = select_columns(raw, config.strategy, config.importance_repeats, config.seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, "censor"));
    let mut features = Vec::with_capacity(n_events);
    let mut truth = Vec::with_capacity(n_events);
    for (r, s) in raw.records.iter().zip(&std.records) {
        if !r.event {
            continue;
        }
        let u: f64 = rng.sample(Open01);
        let c = censor_model.time_at_level(&s.features, u);
        features.push(cols.iter().map(|&j| r.features[j]).collect());
        truth.push(GroundTruth { event_time: r.time, censor_time: c });
    }
    let names = cols.iter().map(|&j| raw.feature_names[j].clone()).collect();
    SurvivalDataset::from_ground_truth(features, names, truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::kendall_tau;

    #[test]
    fn generated_records_follow_min_rule() {
        let ds = synth_generate(&DGPConfig { n: 500, ..DGPConfig::default() }).unwrap();
        let gt = ds.ground_truth.as_ref().unwrap();
        for (r, g) in ds.records.iter().zip(gt) {
            assert_eq!(r.time, g.event_time.min(g.censor_time));
            assert_eq!(r.event, g.event_time <= g.censor_time);
            assert!(r.features.iter().all(|x| (0.0..1.0).contains(x)));
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let cfg = DGPConfig { n: 200, seed: 42, ..DGPConfig::default() };
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = DGPConfig { seed: 43, ..cfg.clone() };
        assert_ne!(synth_generate(&cfg).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn latent_uniforms_carry_the_target_tau() {
        for (family, tau) in [(Family::Clayton, 0.5), (Family::Clayton, 0.0)] {
            let cfg = DGPConfig { n: 100_000, d: 2, family, tau, seed: 3, ..DGPConfig::default() };
            let data = synth_generate_full(&cfg).unwrap();
            let gt = data.dataset.ground_truth.as_ref().unwrap();
            let (u1, u2): (Vec<f64>, Vec<f64>) = data
                .dataset
                .records
                .iter()
                .zip(gt)
                .map(|(r, g)| {
                    (
                        data.event_model.survival(g.event_time, &r.features),
                        data.censor_model.survival(g.censor_time, &r.features),
                    )
                })
                .unzip();
            let emp = kendall_tau(&u1, &u2);
            assert!((emp - tau).abs() < 0.01, "{family:?} tau {tau}: {emp}");
        }
    }

    #[test]
    fn censoring_rate_falls_as_censor_scale_grows() {
        let rates: Vec<f64> = [8.0, 12.0, 16.0, 19.0, 25.0, 35.0]
            .iter()
            .map(|&rho| {
                let cfg = DGPConfig { n: 3000, scale_censor: rho, seed: 1, ..DGPConfig::default() };
                synth_generate(&cfg).unwrap().censoring_rate()
            })
            .collect();
        assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{rates:?}");
    }

    #[test]
    fn flip_is_an_involution() {
        let ds = synth_generate(&DGPConfig { n: 300, ..DGPConfig::default() }).unwrap();
        let f = flip_events(&ds);
        assert_eq!(f.event_count(), ds.len() - ds.event_count());
        let ff = flip_events(&f);
        assert_eq!(ff.records, ds.records);
        let all = SurvivalDataset { ground_truth: None, ..ds.clone() };
        let mut all = all;
        all.records.iter_mut().for_each(|r| r.event = true);
        assert_eq!(flip_events(&all).event_count(), 0);
    }

    #[test]
    fn sub_seeds_differ_by_label() {
        assert_ne!(sub_seed(1, "data"), sub_seed(1, "split"));
        assert_ne!(sub_seed(1, "data"), sub_seed(2, "data"));
        assert_eq!(sub_seed(7, "data"), sub_seed(7, "data"));
    }

    #[test]
    fn random_pct_and_top_k_column_counts() {
        let ds = synth_generate(&DGPConfig { n: 300, d: 7, ..DGPConfig::default() }).unwrap();
        let cols = select_columns(&ds, Strategy::RandomPct(0.3), 1, 5).unwrap();
        assert_eq!(cols.len(), 3);
        assert!(cols.windows(2).all(|w| w[0] < w[1]) && cols.iter().all(|&c| c < 7));
        assert_eq!(select_columns(&ds, Strategy::TopK(2), 2, 5).unwrap().len(), 2);
        assert!(select_columns(&ds, Strategy::TopK(0), 1, 5).is_err());
        assert!(select_columns(&ds, Strategy::TopK(8), 1, 5).is_err());
        assert!(select_columns(&ds, Strategy::RandomPct(0.0), 1, 5).is_err());
    }

    #[test]
    fn strategy_serde_forms() {
        let s: Strategy = serde_json::from_str(r#"{"top_k":3}"#).unwrap();
        assert_eq!(s, Strategy::TopK(3));
        let s: Strategy = serde_json::from_str(r#""original""#).unwrap();
        assert_eq!(s, Strategy::Original);
    }
}
