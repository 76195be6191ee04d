//! Survival datasets: CSV ingestion, stratified splitting and
//! training-fitted standardization.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub features: Vec<f64>,
    pub time: f64,
    pub event: bool,
}

/// Latent event and censoring times, known only for generated data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub event_time: f64,
    pub censor_time: f64,
}

impl GroundTruth {
    pub fn observed(&self) -> (f64, bool) {
        let event = self.event_time <= self.censor_time;
        (self.event_time.min(self.censor_time), event)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    pub records: Vec<SurvivalRecord>,
    pub feature_names: Vec<String>,
    pub ground_truth: Option<Vec<GroundTruth>>,
}

impl SurvivalDataset {
    pub fn new(
        records: Vec<SurvivalRecord>,
        feature_names: Vec<String>,
        ground_truth: Option<Vec<GroundTruth>>,
    ) -> Result<Self> {
        let d = feature_names.len();
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != d {
                return Err(Error::InvalidInput(format!(
                    "record {i} has {} features, expected {d}",
                    r.features.len()
                )));
            }
            if !(r.time >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "record {i} has invalid time {}",
                    r.time
                )));
            }
        }
        if let Some(gt) = &ground_truth {
            if gt.len() != records.len() {
                return Err(Error::InvalidInput(
                    "ground truth length differs from record count".into(),
                ));
            }
            for (i, (r, g)) in records.iter().zip(gt).enumerate() {
                let (t, e) = g.observed();
                if t != r.time || e != r.event {
                    return Err(Error::InvalidInput(format!(
                        "record {i} is inconsistent with its ground truth"
                    )));
                }
            }
        }
        Ok(Self {
            records,
            feature_names,
            ground_truth,
        })
    }

    /// Builds a dataset from latent times by the min rule.
    pub fn from_ground_truth(
        features: Vec<Vec<f64>>,
        feature_names: Vec<String>,
        truth: Vec<GroundTruth>,
    ) -> Result<Self> {
        let records = features
            .into_iter()
            .zip(&truth)
            .map(|(features, g)| {
                let (time, event) = g.observed();
                SurvivalRecord {
                    features,
                    time,
                    event,
                }
            })
            .collect();
        Self::new(records, feature_names, Some(truth))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn event_count(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    pub fn censoring_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        1.0 - self.event_count() as f64 / self.len() as f64
    }

    pub fn max_time(&self) -> f64 {
        self.records.iter().map(|r| r.time).fold(0.0, f64::max)
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            ground_truth: self
                .ground_truth
                .as_ref()
                .map(|gt| indices.iter().map(|&i| gt[i]).collect()),
        }
    }

    /// Keeps only the feature columns at `columns`, in the given order.
    pub fn select_features(&self, columns: &[usize]) -> Result<Self> {
        let d = self.n_features();
        if let Some(&bad) = columns.iter().find(|&&c| c >= d) {
            return Err(Error::InvalidInput(format!(
                "feature index {bad} out of range for {d} features"
            )));
        }
        Ok(Self {
            records: self
                .records
                .iter()
                .map(|r| SurvivalRecord {
                    features: columns.iter().map(|&c| r.features[c]).collect(),
                    time: r.time,
                    event: r.event,
                })
                .collect(),
            feature_names: columns
                .iter()
                .map(|&c| self.feature_names[c].clone())
                .collect(),
            ground_truth: self.ground_truth.clone(),
        })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }

    /// Parses the dataset CSV schema: a header, mandatory `time` and
    /// `event` columns (derivable from `event_time`/`censor_time` when both
    /// are present), and every other numeric column as a feature. Empty
    /// feature cells become NaN.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let time_col = find("time");
        let event_col = find("event");
        let et_col = find("event_time");
        let ct_col = find("censor_time");
        let has_truth = et_col.is_some() && ct_col.is_some();
        if et_col.is_some() != ct_col.is_some() {
            return Err(Error::Schema(
                "event_time and censor_time must appear together".into(),
            ));
        }
        if (time_col.is_none() || event_col.is_none()) && !has_truth {
            return Err(Error::Schema(
                "missing mandatory column `time` or `event`".into(),
            ));
        }
        let reserved = [time_col, event_col, et_col, ct_col];
        let candidate_cols: Vec<usize> = (0..headers.len())
            .filter(|c| !reserved.contains(&Some(*c)))
            .collect();

        let rows: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;

        // A feature column is numeric when every non-empty cell parses.
        let feature_cols: Vec<usize> = candidate_cols
            .into_iter()
            .filter(|&c| {
                let numeric = rows
                    .iter()
                    .all(|r| r.get(c).is_none_or(|s| s.is_empty() || s.parse::<f64>().is_ok()));
                if !numeric {
                    log::warn!("dropping non-numeric column `{}`", headers[c]);
                }
                numeric
            })
            .collect();

        let mut records = Vec::with_capacity(rows.len());
        let mut truth = Vec::with_capacity(rows.len());
        for (line, row) in rows.iter().enumerate() {
            let cell = |c: usize| row.get(c).unwrap_or("");
            let gt = if has_truth {
                let e = parse_num(cell(et_col.unwrap()), "event_time", line)?;
                let c = parse_num(cell(ct_col.unwrap()), "censor_time", line)?;
                Some(GroundTruth {
                    event_time: e,
                    censor_time: c,
                })
            } else {
                None
            };
            let time = match time_col {
                Some(c) => parse_num(cell(c), "time", line)?,
                None => gt.unwrap().observed().0,
            };
            if time < 0.0 {
                return Err(Error::Schema(format!("row {line}: negative time {time}")));
            }
            let event = match event_col {
                Some(c) => parse_event(cell(c), line)?,
                None => gt.unwrap().observed().1,
            };
            if let Some(g) = gt {
                if g.observed() != (time, event) {
                    return Err(Error::Schema(format!(
                        "row {line}: time/event disagree with event_time/censor_time"
                    )));
                }
                truth.push(g);
            }
            let features = feature_cols
                .iter()
                .map(|&c| {
                    let s = cell(c);
                    if s.is_empty() {
                        f64::NAN
                    } else {
                        s.parse().unwrap_or(f64::NAN)
                    }
                })
                .collect();
            records.push(SurvivalRecord {
                features,
                time,
                event,
            });
        }
        let feature_names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
        Self::new(records, feature_names, has_truth.then_some(truth))
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }

    /// Writes features, then `time`, `event`, and the ground-truth columns
    /// when present. Floats use the shortest round-trip representation.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = self.feature_names.clone();
        header.push("time".into());
        header.push("event".into());
        if self.ground_truth.is_some() {
            header.push("event_time".into());
            header.push("censor_time".into());
        }
        w.write_record(&header)?;
        for (i, r) in self.records.iter().enumerate() {
            let mut row: Vec<String> = r.features.iter().map(|v| fmt_num(*v)).collect();
            row.push(fmt_num(r.time));
            row.push(if r.event { "1" } else { "0" }.into());
            if let Some(gt) = &self.ground_truth {
                row.push(fmt_num(gt[i].event_time));
                row.push(fmt_num(gt[i].censor_time));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn parse_num(s: &str, what: &str, line: usize) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| !v.is_nan())
        .ok_or_else(|| Error::Schema(format!("row {line}: non-numeric {what} `{s}`")))
}

fn parse_event(s: &str, line: usize) -> Result<bool> {
    match s {
        "1" | "true" | "True" | "TRUE" => Ok(true),
        "0" | "false" | "False" | "FALSE" => Ok(false),
        _ => match s.parse::<f64>() {
            Ok(v) if v == 1.0 => Ok(true),
            Ok(v) if v == 0.0 => Ok(false),
            _ => Err(Error::Schema(format!("row {line}: event `{s}` not in {{0,1}}"))),
        },
    }
}

/// Train/validation/test partition produced by [`stratified_split`].
#[derive(Debug, Clone)]
pub struct Split {
    pub train: SurvivalDataset,
    pub val: SurvivalDataset,
    pub test: SurvivalDataset,
}

/// Splits `n` into integer parts proportional to `weights` by largest
/// remainder. Ties in the remainder go to `prefer` first, then lower index.
fn apportion(n: usize, weights: &[f64], prefer: &[bool]) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut parts: Vec<usize> = raw.iter().map(|r| (r + 1e-9).floor() as usize).collect();
    let mut assigned: usize = parts.iter().sum();
    while assigned > n {
        let k = (0..parts.len()).rfind(|&k| parts[k] > 0).unwrap();
        parts[k] -= 1;
        assigned -= 1;
    }
    let mut order: Vec<usize> = (0..parts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - parts[a] as f64;
        let fb = raw[b] - parts[b] as f64;
        prefer[b]
            .cmp(&prefer[a])
            .then(fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(n - assigned) {
        parts[k] += 1;
    }
    parts
}

/// Stratifies on the event flag and partitions `ds` into
/// (train, validation, test) with the given fractions.
pub fn stratified_split(
    ds: &SurvivalDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Split> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "split fractions {fr:?} must be in [0,1] and sum to 1"
        )));
    }
    if ds.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty dataset".into()));
    }
    let n = ds.len();
    let sizes = apportion(n, &fr, &[false; 3]);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut event_idx: Vec<usize> = (0..n).filter(|&i| ds.records[i].event).collect();
    let mut censor_idx: Vec<usize> = (0..n).filter(|&i| !ds.records[i].event).collect();
    event_idx.shuffle(&mut rng);
    censor_idx.shuffle(&mut rng);

    let n_events = event_idx.len();
    let event_weights: Vec<f64> = sizes.iter().map(|&s| s as f64 / n as f64).collect();
    // Splits that would otherwise end up with no events get first claim on
    // the leftover events.
    let starving: Vec<bool> = sizes
        .iter()
        .zip(&event_weights)
        .map(|(&s, w)| s > 0 && (w * n_events as f64 + 1e-9).floor() == 0.0)
        .collect();
    let mut event_parts = apportion(n_events, &event_weights, &starving);
    for k in 0..3 {
        event_parts[k] = event_parts[k].min(sizes[k]);
    }
    // Re-balance if clamping removed events.
    let mut missing = n_events - event_parts.iter().sum::<usize>();
    for k in 0..3 {
        let room = sizes[k] - event_parts[k];
        let add = room.min(missing);
        event_parts[k] += add;
        missing -= add;
    }
    if n_events > 0 {
        for k in 0..3 {
            if sizes[k] > 0 && event_parts[k] == 0 {
                return Err(Error::InvalidInput(format!(
                    "split {k} of size {} would receive no events",
                    sizes[k]
                )));
            }
        }
    }

    let mut parts: Vec<Vec<usize>> = Vec::with_capacity(3);
    let (mut e_off, mut c_off) = (0, 0);
    for k in 0..3 {
        let ne = event_parts[k];
        let nc = sizes[k] - ne;
        let mut idx: Vec<usize> = event_idx[e_off..e_off + ne].to_vec();
        idx.extend_from_slice(&censor_idx[c_off..c_off + nc]);
        idx.sort_unstable();
        e_off += ne;
        c_off += nc;
        parts.push(idx);
    }
    Ok(Split {
        train: ds.subset(&parts[0]),
        val: ds.subset(&parts[1]),
        test: ds.subset(&parts[2]),
    })
}

/// Mean imputation followed by standardization, fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Preprocessor {
    pub fn identity(d: usize) -> Self {
        Self {
            means: vec![0.0; d],
            stds: vec![1.0; d],
        }
    }

    pub fn fit(train: &SurvivalDataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidInput("cannot fit preprocessing on no rows".into()));
        }
        let d = train.n_features();
        let mut means = Vec::with_capacity(d);
        let mut stds = Vec::with_capacity(d);
        for j in 0..d {
            let observed: Vec<f64> = train
                .records
                .iter()
                .map(|r| r.features[j])
                .filter(|v| !v.is_nan())
                .collect();
            if observed.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "feature `{}` has no observed values",
                    train.feature_names[j]
                )));
            }
            let mean = observed.iter().sum::<f64>() / observed.len() as f64;
            // Population variance over the imputed column: imputed cells sit
            // at the mean and contribute zero.
            let ss: f64 = observed.iter().map(|v| (v - mean).powi(2)).sum();
            let std = (ss / train.len() as f64).sqrt();
            means.push(mean);
            stds.push(if std < STD_FLOOR { 1.0 } else { std });
        }
        Ok(Self { means, stds })
    }

    pub fn apply(&self, ds: &SurvivalDataset) -> Result<SurvivalDataset> {
        if ds.n_features() != self.means.len() {
            return Err(Error::InvalidInput(format!(
                "preprocessor fitted on {} features, dataset has {}",
                self.means.len(),
                ds.n_features()
            )));
        }
        let mut out = ds.clone();
        for r in &mut out.records {
            for (j, v) in r.features.iter_mut().enumerate() {
                let x = if v.is_nan() { self.means[j] } else { *v };
                *v = (x - self.means[j]) / self.stds[j];
            }
        }
        Ok(out)
    }
}

pub fn preprocess_fit(train: &SurvivalDataset) -> Result<Preprocessor> {
    Preprocessor::fit(train)
}

pub fn preprocess_apply(p: &Preprocessor, ds: &SurvivalDataset) -> Result<SurvivalDataset> {
    p.apply(ds)
}
