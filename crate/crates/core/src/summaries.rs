//! Fixed 25-dimensional summary of a sensor record.
//!
//! Five derived signals, each reduced to five features. Index `5 * s + f`
//! holds feature `f` of signal `s`:
//!
//! | s | signal                       | f | feature                              |
//! |---|------------------------------|---|--------------------------------------|
//! | 0 | `t_hot_in - t_hot_out`       | 0 | mean                                 |
//! | 1 | `t_cold_out - t_cold_in`     | 1 | population standard deviation        |
//! | 2 | `m_hot_in - m_hot_out`       | 2 | last-quartile mean - first-quartile mean |
//! | 3 | `t_hot_out`                  | 3 | max - min                            |
//! | 4 | `t_cold_out`                 | 4 | least-squares slope per timestep     |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::ObservationSeries;

pub const N_SIGNALS: usize = 5;
pub const N_FEATURES: usize = 5;
pub const SUMMARY_DIM: usize = N_SIGNALS * N_FEATURES;

pub const SIGNAL_NAMES: [&str; N_SIGNALS] =
    ["hot_dt", "cold_dt", "flow_loss", "t_hot_out", "t_cold_out"];
pub const FEATURE_NAMES: [&str; N_FEATURES] = ["mean", "std", "early_late", "range", "slope"];

/// Column names `<signal>_<feature>` in vector order.
pub fn column_names() -> Vec<String> {
    SIGNAL_NAMES
        .iter()
        .flat_map(|s| FEATURE_NAMES.iter().map(move |f| format!("{s}_{f}")))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryVector(#[serde(with = "summary_serde")] pub [f64; SUMMARY_DIM]);

mod summary_serde {
    use super::SUMMARY_DIM;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64; SUMMARY_DIM], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; SUMMARY_DIM], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into().map_err(|v: Vec<f64>| {
            D::Error::custom(format!("expected {SUMMARY_DIM} values, got {}", v.len()))
        })
    }
}

impl SummaryVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, signal: usize, feature: usize) -> f64 {
        self.0[N_FEATURES * signal + feature]
    }
}

pub fn derive_signals(obs: &ObservationSeries) -> [Vec<f64>; N_SIGNALS] {
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>();
    [
        diff(&obs.t_hot_in, &obs.t_hot_out),
        diff(&obs.t_cold_out, &obs.t_cold_in),
        diff(&obs.m_hot_in, &obs.m_hot_out),
        obs.t_hot_out.clone(),
        obs.t_cold_out.clone(),
    ]
}

pub fn features(signal: &[f64]) -> Result<[f64; N_FEATURES]> {
    let n = signal.len();
    if n < 4 {
        return Err(Error::Degenerate(format!(
            "need at least 4 points for features, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = signal.iter().sum::<f64>() / nf;
    let var = signal.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / nf;

    let q = n.div_ceil(4);
    let early = signal[..q].iter().sum::<f64>() / q as f64;
    let late = signal[n - q..].iter().sum::<f64>() / q as f64;

    let (lo, hi) = signal
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });

    // OLS slope against t = 1..n, centred.
    let t_mean = (nf + 1.0) / 2.0;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, &x) in signal.iter().enumerate() {
        let dt = (i + 1) as f64 - t_mean;
        sxy += dt * (x - mean);
        sxx += dt * dt;
    }

    Ok([mean, var.sqrt(), late - early, hi - lo, sxy / sxx])
}

pub fn summarize(obs: &ObservationSeries) -> Result<SummaryVector> {
    let mut out = [0.0; SUMMARY_DIM];
    for (s, signal) in derive_signals(obs).iter().enumerate() {
        out[N_FEATURES * s..N_FEATURES * (s + 1)].copy_from_slice(&features(signal)?);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite summary statistic".into()));
    }
    Ok(SummaryVector(out))
}
