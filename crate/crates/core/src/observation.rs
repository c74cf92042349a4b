//! Forward simulator: latent degradation -> steady-state thermal solve ->
//! noisy six-channel sensor record.
//!
//! Records are written as CSV (one row per timestep) with a JSON sidecar
//! carrying the generating parameters, seed and operating conditions.

use std::cell::Cell;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::degradation::{
    effective_hot_flow, effective_ua, jump_probability, relaxed_indicator, sigmoid_gate,
    FailureMode, LatentDraws, LatentTrajectory, LEAK_MAX,
};
use crate::error::{Error, Result};
use crate::prior::DegradationTheta;
use crate::rng::SimRng;
use crate::thermal::{solve_rates, FluidStream};

pub const RECORD_FORMAT: &str = "hxdiag-record/1";

/// Column order of the record CSV after the leading `t` column.
pub const CHANNEL_NAMES: [&str; 6] = [
    "t_hot_in",
    "t_hot_out",
    "t_cold_in",
    "t_cold_out",
    "m_hot_in",
    "m_hot_out",
];

thread_local! {
    static SIMULATOR_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of forward simulations run on the current thread so far.
pub fn simulator_calls() -> u64 {
    SIMULATOR_CALLS.with(Cell::get)
}

pub(crate) fn count_call() {
    SIMULATOR_CALLS.with(|c| c.set(c.get() + 1));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingConditions {
    pub hot_inlet: FluidStream,
    pub cold_inlet: FluidStream,
    /// W/K
    pub ua_clean: f64,
    pub horizon: usize,
    /// Temperature sensor noise standard deviation, K.
    pub noise_temp: f64,
    /// Flow sensor noise standard deviation, kg/s.
    pub noise_flow: f64,
    pub seed: u64,
}

impl Default for OperatingConditions {
    /// Water-water exchanger at 90 C / 20 C, 1 kg/s each side, UA 5 kW/K.
    fn default() -> Self {
        Self {
            hot_inlet: FluidStream {
                mass_flow: 1.0,
                specific_heat: 4184.0,
                inlet_temp: 363.15,
            },
            cold_inlet: FluidStream {
                mass_flow: 1.0,
                specific_heat: 4184.0,
                inlet_temp: 293.15,
            },
            ua_clean: 5000.0,
            horizon: 100,
            noise_temp: 0.5,
            noise_flow: 0.01,
            seed: 0,
        }
    }
}

impl OperatingConditions {
    pub fn validate(&self) -> Result<()> {
        self.hot_inlet.validate()?;
        self.cold_inlet.validate()?;
        if self.hot_inlet.inlet_temp < self.cold_inlet.inlet_temp {
            return Err(Error::Domain("hot inlet colder than cold inlet".into()));
        }
        if !(self.ua_clean >= 0.0) {
            return Err(Error::Domain(format!(
                "UA_clean must be >= 0, got {}",
                self.ua_clean
            )));
        }
        if self.horizon < 2 {
            return Err(Error::Domain(format!(
                "horizon must be >= 2, got {}",
                self.horizon
            )));
        }
        if !(self.noise_temp >= 0.0) || !(self.noise_flow >= 0.0) {
            return Err(Error::Domain("noise levels must be non-negative".into()));
        }
        Ok(())
    }

    pub fn noise_free(&self) -> Self {
        Self {
            noise_temp: 0.0,
            noise_flow: 0.0,
            ..self.clone()
        }
    }
}

/// Six sensor channels over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub t_hot_in: Vec<f64>,
    pub t_hot_out: Vec<f64>,
    pub t_cold_in: Vec<f64>,
    pub t_cold_out: Vec<f64>,
    pub m_hot_in: Vec<f64>,
    pub m_hot_out: Vec<f64>,
}

impl ObservationSeries {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            t_hot_in: Vec::with_capacity(n),
            t_hot_out: Vec::with_capacity(n),
            t_cold_in: Vec::with_capacity(n),
            t_cold_out: Vec::with_capacity(n),
            m_hot_in: Vec::with_capacity(n),
            m_hot_out: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.t_hot_in.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> [&[f64]; 6] {
        [
            &self.t_hot_in,
            &self.t_hot_out,
            &self.t_cold_in,
            &self.t_cold_out,
            &self.m_hot_in,
            &self.m_hot_out,
        ]
    }

    fn channels_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.t_hot_in,
            &mut self.t_hot_out,
            &mut self.t_cold_in,
            &mut self.t_cold_out,
            &mut self.m_hot_in,
            &mut self.m_hot_out,
        ]
    }

    fn push(&mut self, row: [f64; 6]) {
        for (ch, v) in self.channels_mut().into_iter().zip(row) {
            ch.push(v);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for (name, ch) in CHANNEL_NAMES.iter().zip(self.channels()) {
            if ch.len() != n {
                return Err(Error::DimensionMismatch {
                    what: name,
                    expected: n,
                    actual: ch.len(),
                });
            }
            if ch.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!(
                    "channel {name} has non-finite values"
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t"];
        header.extend(CHANNEL_NAMES);
        w.write_record(&header)?;
        let channels = self.channels();
        for t in 0..self.len() {
            let mut row = vec![(t + 1).to_string()];
            row.extend(channels.iter().map(|ch| format_f64(ch[t])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let expected: Vec<&str> = std::iter::once("t").chain(CHANNEL_NAMES).collect();
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Format(format!(
                "unexpected record header {header:?}, want {expected:?}"
            )));
        }
        let mut obs = ObservationSeries::with_capacity(128);
        for rec in r.records() {
            let rec = rec?;
            let mut row = [0.0; 6];
            for (j, v) in row.iter_mut().enumerate() {
                *v = rec
                    .get(j + 1)
                    .ok_or_else(|| Error::Format("short record row".into()))?
                    .parse()
                    .map_err(|e| Error::Format(format!("bad number: {e}")))?;
            }
            obs.push(row);
        }
        obs.validate()?;
        Ok(obs)
    }
}

/// Shortest decimal that round-trips the value exactly.
pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Sidecar metadata written next to a record CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMetadata {
    pub format: String,
    pub theta: DegradationTheta,
    pub seed: u64,
    pub conditions: OperatingConditions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
}

/// Write `<stem>.csv` and `<stem>.json`; returns both paths.
pub fn write_record(
    stem: &Path,
    obs: &ObservationSeries,
    meta: &RecordMetadata,
) -> Result<(PathBuf, PathBuf)> {
    let csv_path = stem.with_extension("csv");
    let json_path = stem.with_extension("json");
    obs.write_csv(BufWriter::new(File::create(&csv_path)?))?;
    let mut f = BufWriter::new(File::create(&json_path)?);
    serde_json::to_writer_pretty(&mut f, meta)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok((csv_path, json_path))
}

/// Read a record CSV and, if present, its JSON sidecar.
pub fn read_record(csv_path: &Path) -> Result<(ObservationSeries, Option<RecordMetadata>)> {
    let obs = ObservationSeries::read_csv(File::open(csv_path)?)?;
    let json_path = csv_path.with_extension("json");
    let meta = if json_path.exists() {
        let meta: RecordMetadata = serde_json::from_reader(File::open(&json_path)?)?;
        if meta.format != RECORD_FORMAT {
            return Err(Error::Format(format!(
                "unknown record format tag {}",
                meta.format
            )));
        }
        Some(meta)
    } else {
        None
    };
    Ok((obs, meta))
}

/// Noise-free sensor values at one timestep.
#[inline]
fn step_channels(cond: &OperatingConditions, fouling_factor: f64, leak_fraction: f64) -> [f64; 6] {
    let m_in = cond.hot_inlet.mass_flow;
    let m_hot = effective_hot_flow(m_in, leak_fraction);
    let ua = effective_ua(cond.ua_clean, fouling_factor);
    let sol = solve_rates(
        m_hot * cond.hot_inlet.specific_heat,
        cond.cold_inlet.capacity_rate(),
        ua,
        cond.hot_inlet.inlet_temp,
        cond.cold_inlet.inlet_temp,
    );
    [
        cond.hot_inlet.inlet_temp,
        sol.t_hot_out,
        cond.cold_inlet.inlet_temp,
        sol.t_cold_out,
        m_in,
        m_hot,
    ]
}

/// Noise-free record for a given latent trajectory.
pub fn noise_free_series(traj: &LatentTrajectory, cond: &OperatingConditions) -> ObservationSeries {
    count_call();
    let mut obs = ObservationSeries::with_capacity(traj.horizon());
    for (&r, &l) in traj.fouling_factor.iter().zip(&traj.leak_fraction) {
        obs.push(step_channels(cond, r, l));
    }
    obs
}

/// Heat duty at every step of a noise-free trajectory, W.
pub fn heat_duty(traj: &LatentTrajectory, cond: &OperatingConditions) -> Vec<f64> {
    traj.fouling_factor
        .iter()
        .zip(&traj.leak_fraction)
        .map(|(&r, &l)| {
            let ch = step_channels(cond, r, l);
            ch[5] * cond.hot_inlet.specific_heat * (ch[0] - ch[1])
        })
        .collect()
}

/// Two-stage simulation: latent degradation path, then per-step steady state
/// plus i.i.d. Gaussian sensor noise.
pub fn simulate(
    theta: &DegradationTheta,
    cond: &OperatingConditions,
    rng: &mut SimRng,
) -> Result<(LatentTrajectory, ObservationSeries)> {
    cond.validate()?;
    theta.params.validate(cond.horizon)?;
    let draws = LatentDraws::sample(&theta.params, cond.horizon, rng);
    let traj = LatentTrajectory::from_draws(&theta.params, theta.mode, &draws);
    let mut obs = noise_free_series(&traj, cond);
    add_noise(&mut obs, cond, rng);
    Ok((traj, obs))
}

fn add_noise(obs: &mut ObservationSeries, cond: &OperatingConditions, rng: &mut SimRng) {
    let sigmas = [
        cond.noise_temp,
        cond.noise_temp,
        cond.noise_temp,
        cond.noise_temp,
        cond.noise_flow,
        cond.noise_flow,
    ];
    for (ch, sigma) in obs.channels_mut().into_iter().zip(sigmas) {
        for v in ch.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sigma * z;
        }
    }
}

/// Gaussian log-likelihood of `obs` under the noise-free simulation defined
/// by `(mode, params, draws)`. Streams through the horizon without building
/// intermediate arrays; counts as one simulator call.
pub fn gaussian_log_likelihood(
    mode: FailureMode,
    params: &crate::degradation::DegradationParams,
    draws: &LatentDraws,
    obs: &ObservationSeries,
    cond: &OperatingConditions,
) -> Result<f64> {
    let n = cond.horizon;
    draws.check(n)?;
    if obs.len() != n {
        return Err(Error::DimensionMismatch {
            what: "observation length",
            expected: n,
            actual: obs.len(),
        });
    }
    if !(cond.noise_temp > 0.0 && cond.noise_flow > 0.0) {
        return Err(Error::Domain(
            "likelihood needs strictly positive noise levels".into(),
        ));
    }
    count_call();
    Ok(streamed_log_likelihood(mode, params, obs, cond, |i| {
        (
            draws.uniforms[i],
            draws.jump_sizes[i],
            draws.leak_increments[i],
        )
    }))
}

/// Likelihood loop shared with the sampler. `latent(i)` yields
/// `(u_i, J_i, dL_i)`; inputs are assumed validated and the call is not counted.
#[inline]
pub(crate) fn streamed_log_likelihood<F: Fn(usize) -> (f64, f64, f64)>(
    mode: FailureMode,
    params: &crate::degradation::DegradationParams,
    obs: &ObservationSeries,
    cond: &OperatingConditions,
    latent: F,
) -> f64 {
    let n = cond.horizon;
    let inv_t = 1.0 / (cond.noise_temp * cond.noise_temp);
    let inv_m = 1.0 / (cond.noise_flow * cond.noise_flow);
    let p_jump = jump_probability(params.lambda);
    let mut r = 0.0;
    let mut leak_acc = 0.0;
    let mut sq_t = 0.0;
    let mut sq_m = 0.0;
    let channels = obs.channels();
    for i in 0..n {
        let gate = sigmoid_gate((i + 1) as f64, params.tau, params.k_gate);
        let (u, jump, dl) = latent(i);
        if mode.fouling() {
            r += gate * relaxed_indicator(p_jump, u, params.k_relax) * jump;
        }
        let l = if mode.leakage() {
            leak_acc += gate * dl;
            (LEAK_MAX * -(-leak_acc).exp_m1()).min(LEAK_MAX * (1.0 - f64::EPSILON))
        } else {
            0.0
        };
        let pred = step_channels(cond, r, l);
        for c in 0..4 {
            let d = channels[c][i] - pred[c];
            sq_t += d * d;
        }
        for c in 4..6 {
            let d = channels[c][i] - pred[c];
            sq_m += d * d;
        }
    }
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let norm = -(n as f64)
        * (4.0 * (cond.noise_temp.ln() + 0.5 * ln_2pi)
            + 2.0 * (cond.noise_flow.ln() + 0.5 * ln_2pi));
    norm - 0.5 * (sq_t * inv_t + sq_m * inv_m)
}
