//! Posterior predictive checks: quantile bands of degradation trajectories
//! and outlet temperatures under posterior draws.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::degradation::{LatentDraws, LatentTrajectory};
use crate::error::{Error, Result};
use crate::metrics::quantile_sorted;
use crate::observation::{format_f64, noise_free_series, OperatingConditions};
use crate::posterior::PosteriorEnsemble;
use crate::rng::stream;

pub const BAND_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];
pub const LATENT_HEADER: [&str; 3] = ["t", "fouling_factor", "leak_fraction"];

/// Per-timestep quantiles (one row per [`BAND_QUANTILES`] level) of
/// trajectories regenerated from posterior draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcBands {
    pub fouling_factor: Vec<[f64; 5]>,
    pub leak_fraction: Vec<[f64; 5]>,
    pub t_hot_out: Vec<[f64; 5]>,
    pub t_cold_out: Vec<[f64; 5]>,
}

fn bands(mut columns: Vec<Vec<f64>>) -> Vec<[f64; 5]> {
    columns
        .iter_mut()
        .map(|c| {
            c.sort_by(f64::total_cmp);
            BAND_QUANTILES.map(|q| quantile_sorted(c, q))
        })
        .collect()
}

/// Draw fresh latent paths for `n_draws` posterior samples (taken evenly
/// through the ensemble) and summarize them per timestep.
pub fn posterior_predictive(
    ens: &PosteriorEnsemble,
    cond: &OperatingConditions,
    n_draws: usize,
    seed: u64,
) -> Result<PpcBands> {
    if ens.is_empty() || n_draws == 0 {
        return Err(Error::Degenerate("posterior predictive needs draws".into()));
    }
    let t_max = cond.horizon;
    let mut cols = vec![vec![Vec::with_capacity(n_draws); t_max]; 4];
    let mut rng = stream(seed, 0);
    for i in 0..n_draws {
        let theta = &ens.thetas[i * ens.len() / n_draws];
        let draws = LatentDraws::sample(&theta.params, t_max, &mut rng);
        let traj = LatentTrajectory::from_draws(&theta.params, theta.mode, &draws);
        let obs = noise_free_series(&traj, cond);
        for t in 0..t_max {
            cols[0][t].push(traj.fouling_factor[t]);
            cols[1][t].push(traj.leak_fraction[t]);
            cols[2][t].push(obs.t_hot_out[t]);
            cols[3][t].push(obs.t_cold_out[t]);
        }
    }
    let mut it = cols.into_iter().map(bands);
    Ok(PpcBands {
        fouling_factor: it.next().expect("four columns"),
        leak_fraction: it.next().expect("four columns"),
        t_hot_out: it.next().expect("four columns"),
        t_cold_out: it.next().expect("four columns"),
    })
}

/// Fraction of timesteps where `truth` lies inside the band between the
/// quantile levels at indices `lo` and `hi`.
pub fn band_coverage(band: &[[f64; 5]], truth: &[f64], lo: usize, hi: usize) -> f64 {
    let inside = band
        .iter()
        .zip(truth)
        .filter(|(q, &v)| q[lo] <= v && v <= q[hi])
        .count();
    inside as f64 / truth.len() as f64
}

pub fn write_latent_csv(traj: &LatentTrajectory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(LATENT_HEADER)?;
    for (t, (r, l)) in traj.fouling_factor.iter().zip(&traj.leak_fraction).enumerate() {
        w.write_record([t.to_string(), format_f64(*r), format_f64(*l)])?;
    }
    w.flush()?;
    Ok(())
}

/// Read `(fouling_factor, leak_fraction)` written by [`write_latent_csv`].
pub fn read_latent_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    if r.headers()?.iter().ne(LATENT_HEADER) {
        return Err(Error::Format("unexpected latent trajectory header".into()));
    }
    let (mut f, mut l) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| Error::Format("short latent row".into()))?
                .parse()
                .map_err(|e| Error::Format(format!("bad number: {e}")))
        };
        f.push(num(1)?);
        l.push(num(2)?);
    }
    Ok((f, l))
}

/// Band CSV: one row per timestep with five quantiles per quantity, plus
/// the true latent path when known.
pub fn write_bands_csv(bands: &PpcBands, truth: Option<&(Vec<f64>, Vec<f64>)>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let names = ["fouling_factor", "leak_fraction", "t_hot_out", "t_cold_out"];
    let mut header = vec!["t".to_string(), "true_fouling_factor".into(), "true_leak_fraction".into()];
    for n in names {
        for q in BAND_QUANTILES {
            header.push(format!("{n}_q{:02}", (q * 100.0).round() as u32));
        }
    }
    w.write_record(&header)?;
    let series = [&bands.fouling_factor, &bands.leak_fraction, &bands.t_hot_out, &bands.t_cold_out];
    for t in 0..bands.fouling_factor.len() {
        let mut row = vec![t.to_string()];
        match truth {
            Some((f, l)) => {
                row.push(format_f64(f[t]));
                row.push(format_f64(l[t]));
            }
            None => row.extend([String::new(), String::new()]),
        }
        for s in series {
            row.extend(s[t].iter().map(|&v| format_f64(v)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
