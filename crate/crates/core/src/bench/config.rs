//! Benchmark configuration: operating conditions, priors, budgets and the
//! scenario table.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::degradation::FailureMode;
use crate::error::{Error, Result};
use crate::mcmc::ChainConfig;
use crate::npe::train::TrainConfig;
use crate::observation::OperatingConditions;
use crate::prior::{DegradationTheta, PriorSpec};

pub const DEFAULT_REALIZATIONS: usize = 500;

fn default_realizations() -> usize {
    DEFAULT_REALIZATIONS
}

/// One synthetic failure scenario. Parameters that the mode switches off
/// are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub mode: FailureMode,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default = "default_realizations")]
    pub n_realizations: usize,
}

impl ScenarioSpec {
    fn new(name: &str, mode: FailureMode, beta_f: Option<f64>, beta_l: Option<f64>, lambda: Option<f64>) -> Self {
        Self {
            name: name.into(),
            mode,
            tau: 18.0,
            beta_f,
            beta_l,
            lambda,
            n_realizations: DEFAULT_REALIZATIONS,
        }
    }

    /// The six benchmark scenarios: Table I of the study plus a healthy
    /// baseline.
    pub fn table() -> Vec<Self> {
        use FailureMode::{Fouling, Leakage};
        vec![
            Self::new("weak-fouling", Fouling, Some(0.005), None, Some(5.0)),
            Self::new("batch-sd", Fouling, Some(0.030), None, Some(0.5)),
            Self::new("boiler-fw", Fouling, Some(0.050), None, Some(3.0)),
            Self::new("mild-leak", Leakage, None, Some(0.0005), None),
            Self::new("severe-leak", Leakage, None, Some(0.0010), None),
            Self::new("no-failure", FailureMode::None, None, None, None),
        ]
    }

    pub fn validate(&self, spec: &PriorSpec) -> Result<()> {
        let err = |msg: String| Err(Error::Config(format!("scenario {:?}: {msg}", self.name)));
        let (lo, hi) = spec.tau_bounds();
        if !(self.tau > lo && self.tau < hi) {
            return err(format!("tau {} outside ({lo}, {hi})", self.tau));
        }
        let fouling = self.mode.fouling();
        let leakage = self.mode.leakage();
        for (name, value, active) in [
            ("beta_f", self.beta_f, fouling),
            ("lambda", self.lambda, fouling),
            ("beta_l", self.beta_l, leakage),
        ] {
            match (value, active) {
                (Some(v), true) if v > 0.0 && v.is_finite() => {}
                (Some(v), true) => return err(format!("{name} must be positive, got {v}")),
                (None, true) => return err(format!("{name} is required for mode {}", self.mode)),
                (Some(_), false) => return err(format!("{name} is not used by mode {}", self.mode)),
                (None, false) => {}
            }
        }
        if self.n_realizations == 0 {
            return err("n_realizations must be >= 1".into());
        }
        Ok(())
    }

    /// Ground truth. Switched-off parameters take their prior medians; they
    /// have no effect on the simulation.
    pub fn theta(&self, spec: &PriorSpec) -> DegradationTheta {
        DegradationTheta::new(
            self.mode,
            spec.params(
                self.tau,
                self.beta_f.unwrap_or(spec.beta_f.median()),
                self.beta_l.unwrap_or(spec.beta_l.median()),
                self.lambda.unwrap_or(spec.lambda.median()),
            ),
        )
    }

    /// Indices (0 = tau, 1 = beta_f, 2 = beta_l, 3 = lambda) of the
    /// parameters that shape this scenario's data.
    pub fn active_params(&self) -> Vec<usize> {
        let mut k = Vec::new();
        if self.mode != FailureMode::None {
            k.push(0);
        }
        if self.mode.fouling() {
            k.push(1);
        }
        if self.mode.leakage() {
            k.push(2);
        }
        if self.mode.fouling() {
            k.push(3);
        }
        k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcBudget {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub target_accept: f64,
}

impl McmcBudget {
    pub fn chain_config(&self, rng_seed: u64) -> ChainConfig {
        ChainConfig {
            n_chains: self.chains,
            n_warmup: self.warmup,
            n_samples: self.samples,
            target_accept: self.target_accept,
            rng_seed,
        }
    }
}

/// Desk-scale defaults: 5,000 training simulations; MCMC 4 x (150 + 75).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    pub npe_simulations: usize,
    pub npe_posterior_samples: usize,
    pub mcmc: McmcBudget,
}

impl Default for Budgets {
    fn default() -> Self {
        let c = ChainConfig::compact(0);
        Self {
            npe_simulations: 5000,
            npe_posterior_samples: 1000,
            mcmc: McmcBudget {
                chains: c.n_chains,
                warmup: c.n_warmup,
                samples: c.n_samples,
                target_accept: c.target_accept,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    pub conditions: OperatingConditions,
    pub prior: PriorSpec,
    pub budgets: Budgets,
    pub training: TrainConfig,
    pub scenarios: Vec<ScenarioSpec>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            conditions: OperatingConditions::default(),
            prior: PriorSpec::default(),
            budgets: Budgets::default(),
            training: TrainConfig::default(),
            scenarios: ScenarioSpec::table(),
        }
    }
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.conditions.validate()?;
        self.prior.validate()?;
        self.training.validate()?;
        if self.prior.horizon != self.conditions.horizon {
            return Err(Error::Config(format!(
                "prior horizon {} differs from operating horizon {}",
                self.prior.horizon, self.conditions.horizon
            )));
        }
        if !(self.conditions.noise_temp > 0.0 && self.conditions.noise_flow > 0.0) {
            return Err(Error::Config("benchmark noise levels must be positive".into()));
        }
        if self.budgets.npe_simulations < 100 || self.budgets.npe_posterior_samples < 10 {
            return Err(Error::Config(format!("NPE budgets too small: {:?}", self.budgets)));
        }
        self.budgets.mcmc.chain_config(0).validate()?;
        let mut names = std::collections::HashSet::new();
        for s in &self.scenarios {
            s.validate(&self.prior)?;
            if !names.insert(s.name.as_str()) {
                return Err(Error::Config(format!("duplicate scenario name {:?}", s.name)));
            }
        }
        Ok(())
    }

    pub fn scenario(&self, name: &str) -> Result<(usize, &ScenarioSpec)> {
        self.scenarios
            .iter()
            .enumerate()
            .find(|(_, s)| s.name == name)
            .ok_or_else(|| {
                let known: Vec<&str> = self.scenarios.iter().map(|s| s.name.as_str()).collect();
                Error::Config(format!("unknown scenario {name:?}; known: {known:?}"))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = BenchConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(BenchConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn scenario_table_matches_declared_modes() {
        let spec = PriorSpec::default();
        let table = ScenarioSpec::table();
        assert_eq!(table.len(), 6);
        for s in &table {
            s.validate(&spec).unwrap();
            assert_eq!(s.tau, 18.0);
        }
        assert_eq!(table[1].theta(&spec).params.lambda, 0.5);
        assert_eq!(table[3].active_params(), vec![0, 2]);
        assert!(table[5].active_params().is_empty());
    }

    #[test]
    fn rejects_inconsistent_scenarios() {
        let spec = PriorSpec::default();
        let mut s = ScenarioSpec::table()[0].clone();
        s.beta_l = Some(0.001);
        assert!(s.validate(&spec).is_err());
        let mut s = ScenarioSpec::table()[3].clone();
        s.beta_l = None;
        assert!(s.validate(&spec).is_err());
        let mut s = ScenarioSpec::table()[0].clone();
        s.tau = 120.0;
        assert!(s.validate(&spec).is_err());
    }

    #[test]
    fn config_errors_are_reported() {
        assert!(matches!(BenchConfig::from_toml("seed = "), Err(Error::Toml(_))));
        let mut cfg = BenchConfig::default();
        cfg.scenarios.push(cfg.scenarios[0].clone());
        assert!(BenchConfig::from_toml(&cfg.to_toml().unwrap()).is_err());
        assert!(BenchConfig::default().scenario("nope").is_err());
    }
}
