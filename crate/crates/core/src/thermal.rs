//! Steady-state counterflow heat exchanger.
//!
//! Heat duty is computed in closed form with the effectiveness-NTU method.
//! The log-mean temperature difference relation is kept only as an
//! independent consistency check on a finished solution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this distance from 1 the capacity ratio is treated as exactly 1 and
/// the balanced-flow limit `NTU / (1 + NTU)` is used.
pub const BALANCED_FLOW_TOLERANCE: f64 = 1e-9;

/// One fluid stream entering the exchanger. SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidStream {
    /// kg/s
    pub mass_flow: f64,
    /// J/(kg K)
    pub specific_heat: f64,
    /// K
    pub inlet_temp: f64,
}

impl FluidStream {
    pub fn new(mass_flow: f64, specific_heat: f64, inlet_temp: f64) -> Result<Self> {
        let stream = Self {
            mass_flow,
            specific_heat,
            inlet_temp,
        };
        stream.validate()?;
        Ok(stream)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.mass_flow) || !ok(self.specific_heat) || !ok(self.inlet_temp) {
            return Err(Error::Domain(format!(
                "fluid stream requires positive finite mass flow, specific heat and inlet temperature, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Heat capacity rate `m_dot * c_p` in W/K.
    pub fn capacity_rate(&self) -> f64 {
        self.mass_flow * self.specific_heat
    }

    /// Same stream with a different mass flow.
    pub fn with_mass_flow(&self, mass_flow: f64) -> Result<Self> {
        Self::new(mass_flow, self.specific_heat, self.inlet_temp)
    }
}

/// Overall conductance UA in W/K.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ExchangerConductance(f64);

impl ExchangerConductance {
    pub fn new(ua: f64) -> Result<Self> {
        if !(ua >= 0.0) || ua.is_nan() {
            return Err(Error::Domain(format!("UA must be non-negative, got {ua}")));
        }
        Ok(Self(ua))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateSolution {
    /// W
    pub heat_rate: f64,
    pub t_hot_out: f64,
    pub t_cold_out: f64,
    pub effectiveness: f64,
    pub ntu: f64,
    pub capacity_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityRates {
    pub c_hot: f64,
    pub c_cold: f64,
    pub c_min: f64,
    pub c_max: f64,
}

pub fn capacity_rates(hot: &FluidStream, cold: &FluidStream) -> CapacityRates {
    let c_hot = hot.capacity_rate();
    let c_cold = cold.capacity_rate();
    CapacityRates {
        c_hot,
        c_cold,
        c_min: c_hot.min(c_cold),
        c_max: c_hot.max(c_cold),
    }
}

/// Counterflow effectiveness for a given NTU and capacity ratio `r = C_min / C_max`.
pub fn effectiveness(ntu: f64, r: f64) -> Result<f64> {
    if !(ntu >= 0.0) {
        return Err(Error::Domain(format!(
            "NTU must be non-negative, got {ntu}"
        )));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!(
            "capacity ratio must lie in [0, 1], got {r}"
        )));
    }
    Ok(effectiveness_unchecked(ntu, r))
}

#[inline]
pub(crate) fn effectiveness_unchecked(ntu: f64, r: f64) -> f64 {
    if (1.0 - r).abs() < BALANCED_FLOW_TOLERANCE {
        return ntu / (1.0 + ntu);
    }
    // (1 - e) / (1 - r e) with e = exp(-NTU (1 - r)), rewritten so that
    // neither term cancels near r = 1
    let d = 1.0 - r;
    let m = -(-ntu * d).exp_m1();
    (m / (d + r * m)).clamp(0.0, 1.0)
}

/// Closed-form solve from capacity rates; the hot path used by the simulator.
#[inline]
pub(crate) fn solve_rates(
    c_hot: f64,
    c_cold: f64,
    ua: f64,
    t_hot_in: f64,
    t_cold_in: f64,
) -> SteadyStateSolution {
    let (c_min, c_max) = if c_hot <= c_cold {
        (c_hot, c_cold)
    } else {
        (c_cold, c_hot)
    };
    let ntu = ua / c_min;
    let r = c_min / c_max;
    let eff = effectiveness_unchecked(ntu, r);
    let q = eff * c_min * (t_hot_in - t_cold_in);
    SteadyStateSolution {
        heat_rate: q,
        t_hot_out: t_hot_in - q / c_hot,
        t_cold_out: t_cold_in + q / c_cold,
        effectiveness: eff,
        ntu,
        capacity_ratio: r,
    }
}

pub fn solve_steady_state(
    hot: &FluidStream,
    cold: &FluidStream,
    ua: ExchangerConductance,
) -> Result<SteadyStateSolution> {
    hot.validate()?;
    cold.validate()?;
    if hot.inlet_temp < cold.inlet_temp {
        return Err(Error::Domain(format!(
            "hot inlet {} K is colder than cold inlet {} K",
            hot.inlet_temp, cold.inlet_temp
        )));
    }
    Ok(solve_rates(
        hot.capacity_rate(),
        cold.capacity_rate(),
        ua.value(),
        hot.inlet_temp,
        cold.inlet_temp,
    ))
}

/// Log-mean temperature difference for counterflow terminal differences
/// `dt_a = T_hot,in - T_cold,out` and `dt_b = T_hot,out - T_cold,in`.
pub fn log_mean_temperature_difference(dt_a: f64, dt_b: f64) -> Result<f64> {
    if !(dt_a > 0.0) || !(dt_b > 0.0) {
        return Err(Error::Degenerate(format!(
            "terminal temperature differences must be positive, got {dt_a} and {dt_b}"
        )));
    }
    let x = (dt_a - dt_b) / dt_b;
    if x.abs() <= BALANCED_FLOW_TOLERANCE {
        return Ok(dt_b);
    }
    if x.abs() < 1e-4 {
        // x / ln(1 + x) series; avoids cancellation near the equal-difference limit.
        return Ok(dt_b * (1.0 + x / 2.0 - x * x / 12.0 + x * x * x / 24.0));
    }
    Ok((dt_a - dt_b) / x.ln_1p())
}

/// Relative disagreement `|Q - UA * dT_lm| / Q` between an effectiveness-NTU
/// solution and the LMTD heat transfer equation.
pub fn lmtd_residual(
    sol: &SteadyStateSolution,
    ua: ExchangerConductance,
    hot: &FluidStream,
    cold: &FluidStream,
) -> Result<f64> {
    if !(sol.heat_rate > 0.0) {
        return Err(Error::Degenerate(format!(
            "LMTD check needs strictly positive heat rate, got {}",
            sol.heat_rate
        )));
    }
    let dt_a = hot.inlet_temp - sol.t_cold_out;
    let dt_b = sol.t_hot_out - cold.inlet_temp;
    let lmtd = log_mean_temperature_difference(dt_a, dt_b)?;
    Ok((sol.heat_rate - ua.value() * lmtd).abs() / sol.heat_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn water(m: f64, t: f64) -> FluidStream {
        FluidStream::new(m, 4184.0, t).unwrap()
    }

    #[test]
    fn capacity_rate_examples() {
        let c = capacity_rates(&water(1.0, 360.0), &water(1.0, 290.0));
        assert_eq!((c.c_min, c.c_max), (4184.0, 4184.0));

        let hot = FluidStream::new(2.0, 1000.0, 360.0).unwrap();
        let c = capacity_rates(&hot, &water(1.0, 290.0));
        assert_eq!((c.c_min, c.c_max), (2000.0, 4184.0));

        let c = capacity_rates(&water(0.5, 360.0), &water(1.5, 290.0));
        assert_relative_eq!(c.c_min, 2092.0, epsilon = 1e-12);
        assert_relative_eq!(c.c_max, 6276.0, epsilon = 1e-12);
    }

    #[test]
    fn effectiveness_examples() {
        assert_eq!(effectiveness(0.0, 0.5).unwrap(), 0.0);
        assert_relative_eq!(effectiveness(2.0, 1.0).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        // (1 - e^-1) / (1 - 0.5 e^-1)
        assert_relative_eq!(
            effectiveness(2.0, 0.5).unwrap(),
            0.774_600_326_439_435_9,
            epsilon = 1e-12
        );
    }

    #[test]
    fn effectiveness_rejects_bad_domain() {
        assert!(matches!(effectiveness(-0.1, 0.5), Err(Error::Domain(_))));
        assert!(matches!(effectiveness(1.0, 1.5), Err(Error::Domain(_))));
        assert!(matches!(effectiveness(1.0, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn balanced_branch_is_continuous() {
        for ntu in [0.01, 0.5, 1.0, 2.0, 5.0, 20.0] {
            let near = effectiveness(ntu, 1.0 - 1e-8).unwrap();
            assert!((near - ntu / (1.0 + ntu)).abs() < 1e-6, "ntu={ntu}");
        }
    }

    #[test]
    fn near_balanced_flow_satisfies_lmtd() {
        let hot = water(1.0, 363.15);
        for (rel, ntu) in [(5e-9, 1.4e-3), (2e-9, 0.01), (8e-9, 0.3), (1e-7, 2e-3)] {
            let cold = water(1.0 + rel, 293.15);
            let ua = ExchangerConductance::new(ntu * hot.capacity_rate()).unwrap();
            let sol = solve_steady_state(&hot, &cold, ua).unwrap();
            let res = lmtd_residual(&sol, ua, &hot, &cold).unwrap();
            assert!(res < 1e-9, "rel={rel} ntu={ntu}: {res}");
        }
    }

    #[test]
    fn zero_conductance_transfers_nothing() {
        let hot = water(1.0, 363.15);
        let cold = water(1.0, 293.15);
        let sol = solve_steady_state(&hot, &cold, ExchangerConductance::new(0.0).unwrap()).unwrap();
        assert_eq!(sol.heat_rate, 0.0);
        assert_eq!(sol.t_hot_out, 363.15);
        assert_eq!(sol.t_cold_out, 293.15);
    }

    #[test]
    fn huge_conductance_approaches_full_exchange() {
        let hot = water(1.0, 363.15);
        let cold = water(1.0, 293.15);
        let sol =
            solve_steady_state(&hot, &cold, ExchangerConductance::new(1e12).unwrap()).unwrap();
        assert!((sol.t_hot_out - 293.15).abs() < 1e-3);
        assert!((sol.t_cold_out - 363.15).abs() < 1e-3);
    }

    #[test]
    fn nominal_point_matches_direct_formula() {
        let hot = water(1.0, 363.15);
        let cold = water(1.0, 293.15);
        let ua = ExchangerConductance::new(5000.0).unwrap();
        let sol = solve_steady_state(&hot, &cold, ua).unwrap();
        let ntu = 5000.0 / 4184.0;
        let eps = ntu / (1.0 + ntu);
        assert_relative_eq!(sol.heat_rate, eps * 4184.0 * 70.0, max_relative = 1e-12);
        assert_relative_eq!(
            sol.effectiveness,
            0.544_425_087_108_014,
            max_relative = 1e-12
        );
        // balanced flow: both terminal differences equal, limit branch of the LMTD
        assert!(lmtd_residual(&sol, ua, &hot, &cold).unwrap() < 1e-6);
    }

    #[test]
    fn rejects_inverted_inlets() {
        let hot = water(1.0, 290.0);
        let cold = water(1.0, 300.0);
        let err = solve_steady_state(&hot, &cold, ExchangerConductance::new(10.0).unwrap());
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn lmtd_degenerate_cases() {
        assert!(matches!(
            log_mean_temperature_difference(0.0, 1.0),
            Err(Error::Degenerate(_))
        ));
        assert_eq!(log_mean_temperature_difference(3.0, 3.0).unwrap(), 3.0);
        let hot = water(1.0, 300.0);
        let cold = water(1.0, 300.0);
        let sol =
            solve_steady_state(&hot, &cold, ExchangerConductance::new(10.0).unwrap()).unwrap();
        assert!(
            lmtd_residual(&sol, ExchangerConductance::new(10.0).unwrap(), &hot, &cold).is_err()
        );
    }

    fn config() -> impl Strategy<Value = (FluidStream, FluidStream, f64)> {
        (
            0.1f64..5.0,
            1000.0f64..5000.0,
            320.0f64..500.0,
            0.1f64..5.0,
            1000.0f64..5000.0,
            250.0f64..315.0,
            0.01f64..8.0,
        )
            .prop_map(|(mh, ch, th, mc, cc, tc, ntu)| {
                let hot = FluidStream::new(mh, ch, th).unwrap();
                let cold = FluidStream::new(mc, cc, tc).unwrap();
                let ua = ntu * hot.capacity_rate().min(cold.capacity_rate());
                (hot, cold, ua)
            })
    }

    proptest! {
        #[test]
        fn energy_balance_and_second_law((hot, cold, ua) in config()) {
            let sol = solve_steady_state(&hot, &cold, ExchangerConductance::new(ua).unwrap()).unwrap();
            let q_hot = hot.capacity_rate() * (hot.inlet_temp - sol.t_hot_out);
            let q_cold = cold.capacity_rate() * (sol.t_cold_out - cold.inlet_temp);
            prop_assert!((q_hot - sol.heat_rate).abs() <= 1e-9 * sol.heat_rate);
            prop_assert!((q_cold - sol.heat_rate).abs() <= 1e-9 * sol.heat_rate);
            prop_assert!(sol.t_cold_out < hot.inlet_temp);
            prop_assert!(sol.t_hot_out > cold.inlet_temp);
            prop_assert!((0.0..=1.0).contains(&sol.effectiveness));
            prop_assert!((0.0..=1.0).contains(&sol.capacity_ratio));
        }

        #[test]
        fn heat_rate_monotone_in_conductance((hot, cold, ua) in config(), factor in 1.0f64..3.0) {
            let lo = solve_steady_state(&hot, &cold, ExchangerConductance::new(ua).unwrap()).unwrap();
            let hi = solve_steady_state(&hot, &cold, ExchangerConductance::new(ua * factor).unwrap()).unwrap();
            prop_assert!(hi.heat_rate >= lo.heat_rate);
        }

        #[test]
        fn lmtd_agrees_with_ntu((hot, cold, ua) in config()) {
            let ua = ExchangerConductance::new(ua).unwrap();
            let sol = solve_steady_state(&hot, &cold, ua).unwrap();
            prop_assert!(lmtd_residual(&sol, ua, &hot, &cold).unwrap() < 1e-6);
        }

        #[test]
        fn effectiveness_in_unit_interval(ntu in 0.0f64..50.0, r in 0.0f64..=1.0) {
            let e = effectiveness(ntu, r).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
        }
    }
}
