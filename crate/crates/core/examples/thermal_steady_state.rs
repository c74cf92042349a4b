//! Effectiveness-NTU solution of the clean and fouled exchanger, checked
//! against the log-mean temperature difference relation.

use hxdiag::degradation::effective_ua;
use hxdiag::thermal::{lmtd_residual, solve_steady_state, ExchangerConductance};
use hxdiag::OperatingConditions;

fn main() -> hxdiag::Result<()> {
    let cond = OperatingConditions::default();
    println!("{:>10} {:>9} {:>8} {:>10} {:>10} {:>10}", "R_f", "UA", "eps", "Q [kW]", "T_h,out", "LMTD err");
    for r in [0.0, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0] {
        let ua = ExchangerConductance::new(effective_ua(cond.ua_clean, r))?;
        let sol = solve_steady_state(&cond.hot_inlet, &cond.cold_inlet, ua)?;
        let err = lmtd_residual(&sol, ua, &cond.hot_inlet, &cond.cold_inlet)?;
        println!(
            "{r:>10.2} {:>9.1} {:>8.4} {:>10.2} {:>10.2} {err:>10.1e}",
            ua.value(),
            sol.effectiveness,
            sol.heat_rate / 1e3,
            sol.t_hot_out
        );
    }
    Ok(())
}
