//! Reference MCMC posterior for one sparse-fouling record.
//! Run with `--full` for the 4 x (2000 + 3000) budget.

use hxdiag::mcmc::{expected_simulator_calls, run_mcmc, ChainConfig};
use hxdiag::metrics::{credible_interval, median};
use hxdiag::rng::stream;
use hxdiag::{simulate, DegradationTheta, FailureMode, OperatingConditions, PriorSpec};

fn main() -> hxdiag::Result<()> {
    let spec = PriorSpec::default();
    let cond = OperatingConditions::default();
    let truth = DegradationTheta::new(FailureMode::Fouling, spec.params(18.0, 0.03, 0.0004, 0.5));
    let (_, obs) = simulate(&truth, &cond, &mut stream(21, 0))?;
    let cfg = if std::env::args().any(|a| a == "--full") {
        ChainConfig::full(1)
    } else {
        ChainConfig::compact(1)
    };
    let ens = run_mcmc(&obs, &cond, &spec, &cfg)?;
    println!(
        "{} draws in {:.2} s, {} simulator calls (expected {})",
        ens.len(),
        ens.wall_time,
        ens.simulator_call_count,
        expected_simulator_calls(&cfg, &spec)
    );
    println!("mode counts {:?}, predicted {}", ens.mode_counts, ens.predicted_mode());
    for (k, d) in ens.diagnostics.iter().enumerate() {
        let v = ens.param(k);
        let (lo, hi) = credible_interval(&v, 0.9);
        println!(
            "{:<7} truth {:.4e}  median {:.4e}  90% [{lo:.4e}, {hi:.4e}]  R-hat {:?}",
            d.name,
            truth.continuous()[k],
            median(&v),
            d.r_hat
        );
    }
    Ok(())
}
