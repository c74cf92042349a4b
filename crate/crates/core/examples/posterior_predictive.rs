//! Posterior predictive bands of the fouling factor for one record.

use hxdiag::bench::ppc::{band_coverage, posterior_predictive};
use hxdiag::mcmc::{run_mcmc, ChainConfig};
use hxdiag::rng::stream;
use hxdiag::{simulate, DegradationTheta, FailureMode, OperatingConditions, PriorSpec};

fn main() -> hxdiag::Result<()> {
    let spec = PriorSpec::default();
    let cond = OperatingConditions::default();
    let truth = DegradationTheta::new(FailureMode::Fouling, spec.params(18.0, 0.03, 0.0004, 0.5));
    let (traj, obs) = simulate(&truth, &cond, &mut stream(31, 0))?;
    let ens = run_mcmc(&obs, &cond, &spec, &ChainConfig::compact(2))?;
    let bands = posterior_predictive(&ens, &cond, 500, 3)?;
    println!("{:>3} {:>10} {:>10} {:>10} {:>10}", "t", "truth", "q05", "q50", "q95");
    for t in (0..cond.horizon).step_by(10).chain([cond.horizon - 1]) {
        let q = bands.fouling_factor[t];
        println!("{t:>3} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e}", traj.fouling_factor[t], q[0], q[2], q[4]);
    }
    println!(
        "true path inside the 90% band at {:.0}% of steps",
        100.0 * band_coverage(&bands.fouling_factor, &traj.fouling_factor, 0, 4)
    );
    Ok(())
}
