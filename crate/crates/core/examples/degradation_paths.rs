//! Stochastic fouling and leakage paths for each failure mode.

use hxdiag::rng::stream;
use hxdiag::{DegradationParams, FailureMode, LatentDraws, LatentTrajectory};

fn main() {
    let params = DegradationParams::new(18.0, 0.03, 0.0005, 0.5);
    let draws = LatentDraws::sample(&params, 100, &mut stream(3, 0));
    for mode in FailureMode::ALL {
        let traj = LatentTrajectory::from_draws(&params, mode, &draws);
        let at = |v: &[f64]| [10, 25, 50, 99].map(|t| format!("{:.2e}", v[t])).join(" ");
        println!("{:<8} fouling  t=10,25,50,99: {}", mode.label(), at(&traj.fouling_factor));
        println!("{:<8} leakage  t=10,25,50,99: {}", "", at(&traj.leak_fraction));
    }
}
