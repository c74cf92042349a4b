//! Simulate a noisy six-channel sensor record and reduce it to summary
//! features. Pass a path to also write the record as CSV.

use hxdiag::rng::stream;
use hxdiag::summaries::column_names;
use hxdiag::{simulate, summarize, DegradationTheta, FailureMode, OperatingConditions, PriorSpec};

fn main() -> hxdiag::Result<()> {
    let spec = PriorSpec::default();
    let cond = OperatingConditions::default();
    let theta = DegradationTheta::new(FailureMode::Both, spec.params(30.0, 0.03, 0.001, 2.0));
    let (traj, obs) = simulate(&theta, &cond, &mut stream(11, 0))?;
    println!(
        "final fouling factor {:.3e}, leak fraction {:.4}",
        traj.fouling_factor[99], traj.leak_fraction[99]
    );
    println!("T_hot,out first/last: {:.2} / {:.2} K", obs.t_hot_out[0], obs.t_hot_out[99]);
    let s = summarize(&obs)?;
    for (name, v) in column_names().iter().zip(s.as_slice()) {
        println!("{name:<24} {v:>12.5}");
    }
    if let Some(path) = std::env::args().nth(1) {
        obs.write_csv(std::fs::File::create(&path)?)?;
        println!("wrote {path}");
    }
    Ok(())
}
