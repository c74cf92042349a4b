//! Train the amortized posterior on a small simulation budget and apply it
//! to fresh records. The budget is the first argument (default 2000).

use hxdiag::metrics::median;
use hxdiag::npe::train::{generate_training_set, TrainConfig};
use hxdiag::npe::{infer, train};
use hxdiag::rng::stream;
use hxdiag::{simulate, DegradationTheta, FailureMode, OperatingConditions, PriorSpec};

fn main() -> hxdiag::Result<()> {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let spec = PriorSpec::default();
    let cond = OperatingConditions::default();
    let ts = generate_training_set(n, &spec, &cond, 1)?;
    let tp = train(&ts, &spec, &TrainConfig::default())?;
    let m = &tp.metadata;
    println!(
        "{n} simulations: {} epochs, best {} (validation loss {:.3}), {:.1} s",
        m.epochs, m.best_epoch, m.best_validation_loss, m.wall_time
    );
    for (i, mode) in FailureMode::ALL.into_iter().enumerate() {
        let truth = DegradationTheta::new(mode, spec.params(18.0, 0.03, 0.001, 2.0));
        let (_, obs) = simulate(&truth, &cond, &mut stream(50, i as u64))?;
        let ens = infer(&tp, &obs, 1000, i as u64)?;
        let p = ens.mode_probabilities.unwrap_or_default();
        println!(
            "true {:<8} predicted {:<8} p = [{:.2} {:.2} {:.2} {:.2}]  tau median {:.1}  ({:.3} s)",
            mode.label(),
            ens.predicted_mode().label(),
            p[0],
            p[1],
            p[2],
            p[3],
            median(&ens.param(0)),
            ens.wall_time
        );
    }
    Ok(())
}
