//! Posterior scoring: CRPS, interval coverage and normalized Wasserstein
//! distance to a reference sample.

use hxdiag::metrics::{ks_uniform, score_param};
use hxdiag::rng::stream;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn main() -> hxdiag::Result<()> {
    let mut rng = stream(8, 0);
    let reference: Vec<f64> = Normal::new(0.03, 0.004).unwrap().sample_iter(&mut rng).take(2000).collect();
    for (label, mean, sd) in [("matched", 0.03, 0.004), ("biased", 0.036, 0.004), ("overdispersed", 0.03, 0.012)] {
        let s: Vec<f64> = Normal::new(mean, sd).unwrap().sample_iter(&mut rng).take(1000).collect();
        let p = score_param("beta_f", &s, 0.03, Some(&reference))?;
        println!(
            "{label:<14} median {:.4}  CRPS {:.2e}  in 50% {}  in 90% {}  W1/truth {:.3}",
            p.median,
            p.crps,
            p.covered_50,
            p.covered_90,
            p.wasserstein_normalized.unwrap_or(f64::NAN)
        );
    }
    let u: Vec<f64> = (0..500).map(|_| rng.random()).collect();
    let (d, pval) = ks_uniform(&u)?;
    println!("KS test on 500 uniform ranks: D = {d:.4}, p = {pval:.3}");
    Ok(())
}
