//! Draws from the hierarchical prior.

use hxdiag::metrics::{median, quantile};
use hxdiag::prior::sample_prior;
use hxdiag::rng::stream;
use hxdiag::PriorSpec;

fn main() {
    let spec = PriorSpec::default();
    let mut rng = stream(5, 0);
    let draws: Vec<_> = (0..20_000).map(|_| sample_prior(&spec, &mut rng)).collect();
    let mut counts = [0usize; 4];
    draws.iter().for_each(|d| counts[d.mode.index()] += 1);
    println!("mode frequencies {:?}", counts.map(|c| c as f64 / draws.len() as f64));
    for (k, name) in ["tau", "beta_f", "beta_l", "lambda"].iter().enumerate() {
        let v: Vec<f64> = draws.iter().map(|d| d.continuous()[k]).collect();
        println!(
            "{name:<7} median {:.4e}  90% interval [{:.4e}, {:.4e}]",
            median(&v),
            quantile(&v, 0.05),
            quantile(&v, 0.95)
        );
    }
}
