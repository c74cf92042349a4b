//! Split-R̂ and rank-normalized effective sample size.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

fn check_chains(chains: &[Vec<f64>]) -> Result<usize> {
    if chains.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 chains, got {}",
            chains.len()
        )));
    }
    let n = chains[0].len();
    if n < 4 {
        return Err(Error::Degenerate(format!(
            "need at least 4 draws per chain, got {n}"
        )));
    }
    for c in chains {
        if c.len() != n {
            return Err(Error::DimensionMismatch {
                what: "chain length",
                expected: n,
                actual: c.len(),
            });
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite draw".into()));
        }
        if c.iter().all(|&v| v == c[0]) {
            return Err(Error::Degenerate("chain has zero variance".into()));
        }
    }
    Ok(n)
}

/// Each chain cut into its first and second half (odd middle draw dropped).
fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let n = chains[0].len();
    let h = n / 2;
    chains.iter().flat_map(|c| [&c[..h], &c[n - h..]]).collect()
}

/// Potential scale reduction (split-R̂). Returns `(r_hat, var_plus, W)`.
fn split_rhat_parts(halves: &[&[f64]]) -> (f64, f64, f64) {
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|c| mean(c)).collect();
    let w = halves.iter().map(|c| sample_var(c)).sum::<f64>() / halves.len() as f64;
    let b = n * sample_var(&means);
    let var_plus = (n - 1.0) / n * w + b / n;
    ((var_plus / w).sqrt(), var_plus, w)
}

/// Split-R̂ of raw draws, one vector per chain.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    check_chains(chains)?;
    let halves = split(chains);
    if halves.iter().any(|c| c.iter().all(|&v| v == c[0])) {
        return Err(Error::Degenerate("half-chain has zero variance".into()));
    }
    Ok(split_rhat_parts(&halves).0)
}

/// Multi-chain ESS with Geyer's initial monotone sequence estimator.
fn ess_of(halves: &[&[f64]]) -> f64 {
    let m = halves.len();
    let n = halves[0].len();
    let (_, var_plus, w) = split_rhat_parts(halves);
    let centred: Vec<Vec<f64>> = halves
        .iter()
        .map(|c| {
            let mu = mean(c);
            c.iter().map(|v| v - mu).collect()
        })
        .collect();
    // Biased autocovariance, averaged over chains.
    let mean_acov = |lag: usize| {
        centred
            .iter()
            .map(|d| {
                d[..n - lag]
                    .iter()
                    .zip(&d[lag..])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    / n as f64
            })
            .sum::<f64>()
            / m as f64
    };
    let rho = |t: usize| 1.0 - (w - mean_acov(t)) / var_plus;

    // Sum of consecutive pairs, truncated at the first negative pair and
    // forced to be non-increasing.
    let mut pairs = Vec::new();
    let mut t = 0;
    while t + 1 < n {
        let p = rho(t) + rho(t + 1);
        if p < 0.0 {
            break;
        }
        let p = pairs.last().map_or(p, |&last: &f64| p.min(last));
        pairs.push(p);
        t += 2;
    }
    let tau = (-1.0 + 2.0 * pairs.iter().sum::<f64>()).max(1.0 / ((m * n) as f64).log10());
    (m * n) as f64 / tau
}

/// Rank-normalized (bulk) effective sample size.
pub fn bulk_ess(chains: &[Vec<f64>]) -> Result<f64> {
    check_chains(chains)?;
    let n = chains[0].len();
    let total = n * chains.len();
    let mut order: Vec<(f64, usize)> = chains.iter().flatten().copied().zip(0..).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Average ranks over ties, then the normal scores of Blom's offsets.
    let mut ranks = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && order[j + 1].0 == order[i].0 {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for item in &order[i..=j] {
            ranks[item.1] = r;
        }
        i = j + 1;
    }
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let z: Vec<f64> = ranks
        .iter()
        .map(|r| std_normal.inverse_cdf((r - 0.375) / (total as f64 + 0.25)))
        .collect();
    let z_chains: Vec<Vec<f64>> = z.chunks(n).map(<[f64]>::to_vec).collect();
    let halves = split(&z_chains);
    if halves.iter().any(|c| c.iter().all(|&v| v == c[0])) {
        return Err(Error::Degenerate("half-chain has zero variance".into()));
    }
    Ok(ess_of(&halves))
}

/// `(split_rhat, bulk_ess)` for one parameter.
pub fn diagnostics(chains: &[Vec<f64>]) -> Result<(f64, f64)> {
    Ok((split_rhat(chains)?, bulk_ess(chains)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand_distr::{Distribution, StandardNormal};

    fn iid(seed: u64, m: usize, n: usize) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, 0);
        (0..m)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn constant_chains_are_degenerate() {
        let chains = vec![vec![1.0; 100]; 4];
        assert!(matches!(diagnostics(&chains), Err(Error::Degenerate(_))));
        assert!(matches!(
            diagnostics(&chains[..1]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn iid_chains_look_converged() {
        for seed in 0..5 {
            let (r, ess) = diagnostics(&iid(seed, 4, 3000)).unwrap();
            assert!((0.99..=1.01).contains(&r), "r_hat {r}");
            assert!(ess > 6000.0, "ess {ess}");
        }
    }

    #[test]
    fn offset_chain_is_flagged() {
        let mut chains = iid(3, 4, 3000);
        chains[2].iter_mut().for_each(|v| *v += 10.0);
        assert!(split_rhat(&chains).unwrap() > 1.5);
    }

    #[test]
    fn trending_chains_fail_split_rhat() {
        // every chain drifts; only splitting exposes it
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..1000).map(|i| i as f64 / 100.0).collect())
            .collect();
        assert!(split_rhat(&chains).unwrap() > 1.5);
    }

    #[test]
    fn ar1_ess_matches_theory() {
        // AR(1) with coefficient phi has integrated autocorrelation (1+phi)/(1-phi).
        let phi: f64 = 0.8;
        let mut rng = stream(9, 0);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..20_000)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        x = phi * x + (1.0 - phi * phi).sqrt() * z;
                        x
                    })
                    .collect()
            })
            .collect();
        let want = 80_000.0 * (1.0 - phi) / (1.0 + phi);
        let got = bulk_ess(&chains).unwrap();
        assert!((got / want - 1.0).abs() < 0.15, "{got} vs {want}");
    }

    #[test]
    fn ess_is_rank_based() {
        let chains = iid(4, 4, 500);
        let warped: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.iter().map(|v| v.exp() * 3.0 + 1.0).collect())
            .collect();
        assert_eq!(bulk_ess(&chains).unwrap(), bulk_ess(&warped).unwrap());
    }
}
