//! Paired MCMC/NPE comparison on a few realizations per scenario, with a
//! small training budget. Writes CSVs to the directory given as the first
//! argument (default `bench-out`).

use std::path::PathBuf;

use hxdiag::bench::{run_benchmark, train_npe, BenchConfig, Engine, Manifest};

fn main() -> hxdiag::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "bench-out".into()));
    let mut cfg = BenchConfig::default();
    cfg.budgets.npe_simulations = 1000;
    cfg.scenarios.iter_mut().for_each(|s| s.n_realizations = 2);
    let (tp, _) = train_npe(&cfg)?;
    let scenarios: Vec<usize> = (0..cfg.scenarios.len()).collect();
    let report = run_benchmark(&cfg, &scenarios, &[Engine::Mcmc, Engine::Sbi], Some(&tp))?;
    std::fs::create_dir_all(&out)?;
    let mut manifest = Manifest::new("example", cfg.seed);
    report.write_csvs(&out, &mut manifest)?;
    manifest.write(&out)?;
    print!("{}", report.accuracy_table());
    println!("{:#?}", report.cost);
    Ok(())
}
