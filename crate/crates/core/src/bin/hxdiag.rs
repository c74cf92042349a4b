use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hxdiag::bench::ppc::{band_coverage, posterior_predictive, read_latent_csv, write_bands_csv};
use hxdiag::bench::{self, BenchConfig, Engine, Manifest};
use hxdiag::mcmc::run_mcmc;
use hxdiag::npe::{infer, TrainedPosterior};
use hxdiag::observation::read_record;
use hxdiag::rng::derive_seed;
use hxdiag::{Error, ObservationSeries, PosteriorEnsemble, Result};

/// Heat-exchanger fouling/leakage diagnosis with MCMC and amortized neural
/// posterior estimation.
#[derive(Parser)]
#[command(name = "hxdiag", version)]
struct Cli {
    /// TOML benchmark configuration (built-in defaults when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write scenario realizations (records, ground truth, latent paths).
    GenData(Selection),
    /// Simulate a training set and train the amortized posterior.
    TrainNpe,
    /// Sample the posterior of one record with MCMC.
    RunMcmc(RecordArgs),
    /// Amortized inference for one record from a trained checkpoint.
    Infer {
        #[command(flatten)]
        record: RecordArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Paired evaluation of both engines over the scenario table.
    Bench {
        #[command(flatten)]
        selection: Selection,
        /// Existing checkpoint; a new one is trained when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Engines to run.
        #[arg(long, value_delimiter = ',', default_values = ["mcmc", "sbi"])]
        engines: Vec<EngineArg>,
    },
    /// Posterior predictive quantile bands for one record.
    Ppc {
        #[command(flatten)]
        record: RecordArgs,
        #[arg(long, value_enum, default_value = "mcmc")]
        engine: EngineArg,
        /// Checkpoint for the sbi engine.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Posterior draws used for the bands.
        #[arg(long, default_value_t = 500)]
        draws: usize,
    },
}

#[derive(Args)]
struct Selection {
    /// Scenario names (all when omitted).
    #[arg(long, value_delimiter = ',')]
    scenarios: Vec<String>,
    /// Realizations per scenario; overrides the configuration.
    #[arg(long)]
    realizations: Option<usize>,
}

#[derive(Args)]
struct RecordArgs {
    /// Record CSV as written by gen-data.
    #[arg(long)]
    record: PathBuf,
    /// Use the full MCMC budget (4 x (2000 + 3000)) instead of the configured one.
    #[arg(long)]
    full: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Mcmc,
    Sbi,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Mcmc => Engine::Mcmc,
            EngineArg::Sbi => Engine::Sbi,
        }
    }
}

fn load_config(cli: &Cli) -> Result<BenchConfig> {
    let mut cfg = match &cli.config {
        Some(path) => BenchConfig::load(path)?,
        None => BenchConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn select(cfg: &mut BenchConfig, sel: &Selection) -> Result<Vec<usize>> {
    if let Some(n) = sel.realizations {
        if n == 0 {
            return Err(Error::Config("--realizations must be >= 1".into()));
        }
        cfg.scenarios.iter_mut().for_each(|s| s.n_realizations = n);
    }
    if sel.scenarios.is_empty() {
        return Ok((0..cfg.scenarios.len()).collect());
    }
    sel.scenarios.iter().map(|name| cfg.scenario(name).map(|(k, _)| k)).collect()
}

fn load_checkpoint(path: &Path) -> Result<TrainedPosterior> {
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint {} not found", path.display())));
    }
    TrainedPosterior::load(path)
}

/// Record plus a seed derived from its content.
fn load_record(cfg: &BenchConfig, path: &Path) -> Result<(ObservationSeries, u64)> {
    let (obs, meta) = read_record(path)?;
    if obs.len() != cfg.conditions.horizon {
        return Err(Error::DimensionMismatch {
            what: "record length",
            expected: cfg.conditions.horizon,
            actual: obs.len(),
        });
    }
    let salt = meta.map_or(0, |m| m.seed);
    Ok((obs, derive_seed(cfg.seed, salt)))
}

fn run_engine(
    cfg: &BenchConfig,
    engine: Engine,
    args: &RecordArgs,
    checkpoint: Option<&Path>,
) -> Result<(ObservationSeries, PosteriorEnsemble)> {
    let (obs, seed) = load_record(cfg, &args.record)?;
    let ens = match engine {
        Engine::Mcmc => {
            let mut chain = cfg.budgets.mcmc.chain_config(seed);
            if args.full {
                chain = hxdiag::mcmc::ChainConfig::full(seed);
            }
            run_mcmc(&obs, &cfg.conditions, &cfg.prior, &chain)?
        }
        Engine::Sbi => {
            let path = checkpoint.ok_or_else(|| Error::Config("the sbi engine needs --checkpoint".into()))?;
            let tp = load_checkpoint(path)?;
            infer(&tp, &obs, cfg.budgets.npe_posterior_samples, seed)?
        }
    };
    Ok((obs, ens))
}

fn write_ensemble(out: &Path, prefix: &str, ens: &PosteriorEnsemble, manifest: &mut Manifest) -> Result<()> {
    let samples = out.join(format!("{prefix}_samples.csv"));
    ens.write_samples_csv(std::io::BufWriter::new(std::fs::File::create(&samples)?))?;
    manifest.add(out, &samples, "posterior draws");
    let summary = out.join(format!("{prefix}_summary.json"));
    let body = serde_json::json!({
        "predicted_mode": ens.predicted_mode(),
        "mode_counts": ens.mode_counts,
        "mode_probabilities": ens.mode_probabilities,
        "diagnostics": ens.diagnostics,
        "wall_time": ens.wall_time,
        "simulator_call_count": ens.simulator_call_count,
    });
    std::fs::write(&summary, serde_json::to_string_pretty(&body)? + "\n")?;
    manifest.add(out, &summary, "mode prediction, diagnostics and cost");
    println!(
        "predicted mode: {} (counts {:?}), {:.3} s, {} simulator calls",
        ens.predicted_mode(),
        ens.mode_counts,
        ens.wall_time,
        ens.simulator_call_count
    );
    Ok(())
}

fn train_and_save(cfg: &BenchConfig, out: &Path, manifest: &mut Manifest) -> Result<TrainedPosterior> {
    let (tp, ts) = bench::train_npe(cfg)?;
    let set = out.join("training_set.csv");
    ts.write_csv(std::io::BufWriter::new(std::fs::File::create(&set)?))?;
    manifest.add(out, &set, "NPE training set");
    let ckpt = out.join("npe.json");
    tp.save(&ckpt)?;
    manifest.add(out, &ckpt, "trained NPE checkpoint");
    let mut w = csv::Writer::from_path(out.join("training_history.csv"))?;
    w.write_record(["epoch", "train_loss", "validation_loss"])?;
    let m = &tp.metadata;
    for (i, (t, v)) in m.train_loss_history.iter().zip(&m.validation_loss_history).enumerate() {
        w.write_record([(i + 1).to_string(), format!("{t:?}"), format!("{v:?}")])?;
    }
    w.flush()?;
    manifest.add(out, &out.join("training_history.csv"), "per-epoch losses");
    manifest
        .seeds
        .push(("training_set".into(), bench::training_set_seed(cfg.seed)));
    println!(
        "trained on {} simulations: {} epochs (best {}), validation loss {:.4}, {:.1} s",
        m.simulation_budget, m.epochs, m.best_epoch, m.best_validation_loss, m.wall_time
    );
    Ok(tp)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let out = cli.out.clone();
    std::fs::create_dir_all(&out)?;
    let name = match &cli.command {
        Command::GenData(_) => "gen-data",
        Command::TrainNpe => "train-npe",
        Command::RunMcmc(_) => "run-mcmc",
        Command::Infer { .. } => "infer",
        Command::Bench { .. } => "bench",
        Command::Ppc { .. } => "ppc",
    };
    let mut manifest = Manifest::new(name, cfg.seed);
    match &cli.command {
        Command::GenData(sel) => {
            let ks = select(&mut cfg, sel)?;
            bench::gen_data(&cfg, &ks, &out, &mut manifest)?;
            let n: usize = ks.iter().map(|&k| cfg.scenarios[k].n_realizations).sum();
            println!("wrote {n} records under {}", out.join("data").display());
        }
        Command::TrainNpe => {
            train_and_save(&cfg, &out, &mut manifest)?;
        }
        Command::RunMcmc(args) => {
            let (_, ens) = run_engine(&cfg, Engine::Mcmc, args, None)?;
            write_ensemble(&out, "mcmc", &ens, &mut manifest)?;
        }
        Command::Infer { record, checkpoint } => {
            let (_, ens) = run_engine(&cfg, Engine::Sbi, record, Some(checkpoint))?;
            write_ensemble(&out, "sbi", &ens, &mut manifest)?;
        }
        Command::Bench {
            selection,
            checkpoint,
            engines,
        } => {
            let ks = select(&mut cfg, selection)?;
            let engines: Vec<Engine> = engines.iter().map(|&e| e.into()).collect();
            let tp = if engines.contains(&Engine::Sbi) {
                Some(match checkpoint {
                    Some(path) => load_checkpoint(path)?,
                    None => train_and_save(&cfg, &out, &mut manifest)?,
                })
            } else {
                None
            };
            let report = bench::run_benchmark(&cfg, &ks, &engines, tp.as_ref())?;
            report.write_csvs(&out, &mut manifest)?;
            print!("{}", report.accuracy_table());
            let c = &report.cost;
            if let (Some(s), Some(b)) = (c.speedup, c.break_even_calls) {
                println!("speedup {s:.1}x per call, break-even after {b} calls");
            }
        }
        Command::Ppc {
            record,
            engine,
            checkpoint,
            draws,
        } => {
            let (_, ens) = run_engine(&cfg, (*engine).into(), record, checkpoint.as_deref())?;
            let bands = posterior_predictive(&ens, &cfg.conditions, *draws, derive_seed(cfg.seed, 7))?;
            let stem = record.record.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let latent = record.record.with_file_name(format!("{stem}_latent.csv"));
            let truth = latent.exists().then(|| read_latent_csv(&latent)).transpose()?;
            let path = out.join("ppc.csv");
            write_bands_csv(&bands, truth.as_ref(), &path)?;
            manifest.add(&out, &path, "posterior predictive quantile bands");
            if let Some((f, l)) = &truth {
                println!(
                    "true path inside the 90% band: fouling {:.1}% of steps, leakage {:.1}%",
                    100.0 * band_coverage(&bands.fouling_factor, f, 0, 4),
                    100.0 * band_coverage(&bands.leak_fraction, l, 0, 4)
                );
            }
        }
    }
    manifest.write(&out)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
