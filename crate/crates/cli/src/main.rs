//! Experiment orchestration command line.
//!
//! Subcommands: `gen-world`, `train`, `train-aggregator`, `sweep-p`,
//! `report`, `selftest`. Configuration comes from one TOML file plus
//! repeatable `--set key.path=value` overrides; unknown keys fail fast.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semrec_core::a2po::{compute_lambda, fuse, standardize_group, AdvantagePair, FusionConfig};
use semrec_core::aggregator::UniformWeights;
use semrec_core::config::{load_config, RunConfig};
use semrec_core::evalkit::{hr_at_k, ndcg_at_k, RankedList};
use semrec_core::math::{mean, pop_std};
use semrec_core::run::{
    load_agg_checkpoint, load_world, run_report, run_sweep_p, run_train, run_train_aggregator,
    save_world, RunManifest, TrainMode,
};
use semrec_core::synthworld::generate_world;

#[derive(Parser)]
#[command(name = "semrec", about = "Semantic-aware generative recommendation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to a TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set a2po.judged_fraction=0.05
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, String> {
        let text = match &self.config {
            Some(path) => std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?,
            None => String::new(),
        };
        load_config(&text, &self.sets).map_err(|e| e.to_string())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world into a directory.
    GenWorld {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the generator on an existing world.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// business_only | reward_sum | adv_sum | gate_only | magnitude_only | full
        #[arg(long, default_value = "full")]
        mode: String,
        /// Aggregator checkpoint providing personalized weights; uniform
        /// weights when omitted.
        #[arg(long)]
        aggregator: Option<PathBuf>,
        /// Continue from the newest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Train the preference aggregator on an existing world.
    TrainAggregator {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired sweep over the judged fraction p.
    SweepP {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated p values; 0 and 1 are always included.
        #[arg(long, value_delimiter = ',')]
        p: Vec<f64>,
        #[arg(long)]
        aggregator: Option<PathBuf>,
    },
    /// Consolidate finished runs; the first is the lift baseline.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Run directories; the first is the baseline.
        runs: Vec<PathBuf>,
    },
    /// Run the built-in invariant suite.
    Selftest,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn weights_from(
    aggregator: &Option<PathBuf>,
) -> Result<Box<dyn semrec_core::aggregator::WeightProvider>, String> {
    match aggregator {
        Some(path) => Ok(Box::new(load_agg_checkpoint(path).map_err(|e| e.to_string())?)),
        None => Ok(Box::new(UniformWeights)),
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::GenWorld { config, out } => {
            let cfg = config.load()?;
            let world = generate_world(&cfg.world).map_err(|e| e.to_string())?;
            save_world(&world, &out).map_err(|e| e.to_string())?;
            let manifest = RunManifest {
                kind: "gen-world".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                seed: cfg.world.seed,
                mode: None,
                config_toml: cfg.to_toml(),
                created_unix: 0,
                artifacts: vec![
                    "catalog.txt".into(),
                    "users.txt".into(),
                    "episodes.txt".into(),
                    "world.toml".into(),
                ],
            };
            manifest.save(&out).map_err(|e| e.to_string())?;
            println!(
                "world: {} items, {} users, {} episodes -> {}",
                world.catalog.len(),
                world.users.len(),
                world.episodes.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train { config, world, out, mode, aggregator, resume } => {
            let cfg = config.load()?;
            let mode = TrainMode::parse(&mode).ok_or_else(|| format!("unknown mode '{mode}'"))?;
            let world = load_world(&world).map_err(|e| e.to_string())?;
            let weights = weights_from(&aggregator)?;
            let outcome = run_train(&cfg, mode, &world, weights.as_ref(), &out, resume)
                .map_err(|e| e.to_string())?;
            let k = *cfg.eval.ks.iter().max().unwrap_or(&10);
            println!(
                "trained {} epochs ({}); hr@{k}={} ndcg@{k}={}",
                outcome.epochs_run,
                mode.as_str(),
                outcome.final_report.metric(None, "hr", k).unwrap_or(0.0),
                outcome.final_report.metric(None, "ndcg", k).unwrap_or(0.0),
            );
            Ok(())
        }
        Command::TrainAggregator { config, world, out } => {
            let cfg = config.load()?;
            let world = load_world(&world).map_err(|e| e.to_string())?;
            let outcome = run_train_aggregator(&cfg, &world, &out).map_err(|e| e.to_string())?;
            println!(
                "aggregator: heldout pairwise accuracy {}, argmax match {}",
                outcome.heldout_accuracy, outcome.argmax_match
            );
            Ok(())
        }
        Command::SweepP { config, world, out, p, aggregator } => {
            let cfg = config.load()?;
            let world = load_world(&world).map_err(|e| e.to_string())?;
            let weights = weights_from(&aggregator)?;
            let rows =
                run_sweep_p(&cfg, &world, weights.as_ref(), &p, &out).map_err(|e| e.to_string())?;
            for r in &rows {
                println!(
                    "p={}: hr={} ndcg={} lift_fraction(hr)={:?}",
                    r.p, r.hr, r.ndcg, r.hr_lift_fraction
                );
            }
            Ok(())
        }
        Command::Report { out, runs } => {
            run_report(&runs, &out).map_err(|e| e.to_string())?;
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Selftest => selftest(),
    }
}

fn check(name: &str, ok: bool, detail: String) -> Result<(), String> {
    if ok {
        println!("selftest {name}: pass");
        Ok(())
    } else {
        Err(format!("selftest {name}: FAIL ({detail})"))
    }
}

/// Quick invariant suite over the fusion rule, standardization, and metrics;
/// the full property suite lives in the library tests.
fn selftest() -> Result<(), String> {
    use rand::Rng;
    let mut rng = semrec_core::rngutil::rng(0xc11, &[1]);

    let mut bound_ok = true;
    let mut gate_ok = true;
    let fusion = FusionConfig::default();
    for _ in 0..100_000 {
        let a_biz = rng.gen_range(-10.0..10.0);
        let a_sem = rng.gen_range(-10.0..10.0);
        let f = fuse(AdvantagePair { a_biz, a_sem: Some(a_sem) }, &fusion);
        bound_ok &= (f.lambda * a_sem).abs() <= a_biz.abs();
        if (a_biz > 0.0) != (a_sem > 0.0) || a_biz == 0.0 || a_sem == 0.0 {
            gate_ok &= f.lambda == 0.0;
        }
    }
    check("fusion-bound", bound_ok, "|lambda*a_sem| exceeded |a_biz|".into())?;
    check("sign-gate", gate_ok, "gate stayed open on an inconsistent pair".into())?;
    check(
        "lambda-values",
        (compute_lambda(2.0, 0.5, 1e-8) - 0.25).abs() < 1e-7
            && compute_lambda(1.0, -0.5, 1e-8) == 0.0,
        "hand values of the dual-consistency rule".into(),
    )?;

    let mut std_ok = true;
    for _ in 0..10_000 {
        let g = rng.gen_range(2..=64);
        let xs: Vec<f64> = (0..g).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let a = standardize_group(&xs, 1e-8).map_err(|e| e.to_string())?;
        std_ok &= mean(&a).abs() < 1e-12;
        let sigma = pop_std(&xs);
        if sigma > 0.0 {
            std_ok &= (pop_std(&a) - 1.0 / (1.0 + 1e-8 / sigma)).abs() < 1e-6;
        }
    }
    check("standardization-moments", std_ok, "group moments off".into())?;

    let list = RankedList { items: (0..12).collect(), approximate: false };
    let metrics_ok = hr_at_k(&list, 0, 10).map_err(|e| e.to_string())? == 1.0
        && hr_at_k(&list, 10, 10).map_err(|e| e.to_string())? == 0.0
        && ndcg_at_k(&list, 2, 10).map_err(|e| e.to_string())? == 0.5;
    check("ranking-metrics", metrics_ok, "HR/NDCG hand values".into())?;
    println!("selftest: all checks passed");
    Ok(())
}
