//! Run orchestration and persistence.
//!
//! A run owns one directory with `manifest.json`, `config.toml`,
//! `checkpoints/`, `logs/`, and `reports/`, all text-based for diffability.
//! Every stochastic choice derives from (run seed, epoch, episode index), so
//! a run resumed from any epoch checkpoint replays the remaining epochs
//! bit-identically.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::a2po::{a2po_train_step, A2poConfig, A2poError, FusionMode, StepDiagnostics};
use crate::aggregator::{
    aggregator_train_step, argmax_weight_match, build_preference_pairs, pairwise_accuracy,
    AggregatorError, AggregatorPolicy, UniformWeights, WeightProvider,
};
use crate::catalog::{Catalog, CatalogError};
use crate::config::{ConfigError, RunConfig};
use crate::evalkit::{
    evaluate_policy, lift_csv, report_csv, stratified_lift, EvalError, StratifiedReport,
};
use crate::features::feature_len;
use crate::genpolicy::{GeneratorPolicy, PolicyConfig, PolicyError};
use crate::judge::OracleScorer;
use crate::rngutil;
use crate::synthworld::{load_episodes, load_users, save_episodes, save_users, World, WorldError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("io error at {0}: {1}")]
    Io(PathBuf, String),
    #[error("no world found in {0} (run gen-world first)")]
    MissingWorld(PathBuf),
    #[error("checkpoint does not match this run: {0}")]
    ResumeMismatch(String),
    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    A2po(#[from] A2poError),
    #[error(transparent)]
    Aggregator(#[from] AggregatorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |e| RunError::Io(path.to_path_buf(), e.to_string())
}

/// What kind of feedback drives generator training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Business reward only (identical to any fusion mode at p = 0).
    BusinessOnly,
    Fusion(FusionMode),
}

impl TrainMode {
    pub fn parse(s: &str) -> Option<TrainMode> {
        Some(match s {
            "business_only" => TrainMode::BusinessOnly,
            "reward_sum" => TrainMode::Fusion(FusionMode::RewardSum),
            "adv_sum" => TrainMode::Fusion(FusionMode::AdvSum),
            "gate_only" => TrainMode::Fusion(FusionMode::GateOnly),
            "magnitude_only" => TrainMode::Fusion(FusionMode::MagnitudeOnly),
            "full" => TrainMode::Fusion(FusionMode::Full),
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::BusinessOnly => "business_only",
            TrainMode::Fusion(FusionMode::RewardSum) => "reward_sum",
            TrainMode::Fusion(FusionMode::AdvSum) => "adv_sum",
            TrainMode::Fusion(FusionMode::GateOnly) => "gate_only",
            TrainMode::Fusion(FusionMode::MagnitudeOnly) => "magnitude_only",
            TrainMode::Fusion(FusionMode::Full) => "full",
        }
    }

    /// Resolves the effective optimizer config: business-only is the λ≡0
    /// path, i.e. full fusion with p forced to 0.
    pub fn apply(&self, base: &A2poConfig) -> A2poConfig {
        let mut cfg = base.clone();
        match self {
            TrainMode::BusinessOnly => {
                cfg.fusion.mode = FusionMode::Full;
                cfg.judged_fraction = 0.0;
            }
            TrainMode::Fusion(mode) => cfg.fusion.mode = *mode,
        }
        cfg
    }
}

/// Everything needed to re-execute a run bit-identically, plus provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub version: String,
    pub seed: u64,
    pub mode: Option<String>,
    pub config_toml: String,
    pub created_unix: u64,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    fn new(kind: &str, seed: u64, mode: Option<&str>, config_toml: String) -> Self {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        RunManifest {
            kind: kind.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            mode: mode.map(str::to_string),
            config_toml,
            created_unix,
            artifacts: Vec::new(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), RunError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| RunError::Parse { what: "manifest", detail: e.to_string() })?;
        fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn load(dir: &Path) -> Result<Self, RunError> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text)
            .map_err(|e| RunError::Parse { what: "manifest", detail: e.to_string() })
    }
}

// ---------------------------------------------------------------------------
// World persistence
// ---------------------------------------------------------------------------

pub fn save_world(world: &World, dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let write = |name: &str, body: Vec<u8>| -> Result<(), RunError> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))
    };
    let mut buf = Vec::new();
    world.catalog.save(&mut buf)?;
    write("catalog.txt", buf)?;
    let mut buf = Vec::new();
    save_users(&world.users, &mut buf)?;
    write("users.txt", buf)?;
    let mut buf = Vec::new();
    save_episodes(world, &mut buf)?;
    write("episodes.txt", buf)?;
    let toml = toml::to_string_pretty(&world.config)
        .map_err(|e| RunError::Parse { what: "world config", detail: e.to_string() })?;
    write("world.toml", toml.into_bytes())
}

pub fn load_world(dir: &Path) -> Result<World, RunError> {
    let path = dir.join("world.toml");
    if !path.exists() {
        return Err(RunError::MissingWorld(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let config = toml::from_str(&text)
        .map_err(|e| RunError::Parse { what: "world config", detail: e.to_string() })?;
    let open = |name: &str| -> Result<BufReader<fs::File>, RunError> {
        let path = dir.join(name);
        Ok(BufReader::new(fs::File::open(&path).map_err(io_err(&path))?))
    };
    let catalog = Catalog::load(open("catalog.txt")?)?;
    let users = load_users(open("users.txt")?)?;
    let episodes = load_episodes(open("episodes.txt")?, &users)?;
    Ok(World { config, catalog, users, episodes })
}

// ---------------------------------------------------------------------------
// Splits and ordering
// ---------------------------------------------------------------------------

const SPLIT_STREAM: u64 = 0xe7a1;
const SHUFFLE_STREAM: u64 = 0x5f1e;
const POLICY_INIT_STREAM: u64 = 0x7e0;
const AGG_INIT_STREAM: u64 = 0xa99;

/// Hash-based train/eval split: stable under episode count and seed.
pub fn train_eval_split(n_episodes: usize, eval_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for i in 0..n_episodes {
        if rngutil::unit_f64(rngutil::mix(seed, &[SPLIT_STREAM, i as u64])) < eval_fraction {
            eval.push(i);
        } else {
            train.push(i);
        }
    }
    (train, eval)
}

/// Deterministic per-epoch visit order (Fisher–Yates).
pub fn epoch_order(train: &[usize], epoch: usize, seed: u64) -> Vec<usize> {
    use rand::Rng;
    let mut order = train.to_vec();
    let mut rng = rngutil::rng(seed, &[SHUFFLE_STREAM, epoch as u64]);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    order
}

// ---------------------------------------------------------------------------
// Checkpoints (text; f64 Display round-trips exactly)
// ---------------------------------------------------------------------------

fn write_vec(w: &mut impl Write, name: &str, v: &[f64]) -> std::io::Result<()> {
    write!(w, "{name}=")?;
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            write!(w, " ")?;
        }
        write!(w, "{x}")?;
    }
    writeln!(w)
}

fn parse_vec(line: &str, name: &str) -> Result<Vec<f64>, RunError> {
    let body = line
        .strip_prefix(&format!("{name}="))
        .ok_or_else(|| RunError::Parse { what: "checkpoint", detail: format!("expected {name}= line") })?;
    body.split_whitespace()
        .map(|t| {
            t.parse().map_err(|_| RunError::Parse {
                what: "checkpoint",
                detail: format!("bad float '{t}'"),
            })
        })
        .collect()
}

pub fn save_gen_checkpoint(policy: &GeneratorPolicy, epoch: usize, path: &Path) -> Result<(), RunError> {
    let mut buf = Vec::new();
    (|| -> std::io::Result<()> {
        writeln!(buf, "semrec-gen-checkpoint v1")?;
        writeln!(buf, "epoch={epoch}")?;
        write_vec(&mut buf, "theta", policy.theta())?;
        write_vec(&mut buf, "theta_old", policy.theta_old())
    })()
    .map_err(io_err(path))?;
    fs::write(path, buf).map_err(io_err(path))
}

pub fn load_gen_checkpoint(policy: &mut GeneratorPolicy, path: &Path) -> Result<usize, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != "semrec-gen-checkpoint v1" {
        return Err(RunError::ResumeMismatch(format!("bad header '{header}'")));
    }
    let epoch_line = lines.next().unwrap_or("");
    let epoch: usize = epoch_line
        .strip_prefix("epoch=")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| RunError::Parse { what: "checkpoint", detail: "bad epoch line".into() })?;
    let theta = parse_vec(lines.next().unwrap_or(""), "theta")?;
    let theta_old = parse_vec(lines.next().unwrap_or(""), "theta_old")?;
    let want = GeneratorPolicy::param_count(policy.config());
    if theta.len() != want || theta_old.len() != want {
        return Err(RunError::ResumeMismatch(format!(
            "checkpoint has {} parameters, this run needs {want}",
            theta.len()
        )));
    }
    policy.set_params(theta, theta_old);
    Ok(epoch)
}

pub fn save_agg_checkpoint(policy: &AggregatorPolicy, path: &Path) -> Result<(), RunError> {
    let mut buf = Vec::new();
    (|| -> std::io::Result<()> {
        writeln!(buf, "semrec-agg-checkpoint v1")?;
        writeln!(buf, "feature_len={} dims={} k={}", policy.feature_len(), policy.dims(), policy.k())?;
        write_vec(&mut buf, "psi", policy.psi())?;
        write_vec(&mut buf, "psi_ref", policy.psi_ref())
    })()
    .map_err(io_err(path))?;
    fs::write(path, buf).map_err(io_err(path))
}

pub fn load_agg_checkpoint(path: &Path) -> Result<AggregatorPolicy, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    if lines.next().unwrap_or("") != "semrec-agg-checkpoint v1" {
        return Err(RunError::ResumeMismatch("bad aggregator checkpoint header".into()));
    }
    let meta = lines.next().unwrap_or("");
    let mut feature_len = None;
    let mut dims = None;
    let mut k = None;
    for part in meta.split_whitespace() {
        if let Some((key, val)) = part.split_once('=') {
            match key {
                "feature_len" => feature_len = val.parse().ok(),
                "dims" => dims = val.parse().ok(),
                "k" => k = val.parse().ok(),
                _ => {}
            }
        }
    }
    let (feature_len, dims, k) = match (feature_len, dims, k) {
        (Some(f), Some(d), Some(k)) => (f, d, k),
        _ => return Err(RunError::Parse { what: "checkpoint", detail: "bad metadata line".into() }),
    };
    let psi = parse_vec(lines.next().unwrap_or(""), "psi")?;
    let psi_ref = parse_vec(lines.next().unwrap_or(""), "psi_ref")?;
    Ok(AggregatorPolicy::from_parts(feature_len, dims, k, psi, psi_ref))
}

// ---------------------------------------------------------------------------
// Generator training run
// ---------------------------------------------------------------------------

fn format_diag(step: usize, d: &StepDiagnostics) -> String {
    let cr = d.consistency_rate.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
    format!(
        "{step},{},{},{},{cr},{},{}",
        d.objective, d.mean_lambda, d.gate_close_rate, d.judged_fraction, d.grad_norm
    )
}

pub struct TrainOutcome {
    pub final_report: StratifiedReport,
    pub epochs_run: usize,
    pub log_path: PathBuf,
}

/// Trains the generator on a world and persists checkpoints, logs, and
/// evaluation reports under `out_dir`. With `resume`, picks up from the
/// newest epoch checkpoint and replays the remaining epochs exactly as an
/// uninterrupted run would.
pub fn run_train(
    config: &RunConfig,
    mode: TrainMode,
    world: &World,
    weights: &dyn WeightProvider,
    out_dir: &Path,
    resume: bool,
) -> Result<TrainOutcome, RunError> {
    let seed = config.run.seed;
    let a2po_cfg = mode.apply(&config.a2po);
    a2po_cfg.validate()?;
    let codebook = world.codebook(config.policy.levels, config.policy.codebook_size)?;
    let n_tags = world.config.n_context_tags;
    let policy_cfg = PolicyConfig {
        feature_len: feature_len(world.catalog.feature_dim(), n_tags),
        state_dim: config.policy.state_dim,
        levels: config.policy.levels,
        codebook_size: config.policy.codebook_size,
    };
    let mut policy = GeneratorPolicy::new(
        policy_cfg,
        config.policy.init_scale,
        &mut rngutil::rng(seed, &[POLICY_INIT_STREAM]),
    );
    let scorer = OracleScorer::new(n_tags);
    let (train_idx, eval_idx) =
        train_eval_split(world.episodes.len(), config.eval.eval_fraction, seed);

    let ckpt_dir = out_dir.join("checkpoints");
    let log_dir = out_dir.join("logs");
    let report_dir = out_dir.join("reports");
    for d in [out_dir, &ckpt_dir, &log_dir, &report_dir] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }

    let mut start_epoch = 0usize;
    let log_path = log_dir.join("train.csv");
    let mut log_rows: Vec<String> = Vec::new();
    if resume {
        if let Some((epoch, path)) = latest_checkpoint(&ckpt_dir)? {
            load_gen_checkpoint(&mut policy, &path)?;
            start_epoch = epoch + 1;
            if log_path.exists() {
                let text = fs::read_to_string(&log_path).map_err(io_err(&log_path))?;
                for line in text.lines().skip(1) {
                    let step: usize = line
                        .split(',')
                        .next()
                        .and_then(|s| s.parse().ok())
                        .unwrap_or(usize::MAX);
                    if step <= epoch {
                        log_rows.push(line.to_string());
                    }
                }
            }
        }
    }

    let mut manifest =
        RunManifest::new("train", seed, Some(mode.as_str()), config.to_toml());
    let epochs = config.run.epochs;
    for epoch in start_epoch..epochs {
        let order = epoch_order(&train_idx, epoch, seed);
        let diag = a2po_train_step(
            &mut policy,
            world,
            &codebook,
            &scorer,
            weights,
            &config.business,
            &a2po_cfg,
            epoch,
            &order,
            seed,
        )?;
        log_rows.push(format_diag(epoch, &diag));
        write_train_log(&log_path, &log_rows)?;
        save_gen_checkpoint(&policy, epoch, &ckpt_dir.join(format!("epoch_{epoch}.txt")))?;
        let is_last = epoch + 1 == epochs;
        if is_last || (config.eval.eval_every > 0 && (epoch + 1) % config.eval.eval_every == 0) {
            let report = evaluate_policy(
                &policy,
                world,
                &codebook,
                &eval_idx,
                &config.eval.ks,
                config.policy.enumeration_budget,
                seed,
            )?;
            let name = format!("eval_epoch_{epoch}.csv");
            let path = report_dir.join(&name);
            fs::write(&path, report_csv(&report)).map_err(io_err(&path))?;
            manifest.artifacts.push(format!("reports/{name}"));
        }
    }

    // final evaluation (also covers the epochs == start_epoch resume no-op)
    let final_report = evaluate_policy(
        &policy,
        world,
        &codebook,
        &eval_idx,
        &config.eval.ks,
        config.policy.enumeration_budget,
        seed,
    )?;
    let report_path = report_dir.join("report.csv");
    fs::write(&report_path, report_csv(&final_report)).map_err(io_err(&report_path))?;
    let json_path = report_dir.join("report.json");
    let json = serde_json::to_string_pretty(&final_report)
        .map_err(|e| RunError::Parse { what: "report", detail: e.to_string() })?;
    fs::write(&json_path, json).map_err(io_err(&json_path))?;
    manifest.artifacts.extend([
        "logs/train.csv".into(),
        "reports/report.csv".into(),
        "reports/report.json".into(),
    ]);
    manifest.save(out_dir)?;
    fs::write(out_dir.join("config.toml"), config.to_toml())
        .map_err(io_err(&out_dir.join("config.toml")))?;
    Ok(TrainOutcome { final_report, epochs_run: epochs.saturating_sub(start_epoch), log_path })
}

fn write_train_log(path: &Path, rows: &[String]) -> Result<(), RunError> {
    let mut body = String::from(
        "step,objective,mean_lambda,gate_close_rate,consistency_rate,judged_fraction,grad_norm\n",
    );
    for r in rows {
        body.push_str(r);
        body.push('\n');
    }
    fs::write(path, body).map_err(io_err(path))
}

fn latest_checkpoint(ckpt_dir: &Path) -> Result<Option<(usize, PathBuf)>, RunError> {
    let mut best: Option<(usize, PathBuf)> = None;
    if !ckpt_dir.exists() {
        return Ok(None);
    }
    for entry in fs::read_dir(ckpt_dir).map_err(io_err(ckpt_dir))? {
        let entry = entry.map_err(io_err(ckpt_dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(num) = name.strip_prefix("epoch_").and_then(|s| s.strip_suffix(".txt")) {
            if let Ok(epoch) = num.parse::<usize>() {
                if best.as_ref().map_or(true, |(b, _)| epoch > *b) {
                    best = Some((epoch, entry.path()));
                }
            }
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Aggregator training run
// ---------------------------------------------------------------------------

pub struct AggregatorOutcome {
    pub policy: AggregatorPolicy,
    pub heldout_accuracy: f64,
    pub argmax_match: f64,
}

/// Builds preference pairs from the world, trains the aggregator, and logs
/// held-out pairwise accuracy per epoch.
pub fn run_train_aggregator(
    config: &RunConfig,
    world: &World,
    out_dir: &Path,
) -> Result<AggregatorOutcome, RunError> {
    let seed = config.run.seed;
    let n_tags = world.config.n_context_tags;
    let scorer = OracleScorer::new(n_tags);
    let dims = if n_tags > 0 { 4 } else { 3 };
    let agg = &config.aggregator;
    let pairs = build_preference_pairs(
        world,
        &scorer,
        agg.n_pairs,
        rngutil::mix(seed, &[agg.pair_seed]),
    );
    let n_held = ((pairs.len() as f64) * agg.heldout_fraction).round() as usize;
    if pairs.len() <= n_held || pairs.is_empty() {
        return Err(AggregatorError::EmptyPairSet.into());
    }
    let (train, held) = pairs.split_at(pairs.len() - n_held);

    let mut policy = AggregatorPolicy::new(
        feature_len(world.catalog.feature_dim(), n_tags),
        dims,
        agg.k,
        agg.init_scale,
        &mut rngutil::rng(seed, &[AGG_INIT_STREAM]),
    );
    let log_dir = out_dir.join("logs");
    let ckpt_dir = out_dir.join("checkpoints");
    for d in [out_dir, &log_dir, &ckpt_dir] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let mut log = String::from("epoch,mean_reward,mean_kl,grad_norm,heldout_accuracy\n");
    let train_cfg = agg.train_config();
    for epoch in 0..agg.epochs {
        let diag = aggregator_train_step(&mut policy, world, &scorer, train, &train_cfg, epoch, seed)?;
        let acc = pairwise_accuracy(&policy, world, &scorer, held)?;
        log.push_str(&format!(
            "{epoch},{},{},{},{acc}\n",
            diag.mean_reward, diag.mean_kl, diag.grad_norm
        ));
    }
    let log_path = log_dir.join("aggregator.csv");
    fs::write(&log_path, &log).map_err(io_err(&log_path))?;
    let mut pair_buf = Vec::new();
    crate::aggregator::save_pairs(&pairs, world, &mut pair_buf)?;
    let pair_path = out_dir.join("pairs.txt");
    fs::write(&pair_path, pair_buf).map_err(io_err(&pair_path))?;
    save_agg_checkpoint(&policy, &ckpt_dir.join("aggregator.txt"))?;
    let heldout_accuracy = pairwise_accuracy(&policy, world, &scorer, held)?;
    let argmax_match = argmax_weight_match(&policy, world);
    let mut manifest = RunManifest::new("train-aggregator", seed, None, config.to_toml());
    manifest.artifacts =
        vec!["logs/aggregator.csv".into(), "checkpoints/aggregator.txt".into(), "pairs.txt".into()];
    manifest.save(out_dir)?;
    Ok(AggregatorOutcome { policy, heldout_accuracy, argmax_match })
}

// ---------------------------------------------------------------------------
// p-sweep and report consolidation
// ---------------------------------------------------------------------------

pub struct SweepRow {
    pub p: f64,
    pub hr: f64,
    pub ndcg: f64,
    /// Fraction of the p = 1 lift retained, per metric; None when the full
    /// run shows no lift over the baseline.
    pub hr_lift_fraction: Option<f64>,
    pub ndcg_lift_fraction: Option<f64>,
}

/// Paired sweep over the judged fraction p: every run shares the world,
/// seed, and episode visit order, so p = 0 is bit-identical to the
/// business-only baseline and differences are attributable to judging alone.
pub fn run_sweep_p(
    config: &RunConfig,
    world: &World,
    weights: &dyn WeightProvider,
    p_values: &[f64],
    out_dir: &Path,
) -> Result<Vec<SweepRow>, RunError> {
    let mut ps: Vec<f64> = p_values.to_vec();
    for anchor in [0.0, 1.0] {
        if !ps.iter().any(|&p| p == anchor) {
            ps.push(anchor);
        }
    }
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    let k = *config.eval.ks.iter().max().unwrap_or(&10);
    let mut measured: Vec<(f64, f64, f64)> = Vec::new();
    for &p in &ps {
        let mut cfg = config.clone();
        cfg.a2po.judged_fraction = p;
        let dir = out_dir.join(format!("p_{p}"));
        let outcome =
            run_train(&cfg, TrainMode::Fusion(FusionMode::Full), world, weights, &dir, false)?;
        let hr = outcome.final_report.metric(None, "hr", k).unwrap_or(0.0);
        let ndcg = outcome.final_report.metric(None, "ndcg", k).unwrap_or(0.0);
        measured.push((p, hr, ndcg));
    }
    let base = measured.iter().find(|(p, _, _)| *p == 0.0).copied().unwrap();
    let full = measured.iter().find(|(p, _, _)| *p == 1.0).copied().unwrap();
    let frac = |m: f64, b: f64, f: f64| {
        let denom = f - b;
        if denom <= 0.0 {
            None
        } else {
            Some((m - b) / denom)
        }
    };
    let rows: Vec<SweepRow> = measured
        .iter()
        .map(|&(p, hr, ndcg)| SweepRow {
            p,
            hr,
            ndcg,
            hr_lift_fraction: frac(hr, base.1, full.1),
            ndcg_lift_fraction: frac(ndcg, base.2, full.2),
        })
        .collect();
    let mut csv = format!("p,hr@{k},ndcg@{k},hr_lift_fraction,ndcg_lift_fraction\n");
    for r in &rows {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.p,
            r.hr,
            r.ndcg,
            fmt(r.hr_lift_fraction),
            fmt(r.ndcg_lift_fraction)
        ));
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let path = out_dir.join("sweep.csv");
    fs::write(&path, csv).map_err(io_err(&path))?;
    Ok(rows)
}

/// Joins completed runs: the first directory is the baseline; every other
/// run gets a stratified lift table against it. Writes `consolidated.csv`
/// plus per-treatment lift CSVs into `out_dir`.
pub fn run_report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<(), RunError> {
    if run_dirs.is_empty() {
        return Err(RunError::Parse { what: "report", detail: "no run directories given".into() });
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let load = |dir: &Path| -> Result<StratifiedReport, RunError> {
        let path = dir.join("reports").join("report.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text)
            .map_err(|e| RunError::Parse { what: "report", detail: e.to_string() })
    };
    let baseline = load(&run_dirs[0])?;
    let mut consolidated = String::from("run,level,metric,k,count,value\n");
    for dir in run_dirs {
        let rep = load(dir)?;
        let label = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for line in report_csv(&rep).lines().skip(1) {
            consolidated.push_str(&format!("{label},{line}\n"));
        }
        if dir != &run_dirs[0] {
            let lift = stratified_lift(&rep, &baseline)?;
            let path = out_dir.join(format!("lift_{label}.csv"));
            fs::write(&path, lift_csv(&lift)).map_err(io_err(&path))?;
        }
    }
    let path = out_dir.join("consolidated.csv");
    fs::write(&path, consolidated).map_err(io_err(&path))?;
    Ok(())
}

/// Convenience: the uniform-weights provider used when no trained
/// aggregator checkpoint is supplied.
pub fn default_weights() -> UniformWeights {
    UniformWeights
}
