//! Acceptance gate for the toolkit: exact fusion-rule invariants, gradient
//! and probability checks, metric oracles, and directional desk-scale
//! training experiments. Each criterion prints one pass/fail line.
//!
//! The experiment-backed criteria (5, 6, 8, 10) share one synthetic world
//! and run inside a single test so the trained runs are reused across them.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use semrec_core::a2po::{compute_lambda, fuse, standardize_group, AdvantagePair, FusionConfig};
use semrec_core::aggregator::AggregatorPolicy;
use semrec_core::catalog::{assign_sids, Catalog, Item};
use semrec_core::config::RunConfig;
use semrec_core::evalkit::{hr_at_k, ndcg_at_k, RankedList, StratifiedReport};
use semrec_core::features::context_features;
use semrec_core::genpolicy::{GeneratorPolicy, PolicyConfig, Under};
use semrec_core::judge::{pair_auc, point_acc, AspectScores, GoldPair};
use semrec_core::math::{mean, pop_std};
use semrec_core::rngutil;
use semrec_core::config::load_config;
use semrec_core::run::{run_train, run_train_aggregator, RunManifest, TrainMode};
use semrec_core::synthworld::{generate_world, BusinessMode, LatentMode, World, WorldConfig};

fn criterion(n: usize, name: &str, ok: bool, detail: &str) {
    if ok {
        println!("acceptance criterion {n} ({name}): pass");
    } else {
        println!("acceptance criterion {n} ({name}): FAIL ({detail})");
        panic!("acceptance criterion {n} ({name}) failed: {detail}");
    }
}

// ---------------------------------------------------------------------------
// Criterion 1: fusion exactness
// ---------------------------------------------------------------------------

#[test]
fn fusion_exactness() {
    let start = Instant::now();
    let mut rng = rngutil::rng(0xacc, &[1]);
    let config = FusionConfig::default();
    let mut bound_violations = 0usize;
    let mut gate_leaks = 0usize;
    for _ in 0..1_000_000 {
        let a_biz: f64 = rng.gen_range(-10.0..10.0);
        let a_sem: f64 = rng.gen_range(-10.0..10.0);
        let f = fuse(AdvantagePair { a_biz, a_sem: Some(a_sem) }, &config);
        if (f.lambda * a_sem).abs() > a_biz.abs() {
            bound_violations += 1;
        }
        if (a_biz > 0.0) != (a_sem > 0.0) && f.lambda != 0.0 {
            gate_leaks += 1;
        }
        debug_assert_eq!(f.a_fused, a_biz + f.lambda * a_sem);
    }
    let hand_ok = (compute_lambda(2.0, 0.5, 1e-8) - 0.25).abs() < 1e-7
        && compute_lambda(1.0, -0.5, 1e-8) == 0.0
        && compute_lambda(0.0, 1.0, 1e-8) == 0.0;
    let elapsed = start.elapsed().as_secs_f64();
    criterion(
        1,
        "fusion exactness",
        bound_violations == 0 && gate_leaks == 0 && hand_ok && elapsed < 5.0,
        &format!(
            "bound violations {bound_violations}, gate leaks {gate_leaks}, \
             hand values ok {hand_ok}, elapsed {elapsed:.2}s"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: group standardization moments
// ---------------------------------------------------------------------------

#[test]
fn standardization_moments() {
    let start = Instant::now();
    let guard = 1e-8;
    let mut rng = rngutil::rng(0xacc, &[2]);
    let mut ok = true;
    let mut detail = String::new();
    for i in 0..100_000 {
        let g = rng.gen_range(2..=64usize);
        let xs: Vec<f64> = if i % 7 == 0 {
            vec![rng.gen_range(-5.0..5.0); g]
        } else {
            (0..g).map(|_| rng.gen_range(-5.0..5.0)).collect()
        };
        let a = standardize_group(&xs, guard).unwrap();
        let sigma = pop_std(&xs);
        if sigma == 0.0 {
            if a.iter().any(|&v| v != 0.0) {
                ok = false;
                detail = format!("degenerate group {i} not exactly zero");
                break;
            }
            continue;
        }
        let m = mean(&a).abs();
        let s = (pop_std(&a) - sigma / (sigma + guard)).abs();
        if m > 1e-12 || s > 1e-6 {
            ok = false;
            detail = format!("group {i}: |mean|={m:e}, std error={s:e}");
            break;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 10.0 {
        ok = false;
        detail = format!("elapsed {elapsed:.2}s");
    }
    criterion(2, "standardization moments", ok, &detail);
}

// ---------------------------------------------------------------------------
// Criterion 3: gradient fidelity (generator and aggregator)
// ---------------------------------------------------------------------------

/// 3 roots x 2 subs x 2 residuals = 12 items; small enough for cheap FD.
fn fd_catalog() -> Catalog {
    let mut items = Vec::new();
    let mut id = 0u32;
    for root in 0..3u16 {
        for sub in 0..2u16 {
            for residual in 0..2u32 {
                items.push(Item {
                    item_id: id,
                    root_category: root,
                    sub_category: sub,
                    residual_index: residual,
                    feature_vector: vec![0.1 * id as f64, -0.2, 0.5],
                });
                id += 1;
            }
        }
    }
    Catalog::new(items).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central finite differences against the analytic gradient; returns the
/// worst relative error over all coordinates.
fn fd_check(grad: &[f64], mut objective: impl FnMut(usize, f64) -> f64) -> f64 {
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for (k, &g) in grad.iter().enumerate() {
        let fd = (objective(k, eps) - objective(k, -eps)) / (2.0 * eps);
        worst = worst.max(rel_err(fd, g));
    }
    worst
}

#[test]
fn gradient_fidelity() {
    let start = Instant::now();
    let catalog = fd_catalog();
    let codebook = assign_sids(&catalog, 3, 4).unwrap();
    let clip = 0.2;
    let beta = 0.04;
    let mut worst_gen = 0.0f64;
    let mut checked = 0usize;
    let mut instance = 0u64;
    while checked < 20 {
        instance += 1;
        let cfg =
            PolicyConfig { feature_len: 4, state_dim: 4, levels: 3, codebook_size: 4 };
        let mut rng = rngutil::rng(0xacc, &[3, instance]);
        let mut policy = GeneratorPolicy::new(cfg, 0.4, &mut rng);
        policy.refresh_old();
        for (i, t) in policy.theta_mut().iter_mut().enumerate() {
            *t += 0.01 * ((i % 7) as f64 - 3.0);
        }
        let phi: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rollouts = policy.sample_group(&phi, &codebook, 8, &mut rng).unwrap();
        // skip instances with an importance ratio near the clip kink, where
        // the objective is not differentiable and FD is meaningless
        let near_kink = rollouts.iter().any(|r| {
            let rho = (policy.log_prob(&phi, &codebook, &r.sid, Under::Current).unwrap()
                - r.log_prob_old)
                .exp();
            (rho - (1.0 - clip)).abs() < 1e-3 || (rho - (1.0 + clip)).abs() < 1e-3
        });
        if near_kink {
            continue;
        }
        let adv: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let (_, grad) =
            policy.surrogate_grad(&phi, &codebook, &rollouts, &adv, clip, beta).unwrap();
        assert!(grad.len() >= 100, "need >=100 coordinates, have {}", grad.len());
        worst_gen = worst_gen.max(fd_check(&grad, |k, delta| {
            policy.theta_mut()[k] += delta;
            let obj =
                policy.surrogate_grad(&phi, &codebook, &rollouts, &adv, clip, beta).unwrap().0;
            policy.theta_mut()[k] -= delta;
            obj
        }));
        checked += 1;
    }

    let mut worst_agg = 0.0f64;
    for instance in 0..20u64 {
        let mut rng = rngutil::rng(0xacc, &[4, instance]);
        let mut policy = AggregatorPolicy::new(6, 3, 4, 0.3, &mut rng);
        // detune away from the frozen reference so the KL term is active
        for (i, p) in policy.psi_mut().iter_mut().enumerate() {
            *p += 0.02 * ((i % 5) as f64 - 2.0);
        }
        let phi: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let samples: Vec<Vec<u8>> = (0..8).map(|_| policy.sample_levels(&phi, &mut rng)).collect();
        let adv: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let (_, grad) = policy.pair_surrogate(&phi, &samples, &adv, beta);
        assert!(grad.len() >= 100, "need >=100 coordinates, have {}", grad.len());
        worst_agg = worst_agg.max(fd_check(&grad, |k, delta| {
            policy.psi_mut()[k] += delta;
            let obj = policy.pair_surrogate(&phi, &samples, &adv, beta).0;
            policy.psi_mut()[k] -= delta;
            obj
        }));
    }
    let elapsed = start.elapsed().as_secs_f64();
    criterion(
        3,
        "gradient fidelity",
        worst_gen < 1e-4 && worst_agg < 1e-4 && elapsed < 120.0,
        &format!(
            "worst generator rel err {worst_gen:e}, worst aggregator rel err {worst_agg:e}, \
             elapsed {elapsed:.1}s"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: probability normalization under the trie mask
// ---------------------------------------------------------------------------

#[test]
fn probability_normalization() {
    let world = generate_world(&WorldConfig { seed: 7, ..WorldConfig::default() }).unwrap();
    assert_eq!(world.catalog.len(), 512);
    let codebook = world.codebook(3, 8).unwrap();
    let cfg = PolicyConfig {
        feature_len: context_features(&world.users[0], &world.catalog, 0).len(),
        state_dim: 16,
        levels: 3,
        codebook_size: 8,
    };
    let policy = GeneratorPolicy::new(cfg, 0.5, &mut rngutil::rng(0xacc, &[5]));
    let mut worst_total = 0.0f64;
    let mut worst_position = 0.0f64;
    for user in world.users.iter().take(3) {
        let phi = context_features(user, &world.catalog, 0);
        let total: f64 = codebook
            .iter()
            .map(|(_, sid)| policy.log_prob(&phi, &codebook, sid, Under::Current).unwrap().exp())
            .sum();
        worst_total = worst_total.max((total - 1.0).abs());
        // every reachable prefix: root (empty), 8 one-token, 64 two-token
        let mut prefixes: Vec<Vec<u16>> = vec![vec![]];
        for len in 0..2 {
            let mut next = Vec::new();
            for p in prefixes.iter().filter(|p| p.len() == len) {
                for &tok in codebook.valid_next_tokens(p) {
                    let mut q = p.clone();
                    q.push(tok);
                    next.push(q);
                }
            }
            prefixes.extend(next);
        }
        for prefix in &prefixes {
            let dist = policy.next_token_log_probs(&phi, &codebook, prefix, Under::Current).unwrap();
            let s: f64 = dist.iter().map(|(_, lp)| lp.exp()).sum();
            worst_position = worst_position.max((s - 1.0).abs());
        }
    }
    criterion(
        4,
        "probability normalization",
        worst_total < 1e-6 && worst_position < 1e-9,
        &format!("worst catalog total error {worst_total:e}, worst per-position error {worst_position:e}"),
    );
}

// ---------------------------------------------------------------------------
// Criteria 5, 6, 8, 10: desk-scale training experiments on a shared world
// ---------------------------------------------------------------------------

const WORLD_SEED: u64 = 7;
const ABLATION_SEEDS: std::ops::RangeInclusive<u64> = 1..=8;
const SATURATION_SEEDS: std::ops::RangeInclusive<u64> = 1..=5;
const ABLATION_EPOCHS: usize = 16;
const SATURATION_EPOCHS: usize = 10;

fn experiment_world_config() -> WorldConfig {
    WorldConfig { seed: WORLD_SEED, target_affinity: 1.0, ..WorldConfig::default() }
}

fn experiment_config(seed: u64, epochs: usize, judged_fraction: f64, alpha: f64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.run.seed = seed;
    cfg.run.epochs = epochs;
    cfg.world = experiment_world_config();
    cfg.business.mode = BusinessMode::Graded;
    cfg.a2po.group_size = 8;
    cfg.a2po.step_size = 0.01;
    cfg.a2po.judged_fraction = judged_fraction;
    cfg.a2po.fusion.alpha = alpha;
    cfg.eval.ks = vec![5, 10];
    cfg.eval.eval_every = 0;
    cfg
}

struct Runs {
    root: PathBuf,
    world: World,
}

impl Runs {
    fn train(
        &self,
        label: &str,
        mode: TrainMode,
        seed: u64,
        epochs: usize,
        judged_fraction: f64,
        alpha: f64,
    ) -> (PathBuf, StratifiedReport) {
        let cfg = experiment_config(seed, epochs, judged_fraction, alpha);
        let dir = self.root.join(format!("{label}_{seed}"));
        let out = run_train(
            &cfg,
            mode,
            &self.world,
            &semrec_core::aggregator::UniformWeights,
            &dir,
            false,
        )
        .unwrap();
        (dir, out.final_report)
    }

    fn seed_mean(
        &self,
        label: &str,
        mode: TrainMode,
        seeds: std::ops::RangeInclusive<u64>,
        epochs: usize,
        judged_fraction: f64,
        alpha: f64,
    ) -> (f64, Vec<StratifiedReport>) {
        let mut reports = Vec::new();
        for seed in seeds {
            let (_, r) = self.train(label, mode, seed, epochs, judged_fraction, alpha);
            reports.push(r);
        }
        let hr10 =
            reports.iter().map(|r| r.metric(None, "hr", 10).unwrap()).sum::<f64>() / reports.len() as f64;
        (hr10, reports)
    }
}

fn level_hr5_mean(reports: &[StratifiedReport], level: u8) -> f64 {
    reports.iter().map(|r| r.metric(Some(level), "hr", 5).unwrap()).sum::<f64>()
        / reports.len() as f64
}

/// Mean of the per-epoch sign-consistency column in a run's training log.
fn mean_consistency(dir: &Path) -> f64 {
    let text = fs::read_to_string(dir.join("logs/train.csv")).unwrap();
    let vals: Vec<f64> = text
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(4).and_then(|v| v.parse().ok()))
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

#[test]
fn desk_scale_experiments() {
    use semrec_core::a2po::FusionMode::*;
    let root = std::env::temp_dir().join("semrec-acceptance");
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).unwrap();
    let world = generate_world(&experiment_world_config()).unwrap();
    let runs = Runs { root: root.clone(), world };
    let full = TrainMode::Fusion(Full);

    // --- criterion 5: ablation ordering over 8 seeds -----------------------
    let start = Instant::now();
    let e = ABLATION_EPOCHS;
    let (hr_biz, biz_reports) =
        runs.seed_mean("biz", TrainMode::BusinessOnly, ABLATION_SEEDS, e, 1.0, 1.0);
    let (hr_full, full_reports) = runs.seed_mean("full", full, ABLATION_SEEDS, e, 1.0, 1.0);
    let (hr_gate, _) = runs.seed_mean("gate", TrainMode::Fusion(GateOnly), ABLATION_SEEDS, e, 1.0, 1.0);
    let (hr_mag, _) =
        runs.seed_mean("mag", TrainMode::Fusion(MagnitudeOnly), ABLATION_SEEDS, e, 1.0, 1.0);
    let (hr_adv, _) = runs.seed_mean("advsum", TrainMode::Fusion(AdvSum), ABLATION_SEEDS, e, 1.0, 1.0);
    // alpha 25 makes the mixed reward's semantic range dominate the [0,1]
    // business range by more than an order of magnitude
    let (hr_rsum, _) =
        runs.seed_mean("rewardsum", TrainMode::Fusion(RewardSum), ABLATION_SEEDS, e, 1.0, 25.0);
    let conflict = 1.0 - mean_consistency(&root.join("full_1"));
    let gap = hr_full / hr_biz - 1.0;
    let elapsed5 = start.elapsed().as_secs_f64();
    println!(
        "  seed-mean HR@10: full={hr_full:.6} gate_only={hr_gate:.6} magnitude_only={hr_mag:.6} \
         business_only={hr_biz:.6} adv_sum={hr_adv:.6} reward_sum={hr_rsum:.6} \
         (conflict rate {conflict:.3}, full vs business {:+.2}%)",
        gap * 100.0
    );
    criterion(
        5,
        "ablation ordering",
        conflict >= 0.2
            && hr_full >= hr_gate.max(hr_mag)
            && hr_gate.max(hr_mag) >= hr_biz
            && hr_biz > hr_adv
            && hr_biz > hr_rsum
            && gap >= 0.02
            && elapsed5 < 1800.0,
        &format!(
            "full={hr_full:.6} gate={hr_gate:.6} mag={hr_mag:.6} biz={hr_biz:.6} \
             adv_sum={hr_adv:.6} reward_sum={hr_rsum:.6} conflict={conflict:.3} \
             gap={gap:.4} elapsed={elapsed5:.0}s"
        ),
    );

    // --- criterion 6: sparse-sampling saturation over 5 seeds --------------
    // Shorter budget than criterion 5: the saturation effect shows while the
    // policy is still in its accelerating phase; see the decisions ledger.
    let start = Instant::now();
    let e = SATURATION_EPOCHS;
    let (hr_p0, _) = runs.seed_mean("sat_biz", TrainMode::BusinessOnly, SATURATION_SEEDS, e, 1.0, 1.0);
    let (hr_p05, _) = runs.seed_mean("sat_p05", full, SATURATION_SEEDS, e, 0.05, 1.0);
    let (hr_p1, _) = runs.seed_mean("sat_p1", full, SATURATION_SEEDS, e, 1.0, 1.0);
    // p = 0 must reproduce the business-only run bit for bit
    let (p0_dir, _) = runs.train("sat_pzero", full, 1, e, 0.0, 1.0);
    let biz_dir = root.join("sat_biz_1");
    let bit_exact = fs::read_to_string(p0_dir.join("logs/train.csv")).unwrap()
        == fs::read_to_string(biz_dir.join("logs/train.csv")).unwrap()
        && fs::read_to_string(p0_dir.join("reports/report.json")).unwrap()
            == fs::read_to_string(biz_dir.join("reports/report.json")).unwrap();
    let lift_p1 = hr_p1 - hr_p0;
    let lift_p05 = hr_p05 - hr_p0;
    let elapsed6 = start.elapsed().as_secs_f64();
    println!(
        "  seed-mean HR@10: p=0 {hr_p0:.6}, p=0.05 {hr_p05:.6}, p=1 {hr_p1:.6} \
         (lift retention {:.0}%)",
        100.0 * lift_p05 / lift_p1
    );
    criterion(
        6,
        "sparse-sampling saturation",
        lift_p1 > 0.0 && lift_p05 >= 0.8 * lift_p1 && bit_exact && elapsed6 < 1800.0,
        &format!(
            "lift(p=1)={lift_p1:.6} lift(p=0.05)={lift_p05:.6} bit_exact={bit_exact} \
             elapsed={elapsed6:.0}s"
        ),
    );

    // --- criterion 8: novelty stratification from criterion 5's runs -------
    let lift_l0 = level_hr5_mean(&full_reports, 0) / level_hr5_mean(&biz_reports, 0) - 1.0;
    let lift_l3 = level_hr5_mean(&full_reports, 3) / level_hr5_mean(&biz_reports, 3) - 1.0;
    println!("  HR@5 lift over business-only: level 0 {:+.2}%, level 3 {:+.2}%", lift_l0 * 100.0, lift_l3 * 100.0);
    criterion(
        8,
        "novelty stratification",
        lift_l3 > lift_l0,
        &format!("level-0 lift {lift_l0:.4}, level-3 lift {lift_l3:.4}"),
    );

    // --- criterion 10: rerun one experiment from its manifest --------------
    let source = root.join("full_1");
    let manifest = RunManifest::load(&source).unwrap();
    let cfg = load_config(&manifest.config_toml, &[]).unwrap();
    let mode = TrainMode::parse(manifest.mode.as_deref().unwrap()).unwrap();
    let reworld = generate_world(&cfg.world).unwrap();
    let redo = root.join("rerun_full_1");
    run_train(&cfg, mode, &reworld, &semrec_core::aggregator::UniformWeights, &redo, false)
        .unwrap();
    let same = ["logs/train.csv", "reports/report.csv", "reports/report.json"]
        .iter()
        .all(|f| {
            fs::read_to_string(source.join(f)).unwrap() == fs::read_to_string(redo.join(f)).unwrap()
        });
    criterion(
        10,
        "manifest reproducibility",
        same,
        "rerun from manifest diverged from the original logs or metrics",
    );
    let _ = fs::remove_dir_all(&root);
}

// ---------------------------------------------------------------------------
// Criterion 7: aggregator recovery on a planted one-hot world
// ---------------------------------------------------------------------------

#[test]
fn aggregator_recovery() {
    let start = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.run.seed = 0;
    cfg.world = WorldConfig {
        seed: WORLD_SEED,
        latent_mode: LatentMode::OneHotByTag,
        n_context_tags: 3,
        target_affinity: 1.0,
        ..WorldConfig::default()
    };
    let world = generate_world(&cfg.world).unwrap();
    let dir = std::env::temp_dir().join("semrec-acceptance-agg");
    let _ = fs::remove_dir_all(&dir);
    let out = run_train_aggregator(&cfg, &world, &dir).unwrap();
    let _ = fs::remove_dir_all(&dir);
    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "  heldout pairwise accuracy {:.4}, argmax match {:.4}",
        out.heldout_accuracy, out.argmax_match
    );
    criterion(
        7,
        "aggregator recovery",
        out.heldout_accuracy >= 0.9 && out.argmax_match >= 0.9 && elapsed < 600.0,
        &format!(
            "heldout accuracy {:.4}, argmax match {:.4}, elapsed {elapsed:.0}s",
            out.heldout_accuracy, out.argmax_match
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: ranking and judging metric oracles
// ---------------------------------------------------------------------------

fn oracle_hr(items: &[u32], target: u32, k: usize) -> f64 {
    for &it in items.iter().take(k) {
        if it == target {
            return 1.0;
        }
    }
    0.0
}

fn oracle_ndcg(items: &[u32], target: u32, k: usize) -> f64 {
    for (pos, &it) in items.iter().take(k).enumerate() {
        if it == target {
            return 1.0 / ((pos + 2) as f64).log2();
        }
    }
    0.0
}

fn oracle_pair_auc(predicted: &[f64], pairs: &[GoldPair]) -> f64 {
    let mut total = 0.0;
    for p in pairs {
        let (b, w) = (predicted[p.better], predicted[p.worse]);
        total += if b > w {
            1.0
        } else if b == w {
            0.5
        } else {
            0.0
        };
    }
    total / pairs.len() as f64
}

fn oracle_point_acc(predicted: &[AspectScores], gold: &[AspectScores]) -> f64 {
    let dims = gold[0].dims();
    let n = gold.len();
    let mut acc = 0.0;
    for d in 0..dims {
        let mut hits = 0usize;
        for (p, g) in predicted.iter().zip(gold) {
            if p.as_vec()[d] == g.as_vec()[d] {
                hits += 1;
            }
        }
        acc += hits as f64 / n as f64;
    }
    acc / dims as f64
}

fn random_scores(rng: &mut ChaCha8Rng, with_context: bool) -> AspectScores {
    let profile = [-1.0, -0.5, 0.0, 0.5, 1.0][rng.gen_range(0..5)];
    let future = [0.0, 0.5, 1.0][rng.gen_range(0..3)];
    let novelty = [0.0, 0.5, 1.0][rng.gen_range(0..3)];
    let context = if with_context { Some([-1.0, 0.0][rng.gen_range(0..2)]) } else { None };
    AspectScores { profile, future, novelty, context }
}

#[test]
fn metric_oracles() {
    let start = Instant::now();
    let mut rng = rngutil::rng(0xacc, &[9]);
    let mut ok = true;
    let mut detail = String::new();
    for i in 0..10_000 {
        // ranking metrics on a shuffled list with the target sometimes absent
        let n = rng.gen_range(1..50usize);
        let mut items: Vec<u32> = (0..n as u32).collect();
        for j in (1..items.len()).rev() {
            items.swap(j, rng.gen_range(0..=j));
        }
        let k = rng.gen_range(1..=n);
        let target = rng.gen_range(0..(n as u32 + 5));
        let ranked = RankedList { items: items.clone(), approximate: false };
        if hr_at_k(&ranked, target, k).unwrap() != oracle_hr(&items, target, k)
            || ndcg_at_k(&ranked, target, k).unwrap() != oracle_ndcg(&items, target, k)
        {
            ok = false;
            detail = format!("ranking metric mismatch on instance {i}");
            break;
        }

        let m = rng.gen_range(2..20usize);
        let predicted: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0_f64) * 8.0).collect();
        let pairs: Vec<GoldPair> = (0..rng.gen_range(1..10))
            .map(|_| {
                let better = rng.gen_range(0..m);
                let mut worse = rng.gen_range(0..m);
                while worse == better {
                    worse = rng.gen_range(0..m);
                }
                GoldPair { better, worse }
            })
            .collect();
        if pair_auc(&predicted, &pairs).unwrap() != oracle_pair_auc(&predicted, &pairs) {
            ok = false;
            detail = format!("pair_auc mismatch on instance {i}");
            break;
        }

        let with_context = i % 2 == 0;
        let len = rng.gen_range(1..12usize);
        let gold: Vec<AspectScores> = (0..len).map(|_| random_scores(&mut rng, with_context)).collect();
        let pred: Vec<AspectScores> = gold
            .iter()
            .map(|g| if rng.gen_bool(0.5) { g.clone() } else { random_scores(&mut rng, with_context) })
            .collect();
        if point_acc(&pred, &gold).unwrap() != oracle_point_acc(&pred, &gold) {
            ok = false;
            detail = format!("point_acc mismatch on instance {i}");
            break;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 5.0 {
        ok = false;
        detail = format!("elapsed {elapsed:.2}s");
    }
    criterion(9, "metric oracles", ok, &detail);
}
