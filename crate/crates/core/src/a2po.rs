//! Asymmetric advantage fusion and the outer training loop.
//!
//! Business reward anchors every update; the semantic advantage is injected
//! only when its sign agrees with the business advantage, scaled by a
//! magnitude ratio that keeps the semantic contribution bounded by the
//! business magnitude: |λ·A_sem| ≤ |A_biz|.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregator::{holistic_score, WeightProvider};
use crate::catalog::Codebook;
use crate::features::context_features;
use crate::genpolicy::{GeneratorPolicy, PolicyError};
use crate::judge::{episode_is_judged, AspectScorer};
use crate::math::{l2_norm, mean, pop_std};
use crate::rngutil;
use crate::synthworld::{business_reward, BusinessRewardConfig, World, WorldError};

#[derive(Debug, Error)]
pub enum A2poError {
    #[error("group standardization needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("consistency rate over pairs without any judged entry")]
    NoJudgedPairs,
    #[error("invalid fusion config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Catalog(#[from] crate::catalog::CatalogError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// How business and semantic feedback are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Mix rewards as r_biz + α·r_sem before a single standardization.
    RewardSum,
    /// Sum standardized advantages (λ ≡ 1).
    AdvSum,
    /// Sign gate only, no magnitude ratio.
    GateOnly,
    /// Magnitude ratio only, no sign gate.
    MagnitudeOnly,
    #[default]
    Full,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// reward_sum mixing weight.
    pub alpha: f64,
    /// Magnitude-ratio denominator guard.
    pub epsilon: f64,
    /// Standardization denominator guard.
    pub std_guard: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { mode: FusionMode::Full, alpha: 1.0, epsilon: 1e-8, std_guard: 1e-8 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), A2poError> {
        if self.epsilon <= 0.0 {
            return Err(A2poError::BadConfig("epsilon must be > 0".into()));
        }
        if self.std_guard <= 0.0 {
            return Err(A2poError::BadConfig("std_guard must be > 0".into()));
        }
        Ok(())
    }
}

/// Raw per-candidate rewards; `r_sem` is `None` for unjudged episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardPair {
    pub r_biz: f64,
    pub r_sem: Option<f64>,
}

/// Group-standardized advantages for one candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvantagePair {
    pub a_biz: f64,
    pub a_sem: Option<f64>,
}

/// Output of the fusion rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedAdvantage {
    pub lambda: f64,
    pub a_fused: f64,
}

/// Group-relative standardization: a_i = (r_i − mean) / (pop_std + guard);
/// an all-equal group standardizes to exact zeros.
pub fn standardize_group(rewards: &[f64], std_guard: f64) -> Result<Vec<f64>, A2poError> {
    if rewards.len() < 2 {
        return Err(A2poError::GroupTooSmall(rewards.len()));
    }
    let first = rewards[0];
    if rewards.iter().all(|&r| r == first) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let m = mean(rewards);
    let s = pop_std(rewards) + std_guard;
    Ok(rewards.iter().map(|r| (r - m) / s).collect())
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

fn magnitude_ratio(a_biz: f64, a_sem: f64, epsilon: f64) -> f64 {
    let (lo, hi) = (a_biz.abs().min(a_sem.abs()), a_biz.abs().max(a_sem.abs()));
    lo / (hi + epsilon)
}

/// Dual-consistency coefficient: sign gate times magnitude ratio, with
/// sign(0) = 0 closing the gate against any nonzero partner.
pub fn compute_lambda(a_biz: f64, a_sem: f64, epsilon: f64) -> f64 {
    if sign(a_biz) != sign(a_sem) {
        0.0
    } else {
        magnitude_ratio(a_biz, a_sem, epsilon)
    }
}

/// Applies the configured advantage-level fusion rule. `reward_sum` is
/// handled upstream (rewards are mixed before one standardization), so it
/// degrades to the anchor here.
pub fn fuse(a: AdvantagePair, config: &FusionConfig) -> FusedAdvantage {
    let a_sem = match a.a_sem {
        Some(s) => s,
        None => return FusedAdvantage { lambda: 0.0, a_fused: a.a_biz },
    };
    let lambda = match config.mode {
        FusionMode::Full => compute_lambda(a.a_biz, a_sem, config.epsilon),
        FusionMode::GateOnly => {
            if sign(a.a_biz) == sign(a_sem) {
                1.0
            } else {
                0.0
            }
        }
        FusionMode::MagnitudeOnly => magnitude_ratio(a.a_biz, a_sem, config.epsilon),
        FusionMode::AdvSum => 1.0,
        FusionMode::RewardSum => 0.0,
    };
    FusedAdvantage { lambda, a_fused: a.a_biz + lambda * a_sem }
}

/// Fraction of judged pairs whose advantages agree in sign (sign(0) = 0).
pub fn consistency_rate(pairs: &[AdvantagePair]) -> Result<f64, A2poError> {
    let mut judged = 0usize;
    let mut same = 0usize;
    for p in pairs {
        if let Some(a_sem) = p.a_sem {
            judged += 1;
            if sign(p.a_biz) == sign(a_sem) {
                same += 1;
            }
        }
    }
    if judged == 0 {
        return Err(A2poError::NoJudgedPairs);
    }
    Ok(same as f64 / judged as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct A2poConfig {
    pub group_size: usize,
    /// Fraction p of episodes whose rollouts receive semantic judging.
    pub judged_fraction: f64,
    /// PPO-style clip threshold δ.
    pub clip: f64,
    /// Optional KL(π_θ‖π_old) coefficient; 0 disables the term.
    pub beta_gen: f64,
    pub step_size: f64,
    /// Episodes between snapshots of the behavior policy θ_old.
    pub old_refresh_interval: usize,
    pub fusion: FusionConfig,
}

impl Default for A2poConfig {
    fn default() -> Self {
        A2poConfig {
            group_size: 16,
            judged_fraction: 1.0,
            clip: 0.2,
            beta_gen: 0.04,
            step_size: 1e-5,
            old_refresh_interval: 1,
            fusion: FusionConfig::default(),
        }
    }
}

impl A2poConfig {
    pub fn validate(&self) -> Result<(), A2poError> {
        if self.group_size < 2 {
            return Err(A2poError::BadConfig("group_size must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.judged_fraction) {
            return Err(A2poError::BadConfig("judged_fraction must be in [0,1]".into()));
        }
        if self.clip <= 0.0 {
            return Err(A2poError::BadConfig("clip must be > 0".into()));
        }
        if self.old_refresh_interval == 0 {
            return Err(A2poError::BadConfig("old_refresh_interval must be >= 1".into()));
        }
        self.fusion.validate()
    }
}

/// Per-step training telemetry; judged quantities are averaged over judged
/// episodes only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub objective: f64,
    pub mean_lambda: f64,
    pub gate_close_rate: f64,
    pub consistency_rate: Option<f64>,
    pub judged_fraction: f64,
    pub grad_norm: f64,
}

const SAMPLE_STREAM: u64 = 0x501;
const JUDGE_STREAM: u64 = 0x6a;

/// Standardizes and fuses one group of reward pairs per the fusion config.
/// Returns per-candidate fused advantages plus the standardized pairs for
/// diagnostics.
pub fn fuse_group(
    rewards: &[RewardPair],
    config: &FusionConfig,
) -> Result<(Vec<FusedAdvantage>, Vec<AdvantagePair>), A2poError> {
    let judged = rewards.iter().all(|r| r.r_sem.is_some());
    if !judged && rewards.iter().any(|r| r.r_sem.is_some()) {
        return Err(A2poError::BadConfig("r_sem must be present for all of a group or none".into()));
    }
    let biz: Vec<f64> = rewards.iter().map(|r| r.r_biz).collect();
    if config.mode == FusionMode::RewardSum && judged {
        let mixed: Vec<f64> = rewards
            .iter()
            .map(|r| r.r_biz + config.alpha * r.r_sem.unwrap())
            .collect();
        let a = standardize_group(&mixed, config.std_guard)?;
        let a_biz = standardize_group(&biz, config.std_guard)?;
        let pairs: Vec<AdvantagePair> = a_biz
            .iter()
            .zip(&a)
            .map(|(&b, &s)| AdvantagePair { a_biz: b, a_sem: Some(s) })
            .collect();
        let fused = a.iter().map(|&x| FusedAdvantage { lambda: 0.0, a_fused: x }).collect();
        return Ok((fused, pairs));
    }
    let a_biz = standardize_group(&biz, config.std_guard)?;
    let a_sem = if judged {
        let sem: Vec<f64> = rewards.iter().map(|r| r.r_sem.unwrap()).collect();
        Some(standardize_group(&sem, config.std_guard)?)
    } else {
        None
    };
    let pairs: Vec<AdvantagePair> = a_biz
        .iter()
        .enumerate()
        .map(|(i, &b)| AdvantagePair { a_biz: b, a_sem: a_sem.as_ref().map(|s| s[i]) })
        .collect();
    let fused = pairs.iter().map(|&p| fuse(p, config)).collect();
    Ok((fused, pairs))
}

/// One optimization pass over the given episode indices: sample a rollout
/// group per episode, compute business (and, on judged episodes, semantic)
/// rewards, standardize and fuse, then take one clipped-surrogate ascent
/// step per episode.
///
/// The judged subset is pre-committed from `(seed, epoch)` so sweeps over p
/// are paired, and sampling randomness depends only on
/// `(seed, epoch, episode index)` so resumed runs replay exactly.
#[allow(clippy::too_many_arguments)]
pub fn a2po_train_step(
    policy: &mut GeneratorPolicy,
    world: &World,
    codebook: &Codebook,
    scorer: &dyn AspectScorer,
    weights: &dyn WeightProvider,
    business: &BusinessRewardConfig,
    cfg: &A2poConfig,
    epoch: usize,
    episode_indices: &[usize],
    seed: u64,
) -> Result<StepDiagnostics, A2poError> {
    cfg.validate()?;
    let judge_seed = rngutil::mix(seed, &[epoch as u64, JUDGE_STREAM]);
    let n_tags = world.config.n_context_tags;

    let mut sum_objective = 0.0;
    let mut sum_grad_norm = 0.0;
    let mut sum_lambda = 0.0;
    let mut n_lambda = 0usize;
    let mut gate_closed = 0usize;
    let mut judged_episodes = 0usize;
    let mut all_pairs: Vec<AdvantagePair> = Vec::new();

    for (pos, &ep_idx) in episode_indices.iter().enumerate() {
        if pos % cfg.old_refresh_interval == 0 {
            policy.refresh_old();
        }
        let episode = &world.episodes[ep_idx];
        let ctx = world.context(episode);
        let phi = context_features(ctx, &world.catalog, n_tags);
        let mut rng = rngutil::rng(seed, &[epoch as u64, ep_idx as u64, SAMPLE_STREAM]);
        let rollouts = policy.sample_group(&phi, codebook, cfg.group_size, &mut rng)?;

        let judged = episode_is_judged(ep_idx, cfg.judged_fraction, judge_seed);
        let mut rewards = Vec::with_capacity(rollouts.len());
        for r in &rollouts {
            let r_biz = business_reward(business, r.item_id, episode.target_item, &world.catalog)?;
            let r_sem = if judged {
                let item = world.catalog.get(r.item_id)?;
                let s = scorer.score(ctx, item, &world.catalog);
                let w = weights.weights(ctx, &world.catalog, s.dims());
                Some(holistic_score(&w, &s.as_vec()).expect("weight provider matches aspect dims"))
            } else {
                None
            };
            rewards.push(RewardPair { r_biz, r_sem });
        }

        let (fused, pairs) = fuse_group(&rewards, &cfg.fusion)?;
        if judged {
            judged_episodes += 1;
            for f in &fused {
                sum_lambda += f.lambda;
                n_lambda += 1;
                if f.lambda == 0.0 {
                    gate_closed += 1;
                }
            }
            all_pairs.extend(pairs.iter().filter(|p| p.a_sem.is_some()));
        }

        let advantages: Vec<f64> = fused.iter().map(|f| f.a_fused).collect();
        let (objective, grad) =
            policy.surrogate_grad(&phi, codebook, &rollouts, &advantages, cfg.clip, cfg.beta_gen)?;
        sum_objective += objective;
        sum_grad_norm += l2_norm(&grad);
        policy.step(&grad, cfg.step_size);
    }

    let n = episode_indices.len().max(1) as f64;
    Ok(StepDiagnostics {
        objective: sum_objective / n,
        mean_lambda: if n_lambda > 0 { sum_lambda / n_lambda as f64 } else { 0.0 },
        gate_close_rate: if n_lambda > 0 { gate_closed as f64 / n_lambda as f64 } else { 0.0 },
        consistency_rate: consistency_rate(&all_pairs).ok(),
        judged_fraction: judged_episodes as f64 / n,
        grad_norm: sum_grad_norm / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn standardize_hand_example() {
        // mean 2, population std sqrt(2/3)
        let a = standardize_group(&[1.0, 2.0, 3.0], 1e-8).unwrap();
        assert!((a[0] + 1.2247).abs() < 1e-4);
        assert!(a[1].abs() < 1e-4);
        assert!((a[2] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn standardize_degenerate_is_exact_zero() {
        assert_eq!(standardize_group(&[5.0; 4], 1e-8).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn standardize_too_small() {
        assert!(matches!(
            standardize_group(&[1.0], 1e-8).unwrap_err(),
            A2poError::GroupTooSmall(1)
        ));
    }

    #[test]
    fn standardize_moments_random_groups() {
        let mut rng = rngutil::rng(11, &[0x51]);
        for _ in 0..200 {
            let g = rng.gen_range(2..=64);
            let xs: Vec<f64> = (0..g).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let sigma = pop_std(&xs);
            let a = standardize_group(&xs, 1e-8).unwrap();
            assert!(mean(&a).abs() < 1e-12);
            if sigma > 0.0 {
                let want = 1.0 / (1.0 + 1e-8 / sigma);
                assert!((pop_std(&a) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn standardize_idempotent_up_to_guard() {
        let xs = vec![0.3, -1.4, 2.2, 0.9, -0.5];
        let once = standardize_group(&xs, 1e-8).unwrap();
        let twice = standardize_group(&once, 1e-8).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn lambda_hand_values() {
        assert_eq!(compute_lambda(1.0, -0.5, 1e-8), 0.0);
        assert!((compute_lambda(1.0, 1.0, 1e-8) - 1.0).abs() < 1e-7);
        assert!((compute_lambda(2.0, 0.5, 1e-8) - 0.25).abs() < 1e-7);
    }

    #[test]
    fn lambda_sign_zero_closes_gate() {
        assert_eq!(compute_lambda(0.0, 1.0, 1e-8), 0.0);
        assert_eq!(compute_lambda(-1.0, 0.0, 1e-8), 0.0);
        // both zero: gate open but ratio zero
        assert_eq!(compute_lambda(0.0, 0.0, 1e-8), 0.0);
    }

    #[test]
    fn lambda_scale_invariant_and_strictly_below_one() {
        let mut rng = rngutil::rng(13, &[0x52]);
        for _ in 0..10_000 {
            let a = rng.gen_range(-10.0..10.0);
            let b = rng.gen_range(-10.0..10.0);
            let c = rng.gen_range(0.1..100.0);
            let l = compute_lambda(a, b, 1e-8);
            assert!((0.0..1.0).contains(&l));
            assert!((compute_lambda(c * a, c * b, 1e-8) - l).abs() < 1e-6);
        }
    }

    #[test]
    fn fuse_hand_example_and_bound() {
        let cfg = FusionConfig::default();
        let f = fuse(AdvantagePair { a_biz: 2.0, a_sem: Some(0.5) }, &cfg);
        assert!((f.lambda - 0.25).abs() < 1e-7);
        assert!((f.a_fused - 2.125).abs() < 1e-7);
        let absent = fuse(AdvantagePair { a_biz: -1.3, a_sem: None }, &cfg);
        assert_eq!(absent, FusedAdvantage { lambda: 0.0, a_fused: -1.3 });
    }

    #[test]
    fn fuse_anchor_preservation_fuzz() {
        let cfg = FusionConfig::default();
        let mut rng = rngutil::rng(17, &[0x53]);
        for _ in 0..100_000 {
            let a_biz = rng.gen_range(-10.0..10.0);
            let a_sem = rng.gen_range(-10.0..10.0);
            let f = fuse(AdvantagePair { a_biz, a_sem: Some(a_sem) }, &cfg);
            assert!((f.lambda * a_sem).abs() <= a_biz.abs());
            assert!((f.a_fused - a_biz).abs() <= a_biz.abs());
            if a_biz != 0.0 {
                assert!(sign(f.a_fused) == sign(a_biz) || f.a_fused == 0.0);
            }
            if sign(a_biz) != sign(a_sem) {
                assert_eq!(f.lambda, 0.0);
            }
        }
    }

    #[test]
    fn fuse_mode_semantics() {
        let p = AdvantagePair { a_biz: 2.0, a_sem: Some(-0.5) };
        let mut cfg = FusionConfig::default();
        cfg.mode = FusionMode::AdvSum;
        assert_eq!(fuse(p, &cfg).a_fused, 1.5);
        cfg.mode = FusionMode::GateOnly;
        assert_eq!(fuse(p, &cfg).lambda, 0.0);
        cfg.mode = FusionMode::MagnitudeOnly;
        let f = fuse(p, &cfg);
        assert!((f.lambda - 0.25).abs() < 1e-7);
        assert!((f.a_fused - 1.875).abs() < 1e-7);
        // adv_sum with a_sem == a_biz doubles the advantage; full nearly so
        let twin = AdvantagePair { a_biz: 1.5, a_sem: Some(1.5) };
        cfg.mode = FusionMode::AdvSum;
        assert_eq!(fuse(twin, &cfg).a_fused, 3.0);
        cfg.mode = FusionMode::Full;
        assert!((fuse(twin, &cfg).a_fused - 3.0).abs() < 1e-7);
    }

    #[test]
    fn consistency_rate_counts() {
        let mk = |b: f64, s: f64| AdvantagePair { a_biz: b, a_sem: Some(s) };
        let all_same = vec![mk(1.0, 2.0), mk(-1.0, -0.1)];
        assert_eq!(consistency_rate(&all_same).unwrap(), 1.0);
        let mut mixed: Vec<AdvantagePair> = Vec::new();
        for _ in 0..45 {
            mixed.push(mk(1.0, 1.0));
        }
        for _ in 0..55 {
            mixed.push(mk(1.0, -1.0));
        }
        assert_eq!(consistency_rate(&mixed).unwrap(), 0.45);
        assert!(matches!(
            consistency_rate(&[AdvantagePair { a_biz: 1.0, a_sem: None }]).unwrap_err(),
            A2poError::NoJudgedPairs
        ));
        // zero-zero counts as sign-consistent
        assert_eq!(consistency_rate(&[mk(0.0, 0.0)]).unwrap(), 1.0);
    }

    #[test]
    fn consistency_rate_random_near_half() {
        let mut rng = rngutil::rng(19, &[0x54]);
        let pairs: Vec<AdvantagePair> = (0..1_000_000)
            .map(|_| AdvantagePair {
                a_biz: rng.gen_range(-1.0..1.0),
                a_sem: Some(rng.gen_range(-1.0..1.0)),
            })
            .collect();
        let c = consistency_rate(&pairs).unwrap();
        assert!((c - 0.5).abs() < 0.002, "c={c}");
    }

    #[test]
    fn fuse_group_reward_sum_mixes_before_standardizing() {
        let rewards = vec![
            RewardPair { r_biz: 1.0, r_sem: Some(0.0) },
            RewardPair { r_biz: 0.0, r_sem: Some(2.0) },
            RewardPair { r_biz: 0.0, r_sem: Some(0.0) },
        ];
        let cfg = FusionConfig { mode: FusionMode::RewardSum, ..FusionConfig::default() };
        let (fused, _) = fuse_group(&rewards, &cfg).unwrap();
        // mixed rewards [1, 2, 0] standardized directly
        let want = standardize_group(&[1.0, 2.0, 0.0], cfg.std_guard).unwrap();
        for (f, w) in fused.iter().zip(&want) {
            assert_eq!(f.a_fused, *w);
            assert_eq!(f.lambda, 0.0);
        }
    }

    #[test]
    fn fuse_group_rejects_partial_judging() {
        let rewards = vec![
            RewardPair { r_biz: 1.0, r_sem: Some(0.0) },
            RewardPair { r_biz: 0.0, r_sem: None },
        ];
        assert!(fuse_group(&rewards, &FusionConfig::default()).is_err());
    }
}
