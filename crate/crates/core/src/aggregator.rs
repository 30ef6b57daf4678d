//! User-conditional aspect aggregation.
//!
//! A small policy maps observable context features to independent
//! categorical distributions over discrete importance levels {0..K}, one per
//! aspect dimension. Sampled level vectors normalize onto the simplex, score
//! candidates holistically, and earn a binary preference-consistency reward;
//! training ascends a KL-regularized group-relative objective against a
//! frozen reference copy.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::a2po::standardize_group;
use crate::catalog::Catalog;
use crate::features::context_features;
use crate::judge::{planted_score, AspectScorer};
use crate::math::{l2_norm, log_softmax};
use crate::rngutil;
use crate::synthworld::{UserContext, World};

#[derive(Debug, Error, PartialEq)]
pub enum AggregatorError {
    #[error("weight vector has {0} dimensions but scores have {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid aggregator config: {0}")]
    BadConfig(String),
    #[error("preference pair set is empty")]
    EmptyPairSet,
    #[error("malformed preference-pair file: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for AggregatorError {
    fn from(e: std::io::Error) -> Self {
        AggregatorError::Io(e.to_string())
    }
}

/// Discrete importance levels, one entry in {0..K} per aspect dimension.
pub type WeightLevels = Vec<u8>;

/// Projects levels onto the simplex; the all-zero action falls back to
/// uniform weights.
pub fn normalize_levels(z: &[u8]) -> Vec<f64> {
    let total: u32 = z.iter().map(|&v| v as u32).sum();
    if total == 0 {
        vec![1.0 / z.len() as f64; z.len()]
    } else {
        z.iter().map(|&v| v as f64 / total as f64).collect()
    }
}

/// Weighted sum of aspect scores.
pub fn holistic_score(w: &[f64], s: &[f64]) -> Result<f64, AggregatorError> {
    if w.len() != s.len() {
        return Err(AggregatorError::DimensionMismatch(w.len(), s.len()));
    }
    Ok(w.iter().zip(s).map(|(a, b)| a * b).sum())
}

/// Preference-consistency reward: 1 iff the winner's holistic score is
/// strictly higher.
pub fn pairwise_reward(s_hol_winner: f64, s_hol_loser: f64) -> f64 {
    if s_hol_winner > s_hol_loser {
        1.0
    } else {
        0.0
    }
}

/// Where a preference pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    /// Two candidates compared under one request context.
    Intra,
    /// Interacted target contrasted with a non-interacted exposure.
    Behavioral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreferencePair {
    pub user_index: usize,
    pub winner: u32,
    pub loser: u32,
    pub source: PairSource,
}

/// Anything that can produce simplex weights for a context; lets training
/// run with a learned aggregator or a fixed uniform baseline.
pub trait WeightProvider: Sync {
    fn weights(&self, ctx: &UserContext, catalog: &Catalog, dims: usize) -> Vec<f64>;
}

/// Uniform-aggregation baseline (w_d = 1/D).
pub struct UniformWeights;

impl WeightProvider for UniformWeights {
    fn weights(&self, _ctx: &UserContext, _catalog: &Catalog, dims: usize) -> Vec<f64> {
        vec![1.0 / dims as f64; dims]
    }
}

/// Per-dimension linear-softmax policy over importance levels, with a frozen
/// reference copy for the KL regularizer.
#[derive(Debug, Clone)]
pub struct AggregatorPolicy {
    feature_len: usize,
    dims: usize,
    /// Levels run 0..=k.
    k: u8,
    psi: Vec<f64>,
    psi_ref: Vec<f64>,
}

impl AggregatorPolicy {
    pub fn new(
        feature_len: usize,
        dims: usize,
        k: u8,
        init_scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let n = dims * (k as usize + 1) * (feature_len + 1);
        let psi: Vec<f64> = (0..n).map(|_| init_scale * (rng.gen::<f64>() * 2.0 - 1.0)).collect();
        let psi_ref = psi.clone();
        AggregatorPolicy { feature_len, dims, k, psi, psi_ref }
    }

    /// Rebuilds a policy from checkpointed parameters.
    pub fn from_parts(
        feature_len: usize,
        dims: usize,
        k: u8,
        psi: Vec<f64>,
        psi_ref: Vec<f64>,
    ) -> Self {
        let n = dims * (k as usize + 1) * (feature_len + 1);
        assert_eq!(psi.len(), n);
        assert_eq!(psi_ref.len(), n);
        AggregatorPolicy { feature_len, dims, k, psi, psi_ref }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn k(&self) -> u8 {
        self.k
    }

    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn psi_mut(&mut self) -> &mut Vec<f64> {
        &mut self.psi
    }

    pub fn psi_ref(&self) -> &[f64] {
        &self.psi_ref
    }

    pub fn set_params(&mut self, psi: Vec<f64>, psi_ref: Vec<f64>) {
        assert_eq!(psi.len(), self.psi.len());
        assert_eq!(psi_ref.len(), self.psi_ref.len());
        self.psi = psi;
        self.psi_ref = psi_ref;
    }

    fn n_levels(&self) -> usize {
        self.k as usize + 1
    }

    /// Offset of the weight row for (dimension, level) in the flat layout:
    /// each row is `feature_len` weights followed by one bias.
    fn row(&self, d: usize, level: usize) -> usize {
        (d * self.n_levels() + level) * (self.feature_len + 1)
    }

    fn level_log_probs(&self, params: &[f64], phi: &[f64], d: usize) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.n_levels())
            .map(|lv| {
                let r = self.row(d, lv);
                params[r..r + self.feature_len].iter().zip(phi).map(|(w, x)| w * x).sum::<f64>()
                    + params[r + self.feature_len]
            })
            .collect();
        log_softmax(&logits)
    }

    pub fn sample_levels(&self, phi: &[f64], rng: &mut ChaCha8Rng) -> WeightLevels {
        (0..self.dims)
            .map(|d| {
                let logp = self.level_log_probs(&self.psi, phi, d);
                let draw: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = logp.len() - 1;
                for (lv, lp) in logp.iter().enumerate() {
                    acc += lp.exp();
                    if draw < acc {
                        pick = lv;
                        break;
                    }
                }
                pick as u8
            })
            .collect()
    }

    pub fn log_prob(&self, phi: &[f64], z: &[u8]) -> f64 {
        z.iter()
            .enumerate()
            .map(|(d, &lv)| self.level_log_probs(&self.psi, phi, d)[lv as usize])
            .sum()
    }

    /// Sum over dimensions of KL(π_ψ(·|x) ‖ π_ref(·|x)).
    pub fn kl_to_ref(&self, phi: &[f64]) -> f64 {
        (0..self.dims)
            .map(|d| {
                let lp = self.level_log_probs(&self.psi, phi, d);
                let lq = self.level_log_probs(&self.psi_ref, phi, d);
                lp.iter().zip(&lq).map(|(&a, &b)| a.exp() * (a - b)).sum::<f64>()
            })
            .sum()
    }

    /// Deterministic read-out: normalize the per-dimension expected levels.
    pub fn expected_weights(&self, phi: &[f64]) -> Vec<f64> {
        let expected: Vec<f64> = (0..self.dims)
            .map(|d| {
                self.level_log_probs(&self.psi, phi, d)
                    .iter()
                    .enumerate()
                    .map(|(lv, lp)| lv as f64 * lp.exp())
                    .sum()
            })
            .collect();
        let total: f64 = expected.iter().sum();
        if total <= 0.0 {
            vec![1.0 / self.dims as f64; self.dims]
        } else {
            expected.iter().map(|e| e / total).collect()
        }
    }

    /// Surrogate for one preference pair with fixed sampled actions:
    /// mean_g A_g·log π_ψ(z_g|x) − β·KL(π_ψ‖π_ref). Returns the objective
    /// and its exact gradient for an ascent step.
    pub fn pair_surrogate(
        &self,
        phi: &[f64],
        samples: &[WeightLevels],
        advantages: &[f64],
        beta: f64,
    ) -> (f64, Vec<f64>) {
        let g = samples.len() as f64;
        let mut grad = vec![0.0; self.psi.len()];
        let mut objective = 0.0;
        for d in 0..self.dims {
            let lp = self.level_log_probs(&self.psi, phi, d);
            let lq = self.level_log_probs(&self.psi_ref, phi, d);
            let kl_d: f64 = lp.iter().zip(&lq).map(|(&a, &b)| a.exp() * (a - b)).sum();
            objective -= beta * kl_d;
            // accumulate per-logit gradients for this dimension
            let mut dlogits = vec![0.0; self.n_levels()];
            for (z, &adv) in samples.iter().zip(advantages) {
                objective += adv * lp[z[d] as usize] / g;
                for (lv, dl) in dlogits.iter_mut().enumerate() {
                    let p = lp[lv].exp();
                    let score = if lv == z[d] as usize { 1.0 - p } else { -p };
                    *dl += adv * score / g;
                }
            }
            for (lv, dl) in dlogits.iter_mut().enumerate() {
                let p = lp[lv].exp();
                *dl -= beta * p * (lp[lv] - lq[lv] - kl_d);
            }
            for (lv, &dl) in dlogits.iter().enumerate() {
                if dl == 0.0 {
                    continue;
                }
                let r = self.row(d, lv);
                for (i, &x) in phi.iter().enumerate() {
                    grad[r + i] += dl * x;
                }
                grad[r + self.feature_len] += dl;
            }
        }
        (objective, grad)
    }

    pub fn step(&mut self, grad: &[f64], step_size: f64) {
        for (p, g) in self.psi.iter_mut().zip(grad) {
            *p += step_size * g;
        }
    }
}

impl WeightProvider for AggregatorPolicy {
    fn weights(&self, ctx: &UserContext, catalog: &Catalog, dims: usize) -> Vec<f64> {
        assert_eq!(dims, self.dims, "aggregator trained for {} dims, asked for {dims}", self.dims);
        let n_tags = (self.feature_len - 2 * catalog.feature_dim()) as u8;
        let phi = context_features(ctx, catalog, n_tags);
        self.expected_weights(&phi)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregatorTrainConfig {
    pub group_size: usize,
    pub beta: f64,
    pub step_size: f64,
}

impl Default for AggregatorTrainConfig {
    fn default() -> Self {
        AggregatorTrainConfig { group_size: 16, beta: 0.04, step_size: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregatorDiagnostics {
    pub mean_reward: f64,
    pub mean_kl: f64,
    pub grad_norm: f64,
}

/// One pass over a batch of preference pairs: per pair, sample G level
/// vectors, reward preference consistency, standardize within the group
/// (an all-equal group is not an error — it yields a pure-KL step), and take
/// one ascent step.
#[allow(clippy::too_many_arguments)]
pub fn aggregator_train_step(
    policy: &mut AggregatorPolicy,
    world: &World,
    scorer: &dyn AspectScorer,
    pairs: &[PreferencePair],
    cfg: &AggregatorTrainConfig,
    epoch: usize,
    seed: u64,
) -> Result<AggregatorDiagnostics, AggregatorError> {
    if cfg.group_size < 2 {
        return Err(AggregatorError::BadConfig("group_size must be >= 2".into()));
    }
    if pairs.is_empty() {
        return Err(AggregatorError::EmptyPairSet);
    }
    let n_tags = world.config.n_context_tags;
    let mut sum_reward = 0.0;
    let mut sum_kl = 0.0;
    let mut sum_grad = 0.0;
    for (idx, pair) in pairs.iter().enumerate() {
        let ctx = &world.users[pair.user_index];
        let phi = context_features(ctx, &world.catalog, n_tags);
        let s_w = scorer
            .score(ctx, world.catalog.get(pair.winner).expect("winner in catalog"), &world.catalog)
            .as_vec();
        let s_l = scorer
            .score(ctx, world.catalog.get(pair.loser).expect("loser in catalog"), &world.catalog)
            .as_vec();
        let mut rng = rngutil::rng(seed, &[epoch as u64, idx as u64, 0x4a9]);
        let mut samples = Vec::with_capacity(cfg.group_size);
        let mut rewards = Vec::with_capacity(cfg.group_size);
        for _ in 0..cfg.group_size {
            let z = policy.sample_levels(&phi, &mut rng);
            let w = normalize_levels(&z);
            let r = pairwise_reward(holistic_score(&w, &s_w)?, holistic_score(&w, &s_l)?);
            samples.push(z);
            rewards.push(r);
        }
        let advantages =
            standardize_group(&rewards, 1e-8).expect("group_size >= 2 checked above");
        let (_, grad) = policy.pair_surrogate(&phi, &samples, &advantages, cfg.beta);
        sum_reward += rewards.iter().sum::<f64>() / cfg.group_size as f64;
        sum_kl += policy.kl_to_ref(&phi);
        sum_grad += l2_norm(&grad);
        policy.step(&grad, cfg.step_size);
    }
    let n = pairs.len() as f64;
    Ok(AggregatorDiagnostics {
        mean_reward: sum_reward / n,
        mean_kl: sum_kl / n,
        grad_norm: sum_grad / n,
    })
}

/// Builds preference pairs from the world's ground truth, alternating the
/// two sources: intra-request comparisons of two random candidates, and
/// behavioral contrasts of an episode target against a random exposure.
/// Pairs whose planted holistic scores tie are skipped.
pub fn build_preference_pairs(
    world: &World,
    scorer: &dyn AspectScorer,
    n_pairs: usize,
    seed: u64,
) -> Vec<PreferencePair> {
    let mut rng = rngutil::rng(seed, &[0x9a12]);
    let n_items = world.catalog.len() as u32;
    let ids: Vec<u32> = world.catalog.items().iter().map(|it| it.item_id).collect();
    let mut out = Vec::with_capacity(n_pairs);
    let mut attempts = 0usize;
    while out.len() < n_pairs && attempts < n_pairs * 50 {
        attempts += 1;
        let behavioral = out.len() % 2 == 1;
        let (user_index, a, b, source) = if behavioral {
            let ep = &world.episodes[rng.gen_range(0..world.episodes.len())];
            let mut other = ids[rng.gen_range(0..n_items as usize)];
            while other == ep.target_item {
                other = ids[rng.gen_range(0..n_items as usize)];
            }
            (ep.user_index, ep.target_item, other, PairSource::Behavioral)
        } else {
            let u = rng.gen_range(0..world.users.len());
            let a = ids[rng.gen_range(0..n_items as usize)];
            let mut b = ids[rng.gen_range(0..n_items as usize)];
            while b == a {
                b = ids[rng.gen_range(0..n_items as usize)];
            }
            (u, a, b, PairSource::Intra)
        };
        let ctx = &world.users[user_index];
        let sa = planted_score(ctx, &scorer.score(ctx, world.catalog.get(a).unwrap(), &world.catalog));
        let sb = planted_score(ctx, &scorer.score(ctx, world.catalog.get(b).unwrap(), &world.catalog));
        if sa == sb {
            continue;
        }
        let (winner, loser) = if sa > sb { (a, b) } else { (b, a) };
        out.push(PreferencePair { user_index, winner, loser, source });
    }
    out
}

/// Held-out check: fraction of pairs the provider's weights order correctly
/// (strict inequality, matching the training reward).
pub fn pairwise_accuracy(
    provider: &dyn WeightProvider,
    world: &World,
    scorer: &dyn AspectScorer,
    pairs: &[PreferencePair],
) -> Result<f64, AggregatorError> {
    if pairs.is_empty() {
        return Err(AggregatorError::EmptyPairSet);
    }
    let mut hits = 0usize;
    for pair in pairs {
        let ctx = &world.users[pair.user_index];
        let s_w = scorer
            .score(ctx, world.catalog.get(pair.winner).expect("winner in catalog"), &world.catalog)
            .as_vec();
        let s_l = scorer
            .score(ctx, world.catalog.get(pair.loser).expect("loser in catalog"), &world.catalog)
            .as_vec();
        let w = provider.weights(ctx, &world.catalog, s_w.len());
        if holistic_score(&w, &s_w)? > holistic_score(&w, &s_l)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

/// Fraction of users whose learned weight argmax matches the hidden
/// latent-weight argmax (restricted to the dimensions the policy models).
pub fn argmax_weight_match(policy: &AggregatorPolicy, world: &World) -> f64 {
    let n_tags = world.config.n_context_tags;
    let mut hits = 0usize;
    for u in &world.users {
        let phi = context_features(u, &world.catalog, n_tags);
        let w = policy.expected_weights(&phi);
        let learned = argmax(&w);
        let truth = argmax(&u.latent_weights[..policy.dims()]);
        if learned == truth {
            hits += 1;
        }
    }
    hits as f64 / world.users.len() as f64
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Line format: `user_id,winner,loser,source`.
pub fn save_pairs<W: Write>(pairs: &[PreferencePair], world: &World, mut w: W) -> Result<(), AggregatorError> {
    writeln!(w, "semrec-pairs v1")?;
    for p in pairs {
        let src = match p.source {
            PairSource::Intra => "intra",
            PairSource::Behavioral => "behavioral",
        };
        writeln!(w, "{},{},{},{}", world.users[p.user_index].user_id, p.winner, p.loser, src)?;
    }
    Ok(())
}

pub fn load_pairs<R: BufRead>(r: R, world: &World) -> Result<Vec<PreferencePair>, AggregatorError> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| AggregatorError::Parse("empty file".into()))??;
    if header.trim() != "semrec-pairs v1" {
        return Err(AggregatorError::Parse(format!("bad header: {header}")));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(AggregatorError::Parse(format!("bad line: {line}")));
        }
        let user_id: u32 =
            parts[0].parse().map_err(|_| AggregatorError::Parse(format!("bad user: {line}")))?;
        let user_index = world
            .users
            .iter()
            .position(|u| u.user_id == user_id)
            .ok_or_else(|| AggregatorError::Parse(format!("unknown user {user_id}")))?;
        let winner: u32 =
            parts[1].parse().map_err(|_| AggregatorError::Parse(format!("bad winner: {line}")))?;
        let loser: u32 =
            parts[2].parse().map_err(|_| AggregatorError::Parse(format!("bad loser: {line}")))?;
        if winner == loser {
            return Err(AggregatorError::Parse(format!("winner equals loser: {line}")));
        }
        let source = match parts[3] {
            "intra" => PairSource::Intra,
            "behavioral" => PairSource::Behavioral,
            other => return Err(AggregatorError::Parse(format!("bad source: {other}"))),
        };
        out.push(PreferencePair { user_index, winner, loser, source });
    }
    Ok(out)
}
