//! Aspect-level semantic scoring.
//!
//! Holds the aspect-scoring interface, the synthetic oracle scorer that
//! stands in for an LLM judge, the reward utilities used to train an aspect
//! scorer, the judge-quality metrics, and the sparse-query selection and
//! cache.
//!
//! Aspect alphabets:
//! - profile relevance: {-1, -0.5, 0, 0.5, 1}
//! - future-interest relevance: {0, 0.5, 1}
//! - novelty: {0, 0.5, 1}
//! - contextual relevance: {-1, 0}, absent when the world has no context tag

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Mutex;

use thiserror::Error;

use crate::catalog::{Catalog, Item};
use crate::math::cosine;
use crate::rngutil;
use crate::synthworld::UserContext;

#[derive(Debug, Error, PartialEq)]
pub enum JudgeError {
    #[error("score lists must have equal length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("score lists disagree on context presence")]
    ContextMismatch,
    #[error("preference pair set is empty")]
    EmptyPairSet,
    #[error("preference pair references index {0} outside the score list")]
    PairIndexOutOfRange(usize),
    #[error("malformed judged-scores file: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for JudgeError {
    fn from(e: std::io::Error) -> Self {
        JudgeError::Io(e.to_string())
    }
}

/// Discrete semantic evidence for one (user, item) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AspectScores {
    pub profile: f64,
    pub future: f64,
    pub novelty: f64,
    /// `None` iff the world has no context tag.
    pub context: Option<f64>,
}

impl AspectScores {
    pub fn dims(&self) -> usize {
        3 + usize::from(self.context.is_some())
    }

    /// Aspect values in fixed order (profile, future, novelty[, context]).
    pub fn as_vec(&self) -> Vec<f64> {
        let mut v = vec![self.profile, self.future, self.novelty];
        if let Some(c) = self.context {
            v.push(c);
        }
        v
    }
}

/// Deterministic scoring contract: same inputs, same outputs within one
/// instance. Pure and reentrant; safe to call from many workers.
pub trait AspectScorer: Sync {
    fn score(&self, ctx: &UserContext, item: &Item, catalog: &Catalog) -> AspectScores;
}

/// Evenly spaced bins over [-1, 1] onto the 5-level alphabet.
fn quantize5(x: f64) -> f64 {
    if x < -0.6 {
        -1.0
    } else if x < -0.2 {
        -0.5
    } else if x < 0.2 {
        0.0
    } else if x < 0.6 {
        0.5
    } else {
        1.0
    }
}

/// Evenly spaced bins over [0, 1] onto the 3-level alphabet; negative
/// similarity clamps to the alphabet floor.
fn quantize3(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x < 1.0 / 3.0 {
        0.0
    } else if x < 2.0 / 3.0 {
        0.5
    } else {
        1.0
    }
}

/// Synthetic oracle scorer with access to the world's ground truth.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    /// How many of the most recent history items feed the future-interest
    /// similarity.
    pub recency_window: usize,
    /// Geometric weight applied per step of age; 1.0 means uniform weights.
    pub recency_decay: f64,
    pub n_context_tags: u8,
}

impl OracleScorer {
    pub fn new(n_context_tags: u8) -> Self {
        OracleScorer { recency_window: 5, recency_decay: 0.8, n_context_tags }
    }

    fn recency_mean(&self, ctx: &UserContext, catalog: &Catalog) -> Vec<f64> {
        let dim = catalog.feature_dim();
        let mut acc = vec![0.0; dim];
        let mut total = 0.0;
        let n = ctx.history.len().min(self.recency_window);
        for (age, &h) in ctx.history.iter().rev().take(n).enumerate() {
            let w = self.recency_decay.powi(age as i32);
            let f = &catalog.get(h).expect("history item in catalog").feature_vector;
            for (a, x) in acc.iter_mut().zip(f) {
                *a += w * x;
            }
            total += w;
        }
        if total > 0.0 {
            for a in acc.iter_mut() {
                *a /= total;
            }
        }
        acc
    }
}

impl AspectScorer for OracleScorer {
    fn score(&self, ctx: &UserContext, item: &Item, catalog: &Catalog) -> AspectScores {
        let profile = quantize5(cosine(&ctx.profile_vector, &item.feature_vector));
        let recency = self.recency_mean(ctx, catalog);
        let future = quantize3(cosine(&recency, &item.feature_vector));

        let mut root_seen = false;
        let mut pair_seen = false;
        for &h in &ctx.history {
            let hi = catalog.get(h).expect("history item in catalog");
            if hi.root_category == item.root_category {
                root_seen = true;
                if hi.sub_category == item.sub_category {
                    pair_seen = true;
                }
            }
        }
        let novelty = if future >= 0.5 && !root_seen {
            1.0
        } else if future >= 0.5 && !pair_seen {
            0.5
        } else {
            0.0
        };

        let context = ctx.context_tag.map(|tag| {
            if self.n_context_tags > 0 && item.root_category % self.n_context_tags as u16 == tag as u16 {
                0.0
            } else {
                -1.0
            }
        });
        AspectScores { profile, future, novelty, context }
    }
}

/// Ground-truth holistic score under the user's hidden aspect trade-off.
/// World generation and acceptance oracles only; never visible to training.
pub fn planted_score(user: &UserContext, scores: &AspectScores) -> f64 {
    let mut s = user.latent_weights[0] * scores.profile
        + user.latent_weights[1] * scores.future
        + user.latent_weights[2] * scores.novelty;
    if let Some(c) = scores.context {
        s += user.latent_weights[3] * c;
    }
    s
}

fn check_aligned(predicted: &[AspectScores], gold: &[AspectScores]) -> Result<(), JudgeError> {
    if predicted.len() != gold.len() {
        return Err(JudgeError::LengthMismatch(predicted.len(), gold.len()));
    }
    let ctx_present = gold.first().map(|s| s.context.is_some());
    if let Some(present) = ctx_present {
        for s in predicted.iter().chain(gold) {
            if s.context.is_some() != present {
                return Err(JudgeError::ContextMismatch);
            }
        }
    }
    Ok(())
}

/// Point-wise scorer reward: per dimension, exact-match accuracy plus
/// order consistency over the gold-discordant pairs, summed over dimensions
/// with unit weights. Maximum value is 2 per dimension.
///
/// Pairs with equal gold scores are excluded from the ordering term; with no
/// eligible pairs (singleton lists included) the ordering term is 1.
pub fn aspect_reward(predicted: &[AspectScores], gold: &[AspectScores]) -> Result<f64, JudgeError> {
    check_aligned(predicted, gold)?;
    if predicted.is_empty() {
        return Err(JudgeError::LengthMismatch(0, 0));
    }
    let n = gold.len();
    let dims = gold[0].dims();
    let mut total = 0.0;
    for d in 0..dims {
        let pv: Vec<f64> = predicted.iter().map(|s| s.as_vec()[d]).collect();
        let gv: Vec<f64> = gold.iter().map(|s| s.as_vec()[d]).collect();
        let acc = pv.iter().zip(&gv).filter(|(p, g)| p == g).count() as f64 / n as f64;
        let mut eligible = 0usize;
        let mut concordant = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                if gv[i] != gv[j] {
                    eligible += 1;
                    if (pv[i] - pv[j]) * (gv[i] - gv[j]) > 0.0 {
                        concordant += 1;
                    }
                }
            }
        }
        let ord = if eligible == 0 { 1.0 } else { concordant as f64 / eligible as f64 };
        total += acc + ord;
    }
    Ok(total)
}

/// A preference pair over indices into a score list: `better` is preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldPair {
    pub better: usize,
    pub worse: usize,
}

/// Fraction of pairs whose predicted strict ordering agrees with the gold
/// ordering; predicted ties count 0.5.
pub fn pair_auc(predicted: &[f64], gold_order: &[GoldPair]) -> Result<f64, JudgeError> {
    if gold_order.is_empty() {
        return Err(JudgeError::EmptyPairSet);
    }
    let mut sum = 0.0;
    for p in gold_order {
        let bad = p.better.max(p.worse);
        if bad >= predicted.len() {
            return Err(JudgeError::PairIndexOutOfRange(bad));
        }
        sum += match predicted[p.better].partial_cmp(&predicted[p.worse]) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        };
    }
    Ok(sum / gold_order.len() as f64)
}

/// Per-dimension exact-match rates, macro-averaged across dimensions.
pub fn point_acc(predicted: &[AspectScores], gold: &[AspectScores]) -> Result<f64, JudgeError> {
    check_aligned(predicted, gold)?;
    if predicted.is_empty() {
        return Err(JudgeError::LengthMismatch(0, 0));
    }
    let n = gold.len();
    let dims = gold[0].dims();
    let mut acc = 0.0;
    for d in 0..dims {
        let hit = predicted
            .iter()
            .zip(gold)
            .filter(|(p, g)| p.as_vec()[d] == g.as_vec()[d])
            .count();
        acc += hit as f64 / n as f64;
    }
    Ok(acc / dims as f64)
}

/// Bernoulli(p) selection at episode granularity, reproducible from the seed.
/// All rollouts of a selected episode are judged so that within-group
/// standardization sees the complete group.
pub fn judged_subset(n_episodes: usize, p: f64, seed: u64) -> Vec<bool> {
    (0..n_episodes).map(|i| episode_is_judged(i, p, seed)).collect()
}

/// Single-episode view of [`judged_subset`]; the two always agree.
pub fn episode_is_judged(episode_index: usize, p: f64, seed: u64) -> bool {
    rngutil::unit_f64(rngutil::mix(seed, &[0x9d6e, episode_index as u64])) < p
}

/// Memo of scorer outputs keyed by (user, item); values are deterministic so
/// last-writer-wins is safe.
#[derive(Debug, Default)]
pub struct JudgeCache {
    map: HashMap<(u32, u32), AspectScores>,
    hits: u64,
    misses: u64,
}

impl JudgeCache {
    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Wraps any scorer with a shared cache.
pub struct CachedScorer<S> {
    inner: S,
    cache: Mutex<JudgeCache>,
}

impl<S: AspectScorer> CachedScorer<S> {
    pub fn new(inner: S) -> Self {
        CachedScorer { inner, cache: Mutex::new(JudgeCache::default()) }
    }

    pub fn stats(&self) -> (u64, u64) {
        let c = self.cache.lock().unwrap();
        (c.hits(), c.misses())
    }

    /// Persists cached entries in the judged-scores schema:
    /// `user_id,item_id,profile,future,novelty,context`.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), JudgeError> {
        let cache = self.cache.lock().unwrap();
        let mut keys: Vec<&(u32, u32)> = cache.map.keys().collect();
        keys.sort();
        writeln!(w, "semrec-judged v1")?;
        for k in keys {
            let s = &cache.map[k];
            let ctx = s.context.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
            writeln!(w, "{},{},{},{},{},{}", k.0, k.1, s.profile, s.future, s.novelty, ctx)?;
        }
        Ok(())
    }

    /// Warm-restarts the cache from a judged-scores file.
    pub fn load_into<R: BufRead>(&self, r: R) -> Result<usize, JudgeError> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| JudgeError::Parse("empty file".into()))??;
        if header.trim() != "semrec-judged v1" {
            return Err(JudgeError::Parse(format!("bad header: {header}")));
        }
        let mut cache = self.cache.lock().unwrap();
        let mut n = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 6 {
                return Err(JudgeError::Parse(format!("bad line: {line}")));
            }
            let perr = |e: String| JudgeError::Parse(e);
            let user: u32 = parts[0].parse().map_err(|e: std::num::ParseIntError| perr(e.to_string()))?;
            let item: u32 = parts[1].parse().map_err(|e: std::num::ParseIntError| perr(e.to_string()))?;
            let scores = AspectScores {
                profile: parts[2].parse().map_err(|e: std::num::ParseFloatError| perr(e.to_string()))?,
                future: parts[3].parse().map_err(|e: std::num::ParseFloatError| perr(e.to_string()))?,
                novelty: parts[4].parse().map_err(|e: std::num::ParseFloatError| perr(e.to_string()))?,
                context: if parts[5] == "-" {
                    None
                } else {
                    Some(parts[5].parse().map_err(|e: std::num::ParseFloatError| perr(e.to_string()))?)
                },
            };
            cache.map.insert((user, item), scores);
            n += 1;
        }
        Ok(n)
    }
}

impl<S: AspectScorer> AspectScorer for CachedScorer<S> {
    fn score(&self, ctx: &UserContext, item: &Item, catalog: &Catalog) -> AspectScores {
        let key = (ctx.user_id, item.item_id);
        {
            let mut cache = self.cache.lock().unwrap();
            if let Some(s) = cache.map.get(&key).copied() {
                cache.hits += 1;
                return s;
            }
            cache.misses += 1;
        }
        let s = self.inner.score(ctx, item, catalog);
        self.cache.lock().unwrap().map.insert(key, s);
        s
    }
}
