//! Synthetic recommendation world with known ground truth.
//!
//! Users carry a hidden 4-vector of aspect trade-offs on the simplex; items
//! get feature vectors clustered by (root, sub) category; histories are
//! sampled consistently with each user's profile; and held-out targets are
//! planted so that every novelty level receives its quota of episodes.
//! Everything is reproducible from the seed.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{assign_sids, Catalog, CatalogError, Codebook, Item};
use crate::judge::{AspectScorer, OracleScorer};
use crate::math::normalize_in_place;
use crate::rngutil;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    BadConfig(String),
    #[error("novelty-level quotas cannot be met: {0}")]
    InfeasibleQuota(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("malformed {what} file: {detail}")]
    Parse { what: &'static str, detail: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for WorldError {
    fn from(e: std::io::Error) -> Self {
        WorldError::Io(e.to_string())
    }
}

/// How the hidden per-user aspect trade-off is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    /// Flat Dirichlet over the simplex (context component zeroed when the
    /// world has no context tags).
    #[default]
    Dirichlet,
    /// One-hot on aspect `tag % 3` (profile / future / novelty); requires
    /// context tags so that the segment is recoverable from features.
    OneHotByTag,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_users: usize,
    pub n_items: usize,
    pub n_roots: u16,
    pub n_subs_per_root: u16,
    pub feature_dim: usize,
    pub history_len_min: usize,
    pub history_len_max: usize,
    pub n_episodes: usize,
    /// 0 means the world has no request-time context and the Context aspect
    /// is dropped everywhere downstream.
    pub n_context_tags: u8,
    pub latent_mode: LatentMode,
    /// Probability that a planted target is the candidate with the highest
    /// hidden-weighted semantic score (rather than a uniform pick).
    pub target_affinity: f64,
    /// Minimum fraction of episodes guaranteed per novelty level.
    pub level_quota: f64,
    /// Scale of within-cluster feature noise.
    pub feature_noise: f64,
    /// How strongly a user's hidden novelty weight biases them toward
    /// high-novelty episodes (beyond the quota-guaranteed share).
    pub novelty_coupling: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 0,
            n_users: 256,
            n_items: 512,
            n_roots: 8,
            n_subs_per_root: 8,
            feature_dim: 8,
            history_len_min: 6,
            history_len_max: 10,
            n_episodes: 5000,
            n_context_tags: 0,
            latent_mode: LatentMode::Dirichlet,
            target_affinity: 0.7,
            level_quota: 0.1,
            feature_noise: 0.35,
            novelty_coupling: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserContext {
    pub user_id: u32,
    pub profile_vector: Vec<f64>,
    /// Item ids, most recent last.
    pub history: Vec<u32>,
    pub context_tag: Option<u8>,
    /// Hidden ground-truth aspect trade-off (profile, future, novelty,
    /// context); visible only to world generation and the oracle judge.
    pub latent_weights: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Episode {
    pub user_index: usize,
    pub target_item: u32,
    pub novelty_level: u8,
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub catalog: Catalog,
    pub users: Vec<UserContext>,
    pub episodes: Vec<Episode>,
}

impl World {
    pub fn context(&self, ep: &Episode) -> &UserContext {
        &self.users[ep.user_index]
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    /// Builds the deterministic codebook for this world's catalog.
    pub fn codebook(&self, levels: usize, codebook_size: u16) -> Result<Codebook, CatalogError> {
        assign_sids(&self.catalog, levels, codebook_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BusinessMode {
    #[default]
    Exact,
    Graded,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BusinessRewardConfig {
    pub mode: BusinessMode,
    pub graded_same_sub: f64,
    pub graded_same_root: f64,
}

impl Default for BusinessRewardConfig {
    fn default() -> Self {
        BusinessRewardConfig { mode: BusinessMode::Exact, graded_same_sub: 0.3, graded_same_root: 0.1 }
    }
}

impl BusinessRewardConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if !(0.0 <= self.graded_same_root
            && self.graded_same_root <= self.graded_same_sub
            && self.graded_same_sub <= 1.0)
        {
            return Err(WorldError::BadConfig(format!(
                "graded reward must satisfy 0 <= same_root ({}) <= same_sub ({}) <= 1",
                self.graded_same_root, self.graded_same_sub
            )));
        }
        Ok(())
    }
}

/// Novelty bucketing for a (history, target) pair. Exhaustive and mutually
/// exclusive; returns the first matching level in order 0, 1, 2, 3.
pub fn novelty_of(history: &[u32], target: u32, catalog: &Catalog) -> Result<u8, WorldError> {
    let t = catalog.get(target)?;
    if history.contains(&target) {
        return Ok(0);
    }
    let mut same_sub = false;
    let mut same_root = false;
    for &h in history {
        let hi = catalog.get(h)?;
        if hi.root_category == t.root_category {
            same_root = true;
            if hi.sub_category == t.sub_category {
                same_sub = true;
            }
        }
    }
    Ok(if same_sub {
        1
    } else if same_root {
        2
    } else {
        3
    })
}

/// Ranking-based business proxy against the ground-truth next item.
pub fn business_reward(
    config: &BusinessRewardConfig,
    generated: u32,
    target: u32,
    catalog: &Catalog,
) -> Result<f64, WorldError> {
    if generated == target {
        return Ok(1.0);
    }
    match config.mode {
        BusinessMode::Exact => Ok(0.0),
        BusinessMode::Graded => {
            let g = catalog.get(generated)?;
            let t = catalog.get(target)?;
            if g.root_category == t.root_category && g.sub_category == t.sub_category {
                Ok(config.graded_same_sub)
            } else if g.root_category == t.root_category {
                Ok(config.graded_same_root)
            } else {
                Ok(0.0)
            }
        }
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| gauss(rng)).collect();
    normalize_in_place(&mut v);
    v
}

fn gen_catalog(cfg: &WorldConfig) -> Result<Catalog, WorldError> {
    let mut rng = rngutil::rng(cfg.seed, &[0x17a1]);
    let n_buckets = cfg.n_roots as usize * cfg.n_subs_per_root as usize;
    // root centers, then per-sub centers perturbed off the root
    let mut root_centers = Vec::new();
    for _ in 0..cfg.n_roots {
        root_centers.push(random_unit(&mut rng, cfg.feature_dim));
    }
    let mut sub_centers: BTreeMap<(u16, u16), Vec<f64>> = BTreeMap::new();
    for r in 0..cfg.n_roots {
        for s in 0..cfg.n_subs_per_root {
            let mut c: Vec<f64> = root_centers[r as usize]
                .iter()
                .map(|x| x + 0.6 * gauss(&mut rng))
                .collect();
            normalize_in_place(&mut c);
            sub_centers.insert((r, s), c);
        }
    }
    // spread items evenly over buckets, remainder to the earliest buckets
    let base = cfg.n_items / n_buckets;
    let extra = cfg.n_items % n_buckets;
    let mut items = Vec::with_capacity(cfg.n_items);
    let mut id = 0u32;
    let mut bucket_idx = 0usize;
    for r in 0..cfg.n_roots {
        for s in 0..cfg.n_subs_per_root {
            let count = base + usize::from(bucket_idx < extra);
            for res in 0..count {
                let center = &sub_centers[&(r, s)];
                let mut f: Vec<f64> =
                    center.iter().map(|x| x + cfg.feature_noise * gauss(&mut rng)).collect();
                normalize_in_place(&mut f);
                items.push(Item {
                    item_id: id,
                    root_category: r,
                    sub_category: s,
                    residual_index: res as u32,
                    feature_vector: f,
                });
                id += 1;
            }
            bucket_idx += 1;
        }
    }
    Ok(Catalog::new(items)?)
}

fn sample_latent(cfg: &WorldConfig, tag: Option<u8>, rng: &mut ChaCha8Rng) -> [f64; 4] {
    match cfg.latent_mode {
        LatentMode::Dirichlet => {
            let mut w = [0.0f64; 4];
            let dims = if cfg.n_context_tags > 0 { 4 } else { 3 };
            let mut sum = 0.0;
            for slot in w.iter_mut().take(dims) {
                let e = -rng.gen_range(f64::MIN_POSITIVE..1.0f64).ln();
                *slot = e;
                sum += e;
            }
            for slot in w.iter_mut() {
                *slot /= sum;
            }
            w
        }
        LatentMode::OneHotByTag => {
            let d = tag.map(|t| (t % 3) as usize).unwrap_or(0);
            let mut w = [0.0f64; 4];
            w[d] = 1.0;
            w
        }
    }
}

struct UserDerived {
    hist_items: BTreeSet<u32>,
    hist_pairs: BTreeSet<(u16, u16)>,
    hist_roots: BTreeSet<u16>,
}

fn derive_sets(user: &UserContext, catalog: &Catalog) -> Result<UserDerived, WorldError> {
    let mut hist_items = BTreeSet::new();
    let mut hist_pairs = BTreeSet::new();
    let mut hist_roots = BTreeSet::new();
    for &h in &user.history {
        let it = catalog.get(h)?;
        hist_items.insert(h);
        hist_pairs.insert((it.root_category, it.sub_category));
        hist_roots.insert(it.root_category);
    }
    Ok(UserDerived { hist_items, hist_pairs, hist_roots })
}

fn gen_users(cfg: &WorldConfig, catalog: &Catalog) -> Result<Vec<UserContext>, WorldError> {
    let mut rng = rngutil::rng(cfg.seed, &[0x05e5]);
    // bucket -> item ids
    let mut buckets: BTreeMap<(u16, u16), Vec<u32>> = BTreeMap::new();
    for it in catalog.items() {
        buckets.entry((it.root_category, it.sub_category)).or_default().push(it.item_id);
    }
    let n_home_roots = if cfg.n_roots >= 2 { (cfg.n_roots - 1).min(2) } else { 1 } as usize;
    let n_home_subs = if cfg.n_subs_per_root >= 2 {
        ((cfg.n_subs_per_root / 2).max(1)).min(cfg.n_subs_per_root - 1)
    } else {
        1
    } as usize;
    let all_roots: Vec<u16> = (0..cfg.n_roots).collect();
    let all_subs: Vec<u16> = (0..cfg.n_subs_per_root).collect();
    let mut users = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let mut roots = all_roots.clone();
        roots.shuffle(&mut rng);
        roots.truncate(n_home_roots);
        let mut home: Vec<(u16, u16)> = Vec::new();
        for &r in &roots {
            let mut subs = all_subs.clone();
            subs.shuffle(&mut rng);
            subs.truncate(n_home_subs);
            for s in subs {
                home.push((r, s));
            }
        }
        let hist_len = rng.gen_range(cfg.history_len_min..=cfg.history_len_max);
        let mut history = Vec::with_capacity(hist_len);
        for _ in 0..hist_len {
            let &(r, s) = home.choose(&mut rng).expect("home buckets nonempty");
            let ids = &buckets[&(r, s)];
            history.push(*ids.choose(&mut rng).expect("bucket nonempty"));
        }
        let mut profile = vec![0.0; cfg.feature_dim];
        for &h in &history {
            let f = &catalog.get(h)?.feature_vector;
            for (p, x) in profile.iter_mut().zip(f) {
                *p += x;
            }
        }
        for p in profile.iter_mut() {
            *p /= history.len() as f64;
            *p += 0.05 * gauss(&mut rng);
        }
        normalize_in_place(&mut profile);
        let context_tag =
            if cfg.n_context_tags > 0 { Some((u % cfg.n_context_tags as usize) as u8) } else { None };
        let latent_weights = sample_latent(cfg, context_tag, &mut rng);
        users.push(UserContext {
            user_id: u as u32,
            profile_vector: profile,
            history,
            context_tag,
            latent_weights,
        });
    }
    Ok(users)
}

/// Candidate target pool for a user at a given novelty level.
fn level_candidates(
    level: u8,
    derived: &UserDerived,
    catalog: &Catalog,
) -> Vec<u32> {
    match level {
        0 => derived.hist_items.iter().copied().collect(),
        1 => catalog
            .items()
            .iter()
            .filter(|it| {
                derived.hist_pairs.contains(&(it.root_category, it.sub_category))
                    && !derived.hist_items.contains(&it.item_id)
            })
            .map(|it| it.item_id)
            .collect(),
        2 => catalog
            .items()
            .iter()
            .filter(|it| {
                derived.hist_roots.contains(&it.root_category)
                    && !derived.hist_pairs.contains(&(it.root_category, it.sub_category))
            })
            .map(|it| it.item_id)
            .collect(),
        _ => catalog
            .items()
            .iter()
            .filter(|it| !derived.hist_roots.contains(&it.root_category))
            .map(|it| it.item_id)
            .collect(),
    }
}

fn gen_episodes(
    cfg: &WorldConfig,
    catalog: &Catalog,
    users: &[UserContext],
) -> Result<Vec<Episode>, WorldError> {
    let mut rng = rngutil::rng(cfg.seed, &[0x0e15]);
    let scorer = OracleScorer::new(cfg.n_context_tags);
    let derived: Vec<UserDerived> =
        users.iter().map(|u| derive_sets(u, catalog)).collect::<Result<_, _>>()?;

    // planted ground-truth holistic score, used only for target affinity
    let planted = |user: &UserContext, item_id: u32| -> f64 {
        let item = catalog.get(item_id).expect("candidate exists");
        let s = scorer.score(user, item, catalog);
        crate::judge::planted_score(user, &s)
    };

    let quota_per_level = (cfg.level_quota * cfg.n_episodes as f64).ceil() as usize;
    if 4 * quota_per_level > cfg.n_episodes {
        return Err(WorldError::InfeasibleQuota(format!(
            "level quota {} requires more episodes than n_episodes={}",
            cfg.level_quota, cfg.n_episodes
        )));
    }

    let mut levels = Vec::with_capacity(cfg.n_episodes);
    for i in 0..4 * quota_per_level {
        levels.push((i % 4) as u8);
    }
    // remaining episodes: level biased by the user's hidden trade-off
    for i in 4 * quota_per_level..cfg.n_episodes {
        let u = i % users.len();
        let lw = users[u].latent_weights;
        let c = cfg.novelty_coupling;
        let w = [
            1.0 + c * lw[0],
            1.0 + c * lw[1],
            0.7 + 0.5 * c * lw[2],
            0.7 + c * lw[2],
        ];
        let total: f64 = w.iter().sum();
        let mut x = rng.gen_range(0.0..total);
        let mut lvl = 3u8;
        for (k, wk) in w.iter().enumerate() {
            if x < *wk {
                lvl = k as u8;
                break;
            }
            x -= wk;
        }
        levels.push(lvl);
    }

    let mut episodes = Vec::with_capacity(cfg.n_episodes);
    for (i, &level) in levels.iter().enumerate() {
        // scan users from the round-robin preference until one supports the level
        let mut placed = false;
        for off in 0..users.len() {
            let u = (i + off) % users.len();
            let cands = level_candidates(level, &derived[u], catalog);
            if cands.is_empty() {
                continue;
            }
            let target = if rng.gen_bool(cfg.target_affinity.clamp(0.0, 1.0)) {
                *cands
                    .iter()
                    .max_by(|&&a, &&b| {
                        planted(&users[u], a)
                            .partial_cmp(&planted(&users[u], b))
                            .unwrap()
                            .then(b.cmp(&a))
                    })
                    .unwrap()
            } else {
                *cands.choose(&mut rng).unwrap()
            };
            debug_assert_eq!(novelty_of(&users[u].history, target, catalog)?, level);
            episodes.push(Episode { user_index: u, target_item: target, novelty_level: level });
            placed = true;
            break;
        }
        if !placed {
            return Err(WorldError::InfeasibleQuota(format!(
                "no user supports novelty level {level} (catalog shape too small)"
            )));
        }
    }
    episodes.shuffle(&mut rng);

    // verify quotas actually held
    for lvl in 0..4u8 {
        let count = episodes.iter().filter(|e| e.novelty_level == lvl).count();
        if count < (cfg.level_quota * cfg.n_episodes as f64).floor() as usize {
            return Err(WorldError::InfeasibleQuota(format!(
                "level {lvl} received {count} episodes, below quota"
            )));
        }
    }
    Ok(episodes)
}

/// Generates the full world; byte-identical across runs for the same config.
pub fn generate_world(cfg: &WorldConfig) -> Result<World, WorldError> {
    if cfg.n_users == 0 || cfg.n_items == 0 || cfg.n_episodes == 0 {
        return Err(WorldError::BadConfig("sizes must be positive".into()));
    }
    if cfg.n_roots == 0 || cfg.n_subs_per_root == 0 || cfg.feature_dim == 0 {
        return Err(WorldError::BadConfig("catalog shape must be positive".into()));
    }
    if cfg.history_len_min < 1 || cfg.history_len_min > cfg.history_len_max {
        return Err(WorldError::BadConfig("history length range invalid".into()));
    }
    if !(0.0..=0.25).contains(&cfg.level_quota) {
        return Err(WorldError::BadConfig("level_quota must be in [0, 0.25]".into()));
    }
    if cfg.level_quota > 0.0 {
        if cfg.n_roots < 2 {
            return Err(WorldError::InfeasibleQuota(
                "level 3 (unseen root) impossible with a single root category".into(),
            ));
        }
        if cfg.n_subs_per_root < 2 {
            return Err(WorldError::InfeasibleQuota(
                "level 2 (new sub-category) impossible with a single sub-category".into(),
            ));
        }
    }
    if cfg.latent_mode == LatentMode::OneHotByTag && cfg.n_context_tags == 0 {
        return Err(WorldError::BadConfig(
            "one_hot_by_tag latent mode requires context tags".into(),
        ));
    }
    let catalog = gen_catalog(cfg)?;
    let users = gen_users(cfg, &catalog)?;
    let episodes = gen_episodes(cfg, &catalog, &users)?;
    Ok(World { config: cfg.clone(), catalog, users, episodes })
}

fn fmt_floats(v: &[f64]) -> String {
    v.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_floats(s: &str, what: &'static str) -> Result<Vec<f64>, WorldError> {
    s.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| WorldError::Parse { what, detail: e.to_string() }))
        .collect()
}

/// Writes `user_id,tag,latent,profile,history` lines (tag `-` when absent).
pub fn save_users<W: Write>(users: &[UserContext], mut w: W) -> Result<(), WorldError> {
    writeln!(w, "semrec-users v1")?;
    for u in users {
        let tag = u.context_tag.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
        let hist: Vec<String> = u.history.iter().map(|h| h.to_string()).collect();
        writeln!(
            w,
            "{},{},{},{},{}",
            u.user_id,
            tag,
            fmt_floats(&u.latent_weights),
            fmt_floats(&u.profile_vector),
            hist.join(" ")
        )?;
    }
    Ok(())
}

pub fn load_users<R: BufRead>(r: R) -> Result<Vec<UserContext>, WorldError> {
    let perr = |d: String| WorldError::Parse { what: "users", detail: d };
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| perr("empty file".into()))??;
    if header.trim() != "semrec-users v1" {
        return Err(perr(format!("bad header: {header}")));
    }
    let mut users = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(5, ',').collect();
        if parts.len() != 5 {
            return Err(perr(format!("bad line: {line}")));
        }
        let latent = parse_floats(parts[2], "users")?;
        if latent.len() != 4 {
            return Err(perr("latent weights must have 4 entries".into()));
        }
        users.push(UserContext {
            user_id: parts[0].parse().map_err(|e: std::num::ParseIntError| perr(e.to_string()))?,
            context_tag: if parts[1] == "-" {
                None
            } else {
                Some(parts[1].parse().map_err(|e: std::num::ParseIntError| perr(e.to_string()))?)
            },
            latent_weights: [latent[0], latent[1], latent[2], latent[3]],
            profile_vector: parse_floats(parts[3], "users")?,
            history: parts[4]
                .split_whitespace()
                .map(|t| t.parse::<u32>().map_err(|e| perr(e.to_string())))
                .collect::<Result<_, _>>()?,
        });
    }
    Ok(users)
}

/// Writes the episode schema:
/// `user_id,history item list,target,novelty_level,context_tag`.
pub fn save_episodes<W: Write>(world: &World, mut w: W) -> Result<(), WorldError> {
    writeln!(w, "semrec-episodes v1")?;
    for ep in &world.episodes {
        let u = world.context(ep);
        let hist: Vec<String> = u.history.iter().map(|h| h.to_string()).collect();
        let tag = u.context_tag.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
        writeln!(
            w,
            "{},{},{},{},{}",
            u.user_id,
            hist.join(" "),
            ep.target_item,
            ep.novelty_level,
            tag
        )?;
    }
    Ok(())
}

/// Reads episodes back against a known user table (user_id -> index).
pub fn load_episodes<R: BufRead>(r: R, users: &[UserContext]) -> Result<Vec<Episode>, WorldError> {
    let perr = |d: String| WorldError::Parse { what: "episodes", detail: d };
    let by_id: std::collections::HashMap<u32, usize> =
        users.iter().enumerate().map(|(i, u)| (u.user_id, i)).collect();
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| perr("empty file".into()))??;
    if header.trim() != "semrec-episodes v1" {
        return Err(perr(format!("bad header: {header}")));
    }
    let mut episodes = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(5, ',').collect();
        if parts.len() != 5 {
            return Err(perr(format!("bad line: {line}")));
        }
        let user_id: u32 =
            parts[0].parse().map_err(|e: std::num::ParseIntError| perr(e.to_string()))?;
        let user_index =
            *by_id.get(&user_id).ok_or_else(|| perr(format!("unknown user {user_id}")))?;
        episodes.push(Episode {
            user_index,
            target_item: parts[2].parse().map_err(|e: std::num::ParseIntError| perr(e.to_string()))?,
            novelty_level: parts[3].parse().map_err(|e: std::num::ParseIntError| perr(e.to_string()))?,
        });
    }
    Ok(episodes)
}
