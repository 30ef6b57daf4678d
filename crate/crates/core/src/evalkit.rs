//! Ranking metrics, novelty-stratified reports, and lift analysis.
//!
//! Evaluation ranks the full catalog by exact sequence log-probability
//! (enumeration is cheap at desk scale), which removes decoding strategy as
//! a confound. A sampling fallback exists for catalogs beyond the
//! enumeration budget and is flagged on the list and in reports.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Codebook;
use crate::features::context_features;
use crate::genpolicy::{GeneratorPolicy, PolicyError, Under};
use crate::rngutil;
use crate::synthworld::World;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("K={k} exceeds ranked list length {len}")]
    KTooLarge { k: usize, len: usize },
    #[error("asked for top {k} of a {n}-item catalog")]
    KExceedsCatalog { k: usize, n: usize },
    #[error("reports disagree on {0}, so they cover different partitions")]
    PartitionMismatch(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Item ids, best first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub items: Vec<u32>,
    /// True when the enumeration budget forced the sampling fallback.
    pub approximate: bool,
}

/// 1 iff the target appears in the top K.
pub fn hr_at_k(ranked: &RankedList, target: u32, k: usize) -> Result<f64, EvalError> {
    if k > ranked.items.len() {
        return Err(EvalError::KTooLarge { k, len: ranked.items.len() });
    }
    Ok(if ranked.items[..k].contains(&target) { 1.0 } else { 0.0 })
}

/// Single-relevant-item NDCG: 1/log2(rank+1) with 1-based rank, 0 if the
/// target is outside the top K. Ideal DCG is 1.
pub fn ndcg_at_k(ranked: &RankedList, target: u32, k: usize) -> Result<f64, EvalError> {
    if k > ranked.items.len() {
        return Err(EvalError::KTooLarge { k, len: ranked.items.len() });
    }
    Ok(match ranked.items[..k].iter().position(|&i| i == target) {
        Some(pos) => 1.0 / ((pos + 2) as f64).log2(),
        None => 0.0,
    })
}

/// Ranks the catalog for one context: all valid SIDs by exact log-probability
/// descending, ties broken by ascending item id. Catalogs larger than
/// `enumeration_budget` fall back to frequency ranking over policy samples,
/// flagged as approximate.
pub fn generate_ranked_list(
    policy: &GeneratorPolicy,
    phi: &[f64],
    codebook: &Codebook,
    k_max: usize,
    enumeration_budget: usize,
    seed: u64,
) -> Result<RankedList, EvalError> {
    let n = codebook.len();
    if k_max > n {
        return Err(EvalError::KExceedsCatalog { k: k_max, n });
    }
    if n <= enumeration_budget {
        let mut scored: Vec<(f64, u32)> = Vec::with_capacity(n);
        for (item_id, sid) in codebook.iter() {
            let lp = policy.log_prob(phi, codebook, sid, Under::Current)?;
            scored.push((lp, item_id));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        return Ok(RankedList { items: scored.into_iter().take(k_max).map(|(_, i)| i).collect(), approximate: false });
    }
    // sampling-without-replacement fallback: rank by empirical frequency
    let mut rng = rngutil::rng(seed, &[0xea1]);
    let mut counts: HashMap<u32, usize> = HashMap::new();
    let draws = (50 * k_max).max(1000);
    let mut drawn = 0;
    while drawn < draws {
        let batch = policy.sample_group(phi, codebook, 16.min(draws - drawn).max(2), &mut rng)?;
        for r in &batch {
            *counts.entry(r.item_id).or_insert(0) += 1;
        }
        drawn += batch.len();
    }
    let mut scored: Vec<(usize, u32)> = counts.into_iter().map(|(i, c)| (c, i)).collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut items: Vec<u32> = scored.into_iter().map(|(_, i)| i).collect();
    // pad with unseen items in id order to guarantee k_max entries
    if items.len() < k_max {
        for (item_id, _) in codebook.iter() {
            if !items.contains(&item_id) {
                items.push(item_id);
                if items.len() == k_max {
                    break;
                }
            }
        }
    }
    items.truncate(k_max);
    Ok(RankedList { items, approximate: true })
}

/// Metric means for one slice of episodes, aligned with the report's K list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub count: usize,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
}

impl MetricBlock {
    fn zeros(n_ks: usize) -> Self {
        MetricBlock { count: 0, hr: vec![0.0; n_ks], ndcg: vec![0.0; n_ks] }
    }
}

/// Per-novelty-level and overall ranking metrics. The overall block is the
/// count-weighted mean of the level blocks by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedReport {
    pub ks: Vec<usize>,
    /// Indexed by novelty level 0–3.
    pub levels: Vec<MetricBlock>,
    pub overall: MetricBlock,
    pub approximate: bool,
}

impl StratifiedReport {
    /// Builds a report from per-episode (novelty level, HR values, NDCG
    /// values) rows; metric vectors align with `ks`.
    pub fn from_rows(ks: Vec<usize>, rows: &[(u8, Vec<f64>, Vec<f64>)], approximate: bool) -> Self {
        let n_ks = ks.len();
        let mut sums: Vec<MetricBlock> = (0..4).map(|_| MetricBlock::zeros(n_ks)).collect();
        for (level, hr, ndcg) in rows {
            let b = &mut sums[*level as usize];
            b.count += 1;
            for i in 0..n_ks {
                b.hr[i] += hr[i];
                b.ndcg[i] += ndcg[i];
            }
        }
        let total: usize = sums.iter().map(|b| b.count).sum();
        let mut overall = MetricBlock::zeros(n_ks);
        overall.count = total;
        for b in &sums {
            for i in 0..n_ks {
                overall.hr[i] += b.hr[i];
                overall.ndcg[i] += b.ndcg[i];
            }
        }
        let norm = |b: &mut MetricBlock| {
            if b.count > 0 {
                for v in b.hr.iter_mut().chain(b.ndcg.iter_mut()) {
                    *v /= b.count as f64;
                }
            }
        };
        for b in sums.iter_mut() {
            norm(b);
        }
        norm(&mut overall);
        StratifiedReport { ks, levels: sums, overall, approximate }
    }

    pub fn metric(&self, level: Option<u8>, metric: &str, k: usize) -> Option<f64> {
        let i = self.ks.iter().position(|&x| x == k)?;
        let block = match level {
            Some(l) => self.levels.get(l as usize)?,
            None => &self.overall,
        };
        match metric {
            "hr" => Some(block.hr[i]),
            "ndcg" => Some(block.ndcg[i]),
            _ => None,
        }
    }
}

/// Evaluates a policy on a slice of episodes and stratifies by the episode's
/// recorded novelty level.
pub fn evaluate_policy(
    policy: &GeneratorPolicy,
    world: &World,
    codebook: &Codebook,
    episode_indices: &[usize],
    ks: &[usize],
    enumeration_budget: usize,
    seed: u64,
) -> Result<StratifiedReport, EvalError> {
    let k_max = ks.iter().copied().max().unwrap_or(10);
    let n_tags = world.config.n_context_tags;
    let mut rows = Vec::with_capacity(episode_indices.len());
    let mut approximate = false;
    for &idx in episode_indices {
        let ep = &world.episodes[idx];
        let ctx = world.context(ep);
        let phi = context_features(ctx, &world.catalog, n_tags);
        let ranked = generate_ranked_list(
            policy,
            &phi,
            codebook,
            k_max,
            enumeration_budget,
            rngutil::mix(seed, &[idx as u64]),
        )?;
        approximate |= ranked.approximate;
        let hr: Vec<f64> =
            ks.iter().map(|&k| hr_at_k(&ranked, ep.target_item, k)).collect::<Result<_, _>>()?;
        let ndcg: Vec<f64> =
            ks.iter().map(|&k| ndcg_at_k(&ranked, ep.target_item, k)).collect::<Result<_, _>>()?;
        rows.push((ep.novelty_level, hr, ndcg));
    }
    Ok(StratifiedReport::from_rows(ks.to_vec(), &rows, approximate))
}

/// Relative lift per level, metric, and K; `None` where the baseline is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftReport {
    pub ks: Vec<usize>,
    /// lift[level][k-index], levels 0–3 then overall last.
    pub hr: Vec<Vec<Option<f64>>>,
    pub ndcg: Vec<Vec<Option<f64>>>,
}

/// Relative lift (treatment − baseline)/baseline. The two reports must cover
/// the same episode partition (same K list and per-level counts).
pub fn stratified_lift(
    treatment: &StratifiedReport,
    baseline: &StratifiedReport,
) -> Result<LiftReport, EvalError> {
    if treatment.ks != baseline.ks {
        return Err(EvalError::PartitionMismatch("K lists".into()));
    }
    let t_counts: Vec<usize> = treatment.levels.iter().map(|b| b.count).collect();
    let b_counts: Vec<usize> = baseline.levels.iter().map(|b| b.count).collect();
    if t_counts != b_counts {
        return Err(EvalError::PartitionMismatch("per-level episode counts".into()));
    }
    let lift = |t: f64, b: f64| if b == 0.0 { None } else { Some((t - b) / b) };
    let mut hr = Vec::new();
    let mut ndcg = Vec::new();
    let blocks = treatment
        .levels
        .iter()
        .zip(&baseline.levels)
        .chain(std::iter::once((&treatment.overall, &baseline.overall)));
    for (t, b) in blocks {
        hr.push(t.hr.iter().zip(&b.hr).map(|(&x, &y)| lift(x, y)).collect());
        ndcg.push(t.ndcg.iter().zip(&b.ndcg).map(|(&x, &y)| lift(x, y)).collect());
    }
    Ok(LiftReport { ks: treatment.ks.clone(), hr, ndcg })
}

/// One row per level × metric × K: `level,metric,k,count,value`.
pub fn report_csv(report: &StratifiedReport) -> String {
    let mut out = String::from("level,metric,k,count,value\n");
    let mut emit = |label: &str, block: &MetricBlock| {
        for (i, &k) in report.ks.iter().enumerate() {
            out.push_str(&format!("{label},hr,{k},{},{}\n", block.count, block.hr[i]));
            out.push_str(&format!("{label},ndcg,{k},{},{}\n", block.count, block.ndcg[i]));
        }
    };
    for (l, block) in report.levels.iter().enumerate() {
        emit(&l.to_string(), block);
    }
    emit("overall", &report.overall);
    out
}

/// `level,metric,k,lift` rows; absent lifts render as `-`.
pub fn lift_csv(lift: &LiftReport) -> String {
    let mut out = String::from("level,metric,k,lift\n");
    let labels = ["0", "1", "2", "3", "overall"];
    for (row, label) in labels.iter().enumerate() {
        for (i, &k) in lift.ks.iter().enumerate() {
            let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
            out.push_str(&format!("{label},hr,{k},{}\n", fmt(lift.hr[row][i])));
            out.push_str(&format!("{label},ndcg,{k},{}\n", fmt(lift.ndcg[row][i])));
        }
    }
    out
}
