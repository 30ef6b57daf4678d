//! Python bindings for the core fusion, aggregation, judging, and metric
//! operations, plus the semantic-ID codebook.
//!
//! Build the importable module with
//! `cargo build -p semrec-py --release --features extension-module` and put
//! the resulting `libsemrec_py.so` on `sys.path` as `semrec_py.so`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use semrec_core::a2po::{self, AdvantagePair, FusionConfig, FusionMode};
use semrec_core::aggregator;
use semrec_core::catalog::{assign_sids, Catalog, Item, SemanticId};
use semrec_core::evalkit::{self, RankedList};
use semrec_core::judge::{self, GoldPair};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_mode(mode: &str) -> PyResult<FusionMode> {
    Ok(match mode {
        "reward_sum" => FusionMode::RewardSum,
        "adv_sum" => FusionMode::AdvSum,
        "gate_only" => FusionMode::GateOnly,
        "magnitude_only" => FusionMode::MagnitudeOnly,
        "full" => FusionMode::Full,
        other => return Err(PyValueError::new_err(format!("unknown fusion mode '{other}'"))),
    })
}

/// Group-relative standardization; all-equal groups map to exact zeros.
#[pyfunction]
#[pyo3(signature = (rewards, std_guard = 1e-8))]
fn standardize_group(rewards: Vec<f64>, std_guard: f64) -> PyResult<Vec<f64>> {
    a2po::standardize_group(&rewards, std_guard).map_err(err)
}

/// Dual-consistency coefficient (sign gate times magnitude ratio).
#[pyfunction]
#[pyo3(signature = (a_biz, a_sem, epsilon = 1e-8))]
fn compute_lambda(a_biz: f64, a_sem: f64, epsilon: f64) -> f64 {
    a2po::compute_lambda(a_biz, a_sem, epsilon)
}

/// Fuses one advantage pair; returns (lambda, fused advantage).
#[pyfunction]
#[pyo3(signature = (a_biz, a_sem = None, mode = "full", alpha = 1.0, epsilon = 1e-8, std_guard = 1e-8))]
fn fuse(
    a_biz: f64,
    a_sem: Option<f64>,
    mode: &str,
    alpha: f64,
    epsilon: f64,
    std_guard: f64,
) -> PyResult<(f64, f64)> {
    let config = FusionConfig { mode: parse_mode(mode)?, alpha, epsilon, std_guard };
    let fused = a2po::fuse(AdvantagePair { a_biz, a_sem }, &config);
    Ok((fused.lambda, fused.a_fused))
}

/// Fraction of judged (a_biz, a_sem) pairs that agree in sign.
#[pyfunction]
fn consistency_rate(pairs: Vec<(f64, Option<f64>)>) -> PyResult<f64> {
    let pairs: Vec<AdvantagePair> =
        pairs.into_iter().map(|(a_biz, a_sem)| AdvantagePair { a_biz, a_sem }).collect();
    a2po::consistency_rate(&pairs).map_err(err)
}

#[pyfunction]
fn hr_at_k(items: Vec<u32>, target: u32, k: usize) -> PyResult<f64> {
    evalkit::hr_at_k(&RankedList { items, approximate: false }, target, k).map_err(err)
}

#[pyfunction]
fn ndcg_at_k(items: Vec<u32>, target: u32, k: usize) -> PyResult<f64> {
    evalkit::ndcg_at_k(&RankedList { items, approximate: false }, target, k).map_err(err)
}

/// Pairwise ranking accuracy over (better, worse) index pairs; ties 0.5.
#[pyfunction]
fn pair_auc(predicted: Vec<f64>, pairs: Vec<(usize, usize)>) -> PyResult<f64> {
    let pairs: Vec<GoldPair> =
        pairs.into_iter().map(|(better, worse)| GoldPair { better, worse }).collect();
    judge::pair_auc(&predicted, &pairs).map_err(err)
}

/// Discrete importance levels onto the simplex (uniform at all-zero).
#[pyfunction]
fn normalize_levels(levels: Vec<u8>) -> Vec<f64> {
    aggregator::normalize_levels(&levels)
}

#[pyfunction]
fn holistic_score(weights: Vec<f64>, scores: Vec<f64>) -> PyResult<f64> {
    aggregator::holistic_score(&weights, &scores).map_err(err)
}

/// Deterministic selection of judged episodes at fraction p.
#[pyfunction]
fn judged_subset(n_episodes: usize, p: f64, seed: u64) -> Vec<bool> {
    judge::judged_subset(n_episodes, p, seed)
}

/// Semantic-ID codebook over a catalog of (item_id, root, sub) triples.
#[pyclass]
struct Codebook {
    inner: semrec_core::catalog::Codebook,
}

#[pymethods]
impl Codebook {
    /// items: list of (item_id, root_category, sub_category).
    #[new]
    fn new(items: Vec<(u32, u16, u16)>, levels: usize, codebook_size: u16) -> PyResult<Self> {
        let mut counters = std::collections::HashMap::new();
        let items: Vec<Item> = items
            .into_iter()
            .map(|(item_id, root, sub)| {
                let slot = counters.entry((root, sub)).or_insert(0u32);
                let residual_index = *slot;
                *slot += 1;
                Item { item_id, root_category: root, sub_category: sub, residual_index, feature_vector: vec![0.0] }
            })
            .collect();
        let catalog = Catalog::new(items).map_err(err)?;
        let inner = assign_sids(&catalog, levels, codebook_size).map_err(err)?;
        Ok(Codebook { inner })
    }

    fn sid_of(&self, item_id: u32) -> PyResult<Vec<u16>> {
        Ok(self.inner.sid_of(item_id).map_err(err)?.tokens().to_vec())
    }

    fn map_sid(&self, tokens: Vec<u16>) -> PyResult<u32> {
        self.inner.map_sid(&SemanticId::new(tokens)).map_err(err)
    }

    fn valid_next_tokens(&self, prefix: Vec<u16>) -> Vec<u16> {
        self.inner.valid_next_tokens(&prefix).iter().copied().collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pymodule]
fn semrec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(standardize_group, m)?)?;
    m.add_function(wrap_pyfunction!(compute_lambda, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(consistency_rate, m)?)?;
    m.add_function(wrap_pyfunction!(hr_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(pair_auc, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_levels, m)?)?;
    m.add_function(wrap_pyfunction!(holistic_score, m)?)?;
    m.add_function(wrap_pyfunction!(judged_subset, m)?)?;
    m.add_class::<Codebook>()?;
    Ok(())
}
