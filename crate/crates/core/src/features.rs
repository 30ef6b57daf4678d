//! Observable user-context features shared by the generative policy and the
//! preference aggregator.
//!
//! The feature map deliberately exposes only what a deployed system would
//! see: the profile vector, an aggregate of recent history, and the request
//! context tag. Hidden per-user trade-off weights are never part of it.

use crate::catalog::Catalog;
use crate::synthworld::UserContext;

/// Dense features: profile vector, mean history feature vector, and a
/// one-hot context tag (omitted entirely when the world has no tags).
pub fn context_features(ctx: &UserContext, catalog: &Catalog, n_context_tags: u8) -> Vec<f64> {
    let dim = catalog.feature_dim();
    let mut out = Vec::with_capacity(feature_len(dim, n_context_tags));
    out.extend_from_slice(&ctx.profile_vector);
    let mut hist = vec![0.0; dim];
    if !ctx.history.is_empty() {
        for &h in &ctx.history {
            let f = &catalog.get(h).expect("history item in catalog").feature_vector;
            for (a, x) in hist.iter_mut().zip(f) {
                *a += x;
            }
        }
        for a in hist.iter_mut() {
            *a /= ctx.history.len() as f64;
        }
    }
    out.extend_from_slice(&hist);
    if n_context_tags > 0 {
        let mut tag = vec![0.0; n_context_tags as usize];
        if let Some(t) = ctx.context_tag {
            tag[t as usize] = 1.0;
        }
        out.extend_from_slice(&tag);
    }
    out
}

/// Length of the vector produced by [`context_features`].
pub fn feature_len(feature_dim: usize, n_context_tags: u8) -> usize {
    2 * feature_dim + n_context_tags as usize
}
