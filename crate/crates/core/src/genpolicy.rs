//! Autoregressive generator over semantic-ID tokens.
//!
//! A minimal context-encoder + per-position token-head parameterization:
//! the user features are encoded once into a state vector, previously chosen
//! tokens add learned embeddings to that state, and a tanh nonlinearity feeds
//! per-position linear heads. Decoding is trie-constrained: logits are masked
//! to the valid continuations and renormalized, so every sampled sequence
//! maps to a real item.
//!
//! Gradients are hand-derived in score-function form and guarded by
//! finite-difference tests. At an exact clip boundary the unclipped branch's
//! gradient is used. The optional KL term is measured against the frozen
//! behavior snapshot θ_old, summed over the decoding positions of each
//! rollout and averaged over the group.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Codebook, SemanticId};
use crate::math::log_softmax;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("semantic id {0:?} does not map to any item")]
    InvalidSid(Vec<u16>),
    #[error("rollout group size must be at least 2, got {0}")]
    BadGroupSize(usize),
    #[error("expected {expected} features, got {got}")]
    FeatureLenMismatch { expected: usize, got: usize },
    #[error("{0} rollouts but {1} advantages")]
    AdvantageLenMismatch(usize, usize),
}

/// Which parameter set a computation runs under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Under {
    Current,
    Old,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// Length of the observable context feature vector.
    pub feature_len: usize,
    /// Encoder state dimension.
    pub state_dim: usize,
    /// Tokens per semantic id.
    pub levels: usize,
    /// Token alphabet size per level.
    pub codebook_size: u16,
}

/// One sampled candidate with its behavior-policy log-probability recorded
/// at sampling time.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub sid: SemanticId,
    pub item_id: u32,
    pub log_prob_old: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratorPolicy {
    cfg: PolicyConfig,
    theta: Vec<f64>,
    theta_old: Vec<f64>,
}

impl GeneratorPolicy {
    pub fn new(cfg: PolicyConfig, init_scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = Self::param_count(&cfg);
        let theta: Vec<f64> = (0..n).map(|_| init_scale * (rng.gen::<f64>() * 2.0 - 1.0)).collect();
        let theta_old = theta.clone();
        GeneratorPolicy { cfg, theta, theta_old }
    }

    pub fn param_count(cfg: &PolicyConfig) -> usize {
        let (f, e, t, c) = (cfg.feature_len, cfg.state_dim, cfg.levels, cfg.codebook_size as usize);
        e * f + e + (t - 1) * c * e + t * c * e + t * c
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut Vec<f64> {
        &mut self.theta
    }

    pub fn theta_old(&self) -> &[f64] {
        &self.theta_old
    }

    /// Restores both parameter sets, e.g. when resuming from a checkpoint.
    pub fn set_params(&mut self, theta: Vec<f64>, theta_old: Vec<f64>) {
        assert_eq!(theta.len(), Self::param_count(&self.cfg));
        assert_eq!(theta_old.len(), Self::param_count(&self.cfg));
        self.theta = theta;
        self.theta_old = theta_old;
    }

    /// Snapshots the current parameters as the behavior policy.
    pub fn refresh_old(&mut self) {
        self.theta_old.copy_from_slice(&self.theta);
    }

    /// Ascent step.
    pub fn step(&mut self, grad: &[f64], step_size: f64) {
        for (t, g) in self.theta.iter_mut().zip(grad) {
            *t += step_size * g;
        }
    }

    // Flat parameter layout offsets.
    fn off_b_enc(&self) -> usize {
        self.cfg.state_dim * self.cfg.feature_len
    }

    fn off_emb(&self) -> usize {
        self.off_b_enc() + self.cfg.state_dim
    }

    fn off_head(&self) -> usize {
        self.off_emb() + (self.cfg.levels - 1) * self.cfg.codebook_size as usize * self.cfg.state_dim
    }

    fn off_bias(&self) -> usize {
        self.off_head() + self.cfg.levels * self.cfg.codebook_size as usize * self.cfg.state_dim
    }

    fn emb_slice<'a>(&self, theta: &'a [f64], level: usize, token: u16) -> &'a [f64] {
        let e = self.cfg.state_dim;
        let start = self.off_emb() + (level * self.cfg.codebook_size as usize + token as usize) * e;
        &theta[start..start + e]
    }

    fn head_slice<'a>(&self, theta: &'a [f64], position: usize, token: u16) -> &'a [f64] {
        let e = self.cfg.state_dim;
        let start =
            self.off_head() + (position * self.cfg.codebook_size as usize + token as usize) * e;
        &theta[start..start + e]
    }

    fn bias(&self, theta: &[f64], position: usize, token: u16) -> f64 {
        theta[self.off_bias() + position * self.cfg.codebook_size as usize + token as usize]
    }

    fn encode(&self, theta: &[f64], phi: &[f64]) -> Vec<f64> {
        let (f, e) = (self.cfg.feature_len, self.cfg.state_dim);
        let mut a = vec![0.0; e];
        for (row, ai) in a.iter_mut().enumerate() {
            let w = &theta[row * f..(row + 1) * f];
            *ai = w.iter().zip(phi).map(|(x, y)| x * y).sum::<f64>() + theta[self.off_b_enc() + row];
        }
        a
    }

    fn masked_log_probs(
        &self,
        theta: &[f64],
        h: &[f64],
        position: usize,
        valid: &[u16],
    ) -> Vec<f64> {
        let logits: Vec<f64> = valid
            .iter()
            .map(|&tok| {
                self.head_slice(theta, position, tok)
                    .iter()
                    .zip(h)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
                    + self.bias(theta, position, tok)
            })
            .collect();
        log_softmax(&logits)
    }

    fn check_phi(&self, phi: &[f64]) -> Result<(), PolicyError> {
        if phi.len() != self.cfg.feature_len {
            return Err(PolicyError::FeatureLenMismatch {
                expected: self.cfg.feature_len,
                got: phi.len(),
            });
        }
        Ok(())
    }

    /// Samples G candidates with replacement under θ_old, each drawn
    /// token-by-token from the trie-masked softmax.
    pub fn sample_group(
        &self,
        phi: &[f64],
        codebook: &Codebook,
        group_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Rollout>, PolicyError> {
        self.check_phi(phi)?;
        if group_size < 2 {
            return Err(PolicyError::BadGroupSize(group_size));
        }
        let a = self.encode(&self.theta_old, phi);
        let mut out = Vec::with_capacity(group_size);
        for _ in 0..group_size {
            let mut u = a.clone();
            let mut prefix: Vec<u16> = Vec::with_capacity(self.cfg.levels);
            let mut log_prob_old = 0.0;
            for t in 0..self.cfg.levels {
                let valid: Vec<u16> = codebook.valid_next_tokens(&prefix).iter().copied().collect();
                debug_assert!(!valid.is_empty(), "trie dead end at prefix {prefix:?}");
                let h: Vec<f64> = u.iter().map(|x| x.tanh()).collect();
                let logp = self.masked_log_probs(&self.theta_old, &h, t, &valid);
                let draw: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = valid.len() - 1;
                for (k, lp) in logp.iter().enumerate() {
                    acc += lp.exp();
                    if draw < acc {
                        pick = k;
                        break;
                    }
                }
                let token = valid[pick];
                log_prob_old += logp[pick];
                if t + 1 < self.cfg.levels {
                    for (ui, ei) in u.iter_mut().zip(self.emb_slice(&self.theta_old, t, token)) {
                        *ui += ei;
                    }
                }
                prefix.push(token);
            }
            let sid = SemanticId::new(prefix);
            let item_id = codebook
                .map_sid(&sid)
                .map_err(|_| PolicyError::InvalidSid(sid.tokens().to_vec()))?;
            out.push(Rollout { sid, item_id, log_prob_old });
        }
        Ok(out)
    }

    /// Trie-masked log-probabilities over the valid next tokens after
    /// `prefix`, paired with the tokens themselves in ascending order.
    pub fn next_token_log_probs(
        &self,
        phi: &[f64],
        codebook: &Codebook,
        prefix: &[u16],
        under: Under,
    ) -> Result<Vec<(u16, f64)>, PolicyError> {
        self.check_phi(phi)?;
        if prefix.len() >= self.cfg.levels {
            return Err(PolicyError::InvalidSid(prefix.to_vec()));
        }
        let theta = match under {
            Under::Current => &self.theta,
            Under::Old => &self.theta_old,
        };
        let mut u = self.encode(theta, phi);
        for (t, &token) in prefix.iter().enumerate() {
            let valid = codebook.valid_next_tokens(&prefix[..t]);
            if !valid.contains(&token) {
                return Err(PolicyError::InvalidSid(prefix.to_vec()));
            }
            for (ui, ei) in u.iter_mut().zip(self.emb_slice(theta, t, token)) {
                *ui += ei;
            }
        }
        let valid: Vec<u16> = codebook.valid_next_tokens(prefix).iter().copied().collect();
        let h: Vec<f64> = u.iter().map(|x| x.tanh()).collect();
        let logp = self.masked_log_probs(theta, &h, prefix.len(), &valid);
        Ok(valid.into_iter().zip(logp).collect())
    }

    /// Exact sequence log-probability under the trie-masked policy.
    pub fn log_prob(
        &self,
        phi: &[f64],
        codebook: &Codebook,
        sid: &SemanticId,
        under: Under,
    ) -> Result<f64, PolicyError> {
        self.check_phi(phi)?;
        if codebook.map_sid(sid).is_err() {
            return Err(PolicyError::InvalidSid(sid.tokens().to_vec()));
        }
        let theta = match under {
            Under::Current => &self.theta,
            Under::Old => &self.theta_old,
        };
        let a = self.encode(theta, phi);
        let mut u = a;
        let mut lp = 0.0;
        for (t, &token) in sid.tokens().iter().enumerate() {
            let prefix = &sid.tokens()[..t];
            let valid: Vec<u16> = codebook.valid_next_tokens(prefix).iter().copied().collect();
            let h: Vec<f64> = u.iter().map(|x| x.tanh()).collect();
            let logp = self.masked_log_probs(theta, &h, t, &valid);
            let k = valid
                .iter()
                .position(|&v| v == token)
                .ok_or_else(|| PolicyError::InvalidSid(sid.tokens().to_vec()))?;
            lp += logp[k];
            if t + 1 < self.cfg.levels {
                for (ui, ei) in u.iter_mut().zip(self.emb_slice(theta, t, token)) {
                    *ui += ei;
                }
            }
        }
        Ok(lp)
    }

    /// Clipped-surrogate objective and its exact gradient for one rollout
    /// group: mean_i min(ρ_i·A_i, clip(ρ_i, 1−δ, 1+δ)·A_i) minus
    /// β_gen · mean_i Σ_t KL(π_θ ‖ π_old) at each decoding position.
    /// Returns (objective, ∇_θ objective) for an ascent step.
    pub fn surrogate_grad(
        &self,
        phi: &[f64],
        codebook: &Codebook,
        rollouts: &[Rollout],
        advantages: &[f64],
        clip: f64,
        beta_gen: f64,
    ) -> Result<(f64, Vec<f64>), PolicyError> {
        self.check_phi(phi)?;
        if rollouts.len() != advantages.len() {
            return Err(PolicyError::AdvantageLenMismatch(rollouts.len(), advantages.len()));
        }
        let g = rollouts.len() as f64;
        let e = self.cfg.state_dim;
        let mut grad = vec![0.0; self.theta.len()];
        let mut objective = 0.0;

        for (rollout, &adv) in rollouts.iter().zip(advantages) {
            // forward under current parameters, caching per-position state
            let tokens = rollout.sid.tokens();
            let mut u = self.encode(&self.theta, phi);
            let mut u_old = self.encode(&self.theta_old, phi);
            let mut hs: Vec<Vec<f64>> = Vec::with_capacity(tokens.len());
            let mut valids: Vec<Vec<u16>> = Vec::with_capacity(tokens.len());
            let mut logps: Vec<Vec<f64>> = Vec::with_capacity(tokens.len());
            let mut logps_old: Vec<Vec<f64>> = Vec::with_capacity(tokens.len());
            let mut picks: Vec<usize> = Vec::with_capacity(tokens.len());
            let mut lp_cur = 0.0;
            let mut kl_total = 0.0;
            for (t, &token) in tokens.iter().enumerate() {
                let prefix = &tokens[..t];
                let valid: Vec<u16> = codebook.valid_next_tokens(prefix).iter().copied().collect();
                let h: Vec<f64> = u.iter().map(|x| x.tanh()).collect();
                let h_old: Vec<f64> = u_old.iter().map(|x| x.tanh()).collect();
                let logp = self.masked_log_probs(&self.theta, &h, t, &valid);
                let logp_old = self.masked_log_probs(&self.theta_old, &h_old, t, &valid);
                let k = valid
                    .iter()
                    .position(|&v| v == token)
                    .ok_or_else(|| PolicyError::InvalidSid(tokens.to_vec()))?;
                lp_cur += logp[k];
                kl_total += logp
                    .iter()
                    .zip(&logp_old)
                    .map(|(&lp, &lq)| lp.exp() * (lp - lq))
                    .sum::<f64>();
                if t + 1 < self.cfg.levels {
                    for (ui, ei) in u.iter_mut().zip(self.emb_slice(&self.theta, t, token)) {
                        *ui += ei;
                    }
                    for (ui, ei) in u_old.iter_mut().zip(self.emb_slice(&self.theta_old, t, token))
                    {
                        *ui += ei;
                    }
                }
                hs.push(h);
                valids.push(valid);
                logps.push(logp);
                logps_old.push(logp_old);
                picks.push(k);
            }

            let rho = (lp_cur - rollout.log_prob_old).exp();
            let unclipped = rho * adv;
            let clipped = rho.clamp(1.0 - clip, 1.0 + clip) * adv;
            objective += unclipped.min(clipped) / g;
            objective -= beta_gen * kl_total / g;
            // the clipped branch is constant in θ whenever it is strictly
            // smaller, so its gradient is zero; ties take the unclipped branch
            let score_coeff = if unclipped <= clipped { unclipped / g } else { 0.0 };

            // backward: per-position logit gradients, then through the head,
            // the tanh state, the token embeddings, and the shared encoder
            let mut da = vec![0.0; e];
            for t in 0..tokens.len() {
                let valid = &valids[t];
                let logp = &logps[t];
                let logp_old = &logps_old[t];
                let kl_t: f64 = logp
                    .iter()
                    .zip(logp_old)
                    .map(|(&lp, &lq)| lp.exp() * (lp - lq))
                    .sum();
                let mut dlogits = vec![0.0; valid.len()];
                for (j, d) in dlogits.iter_mut().enumerate() {
                    let p = logp[j].exp();
                    // score-function term: onehot − p
                    let score = if j == picks[t] { 1.0 - p } else { -p };
                    // KL term: ∂KL/∂l_j = p_j (log p_j − log q_j − KL)
                    let dkl = p * (logp[j] - logp_old[j] - kl_t);
                    *d = score_coeff * score - (beta_gen / g) * dkl;
                }
                let h = &hs[t];
                let mut dh = vec![0.0; e];
                for (j, &tok) in valid.iter().enumerate() {
                    let gj = dlogits[j];
                    if gj == 0.0 {
                        continue;
                    }
                    let head_start = self.off_head()
                        + (t * self.cfg.codebook_size as usize + tok as usize) * e;
                    for i in 0..e {
                        grad[head_start + i] += gj * h[i];
                        dh[i] += gj * self.theta[head_start + i];
                    }
                    grad[self.off_bias() + t * self.cfg.codebook_size as usize + tok as usize] +=
                        gj;
                }
                let du: Vec<f64> = dh.iter().zip(h).map(|(d, x)| d * (1.0 - x * x)).collect();
                for (s, &tok) in tokens.iter().enumerate().take(t) {
                    let emb_start =
                        self.off_emb() + (s * self.cfg.codebook_size as usize + tok as usize) * e;
                    for i in 0..e {
                        grad[emb_start + i] += du[i];
                    }
                }
                for (ai, di) in da.iter_mut().zip(&du) {
                    *ai += di;
                }
            }
            let f = self.cfg.feature_len;
            for (row, &dai) in da.iter().enumerate() {
                if dai == 0.0 {
                    continue;
                }
                for (col, &x) in phi.iter().enumerate() {
                    grad[row * f + col] += dai * x;
                }
                grad[self.off_b_enc() + row] += dai;
            }
        }
        Ok((objective, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{assign_sids, Catalog, Item};
    use crate::rngutil;

    fn tiny_catalog(n_roots: u16, n_subs: u16, per_bucket: u32, dim: usize) -> Catalog {
        let mut items = Vec::new();
        let mut id = 0;
        for r in 0..n_roots {
            for s in 0..n_subs {
                for k in 0..per_bucket {
                    items.push(Item {
                        item_id: id,
                        root_category: r,
                        sub_category: s,
                        residual_index: k,
                        feature_vector: vec![0.1 * (id as f64 + 1.0); dim],
                    });
                    id += 1;
                }
            }
        }
        Catalog::new(items).unwrap()
    }

    fn policy(feature_len: usize, levels: usize, c: u16, scale: f64, seed: u64) -> GeneratorPolicy {
        let cfg = PolicyConfig { feature_len, state_dim: 6, levels, codebook_size: c };
        GeneratorPolicy::new(cfg, scale, &mut rngutil::rng(seed, &[0x91]))
    }

    fn phi(len: usize) -> Vec<f64> {
        (0..len).map(|i| 0.1 * (i as f64 + 1.0) - 0.3).collect()
    }

    #[test]
    fn single_item_catalog_forces_the_path() {
        let cat = tiny_catalog(1, 1, 1, 3);
        let cb = assign_sids(&cat, 3, 4).unwrap();
        let p = policy(4, 3, 4, 0.2, 1);
        let mut rng = rngutil::rng(2, &[0x92]);
        let rollouts = p.sample_group(&phi(4), &cb, 4, &mut rng).unwrap();
        for r in &rollouts {
            assert_eq!(r.item_id, 0);
            assert_eq!(r.log_prob_old, 0.0);
        }
        let lp = p.log_prob(&phi(4), &cb, &rollouts[0].sid, Under::Current).unwrap();
        assert_eq!(lp, 0.0);
    }

    #[test]
    fn zero_init_gives_uniform_first_tokens() {
        let cat = tiny_catalog(8, 1, 1, 3);
        let cb = assign_sids(&cat, 3, 8).unwrap();
        let p = policy(4, 3, 8, 0.0, 3);
        let mut rng = rngutil::rng(4, &[0x93]);
        let mut counts = [0usize; 8];
        let n = 100_000;
        for _ in 0..n / 10 {
            for r in p.sample_group(&phi(4), &cb, 10, &mut rng).unwrap() {
                counts[r.sid.tokens()[0] as usize] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.125).abs() < 0.01, "f={f}");
        }
    }

    #[test]
    fn sampling_is_deterministic_from_seed() {
        let cat = tiny_catalog(4, 2, 2, 3);
        let cb = assign_sids(&cat, 3, 4).unwrap();
        let p = policy(4, 3, 4, 0.3, 5);
        let a = p.sample_group(&phi(4), &cb, 16, &mut rngutil::rng(6, &[0x94])).unwrap();
        let b = p.sample_group(&phi(4), &cb, 16, &mut rngutil::rng(6, &[0x94])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn symmetric_last_token_pair_gets_log_half() {
        // two items share root and sub, differing only in the residual token;
        // with zero-initialized parameters both last tokens are equiprobable
        let cat = tiny_catalog(1, 1, 2, 3);
        let cb = assign_sids(&cat, 3, 2).unwrap();
        let p = policy(4, 3, 2, 0.0, 7);
        for item in 0..2u32 {
            let sid = cb.sid_of(item).unwrap();
            let lp = p.log_prob(&phi(4), &cb, sid, Under::Current).unwrap();
            assert!((lp - 0.5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn log_probs_sum_to_one_over_catalog() {
        let cat = tiny_catalog(4, 4, 4, 3);
        assert_eq!(cat.len(), 64);
        let cb = assign_sids(&cat, 3, 4).unwrap();
        let p = policy(4, 3, 4, 0.5, 9);
        let total: f64 = (0..64u32)
            .map(|i| p.log_prob(&phi(4), &cb, cb.sid_of(i).unwrap(), Under::Current).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "total={total}");
    }

    #[test]
    fn next_token_log_probs_factorize_log_prob() {
        let cat = tiny_catalog(4, 4, 4, 3);
        let cb = assign_sids(&cat, 3, 4).unwrap();
        let p = policy(4, 3, 4, 0.5, 19);
        let phi = phi(4);
        for (_, sid) in cb.iter() {
            let mut total = 0.0;
            for t in 0..sid.len() {
                let dist = p.next_token_log_probs(&phi, &cb, &sid.tokens()[..t], Under::Current).unwrap();
                total += dist.iter().find(|(tok, _)| *tok == sid.tokens()[t]).unwrap().1;
            }
            let direct = p.log_prob(&phi, &cb, sid, Under::Current).unwrap();
            assert!((total - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_sid_is_rejected() {
        let cat = tiny_catalog(2, 2, 1, 3);
        let cb = assign_sids(&cat, 3, 4).unwrap();
        let p = policy(4, 3, 4, 0.2, 10);
        let bogus = SemanticId::new(vec![3, 3, 3]);
        assert_eq!(
            p.log_prob(&phi(4), &cb, &bogus, Under::Current).unwrap_err(),
            PolicyError::InvalidSid(vec![3, 3, 3])
        );
    }

    fn fd_setup() -> (GeneratorPolicy, Codebook, Vec<f64>, Vec<Rollout>, Vec<f64>) {
        let cat = tiny_catalog(3, 2, 2, 3);
        let cb = assign_sids(&cat, 3, 4).unwrap();
        let mut p = policy(4, 3, 4, 0.4, 11);
        p.refresh_old();
        // detune current parameters so importance ratios differ from 1
        for (i, t) in p.theta_mut().iter_mut().enumerate() {
            *t += 0.01 * ((i % 7) as f64 - 3.0);
        }
        let phi = phi(4);
        let mut rng = rngutil::rng(12, &[0x95]);
        let rollouts = p.sample_group(&phi, &cb, 8, &mut rng).unwrap();
        let advantages: Vec<f64> =
            (0..8).map(|i| if i % 2 == 0 { 1.3 - 0.4 * i as f64 } else { -0.7 + 0.2 * i as f64 }).collect();
        (p, cb, phi, rollouts, advantages)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (mut p, cb, phi, rollouts, adv) = fd_setup();
        let (_, grad) = p.surrogate_grad(&phi, &cb, &rollouts, &adv, 0.2, 0.04).unwrap();
        let eps = 1e-5;
        let n = p.theta().len();
        for k in (0..n).step_by(3) {
            let orig = p.theta()[k];
            p.theta_mut()[k] = orig + eps;
            let plus = p.surrogate_grad(&phi, &cb, &rollouts, &adv, 0.2, 0.04).unwrap().0;
            p.theta_mut()[k] = orig - eps;
            let minus = p.surrogate_grad(&phi, &cb, &rollouts, &adv, 0.2, 0.04).unwrap().0;
            p.theta_mut()[k] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let denom = fd.abs().max(grad[k].abs()).max(1e-8);
            assert!(
                (fd - grad[k]).abs() / denom < 1e-4,
                "coord {k}: fd={fd} analytic={}",
                grad[k]
            );
        }
    }

    #[test]
    fn rho_one_objective_is_mean_advantage() {
        let cat = tiny_catalog(3, 2, 2, 3);
        let cb = assign_sids(&cat, 3, 4).unwrap();
        let mut p = policy(4, 3, 4, 0.4, 13);
        p.refresh_old();
        let phi = phi(4);
        let rollouts = p.sample_group(&phi, &cb, 6, &mut rngutil::rng(14, &[0x96])).unwrap();
        let adv = vec![1.0, -0.5, 0.25, 0.0, 2.0, -1.0];
        let (obj, _) = p.surrogate_grad(&phi, &cb, &rollouts, &adv, 0.2, 0.0).unwrap();
        let mean_a: f64 = adv.iter().sum::<f64>() / adv.len() as f64;
        assert!((obj - mean_a).abs() < 1e-9, "obj={obj} mean={mean_a}");
    }

    #[test]
    fn zero_advantages_zero_beta_gives_zero_gradient() {
        let (p, cb, phi, rollouts, _) = fd_setup();
        let adv = vec![0.0; rollouts.len()];
        let (obj, grad) = p.surrogate_grad(&phi, &cb, &rollouts, &adv, 0.2, 0.0).unwrap();
        assert_eq!(obj, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn clip_inert_when_ratios_near_one() {
        let cat = tiny_catalog(3, 2, 2, 3);
        let cb = assign_sids(&cat, 3, 4).unwrap();
        let mut p = policy(4, 3, 4, 0.4, 21);
        p.refresh_old();
        let phi = phi(4);
        let rollouts = p.sample_group(&phi, &cb, 8, &mut rngutil::rng(22, &[0x98])).unwrap();
        let adv: Vec<f64> = (0..8).map(|i| 0.5 - 0.2 * i as f64).collect();
        // nudge so all |ρ−1| < δ
        for t in p.theta_mut().iter_mut() {
            *t += 1e-4;
        }
        let tight = p.surrogate_grad(&phi, &cb, &rollouts, &adv, 0.2, 0.0).unwrap().0;
        // δ large enough that clipping can never bind: same objective
        let loose = p.surrogate_grad(&phi, &cb, &rollouts, &adv, 1e9, 0.0).unwrap().0;
        assert_eq!(tight, loose);
    }

    #[test]
    fn positive_advantage_step_raises_log_prob() {
        for &lr in &[1e-3, 1e-4] {
            let cat = tiny_catalog(3, 2, 2, 3);
            let cb = assign_sids(&cat, 3, 4).unwrap();
            let mut p = policy(4, 3, 4, 0.4, 15);
            p.refresh_old();
            let phi = phi(4);
            let rollouts = p.sample_group(&phi, &cb, 2, &mut rngutil::rng(16, &[0x97])).unwrap();
            let target = rollouts[0].sid.clone();
            let before = p.log_prob(&phi, &cb, &target, Under::Current).unwrap();
            let adv = vec![1.0, 0.0];
            let (_, grad) = p.surrogate_grad(&phi, &cb, &rollouts, &adv, 0.2, 0.0).unwrap();
            p.step(&grad, lr);
            let after = p.log_prob(&phi, &cb, &target, Under::Current).unwrap();
            assert!(after > before, "lr={lr}: {before} -> {after}");
        }
    }

    #[test]
    fn per_position_masked_probabilities_sum_to_one() {
        let cat = tiny_catalog(4, 2, 2, 3);
        let cb = assign_sids(&cat, 3, 4).unwrap();
        let p = policy(4, 3, 4, 0.7, 17);
        let phi = phi(4);
        let a = p.encode(p.theta(), &phi);
        let mut stack = vec![(Vec::<u16>::new(), a)];
        while let Some((prefix, u)) = stack.pop() {
            if prefix.len() == 3 {
                continue;
            }
            let valid: Vec<u16> = cb.valid_next_tokens(&prefix).iter().copied().collect();
            let h: Vec<f64> = u.iter().map(|x| x.tanh()).collect();
            let logp = p.masked_log_probs(p.theta(), &h, prefix.len(), &valid);
            let total: f64 = logp.iter().map(|l| l.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
            for &tok in &valid {
                let mut u2 = u.clone();
                if prefix.len() + 1 < 3 {
                    for (ui, ei) in u2.iter_mut().zip(p.emb_slice(p.theta(), prefix.len(), tok)) {
                        *ui += ei;
                    }
                }
                let mut pre = prefix.clone();
                pre.push(tok);
                stack.push((pre, u2));
            }
        }
    }
}
