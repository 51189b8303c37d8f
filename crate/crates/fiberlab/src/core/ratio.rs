//! Importance ratios and their Jacobian with respect to logits.

use crate::core::{Batch, PolicyTable};
use crate::error::{Error, Result};

/// Per-token importance ratios r_i = π_new(a_i|s_i) / π_old(a_i|s_i), with
/// cached log values.
///
/// All entries are strictly positive and tokens sharing the same `(s, a)`
/// hold bitwise-equal values.
#[derive(Debug, Clone)]
pub struct RatioTuple {
    values: Vec<f64>,
    logs: Vec<f64>,
}

impl RatioTuple {
    /// Ratios of two policies over the batch tokens.
    pub fn from_policies(new: &PolicyTable, old: &PolicyTable, batch: &Batch) -> Result<Self> {
        let mut per_pair = Vec::with_capacity(batch.pairs().len());
        for pair in batch.pairs() {
            let p_new = new.prob(pair.state, pair.action)?;
            let p_old = old.prob(pair.state, pair.action)?;
            per_pair.push(p_new / p_old);
        }
        Self::from_pair_values(batch, &per_pair)
    }

    /// Ratio tuple from one value per distinct `(s, a)` pair, in the batch's
    /// pair order.
    pub fn from_pair_values(batch: &Batch, per_pair: &[f64]) -> Result<Self> {
        if per_pair.len() != batch.pairs().len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} pair ratios, got {}",
                batch.pairs().len(),
                per_pair.len()
            )));
        }
        let values: Vec<f64> = (0..batch.total())
            .map(|i| per_pair[batch.token_pair(i)])
            .collect();
        Self::validated(batch, values)
    }

    /// Ratio tuple from one value per token. Tokens sharing a pair must agree
    /// bitwise.
    pub fn from_token_values(batch: &Batch, values: Vec<f64>) -> Result<Self> {
        if values.len() != batch.total() {
            return Err(Error::InvalidConfig(format!(
                "expected {} token ratios, got {}",
                batch.total(),
                values.len()
            )));
        }
        for pair in batch.pairs() {
            let first = values[pair.token_indices[0]];
            for &i in &pair.token_indices {
                if values[i].to_bits() != first.to_bits() {
                    return Err(Error::InvalidRatio {
                        token: i,
                        reason: "tokens sharing (s, a) have different ratios".into(),
                    });
                }
            }
        }
        Self::validated(batch, values)
    }

    fn validated(batch: &Batch, values: Vec<f64>) -> Result<Self> {
        debug_assert_eq!(values.len(), batch.total());
        for (i, &r) in values.iter().enumerate() {
            if !r.is_finite() || r <= 0.0 {
                return Err(Error::InvalidRatio {
                    token: i,
                    reason: format!("ratio {r} is not strictly positive and finite"),
                });
            }
        }
        let logs = values.iter().map(|&r| r.ln()).collect();
        Ok(Self { values, logs })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, token: usize) -> f64 {
        self.values[token]
    }

    pub fn log(&self, token: usize) -> f64 {
        self.logs[token]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn logs(&self) -> &[f64] {
        &self.logs
    }

    /// Ratio deviation Δ_i = r_i − 1.
    pub fn deviation(&self, token: usize) -> f64 {
        self.values[token] - 1.0
    }
}

/// Per-token importance ratios of `new` against `old` over the batch.
pub fn compute_ratios(new: &PolicyTable, old: &PolicyTable, batch: &Batch) -> Result<RatioTuple> {
    RatioTuple::from_policies(new, old, batch)
}

/// The T×T matrix Π_{jk} = ∂r_j/∂z_k over token pairs.
///
/// Within one state, Π_{jk} = r_j (δ_{jk} − π_new(a_k|s_k)); logits of
/// different states are independent coordinates, so cross-state entries are
/// exactly zero.
pub fn ratio_jacobian_wrt_logits(
    ratios: &RatioTuple,
    new: &PolicyTable,
    batch: &Batch,
) -> Result<Vec<Vec<f64>>> {
    let t = batch.total();
    if ratios.len() != t {
        return Err(Error::InvalidConfig(
            "ratio tuple does not match batch".into(),
        ));
    }
    let mut jac = vec![vec![0.0; t]; t];
    for j in 0..t {
        let token_j = batch.token(j);
        for k in 0..t {
            let token_k = batch.token(k);
            if token_j.state != token_k.state {
                continue;
            }
            let delta = if token_j.action == token_k.action {
                1.0
            } else {
                0.0
            };
            let pk = new.prob(token_k.state, token_k.action)?;
            jac[j][k] = ratios.value(j) * (delta - pk);
        }
    }
    Ok(jac)
}
