use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Intermediates of one attention pass, recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars<'t, T> {
    /// `N×N`, `scores[l][j] = query[:,l] · key[:,j]`.
    pub scores: Var<'t, T>,
    /// Row-normalised scores: each row `l` is a distribution over key
    /// locations `j`.
    pub attention: Var<'t, T>,
    /// `C×N`, `gamma · value·attentionᵀ + value`.
    pub output: Var<'t, T>,
    /// Per-channel global max of `output`.
    pub pooled: Var<'t, T>,
}

/// Self-attention over the `N` spatial locations of one patch.
///
/// Output column `l` is `value[:,l] + gamma · Σ_j attention[l][j] · value[:,j]`.
pub fn attention<'t, T: Real>(
    query: Var<'t, T>,
    key: Var<'t, T>,
    value: Var<'t, T>,
    gamma: Var<'t, T>,
) -> Result<AttentionVars<'t, T>> {
    let (qs, ks, vs) = (query.shape(), key.shape(), value.shape());
    if qs.len() != 2 || qs != ks {
        return Err(Error::contract(format!("query {qs:?} and key {ks:?} must be equal rank-2 shapes")));
    }
    if vs.len() != 2 || vs[1] != qs[1] {
        return Err(Error::contract(format!(
            "value {vs:?} must have the same location dimension as query {qs:?}"
        )));
    }
    let scores = query.transpose()?.matmul(key)?;
    let attention = scores.softmax_rows()?;
    let attended = value.matmul(attention.transpose()?)?;
    let output = attended.scale_by(gamma)?.add(value)?;
    let pooled = output.global_max_pool()?;
    Ok(AttentionVars { scores, attention, output, pooled })
}

/// Plain-tensor snapshot of [`AttentionVars`].
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace<T> {
    pub scores: Tensor<T>,
    pub attention: Tensor<T>,
    pub output: Tensor<T>,
    pub pooled: Tensor<T>,
}

impl<T: Real> From<&AttentionVars<'_, T>> for AttentionTrace<T> {
    fn from(v: &AttentionVars<'_, T>) -> Self {
        Self {
            scores: v.scores.value(),
            attention: v.attention.value(),
            output: v.output.value(),
            pooled: v.pooled.value(),
        }
    }
}
