//! The SAQM network: three branch CNNs (Query, Key, Value), a gated
//! self-attention kernel, a patch regressor and a domain classifier head.

mod attention;
mod branch;
pub mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use attention::{attention, AttentionTrace, AttentionVars};
pub use branch::{layer_plan, BranchNet, BranchVars, ConvLayer, LOCATIONS, PATCH};

use crate::data::patches::extract_patches;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Default trunk width.
pub const DEFAULT_CHANNELS: usize = 512;
/// Hidden width of the regressor and domain-classifier MLPs.
pub const HEAD_HIDDEN: usize = 64;

/// Two-layer perceptron `in → 64 → 1` with a ReLU in between; the sigmoid
/// is applied by the caller.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl<T: Real> Mlp<T> {
    fn init(input: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: branch::he_uniform(&[HEAD_HIDDEN, input], input, rng),
            b1: Tensor::zeros(&[HEAD_HIDDEN]),
            w2: branch::he_uniform(&[1, HEAD_HIDDEN], HEAD_HIDDEN, rng),
            b2: Tensor::zeros(&[1]),
        }
    }

    fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp { w1: self.w1.cast(), b1: self.b1.cast(), w2: self.w2.cast(), b2: self.b2.cast() }
    }

    fn tensors(&self) -> [&Tensor<T>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Full parameter set of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct SaqmParams<T> {
    pub q_net: BranchNet<T>,
    pub k_net: BranchNet<T>,
    pub v_net: BranchNet<T>,
    /// Gate on the attended term, a 1-element tensor.
    pub gamma: Tensor<T>,
    pub regressor: Mlp<T>,
    pub domain_head: Mlp<T>,
    pub channels: usize,
    pub locations: usize,
}

impl<T: Real> SaqmParams<T> {
    /// Randomly initialised model with trunk width `channels` (divisible by
    /// 8). Query/Key heads get `channels / 8` outputs; `gamma` starts at 0.
    pub fn build(seed: u64, channels: usize) -> Result<Self> {
        if channels == 0 || !channels.is_multiple_of(8) {
            return Err(Error::contract(format!("channels must be a positive multiple of 8, got {channels}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qk = channels / 8;
        Ok(Self {
            q_net: BranchNet::init(channels, qk, &mut rng),
            k_net: BranchNet::init(channels, qk, &mut rng),
            v_net: BranchNet::init(channels, channels, &mut rng),
            gamma: Tensor::scalar(T::zero()),
            regressor: Mlp::init(channels, &mut rng),
            domain_head: Mlp::init(channels, &mut rng),
            channels,
            locations: LOCATIONS,
        })
    }

    pub fn cast<U: Real>(&self) -> SaqmParams<U> {
        SaqmParams {
            q_net: self.q_net.cast(),
            k_net: self.k_net.cast(),
            v_net: self.v_net.cast(),
            gamma: self.gamma.cast(),
            regressor: self.regressor.cast(),
            domain_head: self.domain_head.cast(),
            channels: self.channels,
            locations: self.locations,
        }
    }

    /// Tensor names in canonical order (the order of [`Self::tensors`]).
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (prefix, net) in [("q", &self.q_net), ("k", &self.k_net), ("v", &self.v_net)] {
            for i in 1..=net.layers.len() {
                names.push(format!("{prefix}.conv{i}.weight"));
                names.push(format!("{prefix}.conv{i}.bias"));
            }
        }
        names.push("gamma".into());
        for prefix in ["regressor", "domain"] {
            for t in ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"] {
                names.push(format!("{prefix}.{t}"));
            }
        }
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = Vec::new();
        out.extend(self.q_net.tensors());
        out.extend(self.k_net.tensors());
        out.extend(self.v_net.tensors());
        out.push(&self.gamma);
        out.extend(self.regressor.tensors());
        out.extend(self.domain_head.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        out.extend(self.q_net.tensors_mut());
        out.extend(self.k_net.tensors_mut());
        out.extend(self.v_net.tensors_mut());
        out.push(&mut self.gamma);
        out.extend(self.regressor.tensors_mut());
        out.extend(self.domain_head.tensors_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    pub fn gamma(&self) -> T {
        self.gamma.item()
    }

    /// Records every parameter as a leaf of `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, requires_grad: bool) -> BoundParams<'t, T> {
        let leaf = |t: &Tensor<T>| tape.leaf(t.clone(), requires_grad);
        let mlp = |m: &Mlp<T>| MlpVars { w1: leaf(&m.w1), b1: leaf(&m.b1), w2: leaf(&m.w2), b2: leaf(&m.b2) };
        BoundParams {
            q: self.q_net.bind(tape, requires_grad),
            k: self.k_net.bind(tape, requires_grad),
            v: self.v_net.bind(tape, requires_grad),
            gamma: leaf(&self.gamma),
            regressor: mlp(&self.regressor),
            domain: mlp(&self.domain_head),
        }
    }

    /// Predicted normalised quality of one `3×32×32` patch, in (0,1).
    pub fn patch_score(&self, patch: &Tensor<T>) -> Result<T> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        Ok(bound.forward(tape.constant(patch.clone()))?.score.item())
    }

    /// Attention intermediates for one patch.
    pub fn attention_trace(&self, patch: &Tensor<T>) -> Result<AttentionTrace<T>> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        Ok(AttentionTrace::from(&bound.forward(tape.constant(patch.clone()))?.attention))
    }

    /// Mean patch score over the sliding-window patch set of a `3×H×W` image.
    pub fn image_score(&self, image: &Tensor<T>, stride: usize) -> Result<T> {
        let patches = extract_patches(image, PATCH, stride)?;
        let n = T::lit(patches.len() as f64);
        let mut total = T::zero();
        for p in &patches {
            total += self.patch_score(&p.patch)?;
        }
        Ok(total / n)
    }

    /// Domain-classifier probability for a pooled feature vector.
    pub fn domain_logit(&self, pooled: &Tensor<T>, lambda_grl: T) -> Result<T> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        Ok(bound.domain_prob(tape.constant(pooled.clone()), lambda_grl)?.item())
    }
}

/// MLP parameters on a tape.
#[derive(Clone, Copy)]
pub struct MlpVars<'t, T> {
    pub w1: Var<'t, T>,
    pub b1: Var<'t, T>,
    pub w2: Var<'t, T>,
    pub b2: Var<'t, T>,
}

impl<'t, T: Real> MlpVars<'t, T> {
    /// `in`-vector → scalar pre-activation, as a `[1]` tensor.
    pub fn logit(&self, input: Var<'t, T>) -> Result<Var<'t, T>> {
        let n = input.shape().iter().product::<usize>();
        let x = input.reshape(&[n, 1])?;
        let h = self.w1.matmul(x)?.add(self.b1.reshape(&[HEAD_HIDDEN, 1])?)?.relu();
        self.w2.matmul(h)?.reshape(&[1])?.add(self.b2)
    }

    fn vars(&self) -> [Var<'t, T>; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// A full parameter set recorded on a tape.
pub struct BoundParams<'t, T> {
    pub q: BranchVars<'t, T>,
    pub k: BranchVars<'t, T>,
    pub v: BranchVars<'t, T>,
    pub gamma: Var<'t, T>,
    pub regressor: MlpVars<'t, T>,
    pub domain: MlpVars<'t, T>,
}

/// Result of scoring one patch on a tape.
pub struct PatchForward<'t, T> {
    pub query: Var<'t, T>,
    pub key: Var<'t, T>,
    pub value: Var<'t, T>,
    pub attention: AttentionVars<'t, T>,
    pub score: Var<'t, T>,
}

impl<'t, T: Real> BoundParams<'t, T> {
    /// Branch features → attention → global max pool → regressor → sigmoid.
    pub fn forward(&self, patch: Var<'t, T>) -> Result<PatchForward<'t, T>> {
        let query = self.q.features(patch)?;
        let key = self.k.features(patch)?;
        let value = self.v.features(patch)?;
        let att = attention(query, key, value, self.gamma)?;
        let score = self.regressor.logit(att.pooled)?.sigmoid();
        Ok(PatchForward { query, key, value, attention: att, score })
    }

    /// Gradient reversal → domain MLP → sigmoid. Probability that the
    /// features come from the target domain.
    pub fn domain_prob(&self, pooled: Var<'t, T>, lambda_grl: T) -> Result<Var<'t, T>> {
        Ok(self.domain.logit(pooled.grad_reverse(lambda_grl))?.sigmoid())
    }

    /// Every leaf in the canonical parameter order.
    pub fn vars(&self) -> Vec<Var<'t, T>> {
        let mut out: Vec<Var<'t, T>> = Vec::new();
        out.extend(self.q.vars());
        out.extend(self.k.vars());
        out.extend(self.v.vars());
        out.push(self.gamma);
        out.extend(self.regressor.vars());
        out.extend(self.domain.vars());
        out
    }

    /// Accumulated gradients in canonical order; untouched parameters get
    /// zeros.
    pub fn grads(&self) -> Vec<Tensor<T>> {
        self.vars()
            .into_iter()
            .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape())))
            .collect()
    }
}
