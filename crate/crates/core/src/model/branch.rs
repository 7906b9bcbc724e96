use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Side length of the square patches the branch networks consume.
pub const PATCH: usize = 32;
/// Spatial positions left after the two 2× poolings (8×8).
pub const LOCATIONS: usize = (PATCH / 4) * (PATCH / 4);

/// One convolution layer: `weight` is `out×in×k×k`, `bias` is `out`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }
}

/// Layer geometry `(in, out, kernel)` of the eight convolutions of a branch
/// with trunk width `channels` and a final pointwise layer of `head` outputs.
/// For `channels = 512` this is 3→128→256→256→256 | pool | →512→512→512 |
/// pool | 1×1 →`head`.
pub fn layer_plan(channels: usize, head: usize) -> [(usize, usize, usize); 8] {
    let (q, h, c) = (channels / 4, channels / 2, channels);
    [(3, q, 3), (q, h, 3), (h, h, 3), (h, h, 3), (h, c, 3), (c, c, 3), (c, c, 3), (c, head, 1)]
}

/// A shallow CNN producing one of the Query, Key or Value feature maps.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchNet<T> {
    pub layers: Vec<ConvLayer<T>>,
}

impl<T: Real> BranchNet<T> {
    pub fn init(channels: usize, head: usize, rng: &mut impl Rng) -> Self {
        let layers = layer_plan(channels, head)
            .iter()
            .map(|&(cin, cout, k)| {
                let fan_in = cin * k * k;
                ConvLayer {
                    weight: he_uniform(&[cout, cin, k, k], fan_in, rng),
                    bias: Tensor::zeros(&[cout]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.shape()[0])
    }

    pub fn param_counts(&self) -> Vec<usize> {
        self.layers.iter().map(ConvLayer::param_count).collect()
    }

    pub fn cast<U: Real>(&self) -> BranchNet<U> {
        BranchNet {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer { weight: l.weight.cast(), bias: l.bias.cast() })
                .collect(),
        }
    }

    pub(crate) fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub(crate) fn bind<'t>(&self, tape: &'t Tape<T>, requires_grad: bool) -> BranchVars<'t, T> {
        BranchVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.leaf(l.weight.clone(), requires_grad), tape.leaf(l.bias.clone(), requires_grad)))
                .collect(),
        }
    }
}

pub(crate) fn he_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..bound)))
}

/// Branch parameters recorded on a tape.
pub struct BranchVars<'t, T> {
    pub layers: Vec<(Var<'t, T>, Var<'t, T>)>,
}

impl<'t, T: Real> BranchVars<'t, T> {
    /// Runs the branch on a `3×32×32` patch and flattens the resulting
    /// `C'×8×8` map row-major into a `C'×64` matrix.
    pub fn features(&self, patch: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = patch.shape();
        if shape != [3, PATCH, PATCH] {
            return Err(Error::contract(format!("patch must be 3x{PATCH}x{PATCH}, got {shape:?}")));
        }
        let mut x = patch;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            x = if i + 1 == self.layers.len() { x.conv1x1(w, b)? } else { x.conv3x3(w, b)? };
            x = x.relu();
            // Pool after the fourth and seventh convolutions.
            if i == 3 || i == 6 {
                x = x.maxpool2x2()?;
            }
        }
        let s = x.shape();
        x.reshape(&[s[0], s[1] * s[2]])
    }

    pub(crate) fn vars(&self) -> impl Iterator<Item = Var<'t, T>> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}
