use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// A square crop and its top-left anchor.
#[derive(Clone, Debug)]
pub struct Patch<T> {
    pub patch: Tensor<T>,
    pub y: usize,
    pub x: usize,
}

/// Anchors `0, stride, 2·stride, …` along an axis of length `len`, with the
/// last anchor moved to `len - patch` so the border is covered.
pub fn anchors(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = len - patch;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Sliding-window patches of a `C×H×W` image in row-major anchor order.
pub fn extract_patches<T: Real>(image: &Tensor<T>, patch: usize, stride: usize) -> Result<Vec<Patch<T>>> {
    let [_, h, w] = image.dims3()?;
    if stride == 0 {
        return Err(Error::contract("stride must be positive"));
    }
    if h < patch || w < patch {
        return Err(Error::contract(format!("image {h}x{w} is smaller than one {patch}x{patch} patch")));
    }
    let xs = anchors(w, patch, stride);
    let mut out = Vec::new();
    for y in anchors(h, patch, stride) {
        for &x in &xs {
            out.push(Patch { patch: image.crop(y, x, patch, patch)?, y, x });
        }
    }
    Ok(out)
}
