//! Procedural two-domain IQA dataset.
//!
//! Each reference is a band-limited random texture: a sum of random
//! sinusoids plus smoothed white noise. Source references are rendered in
//! RGB; target references are grayscale and modulated by smoothed
//! exponential speckle, roughly mimicking ultrasound statistics. Every
//! reference gets `levels` degraded versions (Gaussian blur followed by
//! additive noise and a partial 3×3 box filter, all growing with the level)
//! and a pseudo-MOS that falls linearly from 1.0 (pristine) to 0.1 (worst).

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::data::pnm::{self, quantize, Raster};
use crate::data::split::test_references;
use crate::data::{Domain, Manifest, ManifestRow, Sample, Split};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_references: usize,
    /// Number of degraded versions per reference.
    pub levels: usize,
    /// Image side length; a multiple of 32.
    pub size: usize,
    pub seed: u64,
    pub domain: Domain,
    /// Fraction of references assigned to the test split.
    pub test_fraction: f64,
}

impl SynthSpec {
    pub fn new(n_references: usize, levels: usize, size: usize, seed: u64, domain: Domain) -> Self {
        Self { n_references, levels, size, seed, domain, test_fraction: 0.25 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 32 || !self.size.is_multiple_of(32) {
            return Err(Error::contract(format!("image size must be a positive multiple of 32, got {}", self.size)));
        }
        if self.levels < 2 {
            return Err(Error::contract(format!("need at least 2 distortion levels, got {}", self.levels)));
        }
        if self.n_references < 2 {
            return Err(Error::contract(format!("need at least 2 references, got {}", self.n_references)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::contract(format!("test fraction must lie in (0,1), got {}", self.test_fraction)));
        }
        Ok(())
    }

    /// Echo written next to the generated files.
    pub fn describe(&self) -> String {
        format!(
            "seed = {}\nreferences = {}\nlevels = {}\nsize = {}\ndomain = {}\ntest_fraction = {}\n",
            self.seed, self.n_references, self.levels, self.size, self.domain, self.test_fraction
        )
    }
}

#[derive(Clone, Debug)]
pub struct SynthImage {
    pub reference: usize,
    pub level: usize,
    pub raw_mos: f64,
    pub domain: Domain,
    pub raster: Raster,
}

impl SynthImage {
    pub fn reference_key(&self) -> String {
        format!("r{:03}", self.reference)
    }

    pub fn file_name(&self) -> String {
        let ext = if self.raster.channels == 1 { "pgm" } else { "ppm" };
        format!("{}_l{}.{ext}", self.reference_key(), self.level)
    }
}

/// Pseudo-MOS of a distortion level: 1.0 at level 0, 0.1 at `levels`.
pub fn pseudo_mos(level: usize, levels: usize) -> f64 {
    1.0 - 0.9 * level as f64 / levels as f64
}

pub(crate) fn mix(parts: &[u64]) -> u64 {
    // splitmix64 folded over the parts
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn domain_salt(d: Domain) -> u64 {
    match d {
        Domain::Source => 0x5352_4300,
        Domain::Target => 0x5447_5400,
    }
}

type Plane = Vec<f64>;

fn gaussian_blur(src: &[f64], n: usize, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let clampi = |i: isize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            tmp[y * n + x] =
                kernel.iter().enumerate().map(|(k, w)| w * src[y * n + clampi(x as isize + k as isize - r)]).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            out[y * n + x] =
                kernel.iter().enumerate().map(|(k, w)| w * tmp[clampi(y as isize + k as isize - r) * n + x]).sum();
        }
    }
    out
}

fn box3(src: &[f64], n: usize) -> Plane {
    let clampi = |i: isize| i.clamp(0, n as isize - 1) as usize;
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let mut s = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    s += src[clampi(y as isize + dy) * n + clampi(x as isize + dx)];
                }
            }
            out[y * n + x] = s / 9.0;
        }
    }
    out
}

fn standardize(p: &mut [f64]) {
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    let std = (p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    p.iter_mut().for_each(|v| *v = (*v - mean) / std);
}

fn rescale(p: &mut [f64], lo: f64, hi: f64) {
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(1e-12);
    p.iter_mut().for_each(|v| *v = lo + (hi - lo) * (*v - min) / span);
}

fn sinusoids(rng: &mut ChaCha8Rng, n: usize, count: usize, max_freq: f64) -> Plane {
    let mut p = vec![0.0; n * n];
    for _ in 0..count {
        let freq = rng.gen_range(1.0..max_freq);
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let amp = rng.gen_range(0.5..1.0);
        let (fx, fy) = (freq * theta.cos(), freq * theta.sin());
        for y in 0..n {
            for x in 0..n {
                let arg = std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) / n as f64 + phase;
                p[y * n + x] += amp * arg.sin();
            }
        }
    }
    p
}

fn texture(rng: &mut ChaCha8Rng, n: usize) -> Plane {
    let mut base = sinusoids(rng, n, 6, (n as f64 / 8.0).max(2.0));
    let mut detail: Plane = (0..n * n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    detail = gaussian_blur(&detail, n, 0.8);
    standardize(&mut base);
    standardize(&mut detail);
    base.iter().zip(&detail).map(|(b, d)| b + 0.7 * d).collect()
}

fn render_reference(spec: &SynthSpec, reference: usize) -> Vec<Plane> {
    let n = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[spec.seed, domain_salt(spec.domain), reference as u64]));
    match spec.domain {
        Domain::Source => {
            let lum = texture(&mut rng, n);
            (0..3)
                .map(|_| {
                    let mut tint = sinusoids(&mut rng, n, 2, 3.0);
                    standardize(&mut tint);
                    let mut ch: Plane = lum.iter().zip(&tint).map(|(l, t)| l + 0.35 * t).collect();
                    rescale(&mut ch, 0.05, 0.95);
                    ch
                })
                .collect()
        }
        Domain::Target => {
            let mut tissue = texture(&mut rng, n);
            rescale(&mut tissue, 0.15, 0.85);
            let speckle: Plane = (0..n * n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let mut speckle = gaussian_blur(&speckle, n, 0.7);
            let mean = speckle.iter().sum::<f64>() / speckle.len() as f64;
            speckle.iter_mut().for_each(|s| *s /= mean);
            let mut img: Plane = tissue.iter().zip(&speckle).map(|(t, s)| t * s).collect();
            rescale(&mut img, 0.02, 0.98);
            vec![img]
        }
    }
}

fn degrade(planes: &[Plane], n: usize, level: usize, levels: usize, rng: &mut ChaCha8Rng) -> Vec<Plane> {
    if level == 0 {
        return planes.to_vec();
    }
    let t = level as f64 / levels as f64;
    let sigma = 0.3 + 1.5 * t;
    let noise_std = 0.04 * t;
    planes
        .iter()
        .map(|p| {
            let blurred = gaussian_blur(p, n, sigma);
            let noisy: Plane =
                blurred.iter().map(|v| v + noise_std * rng.sample::<f64, _>(StandardNormal)).collect();
            let smooth = box3(&noisy, n);
            noisy.iter().zip(&smooth).map(|(a, b)| (1.0 - t) * a + t * b).collect()
        })
        .collect()
}

fn to_raster(planes: &[Plane], n: usize) -> Raster {
    let c = planes.len();
    let mut pixels = vec![0u8; c * n * n];
    for (ch, p) in planes.iter().enumerate() {
        for (i, &v) in p.iter().enumerate() {
            pixels[i * c + ch] = quantize(v);
        }
    }
    Raster { width: n, height: n, channels: c, pixels }
}

/// All images of a dataset, ordered by reference then level.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthImage>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.n_references * (spec.levels + 1));
    for reference in 0..spec.n_references {
        let pristine = render_reference(spec, reference);
        for level in 0..=spec.levels {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[
                spec.seed,
                domain_salt(spec.domain),
                reference as u64,
                level as u64 + 1,
            ]));
            let planes = degrade(&pristine, spec.size, level, spec.levels, &mut rng);
            out.push(SynthImage {
                reference,
                level,
                raw_mos: pseudo_mos(level, spec.levels),
                domain: spec.domain,
                raster: to_raster(&planes, spec.size),
            });
        }
    }
    Ok(out)
}

fn manifest_for(spec: &SynthSpec, images: &[SynthImage]) -> Result<Manifest> {
    let keys: Vec<String> = images.iter().map(SynthImage::reference_key).collect();
    let test = test_references(&keys, spec.test_fraction, spec.seed)?;
    let rows = images
        .iter()
        .map(|img| ManifestRow {
            path: img.file_name().into(),
            raw_mos: Some(img.raw_mos),
            domain: img.domain,
            split: if test.contains(&img.reference_key()) { Split::Test } else { Split::Train },
        })
        .collect();
    Manifest::new(rows, ".")
}

/// Generates the dataset in memory as normalised samples (same content and
/// split as [`write_dataset`] would put on disk).
pub fn samples<T: Real>(spec: &SynthSpec) -> Result<Vec<Sample<T>>> {
    let images = generate(spec)?;
    let manifest = manifest_for(spec, &images)?;
    images
        .iter()
        .zip(&manifest.rows)
        .map(|(img, row)| {
            Ok(Sample {
                image: img.raster.to_tensor(),
                mos: manifest.normalized_mos(row)?,
                domain: img.domain,
                split: row.split,
                id: row.id(),
                reference: img.reference_key(),
            })
        })
        .collect()
}

/// Writes images, `manifest.csv` and `synth_meta.txt` into `dir`.
pub fn write_dataset(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    let images = generate(spec)?;
    let mut manifest = manifest_for(spec, &images)?;
    fs::create_dir_all(dir)?;
    for img in &images {
        pnm::write(dir.join(img.file_name()), &img.raster)?;
    }
    manifest.base_dir = dir.to_path_buf();
    manifest.write(dir.join("manifest.csv"))?;
    fs::write(dir.join("synth_meta.txt"), spec.describe())?;
    Ok(manifest)
}
