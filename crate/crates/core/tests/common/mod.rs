#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saqm::data::synth;
use saqm::model::PATCH;
use saqm::train::{batch_gradients, Objective, TrainPatch};
use saqm::{Domain, SaqmParams, SynthSpec, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Distinct values at least `gap` apart in random order, so max-style ops
/// keep their argmax under a finite-difference nudge.
pub fn spaced(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * gap).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).unwrap()
}

/// Values in `[lo, hi]` or `[-hi, -lo]`, away from a kink at zero.
pub fn off_zero(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(lo..hi);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

pub type OpFn = dyn for<'t> Fn(&[Var<'t, f64>]) -> saqm::Result<Var<'t, f64>>;

/// Scalar loss `Σ r ⊙ f(inputs)` with fixed weights `r`.
fn weighted_loss(inputs: &[Tensor<f64>], f: &OpFn, weights_seed: u64) -> (f64, Vec<Tensor<f64>>) {
    let tape = Tape::new();
    let vars: Vec<Var<f64>> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&vars).unwrap();
    let mut r = rng(weights_seed);
    let w = tape.constant(uniform(&out.shape(), -1.0, 1.0, &mut r));
    let loss = out.mul(w).unwrap().sum();
    loss.backward().unwrap();
    let grads = vars.iter().map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape()))).collect();
    (loss.item(), grads)
}

#[derive(Debug, Default)]
pub struct GradCheck {
    pub probes: usize,
    /// Largest `|analytic - numeric| / tolerance`; below 1 passes.
    pub worst: f64,
    pub detail: String,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.worst <= 1.0
    }
}

/// Central finite differences against the tape's gradients. `gen` draws a
/// fresh input set; each instance gets up to `per_instance` random probes.
pub fn grad_check(
    f: &OpFn,
    gen: impl FnMut(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
    probes: usize,
    per_instance: usize,
    seed: u64,
) -> GradCheck {
    grad_check_scaled(f, gen, probes, per_instance, seed, 1.0)
}

/// As [`grad_check`], but expects the tape to report `factor` times the
/// numerical derivative (the gradient reversal layer's contract).
pub fn grad_check_scaled(
    f: &OpFn,
    mut gen: impl FnMut(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
    probes: usize,
    per_instance: usize,
    seed: u64,
    factor: f64,
) -> GradCheck {
    const H: f64 = 1e-3;
    let mut r = rng(seed);
    let mut out = GradCheck::default();
    while out.probes < probes {
        let inputs = gen(&mut r);
        let wseed: u64 = r.gen();
        let (_, grads) = weighted_loss(&inputs, f, wseed);
        for _ in 0..per_instance.min(probes - out.probes) {
            let which = r.gen_range(0..inputs.len());
            let idx = r.gen_range(0..inputs[which].numel());
            let eval = |delta: f64| {
                let mut shifted = inputs.clone();
                shifted[which].data_mut()[idx] += delta;
                weighted_loss(&shifted, f, wseed).0
            };
            let numeric = factor * (eval(H) - eval(-H)) / (2.0 * H);
            let analytic = grads[which].data()[idx];
            let tol = f64::max(1e-4, 1e-3 * numeric.abs());
            let ratio = (analytic - numeric).abs() / tol;
            if ratio > out.worst {
                out.worst = ratio;
                out.detail = format!("input {which}[{idx}]: analytic {analytic:.6e} numeric {numeric:.6e}");
            }
            out.probes += 1;
        }
    }
    out
}

/// Quality BCE and domain BCE (through the GRL with `lambda_grl`) of one
/// patch, plus the parameter leaves.
pub fn patch_loss<'t>(
    model: &SaqmParams<f64>,
    tape: &'t Tape<f64>,
    patch: &Tensor<f64>,
    mos: f64,
    domain: f64,
    lambda_grl: f64,
) -> (Var<'t, f64>, Var<'t, f64>, Vec<Var<'t, f64>>) {
    let bound = model.bind(tape, true);
    let fwd = bound.forward(tape.constant(patch.clone())).unwrap();
    let q = fwd.score.bce(mos).unwrap();
    let d = bound.domain_prob(fwd.attention.pooled, lambda_grl).unwrap().bce(domain).unwrap();
    (q, d, bound.vars())
}

/// End-to-end check of `probes` sampled parameters of a width-16 model
/// under the training loss `L_q + L_d` with the GRL at 1. The expected
/// gradient is `∂L_q - ∂L_d` for parameters upstream of the reversal and
/// `∂L_d` for the domain head.
///
/// The network is piecewise linear, and a nudge of 1e-3 on an early bias
/// moves enough ReLU and pooling decisions to bias the difference quotient,
/// so this check steps by 1e-5.
pub fn end_to_end_check(probes: usize, seed: u64) -> GradCheck {
    const H: f64 = 1e-5;
    let mut model = SaqmParams::<f64>::build(seed, 16).unwrap();
    model.gamma = Tensor::scalar(0.5);
    let mut r = rng(seed ^ 0xE2E);
    let patch = uniform(&[3, PATCH, PATCH], 0.0, 1.0, &mut r);
    let parts = |m: &SaqmParams<f64>| {
        let tape = Tape::new();
        let (q, d, _) = patch_loss(m, &tape, &patch, 0.7, 1.0, 1.0);
        (q.item(), d.item())
    };
    let tape = Tape::new();
    let (q, d, vars) = patch_loss(&model, &tape, &patch, 0.7, 1.0, 1.0);
    q.add(d).unwrap().backward().unwrap();
    let grads: Vec<Tensor<f64>> = vars.iter().map(|v| v.grad().unwrap()).collect();
    let n_tensors = grads.len();
    let names = model.names();

    let mut out = GradCheck::default();
    for p in 0..probes {
        // Spread the first probes over distinct tensors, gamma included.
        let t = if p < n_tensors { (p * 7 + 3) % n_tensors } else { r.gen_range(0..n_tensors) };
        let idx = r.gen_range(0..grads[t].numel());
        let eval = |delta: f64| {
            let mut m = model.clone();
            m.tensors_mut()[t].data_mut()[idx] += delta;
            parts(&m)
        };
        let ((qp, dp), (qm, dm)) = (eval(H), eval(-H));
        let (nq, nd) = ((qp - qm) / (2.0 * H), (dp - dm) / (2.0 * H));
        let numeric = if names[t].starts_with("domain.") { nq + nd } else { nq - nd };
        let analytic = grads[t].data()[idx];
        let tol = f64::max(1e-3, 1e-2 * numeric.abs());
        let ratio = (analytic - numeric).abs() / tol;
        if ratio > out.worst {
            out.worst = ratio;
            out.detail = format!("{}[{idx}]: analytic {analytic:.6e} numeric {numeric:.6e}", names[t]);
        }
        out.probes += 1;
    }
    out
}

/// `Σ_c Σ_ky Σ_kx` direct 3×3 (or 1×1) convolution with zero padding.
pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros(&[co, h, wd]);
    for o in 0..co {
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = b.data()[o];
                for c in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = y as isize + ky as isize - pad;
                            let ix = xx as isize + kx as isize - pad;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            let xv = x.data()[(c * h + iy as usize) * wd + ix as usize];
                            acc += w.data()[((o * ci + c) * k + ky) * k + kx] * xv;
                        }
                    }
                }
                out.data_mut()[(o * h + y) * wd + xx] = acc;
            }
        }
    }
    out
}

pub fn maxpool_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    Tensor::from_fn(&[c, h / 2, w / 2], |i| {
        let (ch, rest) = (i / (h / 2 * w / 2), i % (h / 2 * w / 2));
        let (y, xx) = (rest / (w / 2), rest % (w / 2));
        let mut m = f64::NEG_INFINITY;
        for dy in 0..2 {
            for dx in 0..2 {
                m = m.max(x.data()[(ch * h + 2 * y + dy) * w + 2 * xx + dx]);
            }
        }
        m
    })
}

pub struct AttentionOracle {
    pub scores: Vec<Vec<f64>>,
    pub attention: Vec<Vec<f64>>,
    pub output: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
}

/// Explicit sums over channels and locations.
pub fn attention_oracle(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], gamma: f64) -> AttentionOracle {
    let n = q[0].len();
    let scores: Vec<Vec<f64>> =
        (0..n).map(|l| (0..n).map(|j| (0..q.len()).map(|c| q[c][l] * k[c][j]).sum()).collect()).collect();
    let attention: Vec<Vec<f64>> = scores
        .iter()
        .map(|row| {
            let z: f64 = row.iter().map(|s| s.exp()).sum();
            row.iter().map(|s| s.exp() / z).collect()
        })
        .collect();
    let output: Vec<Vec<f64>> = v
        .iter()
        .map(|vc| (0..n).map(|l| vc[l] + gamma * (0..n).map(|j| attention[l][j] * vc[j]).sum::<f64>()).collect())
        .collect();
    let pooled = output.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    AttentionOracle { scores, attention, output, pooled }
}

pub fn pearson_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Rank of each element by counting: ties share the mean of their positions.
pub fn rank_oracle(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&a| {
            let below = x.iter().filter(|&&b| b < a).count() as f64;
            let equal = x.iter().filter(|&&b| b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson_oracle(&rank_oracle(x), &rank_oracle(y))
}

/// Random correlation case of length 3..=6; integer-valued draws force ties.
pub fn correlation_case(r: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = r.gen_range(3..=6);
    let draw = |r: &mut ChaCha8Rng| -> f64 {
        if r.gen_bool(0.5) {
            r.gen_range(0..4) as f64
        } else {
            r.gen_range(-10.0..10.0)
        }
    };
    let x = (0..n).map(|_| draw(r)).collect();
    let y = (0..n).map(|_| draw(r)).collect();
    (x, y)
}

/// Gradients of one fixed batch under the full objective and its two
/// halves: `(full, quality only, domain only with the reversal undone)`.
pub fn grl_decomposition(model: &SaqmParams<f64>, batch: &[&TrainPatch<f64>]) -> [Vec<Tensor<f64>>; 3] {
    let full = Objective { quality: true, domain: true, lambda_domain: 1.0, lambda_grl: 1.0 };
    let q_only = Objective { domain: false, ..full };
    let d_unrev = Objective { quality: false, lambda_grl: -1.0, ..full };
    [full, q_only, d_unrev].map(|o| batch_gradients(model, batch, &o).unwrap().grads)
}

pub fn mixed_batch(seed: u64) -> Vec<TrainPatch<f64>> {
    let mut r = rng(seed);
    (0..4)
        .map(|i| TrainPatch {
            patch: uniform(&[3, PATCH, PATCH], 0.0, 1.0, &mut r),
            mos: (i % 2 == 0).then_some(0.25 * i as f64 + 0.1),
            domain: if i < 2 { Domain::Source } else { Domain::Target },
        })
        .collect()
}

/// Eight patches cut from pristine (label 1) and worst-level (label 0)
/// synthetic images.
pub fn overfit_patches() -> Vec<TrainPatch<f32>> {
    let spec = SynthSpec::new(4, 5, 32, 0, Domain::Source);
    synth::samples::<f32>(&spec)
        .unwrap()
        .into_iter()
        .filter(|s| matches!(s.mos, Some(m) if m == 0.0 || m == 1.0))
        .map(|s| TrainPatch { patch: s.image, mos: s.mos, domain: Domain::Source })
        .collect()
}

/// Full-batch Adam on [`overfit_patches`]; returns the per-step mean BCE
/// and the final model.
pub fn overfit(steps: usize, lr: f64, seed: u64, channels: usize) -> (Vec<f64>, SaqmParams<f32>) {
    let patches = overfit_patches();
    let batch: Vec<&TrainPatch<f32>> = patches.iter().collect();
    let mut model = SaqmParams::<f32>::build(seed, channels).unwrap();
    let mut adam = saqm::optim::AdamState::new(model.tensors());
    let obj = Objective { quality: true, domain: false, lambda_domain: 0.0, lambda_grl: 1.0 };
    let losses = (0..steps)
        .map(|_| saqm::train::train_step(&mut model, &mut adam, &batch, &obj, lr).unwrap().loss_q)
        .collect();
    (losses, model)
}

/// Mean BCE of the model on [`overfit_patches`].
pub fn overfit_loss(model: &SaqmParams<f32>) -> f64 {
    let patches = overfit_patches();
    let batch: Vec<&TrainPatch<f32>> = patches.iter().collect();
    let obj = Objective { quality: true, domain: false, lambda_domain: 0.0, lambda_grl: 1.0 };
    batch_gradients(model, &batch, &obj).unwrap().loss_q
}

pub type Gen = Box<dyn FnMut(&mut ChaCha8Rng) -> Vec<Tensor<f64>>>;

/// One differentiable op under finite-difference test.
pub struct OpCase {
    pub name: &'static str,
    pub f: Box<OpFn>,
    pub gen: Gen,
    /// Expected ratio of tape gradient to numerical derivative.
    pub factor: f64,
}

fn case(name: &'static str, f: Box<OpFn>, gen: Gen) -> OpCase {
    OpCase { name, f, gen, factor: 1.0 }
}

/// Every differentiable tape op with inputs kept away from its kinks.
pub fn op_suite() -> Vec<OpCase> {
    let u = |shape: &'static [usize], lo: f64, hi: f64| -> Gen { Box::new(move |r| vec![uniform(shape, lo, hi, r)]) };
    let pair = |a: &'static [usize], b: &'static [usize]| -> Gen {
        Box::new(move |r| vec![uniform(a, -1.0, 1.0, r), uniform(b, -1.0, 1.0, r)])
    };
    let mut cases = vec![
        case(
            "conv3x3",
            Box::new(|v| v[0].conv3x3(v[1], v[2])),
            Box::new(|r| {
                vec![uniform(&[2, 5, 6], -1.0, 1.0, r), uniform(&[3, 2, 3, 3], -0.5, 0.5, r), uniform(&[3], -0.5, 0.5, r)]
            }),
        ),
        case(
            "conv1x1",
            Box::new(|v| v[0].conv1x1(v[1], v[2])),
            Box::new(|r| {
                vec![uniform(&[4, 3, 3], -1.0, 1.0, r), uniform(&[2, 4, 1, 1], -0.5, 0.5, r), uniform(&[2], -0.5, 0.5, r)]
            }),
        ),
        case("relu", Box::new(|v| Ok(v[0].relu())), Box::new(|r| vec![off_zero(&[30], 0.05, 2.0, r)])),
        case("maxpool2x2", Box::new(|v| v[0].maxpool2x2()), Box::new(|r| vec![spaced(&[2, 4, 6], 0.01, r)])),
        case("global_max_pool", Box::new(|v| v[0].global_max_pool()), Box::new(|r| vec![spaced(&[3, 8], 0.01, r)])),
        case("matmul", Box::new(|v| v[0].matmul(v[1])), pair(&[3, 4], &[4, 5])),
        case("transpose", Box::new(|v| v[0].transpose()), u(&[3, 5], -1.0, 1.0)),
        case("softmax_rows", Box::new(|v| v[0].softmax_rows()), u(&[4, 5], -3.0, 3.0)),
        case("sigmoid", Box::new(|v| Ok(v[0].sigmoid())), u(&[25], -6.0, 6.0)),
        case("add", Box::new(|v| v[0].add(v[1])), pair(&[4, 5], &[4, 5])),
        case("mul", Box::new(|v| v[0].mul(v[1])), pair(&[4, 5], &[4, 5])),
        case("scale_by", Box::new(|v| v[0].scale_by(v[1])), pair(&[10], &[1])),
        case("scale", Box::new(|v| Ok(v[0].scale(-1.3))), u(&[10], -1.0, 1.0)),
        case("sum", Box::new(|v| Ok(v[0].sum())), u(&[3, 4], -1.0, 1.0)),
        case("mean", Box::new(|v| Ok(v[0].mean())), u(&[3, 4], -1.0, 1.0)),
        case("reshape", Box::new(|v| v[0].reshape(&[3, 4])), u(&[2, 6], -1.0, 1.0)),
    ];
    for (name, target) in [("bce(t=0)", 0.0), ("bce(t=0.37)", 0.37), ("bce(t=1)", 1.0)] {
        cases.push(case(name, Box::new(move |v| v[0].bce(target)), u(&[1], 0.05, 0.95)));
    }
    for (name, lambda) in [("grad_reverse(1)", 1.0), ("grad_reverse(0.7)", 0.7), ("grad_reverse(-1)", -1.0)] {
        cases.push(OpCase {
            name,
            f: Box::new(move |v| Ok(v[0].grad_reverse(lambda))),
            gen: u(&[20], -1.0, 1.0),
            factor: -lambda,
        });
    }
    cases
}

/// Runs one suite entry with `probes` probes.
pub fn run_case(c: &mut OpCase, probes: usize, seed: u64) -> GradCheck {
    let per_instance = if c.name.starts_with("bce") { 1 } else { 6 };
    grad_check_scaled(&*c.f, &mut c.gen, probes, per_instance, seed, c.factor)
}
