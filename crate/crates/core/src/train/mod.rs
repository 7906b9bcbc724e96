//! Training loops for the four configurations: supervised on the target,
//! supervised on the source, unsupervised and semi-supervised domain
//! adaptation through the gradient reversal layer.

mod batch;
mod config;
mod runlog;

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use batch::{compose_batches, PatchIdx};
pub use config::{parse_kv, ConfigId, TrainConfig, KEYS};
pub use runlog::{EpochStats, RunLog, CSV_HEADER as RUNLOG_CSV_HEADER};

use crate::data::synth::mix;
use crate::data::{extract_patches, Domain, Sample, Split};
use crate::error::{Error, Result};
use crate::model::{SaqmParams, PATCH};
use crate::optim::AdamState;
use crate::real::Real;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// One training patch with its (optional) quality label and domain.
#[derive(Clone, Debug)]
pub struct TrainPatch<T> {
    pub patch: Tensor<T>,
    pub mos: Option<f64>,
    pub domain: Domain,
}

/// Which loss terms a batch contributes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub quality: bool,
    pub domain: bool,
    pub lambda_domain: f64,
    pub lambda_grl: f64,
}

impl Objective {
    pub fn for_config(cfg: &TrainConfig) -> Self {
        Self {
            quality: true,
            domain: cfg.config.is_adaptation(),
            lambda_domain: cfg.effective_lambda_domain(),
            lambda_grl: cfg.lambda_grl,
        }
    }
}

/// Gradients and loss statistics of one batch.
#[derive(Clone, Debug)]
pub struct BatchOutcome<T> {
    /// Gradients in canonical parameter order.
    pub grads: Vec<Tensor<T>>,
    /// Mean quality BCE over labeled patches (0 if none).
    pub loss_q: f64,
    /// Mean domain BCE over all patches (0 if the domain term is off).
    pub loss_d: f64,
    pub n_labeled: usize,
    pub domain_correct: usize,
    pub n_domain: usize,
}

/// `L = mean BCE(score, mos) over labeled patches + λ_d · mean BCE(domain,
/// label) over all patches`, with the domain term routed through the
/// gradient reversal layer. Each patch gets its own tape; per-patch
/// gradients are summed in batch order.
pub fn batch_gradients<T: Real>(
    model: &SaqmParams<T>,
    batch: &[&TrainPatch<T>],
    objective: &Objective,
) -> Result<BatchOutcome<T>> {
    let n_labeled = if objective.quality { batch.iter().filter(|p| p.mos.is_some()).count() } else { 0 };
    let n_domain = if objective.domain { batch.len() } else { 0 };
    let mut grads: Vec<Tensor<T>> = model.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let (mut loss_q, mut loss_d, mut correct) = (0.0, 0.0, 0usize);
    let wq = T::lit(1.0 / n_labeled.max(1) as f64);
    let wd = T::lit(objective.lambda_domain / n_domain.max(1) as f64);
    let lambda_grl = T::lit(objective.lambda_grl);

    for p in batch {
        let label = p.mos.filter(|_| objective.quality);
        if label.is_none() && !objective.domain {
            continue;
        }
        let tape = Tape::new();
        let bound = model.bind(&tape, true);
        let fwd = bound.forward(tape.constant(p.patch.clone()))?;
        let mut total = None;
        if let Some(t) = label {
            let l = fwd.score.bce(T::lit(t))?;
            loss_q += l.item().as_f64();
            total = Some(l.scale(wq));
        }
        if objective.domain {
            let d = bound.domain_prob(fwd.attention.pooled, lambda_grl)?;
            let target = p.domain.label();
            if (d.item().as_f64() > 0.5) == (target > 0.5) {
                correct += 1;
            }
            let l = d.bce(T::lit(target))?;
            loss_d += l.item().as_f64();
            let term = l.scale(wd);
            total = Some(match total {
                Some(q) => q.add(term)?,
                None => term,
            });
        }
        if let Some(total) = total {
            total.backward()?;
            for (g, pg) in grads.iter_mut().zip(bound.grads()) {
                g.add_assign(&pg);
            }
        }
    }
    Ok(BatchOutcome {
        grads,
        loss_q: if n_labeled > 0 { loss_q / n_labeled as f64 } else { 0.0 },
        loss_d: if n_domain > 0 { loss_d / n_domain as f64 } else { 0.0 },
        n_labeled,
        domain_correct: correct,
        n_domain,
    })
}

/// Computes a batch's gradients and applies one Adam step.
pub fn train_step<T: Real>(
    model: &mut SaqmParams<T>,
    adam: &mut AdamState<T>,
    batch: &[&TrainPatch<T>],
    objective: &Objective,
    lr: f64,
) -> Result<BatchOutcome<T>> {
    let outcome = batch_gradients(model, batch, objective)?;
    adam.step(&mut model.tensors_mut(), &outcome.grads, lr)?;
    Ok(outcome)
}

fn patches_of<T: Real>(
    samples: &[&Sample<T>],
    stride: usize,
    label: impl Fn(&Sample<T>) -> Option<f64>,
    domain: Domain,
) -> Result<Vec<TrainPatch<T>>> {
    let mut out = Vec::new();
    for s in samples {
        let mos = label(s);
        for p in extract_patches(&s.image, PATCH, stride)? {
            out.push(TrainPatch { patch: p.patch, mos, domain });
        }
    }
    Ok(out)
}

/// Target references that keep their labels in semi-supervised training.
pub fn labeled_references(references: &[String], fraction: f64, seed: u64) -> BTreeSet<String> {
    let mut refs = references.to_vec();
    refs.sort();
    refs.dedup();
    let n = ((refs.len() as f64 * fraction) + 1e-9).floor() as usize;
    refs.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(&[seed, 0x5E41])));
    refs.into_iter().take(n).collect()
}

fn train_split<T>(samples: Option<&[Sample<T>]>) -> Vec<&Sample<T>> {
    samples.unwrap_or_default().iter().filter(|x| x.split == Split::Train).collect()
}

/// Training pools for one run.
#[derive(Clone, Debug, Default)]
pub struct TrainData<T> {
    pub source: Vec<TrainPatch<T>>,
    pub target: Vec<TrainPatch<T>>,
}

impl<T: Real> TrainData<T> {
    /// Cuts the train-split images of each domain into patches and attaches
    /// the labels the configuration is allowed to see. Target MOS values are
    /// never copied for config 3, and only for the selected references in
    /// config 4.
    pub fn prepare(cfg: &TrainConfig, source: Option<&[Sample<T>]>, target: Option<&[Sample<T>]>) -> Result<Self> {
        cfg.validate()?;
        let id = cfg.config;
        match (id.uses_source(), source.is_some()) {
            (true, false) => return Err(Error::contract(format!("config {id} needs a source dataset"))),
            (false, true) => return Err(Error::contract(format!("config {id} trains on the target only"))),
            _ => {}
        }
        match (id.uses_target(), target.is_some()) {
            (true, false) => return Err(Error::contract(format!("config {id} needs a target dataset"))),
            (false, true) => return Err(Error::contract(format!("config {id} trains on the source only"))),
            _ => {}
        }
        let src = train_split(source);
        let tgt = train_split(target);

        let source_patches = if id.uses_source() {
            if let Some(bad) = src.iter().find(|s| s.mos.is_none()) {
                return Err(Error::contract(format!("source sample {} has no MOS", bad.id)));
            }
            if src.is_empty() {
                return Err(Error::contract("source dataset has no train images"));
            }
            patches_of(&src, cfg.stride, |s| s.mos, Domain::Source)?
        } else {
            Vec::new()
        };

        let target_patches = match id {
            ConfigId::SourceSupervised => Vec::new(),
            ConfigId::TargetSupervised => {
                let labeled: Vec<&Sample<T>> = tgt.into_iter().filter(|s| s.mos.is_some()).collect();
                if labeled.is_empty() {
                    return Err(Error::contract("config 1 needs labeled target train images"));
                }
                patches_of(&labeled, cfg.stride, |s| s.mos, Domain::Target)?
            }
            ConfigId::UnsupervisedDa | ConfigId::SemiSupervisedDa => {
                if tgt.is_empty() {
                    return Err(Error::contract("target dataset has no train images"));
                }
                let refs: Vec<String> = tgt.iter().map(|s| s.reference.clone()).collect();
                let keep = labeled_references(&refs, cfg.effective_labeled_fraction(), cfg.seed);
                if !keep.is_empty() {
                    if let Some(bad) = tgt.iter().find(|s| keep.contains(&s.reference) && s.mos.is_none()) {
                        return Err(Error::contract(format!("target sample {} selected as labeled has no MOS", bad.id)));
                    }
                }
                patches_of(&tgt, cfg.stride, |s| if keep.contains(&s.reference) { s.mos } else { None }, Domain::Target)?
            }
        };
        Ok(Self { source: source_patches, target: target_patches })
    }

    fn get(&self, idx: PatchIdx) -> &TrainPatch<T> {
        match idx {
            PatchIdx::Source(i) => &self.source[i],
            PatchIdx::Target(i) => &self.target[i],
        }
    }
}

/// Runs `cfg.epochs` epochs of Adam over the prepared pools, calling
/// `on_epoch` after each epoch.
pub fn train_prepared<T: Real>(
    cfg: &TrainConfig,
    data: &TrainData<T>,
    model: &mut SaqmParams<T>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<RunLog> {
    cfg.validate()?;
    let objective = Objective::for_config(cfg);
    let mut adam = AdamState::new(model.tensors());
    let mut log = RunLog::default();
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let batches = compose_batches(cfg.config, data.source.len(), data.target.len(), cfg.batch_size, cfg.seed, epoch)?;
        let (mut sum_q, mut n_q, mut sum_d, mut n_d, mut correct, mut seen) = (0.0, 0usize, 0.0, 0usize, 0usize, 0usize);
        for idx in &batches {
            let batch: Vec<&TrainPatch<T>> = idx.iter().map(|&i| data.get(i)).collect();
            let out = train_step(model, &mut adam, &batch, &objective, cfg.lr)?;
            if out.n_labeled > 0 {
                sum_q += out.loss_q;
                n_q += 1;
            }
            if out.n_domain > 0 {
                sum_d += out.loss_d;
                n_d += 1;
                correct += out.domain_correct;
                seen += out.n_domain;
            }
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            loss_q: if n_q > 0 { sum_q / n_q as f64 } else { 0.0 },
            loss_d: (n_d > 0).then(|| sum_d / n_d as f64),
            domain_acc: (seen > 0).then(|| correct as f64 / seen as f64),
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        log.epochs.push(stats);
    }
    Ok(log)
}

/// Prepares the pools for `cfg` and trains `model` in place.
pub fn train<T: Real>(
    cfg: &TrainConfig,
    source: Option<&[Sample<T>]>,
    target: Option<&[Sample<T>]>,
    model: &mut SaqmParams<T>,
) -> Result<RunLog> {
    let data = TrainData::prepare(cfg, source, target)?;
    train_prepared(cfg, &data, model, |_| {})
}
