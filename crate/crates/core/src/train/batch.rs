use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::synth::mix;
use crate::error::{Error, Result};
use crate::train::ConfigId;

/// Index into the source or target patch pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchIdx {
    Source(usize),
    Target(usize),
}

fn shuffled(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..len).collect();
    v.shuffle(rng);
    v
}

/// Batch order for one epoch.
///
/// Supervised configs draw from their single pool. Adaptation configs fill
/// each batch half from source, half from target (source takes the extra
/// slot for odd sizes); the longer pool is walked once and the shorter one
/// is cycled to keep pace.
pub fn compose_batches(
    config: ConfigId,
    source_len: usize,
    target_len: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<PatchIdx>>> {
    if batch_size == 0 {
        return Err(Error::contract("batch size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 0xBA7C, epoch as u64]));
    let single = |len: usize, wrap: fn(usize) -> PatchIdx, rng: &mut ChaCha8Rng, what: &str| {
        if len == 0 {
            return Err(Error::contract(format!("config needs a non-empty {what} stream")));
        }
        Ok(shuffled(len, rng).chunks(batch_size).map(|c| c.iter().map(|&i| wrap(i)).collect()).collect())
    };
    match config {
        ConfigId::TargetSupervised => single(target_len, PatchIdx::Target, &mut rng, "target"),
        ConfigId::SourceSupervised => single(source_len, PatchIdx::Source, &mut rng, "source"),
        ConfigId::UnsupervisedDa | ConfigId::SemiSupervisedDa => {
            if source_len == 0 || target_len == 0 {
                return Err(Error::contract("adaptation needs non-empty source and target streams"));
            }
            if batch_size < 2 {
                return Err(Error::contract("adaptation batches need at least 2 slots"));
            }
            let src = shuffled(source_len, &mut rng);
            let tgt = shuffled(target_len, &mut rng);
            let (hs, ht) = (batch_size - batch_size / 2, batch_size / 2);
            let n_batches = source_len.div_ceil(hs).max(target_len.div_ceil(ht));
            let source_longer = source_len.div_ceil(hs) >= target_len.div_ceil(ht);
            let mut batches = Vec::with_capacity(n_batches);
            for b in 0..n_batches {
                // The final batch may be short on the longer stream; the
                // shorter stream contributes in proportion.
                let (take_s, take_t) = if b + 1 == n_batches {
                    if source_longer {
                        let s = source_len - b * hs;
                        (s, (s * ht).div_ceil(hs).min(ht))
                    } else {
                        let t = target_len - b * ht;
                        ((t * hs).div_ceil(ht).min(hs), t)
                    }
                } else {
                    (hs, ht)
                };
                let mut batch = Vec::with_capacity(take_s + take_t);
                batch.extend((0..take_s).map(|i| PatchIdx::Source(src[(b * hs + i) % source_len])));
                batch.extend((0..take_t).map(|i| PatchIdx::Target(tgt[(b * ht + i) % target_len])));
                batches.push(batch);
            }
            Ok(batches)
        }
    }
}
