use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Manifest, Split};
use crate::error::{Error, Result};

/// Picks `floor(n · test_fraction)` references (clamped to `1..n-1`) for the
/// test side, deterministically under `seed`.
pub fn test_references(references: &[String], test_fraction: f64, seed: u64) -> Result<BTreeSet<String>> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::contract(format!("test fraction must lie in (0,1), got {test_fraction}")));
    }
    let mut refs: Vec<String> = references.to_vec();
    refs.sort();
    refs.dedup();
    let n = refs.len();
    if n < 2 {
        return Err(Error::contract(format!("splitting needs at least 2 references, got {n}")));
    }
    let n_test = ((n as f64 * test_fraction + 1e-9).floor() as usize).clamp(1, n - 1);
    refs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(refs.into_iter().take(n_test).collect())
}

/// Reassigns train/test by reference so that every version of a pristine
/// image lands on the same side.
pub fn split(manifest: &Manifest, test_fraction: f64, seed: u64) -> Result<Manifest> {
    let test = test_references(&manifest.references(), test_fraction, seed)?;
    let mut out = manifest.clone();
    for row in &mut out.rows {
        row.split = if test.contains(&row.reference()) { Split::Test } else { Split::Train };
    }
    Ok(out)
}
