//! PLCC/SROCC evaluation of image-level scores against normalised MOS.

mod metrics;
mod report;

pub use metrics::{average_ranks, plcc, srocc};
pub use report::{render_csv, render_report, EvalReport, CSV_HEADER};

use crate::data::{Sample, Split};
use crate::error::{Error, Result};
use crate::model::SaqmParams;
use crate::real::Real;

/// Which rows of a dataset to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Test,
    Full,
}

/// Correlations between `predicted` and `mos`.
pub fn correlate(dataset: &str, predicted: &[f64], mos: &[f64]) -> Result<EvalReport> {
    if mos.len() < 3 {
        return Err(Error::InsufficientSamples { have: mos.len(), need: 3 });
    }
    Ok(EvalReport {
        dataset: dataset.to_owned(),
        n: mos.len(),
        plcc: plcc(predicted, mos)?,
        srocc: srocc(predicted, mos)?,
        config: None,
        checkpoint: String::new(),
    })
}

/// Scores every labeled sample of the chosen split with a sliding window of
/// the given stride and correlates against the normalised MOS.
pub fn evaluate<T: Real>(
    model: &SaqmParams<T>,
    dataset: &str,
    samples: &[Sample<T>],
    split: EvalSplit,
    stride: usize,
) -> Result<EvalReport> {
    let chosen: Vec<&Sample<T>> = samples
        .iter()
        .filter(|s| s.mos.is_some() && (split == EvalSplit::Full || s.split == Split::Test))
        .collect();
    if chosen.len() < 3 {
        return Err(Error::InsufficientSamples { have: chosen.len(), need: 3 });
    }
    let mut predicted = Vec::with_capacity(chosen.len());
    for s in &chosen {
        predicted.push(model.image_score(&s.image, stride)?.as_f64());
    }
    let mos: Vec<f64> = chosen.iter().filter_map(|s| s.mos).collect();
    correlate(dataset, &predicted, &mos)
}
