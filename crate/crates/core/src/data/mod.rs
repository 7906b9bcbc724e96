//! Dataset ingestion: PPM/PGM images, MOS manifests, patch extraction,
//! reference-disjoint splitting and synthetic two-domain datasets.

pub mod manifest;
pub mod patches;
pub mod pnm;
pub mod split;
pub mod synth;

use std::fmt;
use std::str::FromStr;

pub use manifest::{normalize_mos, Manifest, ManifestRow, MosRange};
pub use patches::{extract_patches, Patch};
pub use pnm::load_image;
pub use split::split;
pub use synth::SynthSpec;

use crate::error::Error;
use crate::tensor::Tensor;

/// Which data distribution an image comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    /// Natural-scene images (labeled source data).
    Source,
    /// Medical / shifted images (adaptation target).
    Target,
}

impl Domain {
    /// Label used by the domain classifier.
    pub fn label(self) -> f64 {
        match self {
            Domain::Source => 0.0,
            Domain::Target => 1.0,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::contract(format!("unknown domain {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::contract(format!("unknown split {other:?}"))),
        }
    }
}

/// A loaded image with its normalised MOS (if labeled).
#[derive(Clone, Debug)]
pub struct Sample<T> {
    pub image: Tensor<T>,
    pub mos: Option<f64>,
    pub domain: Domain,
    pub split: Split,
    pub id: String,
    /// Key of the pristine image this sample derives from.
    pub reference: String,
}
