//! `path,mos,domain,split` CSV manifests.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{pnm, Domain, Sample, Split};
use crate::error::{Error, Result};
use crate::real::Real;

pub const HEADER: [&str; 4] = ["path", "mos", "domain", "split"];

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    /// Path as written in the manifest (relative paths resolve against the
    /// manifest's directory).
    pub path: PathBuf,
    pub raw_mos: Option<f64>,
    pub domain: Domain,
    pub split: Split,
}

impl ManifestRow {
    /// Reference key: the file stem up to its last `_`, so `r003_l2.ppm`
    /// and `r003_l0.ppm` share the key `r003`.
    pub fn reference(&self) -> String {
        let stem = self.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        match stem.rfind('_') {
            Some(i) if i > 0 => stem[..i].to_owned(),
            _ => stem,
        }
    }

    pub fn id(&self) -> String {
        self.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }
}

/// Min/max of the raw MOS of one domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MosRange {
    pub min: f64,
    pub max: f64,
}

impl MosRange {
    pub fn normalize(&self, raw: f64) -> f64 {
        (raw - self.min) / (self.max - self.min)
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.min + v * (self.max - self.min)
    }
}

/// Min-max scales `raw` into [0,1].
pub fn normalize_mos(raw: &[f64]) -> Result<(Vec<f64>, MosRange)> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    if !(max > min) {
        return Err(Error::contract("MOS normalization needs at least two distinct values"));
    }
    let range = MosRange { min, max };
    Ok((raw.iter().map(|&x| range.normalize(x)).collect(), range))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    /// Per-domain normalization, present for domains with at least two
    /// distinct raw MOS values.
    pub normalization: BTreeMap<Domain, MosRange>,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, row) in rows.iter().enumerate() {
            if !seen.insert(row.path.clone()) {
                return Err(Error::Manifest { line: i + 2, msg: format!("duplicate path {:?}", row.path) });
            }
            if let Some(m) = row.raw_mos {
                if !m.is_finite() {
                    return Err(Error::Manifest { line: i + 2, msg: "non-finite mos".into() });
                }
            }
        }
        if rows.iter().any(|r| r.raw_mos.is_some()) {
            if let Some(i) = rows.iter().position(|r| r.split == Split::Train && r.raw_mos.is_none()) {
                return Err(Error::Manifest { line: i + 2, msg: "labeled manifest has an unlabeled train row".into() });
            }
        }
        let mut normalization = BTreeMap::new();
        for domain in [Domain::Source, Domain::Target] {
            let raw: Vec<f64> = rows.iter().filter(|r| r.domain == domain).filter_map(|r| r.raw_mos).collect();
            if let Ok((_, range)) = normalize_mos(&raw) {
                normalization.insert(domain, range);
            }
        }
        Ok(Self { rows, base_dir: base_dir.into(), normalization })
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::Manifest { line: 1, msg: e.to_string() })?;
        if header.iter().collect::<Vec<_>>() != HEADER {
            return Err(Error::Manifest { line: 1, msg: format!("expected header {}", HEADER.join(",")) });
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let bad = |msg: String| Error::Manifest { line, msg };
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let path = rec.get(0).filter(|p| !p.is_empty()).ok_or_else(|| bad("empty path".into()))?;
            let mos = rec.get(1).unwrap_or("");
            let raw_mos = if mos.is_empty() {
                None
            } else {
                Some(mos.parse::<f64>().map_err(|_| bad(format!("bad mos {mos:?}")))?)
            };
            let domain = rec.get(2).unwrap_or("").parse().map_err(|e: Error| bad(e.to_string()))?;
            let split = rec.get(3).unwrap_or("").parse().map_err(|e: Error| bad(e.to_string()))?;
            rows.push(ManifestRow { path: PathBuf::from(path), raw_mos, domain, split });
        }
        Self::new(rows, base_dir)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn to_csv(&self) -> String {
        let mut out = HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            let mos = r.raw_mos.map(|m| m.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.path.display(), mos, r.domain, r.split));
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        if row.path.is_absolute() {
            row.path.clone()
        } else {
            self.base_dir.join(&row.path)
        }
    }

    /// Normalised MOS of a row, `None` for unlabeled rows.
    pub fn normalized_mos(&self, row: &ManifestRow) -> Result<Option<f64>> {
        let Some(raw) = row.raw_mos else { return Ok(None) };
        let range = self.normalization.get(&row.domain).ok_or_else(|| {
            Error::contract(format!("domain {} has fewer than two distinct MOS values", row.domain))
        })?;
        Ok(Some(range.normalize(raw)))
    }

    pub fn references(&self) -> Vec<String> {
        let mut refs: Vec<String> = self.rows.iter().map(ManifestRow::reference).collect();
        refs.sort();
        refs.dedup();
        refs
    }

    /// Rows matching `pred`, keeping normalization and base directory.
    pub fn filter(&self, pred: impl Fn(&ManifestRow) -> bool) -> Self {
        Self {
            rows: self.rows.iter().filter(|r| pred(r)).cloned().collect(),
            base_dir: self.base_dir.clone(),
            normalization: self.normalization.clone(),
        }
    }

    /// Loads every row accepted by `pred`, in manifest order.
    pub fn load_samples<T: Real>(&self, pred: impl Fn(&ManifestRow) -> bool) -> Result<Vec<Sample<T>>> {
        self.rows
            .iter()
            .filter(|r| pred(r))
            .map(|row| {
                Ok(Sample {
                    image: pnm::load_image(self.resolve(row))?,
                    mos: self.normalized_mos(row)?,
                    domain: row.domain,
                    split: row.split,
                    id: row.id(),
                    reference: row.reference(),
                })
            })
            .collect()
    }
}
