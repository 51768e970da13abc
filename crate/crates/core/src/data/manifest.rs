//! Record manifests and dataset splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ecgb::load_record;
use super::mapping::{map_chapman_rhythm, map_mimic_binary, map_ptbxl_superclass};
use super::record::{EcgRecord, LabelSet, Rhythm, Scheme, Superclass};
use crate::error::{Error, Result};
use crate::models::Sex;

pub const MANIFEST_HEADER: [&str; 6] = ["record_id", "path", "raw_labels", "age", "sex", "split"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Usage(format!("unknown split '{s}'; expected train, val or test"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub record_id: String,
    /// Record file, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub raw_labels: Vec<String>,
    pub age: Option<f64>,
    pub sex: Option<Sex>,
    pub split: Option<Split>,
}

impl ManifestEntry {
    pub fn from_record(record: &EcgRecord, path: impl Into<PathBuf>) -> Self {
        ManifestEntry {
            record_id: record.record_id.clone(),
            path: path.into(),
            raw_labels: record.labels.describe().split(';').map(String::from).collect(),
            age: record.demographics.age_years,
            sex: record.demographics.sex,
            split: None,
        }
    }

    /// Labels under `scheme`. Class names of the scheme are taken as is;
    /// otherwise the source-dataset rules apply: Chapman rhythm codes for
    /// multiclass, MIMIC report statements for binary and `code:superclass`
    /// statement pairs for multilabel.
    pub fn labels(&self, scheme: Scheme) -> Result<LabelSet> {
        let names = scheme.class_names();
        let direct: Option<Vec<usize>> = self
            .raw_labels
            .iter()
            .map(|l| names.iter().position(|n| n.eq_ignore_ascii_case(l.trim())))
            .collect();
        let err = |e: Error| Error::Mapping(format!("record '{}': {e}", self.record_id));
        match (scheme, direct) {
            (_, Some(ix)) if !ix.is_empty() => match scheme {
                Scheme::Binary if ix.len() == 1 => Ok(LabelSet::Binary { abnormal: ix[0] == 1 }),
                Scheme::Multiclass4 if ix.len() == 1 => Ok(LabelSet::Multiclass(Rhythm::ALL[ix[0]])),
                Scheme::Multilabel5 => {
                    let c: Vec<Superclass> = ix.iter().map(|&i| Superclass::ALL[i]).collect();
                    LabelSet::multilabel(&c).map_err(err)
                }
                _ => Err(Error::Mapping(format!(
                    "record '{}': {} labels for a single-label task",
                    self.record_id,
                    ix.len()
                ))),
            },
            (Scheme::Binary, _) => map_mimic_binary(&self.raw_labels).map_err(err),
            (Scheme::Multiclass4, _) => match self.raw_labels.as_slice() {
                [one] => Ok(LabelSet::Multiclass(map_chapman_rhythm(one).map_err(err)?)),
                other => Err(Error::Mapping(format!(
                    "record '{}': expected one rhythm, got {}",
                    self.record_id,
                    other.len()
                ))),
            },
            (Scheme::Multilabel5, _) => {
                let pairs = self
                    .raw_labels
                    .iter()
                    .map(|l| {
                        l.split_once(':').ok_or_else(|| {
                            Error::Mapping(format!(
                                "record '{}': statement '{l}' is not code:superclass",
                                self.record_id
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                map_ptbxl_superclass(&pairs).map_err(err)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let m = Manifest {
            entries,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.record_id.as_str()) {
                return Err(Error::Format {
                    offset: 0,
                    detail: format!("duplicate record_id '{}'", e.record_id),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
        for e in &self.entries {
            let age = e.age.map(|a| a.to_string()).unwrap_or_default();
            let sex = match e.sex {
                Some(Sex::Female) => "F",
                Some(Sex::Male) => "M",
                None => "",
            };
            let split = e.split.map(Split::as_str).unwrap_or("");
            w.write_record([
                e.record_id.as_str(),
                &e.path.to_string_lossy(),
                &e.raw_labels.join(";"),
                &age,
                sex,
                split,
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
    }

    pub fn from_csv(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?.clone();
        let col = |name: &str| {
            header.iter().position(|h| h == name).ok_or_else(|| Error::Format {
                offset: 0,
                detail: format!("manifest header lacks column '{name}'"),
            })
        };
        let ix: Vec<usize> = MANIFEST_HEADER.iter().map(|c| col(c)).collect::<Result<_>>()?;
        let mut entries = Vec::new();
        for row in r.records() {
            let row = row.map_err(csv_err)?;
            let offset = row.position().map_or(0, |p| p.byte() as usize);
            let field = |i: usize| row.get(ix[i]).unwrap_or("");
            let bad = |detail: String| Error::Format { offset, detail };
            let age = match field(3) {
                "" => None,
                a => Some(a.parse::<f64>().map_err(|_| bad(format!("bad age '{a}'")))?),
            };
            let sex = match field(4).to_ascii_uppercase().as_str() {
                "" => None,
                "F" | "FEMALE" | "0" => Some(Sex::Female),
                "M" | "MALE" | "1" => Some(Sex::Male),
                s => return Err(bad(format!("bad sex '{s}'"))),
            };
            let split = match field(5) {
                "" => None,
                s => Some(s.parse().map_err(|_| bad(format!("bad split '{s}'")))?),
            };
            entries.push(ManifestEntry {
                record_id: field(0).to_string(),
                path: PathBuf::from(field(1)),
                raw_labels: field(2)
                    .split(';')
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from)
                    .collect(),
                age,
                sex,
                split,
            });
        }
        Manifest::new(entries, base_dir)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, self.to_csv()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::from_csv(&text, base)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn split_entries(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == Some(split)).collect()
    }

    /// Loads the records of one split in manifest order, labelled under
    /// `scheme`.
    pub fn load_split(&self, split: Split, scheme: Scheme) -> Result<Vec<EcgRecord>> {
        let entries = self.split_entries(split);
        if entries.is_empty() {
            return Err(Error::Usage(format!("manifest has no '{split}' records")));
        }
        entries
            .into_iter()
            .map(|e| {
                let mut r = load_record(&self.resolve(e))?;
                if r.record_id != e.record_id {
                    return Err(Error::Format {
                        offset: 0,
                        detail: format!("file for '{}' holds record '{}'", e.record_id, r.record_id),
                    });
                }
                if r.labels.scheme() != scheme {
                    r.labels = e.labels(scheme)?;
                }
                Ok(r)
            })
            .collect()
    }
}

fn csv_err(e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte() as usize);
    Error::Format {
        offset,
        detail: e.to_string(),
    }
}

/// Stratified train/validation/test assignment.
///
/// Within each label stratum the records are shuffled, then the validation
/// and test shares are rounded to the nearest count (at least one each) and
/// the remainder goes to training.
pub fn split_dataset(manifest: &Manifest, fractions: (f64, f64, f64), scheme: Scheme, seed: u64) -> Result<Manifest> {
    let strata = manifest
        .entries
        .iter()
        .map(|e| Ok(e.labels(scheme)?.stratum()))
        .collect::<Result<Vec<_>>>()?;
    let mut out = manifest.clone();
    for (e, s) in out.entries.iter_mut().zip(assign_splits(&strata, fractions, seed)?) {
        e.split = Some(s);
    }
    Ok(out)
}

/// In-memory counterpart of [`split_dataset`]: partitions records into
/// (train, val, test) with the same stratified rule, each in input order.
pub fn split_records(
    records: Vec<EcgRecord>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<EcgRecord>, Vec<EcgRecord>, Vec<EcgRecord>)> {
    let strata: Vec<u8> = records.iter().map(|r| r.labels.stratum()).collect();
    let splits = assign_splits(&strata, fractions, seed)?;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (r, s) in records.into_iter().zip(splits) {
        match s {
            Split::Train => train.push(r),
            Split::Val => val.push(r),
            Split::Test => test.push(r),
        }
    }
    Ok((train, val, test))
}

fn assign_splits(strata: &[u8], fractions: (f64, f64, f64), seed: u64) -> Result<Vec<Split>> {
    let (ft, fv, fs) = fractions;
    if ![ft, fv, fs].iter().all(|f| f.is_finite() && *f > 0.0) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!(
            "fractions ({ft}, {fv}, {fs}) must be positive and sum to 1"
        )));
    }
    let mut groups: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Split::Train; strata.len()];
    for (stratum, mut idx) in groups {
        let n = idx.len();
        if n < 3 {
            return Err(Error::Split(format!(
                "label stratum {stratum} has {n} records, fewer than the 3 splits"
            )));
        }
        idx.shuffle(&mut rng);
        let nv = ((fv * n as f64).round() as usize).max(1);
        let ns = ((fs * n as f64).round() as usize).max(1);
        if nv + ns >= n {
            return Err(Error::Split(format!(
                "label stratum {stratum}: {n} records leave no training share"
            )));
        }
        for (k, &i) in idx.iter().enumerate() {
            out[i] = if k < nv {
                Split::Val
            } else if k < nv + ns {
                Split::Test
            } else {
                Split::Train
            };
        }
    }
    Ok(out)
}
