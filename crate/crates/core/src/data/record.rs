use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Demographics, Head};
use crate::tensor::Tensor;

/// Default sampling rate of all three source datasets.
pub const DEFAULT_RATE_HZ: f32 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    Binary,
    Multiclass4,
    Multilabel5,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Binary, Scheme::Multiclass4, Scheme::Multilabel5];

    pub fn n_outputs(self) -> usize {
        match self {
            Scheme::Binary => 2,
            Scheme::Multiclass4 => 4,
            Scheme::Multilabel5 => 5,
        }
    }

    /// Sigmoid for co-occurring labels, softmax otherwise.
    pub fn head(self) -> Head {
        match self {
            Scheme::Multilabel5 => Head::Sigmoid,
            _ => Head::Softmax,
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Scheme::Binary => &["normal", "abnormal"],
            Scheme::Multiclass4 => &["AFIB", "GSVT", "SB", "SR"],
            Scheme::Multilabel5 => &["NORM", "MI", "STTC", "CD", "HYP"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Binary => "binary",
            Scheme::Multiclass4 => "multiclass4",
            Scheme::Multilabel5 => "multilabel5",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<Scheme> {
        Scheme::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "binary" => Ok(Scheme::Binary),
            "multiclass" | "multiclass4" => Ok(Scheme::Multiclass4),
            "multilabel" | "multilabel5" => Ok(Scheme::Multilabel5),
            _ => Err(Error::Usage(format!(
                "unknown task '{s}'; expected binary, multiclass or multilabel"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rhythm {
    Afib,
    Gsvt,
    Sb,
    Sr,
}

impl Rhythm {
    pub const ALL: [Rhythm; 4] = [Rhythm::Afib, Rhythm::Gsvt, Rhythm::Sb, Rhythm::Sr];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Superclass {
    Norm,
    Mi,
    Sttc,
    Cd,
    Hyp,
}

impl Superclass {
    pub const ALL: [Superclass; 5] = [
        Superclass::Norm,
        Superclass::Mi,
        Superclass::Sttc,
        Superclass::Cd,
        Superclass::Hyp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Superclass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let names = Scheme::Multilabel5.class_names();
        names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(s.trim()))
            .map(|i| Superclass::ALL[i])
            .ok_or_else(|| {
                Error::Mapping(format!("unknown superclass '{s}'; expected one of {}", names.join(", ")))
            })
    }
}

/// Target of one record under one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelSet {
    Binary { abnormal: bool },
    Multiclass(Rhythm),
    /// Bit `i` set for superclass index `i`; never empty.
    Multilabel(u8),
}

impl LabelSet {
    pub fn multilabel(classes: &[Superclass]) -> Result<Self> {
        let mask = classes.iter().fold(0u8, |m, c| m | 1 << c.index());
        Self::from_mask(mask)
    }

    pub fn from_mask(mask: u8) -> Result<Self> {
        if mask == 0 || mask >> Superclass::ALL.len() != 0 {
            return Err(Error::Mapping(format!("multilabel mask {mask:#b} must be a non-empty subset of 5 labels")));
        }
        Ok(LabelSet::Multilabel(mask))
    }

    pub fn scheme(&self) -> Scheme {
        match self {
            LabelSet::Binary { .. } => Scheme::Binary,
            LabelSet::Multiclass(_) => Scheme::Multiclass4,
            LabelSet::Multilabel(_) => Scheme::Multilabel5,
        }
    }

    /// One-hot (or multi-hot) target row.
    pub fn target(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.scheme().n_outputs()];
        match *self {
            LabelSet::Binary { abnormal } => t[usize::from(abnormal)] = 1.0,
            LabelSet::Multiclass(r) => t[r.index()] = 1.0,
            LabelSet::Multilabel(mask) => {
                for (i, v) in t.iter_mut().enumerate() {
                    if mask & (1 << i) != 0 {
                        *v = 1.0;
                    }
                }
            }
        }
        t
    }

    /// Stratum used for splitting.
    pub fn stratum(&self) -> u8 {
        match *self {
            LabelSet::Binary { abnormal } => u8::from(abnormal),
            LabelSet::Multiclass(r) => r as u8,
            LabelSet::Multilabel(mask) => mask,
        }
    }

    pub(crate) fn payload(&self) -> u8 {
        self.stratum()
    }

    pub(crate) fn from_payload(scheme: Scheme, b: u8) -> Result<Self> {
        match scheme {
            Scheme::Binary if b <= 1 => Ok(LabelSet::Binary { abnormal: b == 1 }),
            Scheme::Multiclass4 if (b as usize) < Rhythm::ALL.len() => {
                Ok(LabelSet::Multiclass(Rhythm::ALL[b as usize]))
            }
            Scheme::Multilabel5 => Self::from_mask(b),
            _ => Err(Error::Mapping(format!("label byte {b} invalid for {scheme}"))),
        }
    }

    pub fn describe(&self) -> String {
        let names = self.scheme().class_names();
        self.target()
            .iter()
            .zip(names)
            .filter(|(v, _)| **v == 1.0)
            .map(|(_, n)| *n)
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    pub n_leads: usize,
    pub n_samples: usize,
    pub sample_rate_hz: f32,
    /// Lead-major samples in millivolts.
    pub signal: Vec<f32>,
    pub demographics: Demographics,
    pub labels: LabelSet,
}

impl EcgRecord {
    pub fn new(
        record_id: impl Into<String>,
        n_leads: usize,
        signal: Vec<f32>,
        demographics: Demographics,
        labels: LabelSet,
    ) -> Result<Self> {
        if n_leads == 0 || signal.len() % n_leads != 0 || signal.is_empty() {
            return Err(Error::Parameter(format!(
                "{} samples cannot form {n_leads} equal leads",
                signal.len()
            )));
        }
        let r = EcgRecord {
            record_id: record_id.into(),
            n_leads,
            n_samples: signal.len() / n_leads,
            sample_rate_hz: DEFAULT_RATE_HZ,
            signal,
            demographics,
            labels,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.signal.len() != self.n_leads * self.n_samples {
            return Err(Error::Parameter(format!(
                "record '{}': {} samples for {}x{}",
                self.record_id,
                self.signal.len(),
                self.n_leads,
                self.n_samples
            )));
        }
        if let Some(i) = self.signal.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "record '{}': non-finite sample at lead {}, index {}",
                self.record_id,
                i / self.n_samples,
                i % self.n_samples
            )));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Parameter(format!("record '{}': bad sample rate", self.record_id)));
        }
        Ok(())
    }

    pub fn lead(&self, i: usize) -> &[f32] {
        &self.signal[i * self.n_samples..(i + 1) * self.n_samples]
    }
}

/// Stacks records into a `(B, 1, leads, samples)` batch.
pub fn batch_signals(records: &[&EcgRecord]) -> Result<Tensor> {
    let first = records
        .first()
        .ok_or_else(|| Error::Usage("empty batch".into()))?;
    let (l, t) = (first.n_leads, first.n_samples);
    let mut data = Vec::with_capacity(records.len() * l * t);
    for r in records {
        if (r.n_leads, r.n_samples) != (l, t) {
            return Err(Error::Usage(format!(
                "record '{}' is {}x{}, batch is {l}x{t}",
                r.record_id, r.n_leads, r.n_samples
            )));
        }
        data.extend(r.signal.iter().map(|&v| f64::from(v)));
    }
    Tensor::new(vec![records.len(), 1, l, t], data)
}

/// Stacks target rows into a `(B, n_outputs)` matrix.
pub fn batch_targets(records: &[&EcgRecord]) -> Result<Tensor> {
    let first = records
        .first()
        .ok_or_else(|| Error::Usage("empty batch".into()))?;
    let scheme = first.labels.scheme();
    let mut data = Vec::with_capacity(records.len() * scheme.n_outputs());
    for r in records {
        if r.labels.scheme() != scheme {
            return Err(Error::Usage(format!(
                "record '{}' is labelled {}, batch is {scheme}",
                r.record_id,
                r.labels.scheme()
            )));
        }
        data.extend(r.labels.target());
    }
    Tensor::new(vec![records.len(), scheme.n_outputs()], data)
}
