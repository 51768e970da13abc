use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    AttiaNet,
    DeepResidualCNN,
    ParallelCNN,
    ParallelCNNew,
    SimpleNet,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::AttiaNet,
        Architecture::SimpleNet,
        Architecture::ParallelCNN,
        Architecture::ParallelCNNew,
        Architecture::DeepResidualCNN,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::AttiaNet => "AttiaNet",
            Architecture::DeepResidualCNN => "DeepResidualCNN",
            Architecture::ParallelCNN => "ParallelCNN",
            Architecture::ParallelCNNew => "ParallelCNNew",
            Architecture::SimpleNet => "SimpleNet",
        }
    }

    /// Hidden dense widths of the default build.
    pub fn default_fc_hidden(self) -> Vec<usize> {
        match self {
            Architecture::AttiaNet => vec![64, 32],
            Architecture::DeepResidualCNN => vec![256],
            Architecture::ParallelCNN => vec![46],
            Architecture::ParallelCNNew => vec![52],
            Architecture::SimpleNet => vec![2048],
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::Usage(format!(
                    "unknown architecture '{s}'; expected one of {}",
                    Architecture::ALL.map(|a| a.as_str()).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Softmax,
    Sigmoid,
}

/// Layout of the ParallelCNN spatial pathway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SpatialBranch {
    /// Two blocks of lead-axis convolutions, K = 6, 3 and N = 16, 32, each
    /// followed by time pooling by 2.
    #[default]
    TwoBlock,
    /// A single full-height `leads x 1` convolution with BN and ReLU.
    SingleLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: Architecture,
    pub input_leads: usize,
    pub input_samples: usize,
    pub n_outputs: usize,
    pub head: Head,
    pub use_demographics: bool,
    pub fc_hidden: Vec<usize>,
    pub dropout_p: f64,
    pub init_seed: u64,
    #[serde(default)]
    pub spatial_branch: SpatialBranch,
}

impl ArchitectureSpec {
    /// 12 leads, 5000 samples, two softmax outputs.
    pub fn new(name: Architecture) -> Self {
        ArchitectureSpec {
            name,
            input_leads: 12,
            input_samples: 5000,
            n_outputs: 2,
            head: Head::Softmax,
            use_demographics: false,
            fc_hidden: name.default_fc_hidden(),
            dropout_p: 0.5,
            init_seed: 0,
            spatial_branch: SpatialBranch::default(),
        }
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.input_samples = samples;
        self
    }

    pub fn with_outputs(mut self, n: usize, head: Head) -> Self {
        self.n_outputs = n;
        self.head = head;
        self
    }

    pub fn with_demographics(mut self, on: bool) -> Self {
        self.use_demographics = on;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_leads == 0 || self.input_samples == 0 {
            return Err(Error::Config("input extents must be positive".into()));
        }
        if self.n_outputs == 0 {
            return Err(Error::Config("n_outputs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} not in [0, 1)", self.dropout_p)));
        }
        if self.fc_hidden.is_empty() || self.fc_hidden.contains(&0) {
            return Err(Error::Config(format!(
                "fc_hidden {:?} must be non-empty and positive",
                self.fc_hidden
            )));
        }
        if self.head == Head::Softmax && self.n_outputs < 2 {
            return Err(Error::Config("softmax head needs at least two outputs".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sex {
    Female = 0,
    Male = 1,
}

/// Width of the encoded demographic vector.
pub const DEMOGRAPHIC_FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Demographics {
    pub age_years: Option<f64>,
    pub sex: Option<Sex>,
}

impl Demographics {
    pub fn new(age_years: Option<f64>, sex: Option<Sex>) -> Result<Self> {
        if let Some(a) = age_years {
            if !(0.0..=130.0).contains(&a) {
                return Err(Error::Parameter(format!("age {a} outside [0, 130]")));
            }
        }
        Ok(Demographics { age_years, sex })
    }

    /// `[age / 100, sex, age_present, sex_present]`, missing values as 0.
    pub fn encode(&self) -> [f64; DEMOGRAPHIC_FEATURES] {
        [
            self.age_years.map_or(0.0, |a| a / 100.0),
            self.sex.map_or(0.0, |s| s as u8 as f64),
            self.age_years.map_or(0.0, |_| 1.0),
            self.sex.map_or(0.0, |_| 1.0),
        ]
    }
}
