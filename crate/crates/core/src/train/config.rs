use std::fmt;
use std::str::FromStr;

use crate::data::Scheme;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    BceMultilabel,
}

impl LossKind {
    pub fn for_scheme(scheme: Scheme) -> Self {
        match scheme {
            Scheme::Multilabel5 => LossKind::BceMultilabel,
            _ => LossKind::CrossEntropy,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::BceMultilabel => "bce_multilabel",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            "bce_multilabel" | "bce" => Ok(LossKind::BceMultilabel),
            _ => Err(Error::Config(format!(
                "unknown loss '{s}'; expected cross_entropy or bce_multilabel"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub loss_kind: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_epochs: 100,
            patience: 5,
            min_delta: 0.0,
            seed: 0,
            loss_kind: LossKind::CrossEntropy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} not in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) || !(self.min_delta >= 0.0) {
            return bad("eps must be > 0 and min_delta >= 0".into());
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are ignored; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("line {}: '{k}' needs a number, got '{v}'", n + 1)))
            };
            let int = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| Error::Config(format!("line {}: '{k}' needs an integer, got '{v}'", n + 1)))
            };
            match k {
                "learning_rate" => c.learning_rate = num(v)?,
                "batch_size" => c.batch_size = int(v)? as usize,
                "beta1" => c.beta1 = num(v)?,
                "beta2" => c.beta2 = num(v)?,
                "eps" => c.eps = num(v)?,
                "max_epochs" => c.max_epochs = int(v)? as usize,
                "patience" => c.patience = int(v)? as usize,
                "min_delta" => c.min_delta = num(v)?,
                "seed" => c.seed = int(v)?,
                "loss" | "loss_kind" => c.loss_kind = v.parse()?,
                _ => return Err(Error::Config(format!("line {}: unknown key '{k}'", n + 1))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        format!(
            "learning_rate = {}\nbatch_size = {}\nbeta1 = {}\nbeta2 = {}\neps = {}\nmax_epochs = {}\npatience = {}\nmin_delta = {}\nseed = {}\nloss = {}\n",
            self.learning_rate,
            self.batch_size,
            self.beta1,
            self.beta2,
            self.eps,
            self.max_epochs,
            self.patience,
            self.min_delta,
            self.seed,
            self.loss_kind
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let c = TrainConfig {
            learning_rate: 3e-4,
            seed: 9,
            loss_kind: LossKind::BceMultilabel,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(TrainConfig::parse("learning_rate = 0").is_err());
        assert!(TrainConfig::parse("patience = 0").is_err());
        assert!(TrainConfig::parse("momentum = 0.9").is_err());
        assert!(TrainConfig::parse("batch_size").is_err());
        let c = TrainConfig::parse("# defaults\n\nbatch_size = 8 # small\n").unwrap();
        assert_eq!(c.batch_size, 8);
    }
}
