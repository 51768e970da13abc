use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Validation loss before the first update.
    pub initial_val_loss: f64,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

const HEADER: &str = "epoch,train_loss,val_loss,wall_ms";

impl TrainHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs
            .iter()
            .find(|e| e.epoch == self.best_epoch)
            .map_or(self.initial_val_loss, |e| e.val_loss)
    }

    /// Equality ignoring wall-clock times.
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        self.initial_val_loss.to_bits() == other.initial_val_loss.to_bits()
            && self.best_epoch == other.best_epoch
            && self.stopped_epoch == other.stopped_epoch
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_loss.to_bits() == b.val_loss.to_bits()
            })
    }

    /// Comma-separated epochs after `#`-prefixed summary lines. Floats use
    /// the shortest representation that parses back to the same value.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# initial_val_loss={}\n# best_epoch={}\n# stopped_epoch={}\n{HEADER}\n",
            self.initial_val_loss, self.best_epoch, self.stopped_epoch
        );
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.wall_ms));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut h = TrainHistory {
            epochs: Vec::new(),
            initial_val_loss: f64::NAN,
            best_epoch: 0,
            stopped_epoch: 0,
        };
        let mut offset = 0;
        let mut header_seen = false;
        for line in text.lines() {
            let bad = |d: String| Error::Format { offset, detail: d };
            let t = line.trim();
            if let Some(kv) = t.strip_prefix('#') {
                let (k, v) = kv
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| bad(format!("bad summary line '{t}'")))?;
                match k {
                    "initial_val_loss" => h.initial_val_loss = v.parse().map_err(|_| bad(format!("bad loss '{v}'")))?,
                    "best_epoch" => h.best_epoch = v.parse().map_err(|_| bad(format!("bad epoch '{v}'")))?,
                    "stopped_epoch" => h.stopped_epoch = v.parse().map_err(|_| bad(format!("bad epoch '{v}'")))?,
                    _ => return Err(bad(format!("unknown summary key '{k}'"))),
                }
            } else if t == HEADER {
                header_seen = true;
            } else if !t.is_empty() {
                if !header_seen {
                    return Err(bad("history rows before the header".into()));
                }
                let f: Vec<&str> = t.split(',').collect();
                if f.len() != 4 {
                    return Err(bad(format!("expected 4 fields, got {}", f.len())));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number '{s}'")));
                h.epochs.push(EpochStats {
                    epoch: f[0].parse().map_err(|_| bad(format!("bad epoch '{}'", f[0])))?,
                    train_loss: num(f[1])?,
                    val_loss: num(f[2])?,
                    wall_ms: num(f[3])?,
                });
            }
            offset += line.len() + 1;
        }
        if !header_seen {
            return Err(Error::Format {
                offset: 0,
                detail: "missing history header".into(),
            });
        }
        Ok(h)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}
