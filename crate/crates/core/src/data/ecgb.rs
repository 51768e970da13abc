//! ECGB record container.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "ECGB"
//!      4     2  version u16
//!      6     2  n_leads u16
//!      8     4  n_samples u32
//!     12     4  rate_hz f32
//!     16     4  age f32, NaN when missing
//!     20     1  sex u8: 0 female, 1 male, 255 missing
//!     21     1  scheme u8: 0 binary, 1 multiclass4, 2 multilabel5
//!     22     1  label: class index, or bitmask for multilabel5
//!     23     2  record id length u16, then UTF-8 bytes
//!      .        n_leads * n_samples f32 samples, lead-major
//! ```
//!
//! Every integer and float is little-endian.

use std::path::Path;

use super::record::{EcgRecord, LabelSet, Scheme};
use crate::error::{Error, Result};
use crate::models::{Demographics, Sex};

pub const MAGIC: &[u8; 4] = b"ECGB";
pub const VERSION: u16 = 1;
/// Bytes from the magic up to the label payload.
pub const HEADER_LEN: usize = 22;

const SEX_MISSING: u8 = 255;

pub fn write_record(record: &EcgRecord) -> Result<Vec<u8>> {
    record.validate()?;
    let leads = u16::try_from(record.n_leads)
        .map_err(|_| Error::Parameter(format!("{} leads exceed the format", record.n_leads)))?;
    let samples = u32::try_from(record.n_samples)
        .map_err(|_| Error::Parameter(format!("{} samples exceed the format", record.n_samples)))?;
    let id = record.record_id.as_bytes();
    let id_len = u16::try_from(id.len())
        .map_err(|_| Error::Parameter("record id longer than 65535 bytes".into()))?;

    let mut out = Vec::with_capacity(HEADER_LEN + 3 + id.len() + record.signal.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&leads.to_le_bytes());
    out.extend_from_slice(&samples.to_le_bytes());
    out.extend_from_slice(&record.sample_rate_hz.to_le_bytes());
    let age = record.demographics.age_years.map_or(f32::NAN, |a| a as f32);
    out.extend_from_slice(&age.to_le_bytes());
    out.push(record.demographics.sex.map_or(SEX_MISSING, |s| s as u8));
    out.push(record.labels.scheme().code());
    out.push(record.labels.payload());
    out.extend_from_slice(&id_len.to_le_bytes());
    out.extend_from_slice(id);
    for v in &record.signal {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                detail: format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn arr<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn err(&self, offset: usize, detail: impl Into<String>) -> Error {
        Error::Format {
            offset,
            detail: detail.into(),
        }
    }
}

pub fn read_record(bytes: &[u8]) -> Result<EcgRecord> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(c.err(0, "bad magic, not an ECGB record"));
    }
    let version = u16::from_le_bytes(c.arr("version")?);
    if version != VERSION {
        return Err(c.err(4, format!("unsupported version {version}")));
    }
    let n_leads = u16::from_le_bytes(c.arr("lead count")?) as usize;
    let n_samples = u32::from_le_bytes(c.arr("sample count")?) as usize;
    if n_leads == 0 || n_samples == 0 {
        return Err(c.err(6, "empty signal"));
    }
    let rate = f32::from_le_bytes(c.arr("rate")?);
    if !(rate.is_finite() && rate > 0.0) {
        return Err(c.err(12, format!("invalid rate {rate}")));
    }
    let age = f32::from_le_bytes(c.arr("age")?);
    let sex = match c.take(1, "sex")?[0] {
        0 => Some(Sex::Female),
        1 => Some(Sex::Male),
        SEX_MISSING => None,
        s => return Err(c.err(20, format!("invalid sex byte {s}"))),
    };
    let demographics = Demographics::new((!age.is_nan()).then_some(f64::from(age)), sex)
        .map_err(|e| c.err(16, e.to_string()))?;
    let scheme_byte = c.take(1, "scheme")?[0];
    let scheme = Scheme::from_code(scheme_byte)
        .ok_or_else(|| c.err(21, format!("unknown scheme {scheme_byte}")))?;
    let labels = LabelSet::from_payload(scheme, c.take(1, "label")?[0])
        .map_err(|e| c.err(HEADER_LEN, e.to_string()))?;
    let id_len = u16::from_le_bytes(c.arr("record id length")?) as usize;
    let id_at = c.pos;
    let record_id = std::str::from_utf8(c.take(id_len, "record id")?)
        .map_err(|_| c.err(id_at, "record id is not UTF-8"))?
        .to_string();
    let n = n_leads
        .checked_mul(n_samples)
        .ok_or_else(|| c.err(6, "signal size overflows"))?;
    let data_at = c.pos;
    let raw = c.take(n * 4, "samples")?;
    if c.pos != bytes.len() {
        return Err(c.err(c.pos, format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let signal: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("chunk of 4")))
        .collect();
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(c.err(data_at + 4 * i, "non-finite sample"));
    }
    Ok(EcgRecord {
        record_id,
        n_leads,
        n_samples,
        sample_rate_hz: rate,
        signal,
        demographics,
        labels,
    })
}

pub fn save_record(record: &EcgRecord, path: &Path) -> Result<()> {
    crate::fsutil::write_atomic(path, &write_record(record)?)
}

pub fn load_record(path: &Path) -> Result<EcgRecord> {
    read_record(&std::fs::read(path)?)
}
