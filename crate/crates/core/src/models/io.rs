//! Model files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "ECGM" | version u16 | spec length u32 | spec JSON
//! seed u64 | param_count u64 | mode u8 | layer count u32
//! per layer: flags u8 (bit 0: running stats present)
//!            weights, bias[, running mean, running var]
//!            each as element count u64 then f64 values
//! ```

use std::path::Path;

use super::{build_structure, ArchitectureSpec, Metadata, Mode, ModelBundle, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ECGM";

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.extend_from_slice(&(t.numel() as u64).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(model: &ModelBundle) -> Result<Vec<u8>> {
    let spec = serde_json::to_vec(&model.spec)
        .map_err(|e| Error::Config(format!("cannot serialize spec: {e}")))?;
    let mut out = Vec::with_capacity(64 + spec.len() + model.param_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    out.extend_from_slice(&model.metadata.seed.to_le_bytes());
    out.extend_from_slice(&model.metadata.param_count.to_le_bytes());
    out.push(match model.mode {
        Mode::Train => 0,
        Mode::Infer => 1,
    });
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in &model.params {
        let stats = match (&p.running_mean, &p.running_var) {
            (Some(m), Some(v)) => Some((m, v)),
            _ => None,
        };
        out.push(u8::from(stats.is_some()));
        put_tensor(&mut out, &p.weights);
        put_tensor(&mut out, &p.bias);
        if let Some((m, v)) = stats {
            put_tensor(&mut out, m);
            put_tensor(&mut out, v);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                detail: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn fail(&self, at: usize, detail: impl Into<String>) -> Error {
        Error::Format {
            offset: at,
            detail: detail.into(),
        }
    }

    fn tensor_into(&mut self, target: &Tensor, what: &str) -> Result<Tensor> {
        let at = self.pos;
        let n = u64::from_le_bytes(self.array(what)?) as usize;
        if n != target.numel() {
            return Err(self.fail(at, format!("{what}: {n} values, layout needs {}", target.numel())));
        }
        let raw = self.take(n * 8, what)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Tensor::new(target.shape().to_vec(), data)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.fail(0, "not a model file (bad magic)"));
    }
    let version = u16::from_le_bytes(r.array("version")?);
    if version != FORMAT_VERSION {
        return Err(r.fail(4, format!("unsupported model format version {version}")));
    }
    let len = u32::from_le_bytes(r.array("spec length")?) as usize;
    let at = r.pos;
    let spec: ArchitectureSpec = serde_json::from_slice(r.take(len, "spec")?)
        .map_err(|e| r.fail(at, format!("bad spec: {e}")))?;
    let seed = u64::from_le_bytes(r.array("seed")?);
    let at = r.pos;
    let param_count = u64::from_le_bytes(r.array("param count")?);
    let mode = match r.take(1, "mode")?[0] {
        0 => Mode::Train,
        1 => Mode::Infer,
        m => return Err(r.fail(r.pos - 1, format!("unknown mode byte {m}"))),
    };
    let layers = u32::from_le_bytes(r.array("layer count")?) as usize;

    let mut model = build_structure(&spec).map_err(|e| r.fail(at, format!("spec does not build: {e}")))?;
    if layers != model.params.len() {
        return Err(r.fail(r.pos - 4, format!("{layers} layers, architecture has {}", model.params.len())));
    }
    for p in model.params.iter_mut() {
        let flags = r.take(1, "layer flags")?[0];
        p.weights = r.tensor_into(&p.weights, &p.name)?;
        p.bias = r.tensor_into(&p.bias, &p.name)?;
        if flags & 1 == 1 {
            let c = Tensor::zeros(vec![p.channels()]);
            p.running_mean = Some(r.tensor_into(&c, &p.name)?);
            p.running_var = Some(r.tensor_into(&c, &p.name)?);
        } else {
            p.running_mean = None;
            p.running_var = None;
        }
    }
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, "trailing bytes after parameters"));
    }
    if param_count != model.param_count() as u64 {
        return Err(r.fail(at, format!("header says {param_count} parameters, found {}", model.param_count())));
    }
    model.mode = mode;
    model.metadata = Metadata {
        seed,
        param_count,
        version,
    };
    Ok(model)
}

/// Writes atomically through a sibling temporary file.
pub fn save(model: &ModelBundle, path: &Path) -> Result<()> {
    crate::fsutil::write_atomic(path, &to_bytes(model)?)
}

pub fn load(path: &Path) -> Result<ModelBundle> {
    from_bytes(&std::fs::read(path)?)
}
