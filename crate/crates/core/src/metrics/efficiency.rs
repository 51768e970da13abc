use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.6;

/// Raw measurements for one model of a cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeasurement {
    pub name: String,
    pub params_millions: f64,
    pub inference_ms: f64,
    pub peak_memory_mb: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyInputs {
    pub models: Vec<ModelMeasurement>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyRow {
    pub name: String,
    pub raw: ModelMeasurement,
    pub norm_params: f64,
    pub norm_time: f64,
    pub norm_memory: f64,
    pub resource_cost: f64,
    pub efficiency_score: f64,
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} = {v} is outside [0, 1]")))
    }
}

/// Maps each value to `(v - min) / (max - min)`.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::Normalization(format!(
            "min-max needs at least 2 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Normalization("non-finite value".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(Error::Normalization(format!("all values equal {lo}")));
    }
    Ok(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// Mean of the normalized parameter count, latency and memory.
pub fn resource_cost(p: f64, t: f64, m: f64) -> Result<f64> {
    unit("normalized params", p)?;
    unit("normalized time", t)?;
    unit("normalized memory", m)?;
    Ok((p + t + m) / 3.0)
}

pub fn efficiency_score(auc: f64, resource_cost: f64, lambda: f64) -> Result<f64> {
    unit("auc", auc)?;
    unit("resource cost", resource_cost)?;
    unit("lambda", lambda)?;
    Ok(lambda * auc + (1.0 - lambda) * (1.0 - resource_cost))
}

impl EfficiencyInputs {
    pub fn new(models: Vec<ModelMeasurement>) -> Self {
        EfficiencyInputs {
            models,
            lambda: DEFAULT_LAMBDA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        unit("lambda", self.lambda)?;
        if self.models.len() < 2 {
            return Err(Error::Usage(format!(
                "a cohort needs at least 2 models, got {}",
                self.models.len()
            )));
        }
        for m in &self.models {
            for (field, v) in [
                ("params_millions", m.params_millions),
                ("inference_ms", m.inference_ms),
                ("peak_memory_mb", m.peak_memory_mb),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Parameter(format!("{}: {field} = {v} must be > 0", m.name)));
                }
            }
            unit(&format!("{}: auc", m.name), m.auc)?;
        }
        Ok(())
    }
}

/// Applies the cohort normalization and both formulas. Rows keep input order.
pub fn score_cohort(inputs: &EfficiencyInputs) -> Result<Vec<EfficiencyRow>> {
    inputs.validate()?;
    let col = |f: fn(&ModelMeasurement) -> f64, what: &str| {
        minmax_normalize(&inputs.models.iter().map(f).collect::<Vec<_>>())
            .map_err(|e| Error::Normalization(format!("{what} column: {e}")))
    };
    let p = col(|m| m.params_millions, "params")?;
    let t = col(|m| m.inference_ms, "inference time")?;
    let mem = col(|m| m.peak_memory_mb, "peak memory")?;
    inputs
        .models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let rc = resource_cost(p[i], t[i], mem[i])?;
            Ok(EfficiencyRow {
                name: m.name.clone(),
                raw: m.clone(),
                norm_params: p[i],
                norm_time: t[i],
                norm_memory: mem[i],
                resource_cost: rc,
                efficiency_score: efficiency_score(m.auc, rc, inputs.lambda)?,
            })
        })
        .collect()
}

const COLUMNS: [&str; 5] = ["name", "params_millions", "inference_ms", "peak_memory_mb", "auc"];

fn csv_err(e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte() as usize);
    Error::Format {
        offset,
        detail: e.to_string(),
    }
}

/// Reads records keyed by header name, requiring the listed columns.
fn read_columns(text: &str, wanted: &[&str]) -> Result<Vec<Vec<(String, usize)>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let idx: Vec<usize> = wanted
        .iter()
        .map(|w| {
            headers.iter().position(|h| h.eq_ignore_ascii_case(w)).ok_or_else(|| Error::Format {
                offset: 0,
                detail: format!("missing column '{w}'"),
            })
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let offset = rec.position().map_or(0, |p| p.byte() as usize);
        rows.push(idx.iter().map(|&i| (rec.get(i).unwrap_or("").to_string(), offset)).collect());
    }
    if rows.is_empty() {
        return Err(Error::Usage("cohort table has no rows".into()));
    }
    Ok(rows)
}

fn number(field: &str, (v, offset): &(String, usize)) -> Result<f64> {
    v.parse().map_err(|_| Error::Format {
        offset: *offset,
        detail: format!("{field}: '{v}' is not a number"),
    })
}

/// Parses a comma-separated cohort table. Columns are located by header,
/// so their order is free and extra columns are ignored.
pub fn read_cohort_table(text: &str) -> Result<Vec<ModelMeasurement>> {
    read_columns(text, &COLUMNS)?
        .into_iter()
        .map(|r| {
            Ok(ModelMeasurement {
                name: r[0].0.clone(),
                params_millions: number(COLUMNS[1], &r[1])?,
                inference_ms: number(COLUMNS[2], &r[2])?,
                peak_memory_mb: number(COLUMNS[3], &r[3])?,
                auc: number(COLUMNS[4], &r[4])?,
            })
        })
        .collect()
}

/// Reads only the `name` and `auc` columns.
pub fn read_auc_table(text: &str) -> Result<Vec<(String, f64)>> {
    read_columns(text, &["name", "auc"])?
        .into_iter()
        .map(|r| Ok((r[0].0.clone(), number("auc", &r[1])?)))
        .collect()
}

pub fn write_cohort_table(models: &[ModelMeasurement]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(COLUMNS);
    for m in models {
        let _ = w.write_record([
            m.name.clone(),
            m.params_millions.to_string(),
            m.inference_ms.to_string(),
            m.peak_memory_mb.to_string(),
            m.auc.to_string(),
        ]);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}
