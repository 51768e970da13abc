//! Latency and peak-memory measurement and cohort efficiency reports.

mod report;

pub use report::{render_report, round_half_even, write_report, ReportFormat};

use std::time::Instant;

use crate::data::synth::calibration_batch;
use crate::error::{Error, Result};
use crate::metrics::{score_cohort, EfficiencyInputs, EfficiencyRow, ModelMeasurement};
use crate::models::{count_params, Demographics, FrozenModel, Mode, ModelBundle};
use crate::tensor::ledger::bytes_to_mb;
use crate::tensor::{ledger_live, ledger_peak, ledger_reset, Element, Tensor};

pub const MIN_WARMUP: usize = 3;
pub const MIN_RUNS: usize = 10;
const INPUT_SEED: u64 = 0xbe7c;

/// Element type the parameters and activations are stored in while measuring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    F32,
    F64,
}

impl Storage {
    pub fn as_str(self) -> &'static str {
        match self {
            Storage::F32 => "f32",
            Storage::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchProtocol {
    pub warmup: usize,
    pub runs: usize,
    pub storage: Storage,
}

impl Default for BenchProtocol {
    fn default() -> Self {
        BenchProtocol {
            warmup: 5,
            runs: 20,
            storage: Storage::F32,
        }
    }
}

impl BenchProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.warmup < MIN_WARMUP || self.runs < MIN_RUNS {
            return Err(Error::Parameter(format!(
                "need warmup >= {MIN_WARMUP} and runs >= {MIN_RUNS}, got {} and {}",
                self.warmup, self.runs
            )));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "single-record forward, batch 1, one thread, {} storage; {} warmup runs discarded, \
             median of {} timed runs (p10/p90 alongside); peak memory = ledger peak of live tensor and kernel workspace bytes \
             during one forward, excluding parameters, in MiB",
            self.storage.as_str(),
            self.warmup,
            self.runs
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats {
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub samples_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub name: String,
    pub params_millions: f64,
    pub latency: LatencyStats,
    pub peak_memory_mb: f64,
    pub runs: usize,
    pub warmup: usize,
    pub input_shape: Vec<usize>,
    pub storage: Storage,
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl LatencyStats {
    pub fn from_samples(samples_ms: Vec<f64>) -> Result<Self> {
        if samples_ms.is_empty() || samples_ms.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("latency samples must be finite and non-empty".into()));
        }
        let mut s = samples_ms.clone();
        s.sort_by(f64::total_cmp);
        Ok(LatencyStats {
            median_ms: percentile(&s, 0.5),
            p10_ms: percentile(&s, 0.1),
            p90_ms: percentile(&s, 0.9),
            samples_ms,
        })
    }
}

/// Runs `f` on a dedicated one-thread pool so timings and ledger readings
/// are not disturbed by other work.
fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::State(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn bench_input<T: Element>(model: &FrozenModel<T>) -> Result<(Tensor<T>, Vec<Demographics>)> {
    let x = calibration_batch(model.spec.input_leads, model.spec.input_samples, 1, INPUT_SEED)?.cast();
    let demo = if model.spec.use_demographics {
        vec![Demographics::default()]
    } else {
        Vec::new()
    };
    Ok((x, demo))
}

fn require_infer(model: &ModelBundle) -> Result<()> {
    if model.mode != Mode::Infer {
        return Err(Error::Usage("benchmarking needs a model in infer mode".into()));
    }
    Ok(())
}

fn time_frozen<T: Element>(model: &FrozenModel<T>, warmup: usize, runs: usize) -> Result<LatencyStats> {
    let (x, demo) = bench_input(model)?;
    for _ in 0..warmup {
        model.forward(&x, &demo)?;
    }
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        let y = model.forward(&x, &demo)?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
        drop(y);
    }
    LatencyStats::from_samples(samples)
}

fn peak_frozen<T: Element>(model: &FrozenModel<T>) -> Result<f64> {
    ledger_reset();
    let baseline = ledger_live();
    let (x, demo) = bench_input(model)?;
    let y = model.forward(&x, &demo)?;
    drop((x, y));
    Ok(bytes_to_mb(ledger_peak() - baseline))
}

/// Wall-clock latency of single-record forwards after discarding `warmup` runs.
pub fn time_inference(model: &ModelBundle, storage: Storage, warmup: usize, runs: usize) -> Result<LatencyStats> {
    require_infer(model)?;
    BenchProtocol { warmup, runs, storage }.validate()?;
    single_threaded(|| match storage {
        Storage::F32 => time_frozen(&model.freeze::<f32>(), warmup, runs),
        Storage::F64 => time_frozen(&model.freeze::<f64>(), warmup, runs),
    })?
}

/// Peak live tensor and workspace bytes over one single-record forward, in
/// MiB. Parameter storage is live before the measurement starts and so is
/// excluded.
pub fn measure_peak_memory(model: &ModelBundle, storage: Storage) -> Result<f64> {
    require_infer(model)?;
    single_threaded(|| match storage {
        Storage::F32 => peak_frozen(&model.freeze::<f32>()),
        Storage::F64 => peak_frozen(&model.freeze::<f64>()),
    })?
}

pub fn bench_model(name: &str, model: &ModelBundle, protocol: &BenchProtocol) -> Result<BenchResult> {
    let latency = time_inference(model, protocol.storage, protocol.warmup, protocol.runs)?;
    Ok(BenchResult {
        name: name.to_string(),
        params_millions: count_params(model) as f64 / 1e6,
        latency,
        peak_memory_mb: measure_peak_memory(model, protocol.storage)?,
        runs: protocol.runs,
        warmup: protocol.warmup,
        input_shape: vec![1, 1, model.spec.input_leads, model.spec.input_samples],
        storage: protocol.storage,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub efficiency: EfficiencyRow,
    pub bench: Option<BenchResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortReport {
    pub protocol: String,
    pub lambda: f64,
    pub rows: Vec<ReportRow>,
}

fn sorted(protocol: String, lambda: f64, mut rows: Vec<ReportRow>) -> CohortReport {
    rows.sort_by(|a, b| b.efficiency.efficiency_score.total_cmp(&a.efficiency.efficiency_score));
    CohortReport { protocol, lambda, rows }
}

/// Scores an externally measured cohort table without running any model.
pub fn report_from_table(models: Vec<ModelMeasurement>, lambda: f64, source: &str) -> Result<CohortReport> {
    let rows = score_cohort(&EfficiencyInputs { models, lambda })?;
    Ok(sorted(
        format!("measurements taken from {source}"),
        lambda,
        rows.into_iter().map(|efficiency| ReportRow { efficiency, bench: None }).collect(),
    ))
}

/// Measures every `(name, model, auc)` at its input shape, then normalizes
/// within the cohort and sorts by efficiency score, best first.
pub fn benchmark_cohort(
    models: &[(String, &ModelBundle, f64)],
    protocol: &BenchProtocol,
    lambda: f64,
) -> Result<CohortReport> {
    protocol.validate()?;
    if models.len() < 2 {
        return Err(Error::Usage(format!("a cohort needs at least 2 models, got {}", models.len())));
    }
    let shape = |m: &ModelBundle| (m.spec.input_leads, m.spec.input_samples);
    if let Some((n, m, _)) = models.iter().find(|(_, m, _)| shape(m) != shape(models[0].1)) {
        return Err(Error::Usage(format!(
            "'{n}' takes input {:?} but '{}' takes {:?}; cohort shapes must match",
            shape(m),
            models[0].0,
            shape(models[0].1)
        )));
    }
    let mut results = Vec::with_capacity(models.len());
    for (name, model, _) in models {
        match bench_model(name, model, protocol) {
            Ok(r) => results.push(r),
            Err(e) => {
                return Err(Error::PartialReport {
                    completed: results.iter().map(|r: &BenchResult| r.name.clone()).collect(),
                    source: Box::new(e),
                })
            }
        }
    }
    let measurements = results
        .iter()
        .zip(models)
        .map(|(r, (_, _, auc))| ModelMeasurement {
            name: r.name.clone(),
            params_millions: r.params_millions,
            inference_ms: r.latency.median_ms,
            peak_memory_mb: r.peak_memory_mb,
            auc: *auc,
        })
        .collect();
    let rows = score_cohort(&EfficiencyInputs { models: measurements, lambda })?;
    let (l, s) = shape(models[0].1);
    Ok(sorted(
        format!("{}; input 1x1x{l}x{s}", protocol.describe()),
        lambda,
        rows.into_iter()
            .zip(results)
            .map(|(efficiency, b)| ReportRow { efficiency, bench: Some(b) })
            .collect(),
    ))
}
