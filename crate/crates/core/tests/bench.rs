mod common;

use common::tables::TABLES;
use ecgnet::bench::{
    bench_model, benchmark_cohort, measure_peak_memory, render_report, report_from_table, time_inference, BenchProtocol,
    ReportFormat, Storage,
};
use ecgnet::metrics::{read_cohort_table, DEFAULT_LAMBDA};
use ecgnet::models::{build, count_params, Architecture, ArchitectureSpec, Mode, ModelBundle};
use ecgnet::Error;

fn model(arch: Architecture, samples: usize) -> ModelBundle {
    build(&ArchitectureSpec::new(arch).with_samples(samples).with_seed(4)).unwrap()
}

fn quick() -> BenchProtocol {
    BenchProtocol { warmup: 3, runs: 10, ..Default::default() }
}

#[test]
fn timing_collects_every_run() {
    let m = model(Architecture::AttiaNet, 640);
    let s = time_inference(&m, Storage::F32, 3, 12).unwrap();
    assert_eq!(s.samples_ms.len(), 12);
    assert!(s.samples_ms.iter().all(|&v| v > 0.0));
    assert!(s.p10_ms <= s.median_ms && s.median_ms <= s.p90_ms);
    let mut training = m.clone();
    training.set_mode(Mode::Train);
    assert!(matches!(time_inference(&training, Storage::F32, 3, 12), Err(Error::Usage(_))));
    assert!(matches!(time_inference(&m, Storage::F32, 3, 2), Err(Error::Parameter(_))));
}

#[test]
fn peak_memory_orders_architectures() {
    let attia = model(Architecture::AttiaNet, 5000);
    let deep = model(Architecture::DeepResidualCNN, 5000);
    let a = measure_peak_memory(&attia, Storage::F32).unwrap();
    let d = measure_peak_memory(&deep, Storage::F32).unwrap();
    let input_mb = (12 * 5000 * 4) as f64 / (1024.0 * 1024.0);
    assert!(a >= input_mb && d > a, "attia {a} MiB, deep {d} MiB");
    assert_eq!(measure_peak_memory(&attia, Storage::F32).unwrap(), a);
    // Doubling the element width doubles every buffer.
    let a64 = measure_peak_memory(&attia, Storage::F64).unwrap();
    assert!((a64 / a - 2.0).abs() < 0.02, "{a64} vs {a}");
}

#[test]
fn cohort_is_sorted_and_deterministic_apart_from_latency() {
    let models = [Architecture::AttiaNet, Architecture::SimpleNet, Architecture::DeepResidualCNN].map(|a| model(a, 320));
    let cohort: Vec<(String, &ModelBundle, f64)> = models
        .iter()
        .zip([0.9, 0.8, 0.7])
        .map(|(m, auc)| (m.spec.name.to_string(), m, auc))
        .collect();
    let r = benchmark_cohort(&cohort, &quick(), DEFAULT_LAMBDA).unwrap();
    assert_eq!(r.rows.len(), 3);
    assert!(r.rows.windows(2).all(|w| w[0].efficiency.efficiency_score >= w[1].efficiency.efficiency_score));
    assert!(r.protocol.contains("median of 10") && r.protocol.contains("1x1x12x320"));
    let again = benchmark_cohort(&cohort, &quick(), DEFAULT_LAMBDA).unwrap();
    let by_name = |rep: &ecgnet::bench::CohortReport, n: &str| {
        rep.rows.iter().find(|r| r.efficiency.name == n).unwrap().efficiency.raw.clone()
    };
    for (m, _) in models.iter().zip(0..) {
        let n = m.spec.name.to_string();
        let (x, y) = (by_name(&r, &n), by_name(&again, &n));
        assert_eq!((x.params_millions, x.peak_memory_mb), (y.params_millions, y.peak_memory_mb));
        assert_eq!(x.params_millions, count_params(m) as f64 / 1e6);
    }
}

#[test]
fn cohort_errors() {
    let a = model(Architecture::AttiaNet, 320);
    let b = model(Architecture::AttiaNet, 640);
    let one = [("a".to_string(), &a, 0.9)];
    assert!(matches!(benchmark_cohort(&one, &quick(), 0.6), Err(Error::Usage(_))));
    let mixed = [("a".to_string(), &a, 0.9), ("b".to_string(), &b, 0.9)];
    assert!(matches!(benchmark_cohort(&mixed, &quick(), 0.6), Err(Error::Usage(_))));
    let twins = [("a".to_string(), &a, 0.9), ("a2".to_string(), &a, 0.8)];
    assert!(matches!(benchmark_cohort(&twins, &quick(), 0.6), Err(Error::Normalization(_))));

    let mut broken = a.clone();
    broken.set_mode(Mode::Train);
    let partial = [("ok".to_string(), &a, 0.9), ("broken".to_string(), &broken, 0.9)];
    match benchmark_cohort(&partial, &quick(), 0.6) {
        Err(Error::PartialReport { completed, .. }) => assert_eq!(completed, vec!["ok".to_string()]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn single_model_result_fields() {
    let m = model(Architecture::AttiaNet, 320);
    let r = bench_model("attia", &m, &quick()).unwrap();
    assert_eq!((r.runs, r.warmup, r.storage), (10, 3, Storage::F32));
    assert_eq!(r.input_shape, vec![1, 1, 12, 320]);
}

#[test]
fn markdown_report_has_one_row_per_model() {
    let r = report_from_table(TABLES[0].measurements(), DEFAULT_LAMBDA, "cohort.csv").unwrap();
    let md = render_report(&r, ReportFormat::Markdown);
    let lines: Vec<&str> = md.lines().filter(|l| l.starts_with('|')).collect();
    assert_eq!(lines.len(), 2 + 5);
    assert!(lines[0].starts_with("| Model | Params (M) | Inference Time (ms) | Peak Memory (MB) | Resource Cost"));
    assert!(lines[2].starts_with("| AttiaNet | 0.15 | 0.79 | 48.37 | 0.14 | 0.94 |"), "{}", lines[2]);
    assert!(lines[6].starts_with("| DeepResidualCNN |"));
}

#[test]
fn machine_formats_round_trip() {
    let r = report_from_table(TABLES[1].measurements(), DEFAULT_LAMBDA, "cohort.csv").unwrap();
    let csv = render_report(&r, ReportFormat::Csv);
    let back = read_cohort_table(&csv).unwrap();
    let raw: Vec<_> = r.rows.iter().map(|row| row.efficiency.raw.clone()).collect();
    assert_eq!(back, raw);

    let jl = render_report(&r, ReportFormat::JsonLines);
    let v: Vec<serde_json::Value> = jl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(v.len(), 6);
    assert_eq!(v[0]["lambda"], DEFAULT_LAMBDA);
    for (j, row) in v[1..].iter().zip(&r.rows) {
        assert_eq!(j["efficiency_score"].as_f64().unwrap(), row.efficiency.efficiency_score);
    }
    assert_eq!(render_report(&r, ReportFormat::Csv), csv);
}

#[test]
fn zero_lambda_ranks_by_cost() {
    let r = report_from_table(TABLES[2].measurements(), 0.0, "t").unwrap();
    assert!(r.rows.windows(2).all(|w| w[0].efficiency.resource_cost <= w[1].efficiency.resource_cost));
    assert_eq!(r.rows[0].efficiency.name, "AttiaNet");
}
