//! The eight acceptance criteria, each printed as one PASS/FAIL line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.
//! End-to-end training dominates the runtime (about ten minutes on one core).

mod common;

use std::time::{Duration, Instant};

use common::gradcheck::{architecture_gradient_check, primitive_errors, TOL};
use common::tables::{PRINTED_OUTLIER, TABLES};
use ecgnet::bench::{render_report, report_from_table, ReportFormat};
use ecgnet::data::mapping::CHAPMAN_RHYTHMS;
use ecgnet::data::{
    map_chapman_rhythm, map_mimic_binary, map_ptbxl_superclass, read_record, split_records, synth_corpus, write_record,
    EcgRecord, LabelSet, Profile, Rhythm, Scheme, Superclass,
};
use ecgnet::metrics::{macro_auc, read_cohort_table, roc_auc, write_cohort_table, DEFAULT_LAMBDA};
use ecgnet::models::{
    build, count_params, io, Architecture, ArchitectureSpec, LayerOp, ModelBundle, FUSED_FEATURES,
};
use ecgnet::train::{fit, predict, TrainConfig, TrainHistory};
use ecgnet::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within_budget(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.1?}, limit {limit:?}"))
    }
}

/// Scores every table through the cohort-table text format, the path the
/// `score` command takes, and compares against the printed values.
fn formula_reproduction() -> (Outcome, bool) {
    let started = Instant::now();
    let mut misses = Vec::new();
    let mut cells = 0;
    for (ti, t) in TABLES.iter().enumerate() {
        let table = read_cohort_table(&write_cohort_table(&t.measurements())).unwrap();
        let report = report_from_table(table, DEFAULT_LAMBDA, t.title).unwrap();
        let csv = render_report(&report, ReportFormat::Csv);
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(csv.as_bytes());
        for rec in rdr.records() {
            let rec = rec.unwrap();
            let i = common::tables::MODELS.iter().position(|m| *m == &rec[0]).unwrap();
            let (rc, es): (f64, f64) = (rec[4].parse().unwrap(), rec[5].parse().unwrap());
            cells += 2;
            if (rc - t.resource_cost[i]).abs() > 0.01 + 1e-9 {
                misses.push((ti, i, "resource cost"));
            }
            if (es - t.efficiency[i]).abs() > 0.01 + 1e-9 {
                misses.push((ti, i, "efficiency score"));
            }
        }
    }
    let timing = within_budget(started.elapsed(), Duration::from_secs(1));
    let mut detail = format!("{}/{cells} printed cells within 0.01", cells - misses.len());
    for &(ti, i, what) in &misses {
        let row = oracle_rc(ti, i);
        detail.push_str(&format!(
            "; {} {} {what}: printed {:.2}, recomputed {row:.3}",
            TABLES[ti].title, common::tables::MODELS[i], TABLES[ti].resource_cost[i]
        ));
    }
    if misses == [(PRINTED_OUTLIER.0, PRINTED_OUTLIER.1, "resource cost")] {
        detail.push_str(" (the same row's printed efficiency score requires the recomputed value)");
    }
    if let Err(e) = &timing {
        detail.push_str(&format!("; {e}"));
    }
    let only_outlier = misses.iter().all(|&(t, i, what)| (t, i) == PRINTED_OUTLIER && what == "resource cost");
    (outcome(misses.is_empty() && timing.is_ok(), detail), only_outlier && timing.is_ok())
}

fn oracle_rc(ti: usize, i: usize) -> f64 {
    common::tables::oracle_scores(&TABLES[ti], DEFAULT_LAMBDA)[i].0
}

fn parameter_anchors() -> Outcome {
    let started = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for (arch, want) in [
        (Architecture::AttiaNet, 0.15),
        (Architecture::SimpleNet, 2.59),
        (Architecture::ParallelCNN, 20.42),
        (Architecture::ParallelCNNew, 22.99),
        (Architecture::DeepResidualCNN, 5.90),
    ] {
        let got = count_params(&build(&ArchitectureSpec::new(arch)).unwrap()) as f64 / 1e6;
        let off = (got - want) / want;
        pass &= off.abs() <= 0.10;
        parts.push(format!("{arch} {got:.2}M ({:+.1}%)", off * 100.0));
    }
    let timing = within_budget(started.elapsed(), Duration::from_secs(10));
    let mut detail = parts.join(", ");
    if let Err(e) = &timing {
        detail.push_str(&format!("; {e}"));
    }
    outcome(pass && timing.is_ok(), detail)
}

fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    let prims = primitive_errors();
    let (worst_prim, worst_prim_at) = prims
        .iter()
        .map(|(n, e)| (*e, n.as_str()))
        .fold((0.0, ""), |a, b| if b.0 > a.0 { b } else { a });
    let mut pass = worst_prim < TOL;
    let mut parts = vec![format!("{} primitives max {worst_prim:.1e} ({worst_prim_at})", prims.len())];
    for arch in Architecture::ALL {
        let c = architecture_gradient_check(arch);
        pass &= c.worst < TOL;
        parts.push(format!("{arch} {:.1e}", c.worst));
    }
    let timing = within_budget(started.elapsed(), Duration::from_secs(300));
    let mut detail = parts.join(", ");
    if let Err(e) = &timing {
        detail.push_str(&format!("; {e}"));
    }
    outcome(pass && timing.is_ok(), detail)
}

fn pair_count(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs as f64
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa0c);
    let mut worst: f64 = 0.0;
    let mut with_ties = 0;
    let mut done = 0;
    while done < 1000 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(1..=n.max(2));
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..levels as u32)) / levels as f64).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if !labels.contains(&true) || !labels.contains(&false) {
            continue;
        }
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        with_ties += usize::from(sorted.windows(2).any(|w| w[0] == w[1]));
        worst = worst.max((roc_auc(&scores, &labels).unwrap() - pair_count(&scores, &labels)).abs());
        done += 1;
    }
    outcome(worst <= 1e-12, format!("1000 instances ({with_ties} with ties), max |diff| {worst:.1e}"))
}

const E2E_SAMPLES: usize = 500;

fn desk_scale_training() -> Outcome {
    let records = synth_corpus(&[Profile::Sr, Profile::WideQrs], Scheme::Binary, 400, E2E_SAMPLES, 2024).unwrap();
    let (train, val, test) = split_records(records, (0.8, 0.1, 0.1), 7).unwrap();
    let config = TrainConfig { max_epochs: 30, ..TrainConfig::default() };
    let mut pass = true;
    let mut parts = vec![format!("{}/{}/{} records", train.len(), val.len(), test.len())];
    for arch in Architecture::ALL {
        let started = Instant::now();
        let model = build(&ArchitectureSpec::new(arch).with_samples(E2E_SAMPLES)).unwrap();
        let (trained, history) = fit(&model, &train, &val, &config).unwrap();
        let (scores, targets) = predict(&trained, &test, 32).unwrap();
        let auc = macro_auc(&scores, &targets, Scheme::Binary).unwrap();
        pass &= auc >= 0.90 && history.stopped_epoch <= 30;
        parts.push(format!(
            "{arch} AUC {auc:.3} (best epoch {}, stopped {}, {:.0?})",
            history.best_epoch,
            history.stopped_epoch,
            started.elapsed()
        ));
    }
    outcome(pass, parts.join(", "))
}

/// Dense layers reading the fused feature vector.
fn fused_dense_params(model: &ModelBundle) -> Vec<usize> {
    let fused = model.graph.find(FUSED_FEATURES).expect("fused node");
    model
        .graph
        .nodes
        .iter()
        .filter(|n| n.inputs == [fused])
        .filter_map(|n| match n.op {
            LayerOp::Dense { param } => Some(param),
            _ => None,
        })
        .collect()
}

fn demographic_fusion() -> Outcome {
    let records = synth_corpus(&[Profile::Sr, Profile::WideQrs], Scheme::Binary, 6, 320, 31).unwrap();
    let refs: Vec<&EcgRecord> = records.iter().collect();
    let x = ecgnet::data::batch_signals(&refs).unwrap();
    let demo: Vec<_> = records.iter().map(|r| r.demographics).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for arch in Architecture::ALL {
        let spec = ArchitectureSpec::new(arch).with_samples(320).with_seed(13);
        let mut with = build(&spec.clone().with_demographics(true)).unwrap();
        let mut without = build(&spec).unwrap();
        let fused = fused_dense_params(&with);
        // Same weights apart from the demographic columns.
        for (p, q) in without.params.iter_mut().zip(&with.params) {
            let [o, f] = [p.weights.shape()[0], p.weights.shape().get(1).copied().unwrap_or(0)];
            if p.weights.shape() == q.weights.shape() {
                *p = q.clone();
            } else {
                let cols = q.weights.shape()[1];
                let kept: Vec<f64> = q.weights.data().chunks(cols).flat_map(|r| r[..f].to_vec()).collect();
                p.weights = Tensor::new(vec![o, f], kept).unwrap();
                p.bias = q.bias.clone();
            }
        }
        let base = without.forward(&x, &[]).unwrap();
        let fused_out = with.forward(&x, &demo).unwrap();
        let changed = fused_out.data().iter().zip(base.data()).filter(|(a, b)| a != b).count();
        for &pi in &fused {
            let w = &mut with.params[pi].weights;
            let cols = w.shape()[1];
            for row in w.make_mut().chunks_mut(cols) {
                row[cols - 4..].fill(0.0);
            }
        }
        let zeroed = with.forward(&x, &demo).unwrap();
        let reproduced = zeroed.bit_eq(&base);
        pass &= changed > 0 && reproduced && !fused.is_empty();
        parts.push(format!(
            "{arch}: {changed}/{} outputs changed, zeroed {} bit-identical",
            base.numel(),
            if reproduced { "is" } else { "is NOT" }
        ));
    }
    outcome(pass, parts.join(", "))
}

fn mapping_totality() -> Outcome {
    let mut problems = Vec::new();
    let mut groups: Vec<(Rhythm, Vec<&str>)> = Rhythm::ALL.iter().map(|&r| (r, Vec::new())).collect();
    let mut codes: Vec<&str> = CHAPMAN_RHYTHMS.iter().map(|c| c.0).collect();
    codes.sort();
    codes.dedup();
    if codes.len() != 11 {
        problems.push(format!("{} distinct Chapman codes", codes.len()));
    }
    for (code, _) in CHAPMAN_RHYTHMS {
        match map_chapman_rhythm(code) {
            Ok(r) => groups.iter_mut().find(|g| g.0 == r).unwrap().1.push(code),
            Err(e) => problems.push(format!("{code}: {e}")),
        }
    }
    let expected = [
        (Rhythm::Afib, vec!["atrial fibrillation", "atrial flutter"]),
        (Rhythm::Sb, vec!["sinus bradycardia"]),
        (Rhythm::Sr, vec!["sinus rhythm", "sinus irregularity"]),
    ];
    for (r, want) in &expected {
        let got = &groups.iter().find(|g| g.0 == *r).unwrap().1;
        if got != want {
            problems.push(format!("{r:?} holds {got:?}"));
        }
    }
    if groups.iter().any(|g| g.1.is_empty()) {
        problems.push("an empty rhythm group".into());
    }
    if !matches!(map_chapman_rhythm("ventricular tachycardia"), Err(Error::Mapping(_))) {
        problems.push("unknown Chapman code accepted".into());
    }
    let normal = LabelSet::Binary { abnormal: false };
    let abnormal = LabelSet::Binary { abnormal: true };
    let mimic = [
        (map_mimic_binary(&["sinus rhythm"]).ok(), Some(normal.clone())),
        (map_mimic_binary(&["sinus rhythm", "left bundle branch block"]).ok(), Some(abnormal.clone())),
        (map_mimic_binary(&["atrial fibrillation"]).ok(), Some(abnormal)),
    ];
    if mimic.iter().any(|(a, b)| a != b) {
        problems.push("MIMIC rule example".into());
    }
    let ptb_union = map_ptbxl_superclass(&[("IMI", "MI"), ("ISCAL", "STTC")]).ok();
    let ptb_norm = map_ptbxl_superclass(&[("NORM", "NORM")]).ok();
    let empty: [(&str, &str); 0] = [];
    if ptb_union != LabelSet::multilabel(&[Superclass::Mi, Superclass::Sttc]).ok()
        || ptb_norm != LabelSet::multilabel(&[Superclass::Norm]).ok()
        || !matches!(map_ptbxl_superclass(&empty), Err(Error::Mapping(_)))
    {
        problems.push("PTB-XL rule example".into());
    }
    let sizes: Vec<String> = groups.iter().map(|(r, c)| format!("{r:?} {}", c.len())).collect();
    if problems.is_empty() {
        outcome(true, format!("11 Chapman codes -> {}; PTB-XL and MIMIC examples hold", sizes.join(", ")))
    } else {
        outcome(false, problems.join("; "))
    }
}

fn determinism_and_round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut problems = Vec::new();

    let records = synth_corpus(&[Profile::Sr, Profile::WideQrs], Scheme::Binary, 60, 320, 77).unwrap();
    for r in &records {
        let bytes = write_record(r).unwrap();
        let back = read_record(&bytes).unwrap();
        if back != *r || write_record(&back).unwrap() != bytes {
            problems.push(format!("record {}", r.record_id));
        }
    }
    let x = ecgnet::data::batch_signals(&records.iter().take(3).collect::<Vec<_>>()).unwrap();
    let demo: Vec<_> = records.iter().take(3).map(|r| r.demographics).collect();
    for arch in Architecture::ALL {
        let m = build(&ArchitectureSpec::new(arch).with_samples(320).with_seed(3).with_demographics(true)).unwrap();
        let path = dir.path().join(format!("{arch}.ecgm"));
        io::save(&m, &path).unwrap();
        let back = io::load(&path).unwrap();
        let same_bytes = io::to_bytes(&back).unwrap() == std::fs::read(&path).unwrap();
        let same_out = m.forward(&x, &demo).unwrap().bit_eq(&back.forward(&x, &demo).unwrap());
        if !(same_bytes && same_out) {
            problems.push(format!("{arch} model file"));
        }
    }

    let (train, val, _) = split_records(records, (0.8, 0.1, 0.1), 1).unwrap();
    let config = TrainConfig { max_epochs: 3, batch_size: 16, seed: 5, ..TrainConfig::default() };
    let model = build(&ArchitectureSpec::new(Architecture::AttiaNet).with_samples(320).with_seed(9)).unwrap();
    let (a, ha) = fit(&model, &train, &val, &config).unwrap();
    let (b, hb) = fit(&model, &train, &val, &config).unwrap();
    if io::to_bytes(&a).unwrap() != io::to_bytes(&b).unwrap() || !ha.same_trajectory(&hb) {
        problems.push("fixed-seed training differs".into());
    }
    let path = dir.path().join("history.csv");
    ha.save(&path).unwrap();
    let back = TrainHistory::load(&path).unwrap();
    if back != ha || back.to_csv() != ha.to_csv() {
        problems.push("history file".into());
    }
    if problems.is_empty() {
        outcome(true, "60 record files, 5 model files, 1 history bit-exact; two seeded fits give identical model bytes")
    } else {
        outcome(false, problems.join("; "))
    }
}

#[test]
fn acceptance_criteria() {
    let (c1, c1_only_outlier) = formula_reproduction();
    let results = [
        ("1 formula reproduction", c1),
        ("2 parameter-count anchors", parameter_anchors()),
        ("3 gradient correctness", gradient_correctness()),
        ("4 AUC oracle equivalence", auc_oracle()),
        ("5 desk-scale training", desk_scale_training()),
        ("6 demographic fusion", demographic_fusion()),
        ("7 label-mapping totality", mapping_totality()),
        ("8 determinism and round-trips", determinism_and_round_trips()),
    ];
    for (name, o) in &results {
        println!("[{}] criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    // The single printed Resource Cost that contradicts its own table is
    // reported as a failure above but does not fail the build.
    for (name, o) in &results {
        let tolerated = name.starts_with('1') && c1_only_outlier;
        assert!(o.pass || tolerated, "criterion {name} failed: {}", o.detail);
    }
}
