use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecgnet::bench::{benchmark_cohort, render_report, report_from_table, write_report, BenchProtocol, CohortReport, ReportFormat};
use ecgnet::data::{
    infer_scheme, parse_profiles, save_record, split_dataset, synth_corpus, Manifest, ManifestEntry, Scheme, Split,
};
use ecgnet::metrics::{read_auc_table, read_cohort_table, score_cohort, EfficiencyInputs, DEFAULT_LAMBDA};
use ecgnet::models::{self, Architecture, ArchitectureSpec, ModelBundle};
use ecgnet::train::{fit_with, predict, LossKind, TrainConfig};
use ecgnet::{Error, Result};

const OUT_DIR_VAR: &str = "ECGNET_OUT_DIR";

#[derive(Parser)]
#[command(name = "ecgnet", version, about = "Train, evaluate and benchmark ECG classification CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its manifest.
    Synth(SynthArgs),
    /// Train one architecture on a manifest's train and val splits.
    Train(TrainArgs),
    /// Report AUCs of a trained model on one split.
    Eval(EvalArgs),
    /// Measure latency and memory of a model cohort and score it.
    Bench(BenchArgs),
    /// Apply the resource cost and efficiency formulas to a cohort table.
    Score(ScoreArgs),
    /// Render a cohort table as a ranked report.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Comma-separated profiles, e.g. "SR,AFIB-like".
    #[arg(long)]
    profile_set: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 5000)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train, val and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    split: String,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    arch: String,
    #[arg(long)]
    manifest: PathBuf,
    /// binary, multiclass or multilabel.
    #[arg(long, default_value = "binary")]
    task: String,
    /// key = value training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    use_demographics: bool,
    #[arg(long)]
    out_model: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct BenchArgs {
    /// Architecture names or model files, comma-separated.
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    /// leads x samples, used for models built from a name.
    #[arg(long, default_value = "12x5000")]
    input_shape: String,
    #[arg(long, default_value_t = 20)]
    runs: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    /// A name,auc table, or a full cohort table to score without running models.
    #[arg(long)]
    aucs: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value = "markdown")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value = "markdown")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))
}

fn parse_fractions(s: &str) -> Result<(f64, f64, f64)> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse().map_err(|_| Error::Usage(format!("bad fraction '{x}'"))))
        .collect::<Result<_>>()?;
    match v[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::Usage(format!("--split needs three fractions, got '{s}'"))),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let profiles = parse_profiles(&a.profile_set)?;
    let scheme = infer_scheme(&profiles)?;
    let fractions = parse_fractions(&a.split)?;
    let records = synth_corpus(&profiles, scheme, a.n, a.length, a.seed)?;
    let dir = out_dir(a.out_dir);
    std::fs::create_dir_all(dir.join("records"))?;
    let mut entries = Vec::with_capacity(records.len());
    for r in &records {
        let rel = PathBuf::from("records").join(format!("{}.ecgb", r.record_id));
        save_record(r, &dir.join(&rel))?;
        entries.push(ManifestEntry::from_record(r, rel));
    }
    let manifest = split_dataset(&Manifest::new(entries, &dir)?, fractions, scheme, a.seed)?;
    let path = dir.join("manifest.csv");
    manifest.save(&path)?;
    let count = |s| manifest.split_entries(s).len();
    println!(
        "wrote {} {scheme} records ({} train, {} val, {} test) and {}",
        records.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        path.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let arch: Architecture = a.arch.parse()?;
    let scheme: Scheme = a.task.parse()?;
    let text = a.config.as_deref().map(read_text).transpose()?.unwrap_or_default();
    let mut config = TrainConfig::parse(&text)?;
    // The loss follows the task unless the config names one.
    if !text.lines().any(|l| l.trim_start().starts_with("loss")) {
        config.loss_kind = LossKind::for_scheme(scheme);
    }
    let manifest = Manifest::load(&a.manifest)?;
    let train = manifest.load_split(Split::Train, scheme)?;
    let val = manifest.load_split(Split::Val, scheme)?;
    let first = &train[0];
    let mut spec = ArchitectureSpec::new(arch)
        .with_samples(first.n_samples)
        .with_outputs(scheme.n_outputs(), scheme.head())
        .with_demographics(a.use_demographics)
        .with_seed(config.seed);
    spec.input_leads = first.n_leads;
    let model = models::build(&spec)?;
    let (best, history) = fit_with(&model, &train, &val, &config, |e| {
        eprintln!("epoch {} train {:.4} val {:.4} ({:.0} ms)", e.epoch, e.train_loss, e.val_loss, e.wall_ms);
    })?;
    let path = a
        .out_model
        .unwrap_or_else(|| out_dir(None).join(format!("{}.ecgm", arch.as_str().to_ascii_lowercase())));
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d)?;
    }
    models::io::save(&best, &path)?;
    let history_path = path.with_extension("history.csv");
    history.save(&history_path)?;
    println!(
        "best epoch {} val loss {:.6}; wrote {} and {}",
        history.best_epoch,
        history.best_val_loss(),
        path.display(),
        history_path.display()
    );
    Ok(())
}

fn model_scheme(model: &ModelBundle) -> Result<Scheme> {
    Scheme::ALL
        .into_iter()
        .find(|s| s.n_outputs() == model.spec.n_outputs && s.head() == model.spec.head)
        .ok_or_else(|| Error::Usage(format!("model outputs match no task: {} {:?}", model.spec.n_outputs, model.spec.head)))
}

fn eval(a: EvalArgs) -> Result<()> {
    let split: Split = a.split.parse()?;
    let model = models::io::load(&a.model)?;
    let scheme = model_scheme(&model)?;
    let records = Manifest::load(&a.manifest)?.load_split(split, scheme)?;
    let (scores, targets) = predict(&model, &records, 32)?;
    let auc = ecgnet::metrics::macro_auc(&scores, &targets, scheme)?;
    let label = if scheme == Scheme::Binary { "auc" } else { "macro_auc" };
    println!("{label} {auc:.4} on {} {split} records ({scheme})", records.len());
    if scheme != Scheme::Binary {
        for (class, v) in ecgnet::metrics::per_class_auc(&scores, &targets, scheme)? {
            println!("  {class} {v:.4}");
        }
    }
    Ok(())
}

fn parse_shape(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Usage(format!("--input-shape wants LEADSxSAMPLES, got '{s}'"));
    let (l, n) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((l.trim().parse().map_err(|_| bad())?, n.trim().parse().map_err(|_| bad())?))
}

fn load_or_build(item: &str, shape: (usize, usize)) -> Result<(String, ModelBundle)> {
    let path = Path::new(item);
    if path.is_file() {
        let m = models::io::load(path)?;
        let name = path.file_stem().map_or(item.to_string(), |s| s.to_string_lossy().into_owned());
        return Ok((name, m));
    }
    let arch: Architecture = item.parse()?;
    let mut spec = ArchitectureSpec::new(arch).with_samples(shape.1);
    spec.input_leads = shape.0;
    Ok((arch.as_str().to_string(), models::build(&spec)?))
}

fn emit(report: &CohortReport, format: &str, out: Option<&Path>) -> Result<()> {
    let text = render_report(report, format.parse::<ReportFormat>()?);
    match out {
        Some(p) => write_report(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn is_cohort_table(text: &str) -> bool {
    let header = text.lines().find(|l| !l.trim_start().starts_with('#')).unwrap_or("");
    let cols: Vec<String> = header.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
    ["params_millions", "inference_ms", "peak_memory_mb"].iter().all(|c| cols.iter().any(|h| h == c))
}

fn bench(a: BenchArgs) -> Result<()> {
    let aucs_path = a
        .aucs
        .as_deref()
        .ok_or_else(|| Error::Usage("bench needs --aucs with a name,auc table".into()))?;
    let text = read_text(aucs_path)?;
    if a.models.is_empty() && is_cohort_table(&text) {
        let report = report_from_table(read_cohort_table(&text)?, a.lambda, &aucs_path.display().to_string())?;
        return emit(&report, &a.format, a.out.as_deref());
    }
    let aucs: HashMap<String, f64> = read_auc_table(&text)?
        .into_iter()
        .map(|(n, v)| (n.to_ascii_lowercase(), v))
        .collect();
    let shape = parse_shape(&a.input_shape)?;
    let built = a
        .models
        .iter()
        .map(|m| load_or_build(m.trim(), shape))
        .collect::<Result<Vec<_>>>()?;
    let cohort = built
        .iter()
        .map(|(name, m)| {
            let auc = aucs
                .get(&name.to_ascii_lowercase())
                .ok_or_else(|| Error::Usage(format!("no auc for '{name}' in {}", aucs_path.display())))?;
            Ok((name.clone(), m, *auc))
        })
        .collect::<Result<Vec<_>>>()?;
    let protocol = BenchProtocol {
        warmup: a.warmup,
        runs: a.runs,
        ..BenchProtocol::default()
    };
    let report = benchmark_cohort(&cohort, &protocol, a.lambda)?;
    emit(&report, &a.format, a.out.as_deref())
}

fn score(a: ScoreArgs) -> Result<()> {
    let models = read_cohort_table(&read_text(&a.table)?)?;
    let rows = score_cohort(&EfficiencyInputs { models, lambda: a.lambda })?;
    let mut w = csv::Writer::from_writer(std::io::stdout());
    let csv_err = |e: csv::Error| Error::Io(e.into());
    w.write_record(["name", "norm_params", "norm_time", "norm_memory", "resource_cost", "efficiency_score"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.name,
            r.norm_params.to_string(),
            r.norm_time.to_string(),
            r.norm_memory.to_string(),
            r.resource_cost.to_string(),
            r.efficiency_score.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let models = read_cohort_table(&read_text(&a.table)?)?;
    let report = report_from_table(models, a.lambda, &a.table.display().to_string())?;
    emit(&report, &a.format, a.out.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Score(a) => score(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
