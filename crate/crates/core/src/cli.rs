//! The `boostadapter` command line: `run`, `simulate`, `gen` and `inspect`.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags or flag values),
//! 2 on data errors (unreadable or malformed files, dimension mismatches,
//! impossible generator settings).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::Error;
use crate::io::{
    read_class_bank, read_stream, write_class_bank, write_report, ReportOptions, StreamHeader,
    StreamWriter,
};
use crate::lab::bounds::RISK_MODES;
use crate::lab::{
    bound_experiment, prop1_agreement, BoundGrid, ClusterSpec, GdParams, ShiftStreamSpec,
    ShiftWorld,
};
use crate::pipeline::{CacheMode, Mode, RunConfig, StreamRun};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "boostadapter",
    version,
    about = "Training-free test-time adaptation over embedding streams"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Adapt online over an EMBS stream and write a JSON report.
    Run(RunArgs),
    /// Run a synthetic experiment.
    #[command(subcommand)]
    Simulate(Experiment),
    /// Write a synthetic shifted stream as an EMBS file.
    Gen(GenArgs),
    /// Summarize an EMBS file.
    Inspect(InspectArgs),
}

fn mode_parser() -> impl TypedValueParser<Value = Mode> {
    PossibleValuesParser::new([
        "boostadapter",
        "historical-only",
        "boosting-only",
        "clip-only",
    ])
    .map(|s| s.parse::<Mode>().expect("listed value"))
}

fn cache_mode_parser() -> impl TypedValueParser<Value = CacheMode> {
    PossibleValuesParser::new(["joint", "independent"])
        .map(|s| s.parse::<CacheMode>().expect("listed value"))
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Input EMBS stream
    #[arg(long)]
    pub stream: PathBuf,
    /// Class-bank manifest (JSON).
    #[arg(long)]
    pub bank: PathBuf,
    /// Report path.
    #[arg(long)]
    pub out: PathBuf,
    /// Affinity weight.
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    /// Affinity sharpness.
    #[arg(long, default_value_t = 5.0)]
    pub beta: f64,
    /// Softmax temperature for entropies.
    #[arg(long, default_value_t = 0.01)]
    pub temp: f64,
    /// Weight of the zero-shot logits.
    #[arg(long, default_value_t = 100.0)]
    pub clip_scale: f64,
    /// Fraction of views kept as boosting samples, in (0, 1].
    #[arg(long, default_value_t = 0.1)]
    pub percentile: f64,
    /// Per-class cache capacity.
    #[arg(long, default_value_t = 3)]
    pub shots: usize,
    #[arg(long, default_value = "boostadapter", value_parser = mode_parser())]
    pub mode: Mode,
    #[arg(long, default_value = "joint", value_parser = cache_mode_parser())]
    pub cache_mode: CacheMode,
    /// Drop views whose cache and zero-shot predictions disagree.
    #[arg(long)]
    pub consistency: bool,
    /// Admit historical samples with entropy at most this fraction of ln N, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub entropy_gate: f64,
    /// Include per-sample predictions in the report.
    #[arg(long)]
    pub per_sample: bool,
    /// Insert each sample into the cache after predicting it.
    #[arg(long)]
    pub insert_after: bool,
    /// Include the final cache contents in the report.
    #[arg(long)]
    pub dump_cache: bool,
    /// With --dump-cache, include the cached embeddings.
    #[arg(long, requires = "dump_cache")]
    pub dump_cache_embeddings: bool,
}

impl RunArgs {
    pub fn config(&self) -> RunConfig {
        RunConfig {
            alpha: self.alpha,
            beta: self.beta,
            temperature: self.temp,
            clip_scale: self.clip_scale,
            percentile: self.percentile,
            shots: self.shots,
            mode: self.mode,
            cache_mode: self.cache_mode,
            consistency_filter: self.consistency,
            entropy_gate: self.entropy_gate,
            insert_after: self.insert_after,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Experiment {
    /// Linear classifier trained by gradient descent vs the class-balanced cache classifier.
    Prop1(Prop1Args),
    /// Excess error of the historical cache over n_t, with and without boosting.
    Bounds(BoundsArgs),
}

#[derive(Debug, Args)]
pub struct Prop1Args {
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    /// Training points per class.
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Fresh test points.
    #[arg(long, default_value_t = 1000)]
    pub test: usize,
    /// First seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of consecutive seeds.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// JSON output path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Geometry of the synthetic shifted stream.
#[derive(Debug, Clone, Args)]
pub struct WorldArgs {
    /// Number of classes N.
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Embedding dimension C (at least N + 3).
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Augmented views per record.
    #[arg(long, default_value_t = 16)]
    pub views: usize,
    #[arg(long, default_value_t = 0.05)]
    pub label_noise: f64,
    /// Posterior sharpness.
    #[arg(long, default_value_t = 10.0)]
    pub kappa: f64,
    /// Largest blend towards a wrong class, below 0.5.
    #[arg(long, default_value_t = 0.4)]
    pub t_max: f64,
    /// Target neighborhood radius.
    #[arg(long, default_value_t = 0.3)]
    pub r_t: f64,
    /// Boosting view radius.
    #[arg(long, default_value_t = 0.075)]
    pub r_b: f64,
    /// Style shift of test embeddings.
    #[arg(long, default_value_t = 0.5)]
    pub style: f64,
    /// Style bias of the class bank.
    #[arg(long, default_value_t = 0.3)]
    pub bank_bias: f64,
    /// Class-independent text offset.
    #[arg(long, default_value_t = 20.0)]
    pub text_gap: f64,
    #[arg(long, default_value_t = 0.7)]
    pub clutter_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub clutter_max: f64,
    /// Weight of the nuisance direction inside the clutter.
    #[arg(long, default_value_t = 2.0)]
    pub clutter_spread: f64,
    /// Fraction of records without clutter.
    #[arg(long, default_value_t = 0.02)]
    pub clean_fraction: f64,
    /// Smallest clutter fraction a view keeps.
    #[arg(long, default_value_t = 0.0)]
    pub view_clutter_min: f64,
    /// Largest clutter fraction a view keeps.
    #[arg(long, default_value_t = 1.0)]
    pub view_clutter_max: f64,
}

impl WorldArgs {
    pub fn spec(&self, records: usize, seed: u64) -> ShiftStreamSpec {
        ShiftStreamSpec {
            n_classes: self.classes,
            dim: self.dim,
            views: self.views,
            records,
            seed,
            label_noise: self.label_noise,
            kappa: self.kappa,
            t_max: self.t_max,
            r_t: self.r_t,
            r_b: self.r_b,
            style: self.style,
            bank_bias: self.bank_bias,
            text_gap: self.text_gap,
            clutter: (self.clutter_min, self.clutter_max),
            clutter_spread: self.clutter_spread,
            clean_fraction: self.clean_fraction,
            view_clutter: (self.view_clutter_min, self.view_clutter_max),
        }
    }
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub world: WorldArgs,
    /// Number of seeds (0, 1, ...), at least 5.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    /// Adaptation sample counts at which the cache is evaluated.
    #[arg(long, value_delimiter = ',', default_value = "50,200,800")]
    pub n_t: Vec<usize>,
    /// Shot capacities.
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub shots: Vec<usize>,
    /// Held-out records per seed.
    #[arg(long, default_value_t = 400)]
    pub n_eval: usize,
    /// Fraction of views kept as boosting samples.
    #[arg(long, default_value_t = 0.25)]
    pub percentile: f64,
    /// CSV output path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub world: WorldArgs,
    #[arg(long, default_value_t = 200)]
    pub records: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// EMBS output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the class bank manifest here (weights go next to it as .f32).
    #[arg(long)]
    pub bank: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// EMBS file to summarize
    #[arg(long)]
    pub stream: PathBuf,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Simulate(Experiment::Prop1(a)) => cmd_prop1(&a),
        Command::Simulate(Experiment::Bounds(a)) => cmd_bounds(&a),
        Command::Gen(a) => cmd_gen(&a),
        Command::Inspect(a) => cmd_inspect(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn usage(e: Error) -> Failure {
    match e {
        Error::Config(msg) => Failure::Usage(msg),
        other => Failure::Usage(other.to_string()),
    }
}

fn cmd_run(a: &RunArgs) -> CmdResult {
    let cfg = a.config();
    cfg.validate().map_err(usage)?;
    let bank = read_class_bank(&a.bank)?;
    let reader = read_stream(&a.stream)?;
    let h = *reader.header();
    if h.dim as usize != bank.dim() {
        return Err(Error::Format(format!(
            "stream has C = {} but the class bank has C = {}",
            h.dim,
            bank.dim()
        ))
        .into());
    }
    if h.n_classes as usize != bank.n_classes() {
        return Err(Error::Format(format!(
            "stream declares N = {} but the class bank has {} classes",
            h.n_classes,
            bank.n_classes()
        ))
        .into());
    }
    let mut run = StreamRun::new(&bank, cfg)?;
    for rec in reader {
        run.observe(&rec?)?;
    }
    let (report, cache) = run.finish()?;
    let dump = a.dump_cache.then(|| cache.dump(a.dump_cache_embeddings));
    write_report(
        &a.out,
        &report,
        ReportOptions {
            per_sample: a.per_sample,
            cache: dump.as_deref(),
        },
    )?;
    match report.top1 {
        Some(t) => println!(
            "top1: {t:.4} ({} of {} records labeled)",
            report.n_labeled, report.n
        ),
        None => println!("top1: n/a (no labeled records among {})", report.n),
    }
    Ok(())
}

#[derive(Serialize)]
struct Prop1Run {
    seed: u64,
    agreement: f64,
}

#[derive(Serialize)]
struct Prop1Report {
    experiment: &'static str,
    n_classes: usize,
    dim: usize,
    sigma: f64,
    n_train_per_class: usize,
    n_test: usize,
    lr: f64,
    steps: usize,
    runs: Vec<Prop1Run>,
    agreement: f64,
    min_agreement: f64,
}

fn cmd_prop1(a: &Prop1Args) -> CmdResult {
    if a.seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let params = GdParams {
        lr: a.lr,
        steps: a.steps,
    };
    if a.steps == 0 || !a.lr.is_finite() || a.lr <= 0.0 || a.per_class == 0 || a.test == 0 {
        return Err(Failure::Usage(
            "--steps, --lr, --per-class and --test must be positive".into(),
        ));
    }
    let mut runs = Vec::new();
    for seed in a.seed..a.seed + a.seeds {
        let spec = ClusterSpec::new(a.classes, a.dim, a.sigma, seed)?;
        let agreement = prop1_agreement(&spec, a.per_class, a.test, params)?;
        runs.push(Prop1Run { seed, agreement });
    }
    let mean = runs.iter().map(|r| r.agreement).sum::<f64>() / runs.len() as f64;
    let min = runs
        .iter()
        .map(|r| r.agreement)
        .fold(f64::INFINITY, f64::min);
    let report = Prop1Report {
        experiment: "prop1",
        n_classes: a.classes,
        dim: a.dim,
        sigma: a.sigma,
        n_train_per_class: a.per_class,
        n_test: a.test,
        lr: a.lr,
        steps: a.steps,
        runs,
        agreement: mean,
        min_agreement: min,
    };
    let mut s = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    s.push('\n');
    std::fs::write(&a.out, s)?;
    println!("agreement: {mean:.4} (min {min:.4})");
    Ok(())
}

fn cmd_bounds(a: &BoundsArgs) -> CmdResult {
    let cfg = RunConfig {
        percentile: a.percentile,
        ..RunConfig::default()
    };
    cfg.validate().map_err(usage)?;
    let grid = BoundGrid {
        n_t: a.n_t.clone(),
        shots: a.shots.clone(),
        seeds: (0..a.seeds as u64).collect(),
        n_eval: a.n_eval,
    };
    if a.seeds < 5 {
        return Err(Failure::Usage(format!(
            "--seeds must be at least 5, got {}",
            a.seeds
        )));
    }
    let table = bound_experiment(&a.world.spec(0, 0), &grid, &cfg)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    table.write_csv(&mut w)?;
    w.flush()?;
    println!(
        "{:>5} {:>3} {:>16} {:>12} {:>8}",
        "n_t", "k", "mode", "excess_err", "top1"
    );
    for &k in &grid.shots {
        for &n_t in &grid.n_t {
            for mode in RISK_MODES {
                println!(
                    "{n_t:>5} {k:>3} {:>16} {:>12.4} {:>8.4}",
                    mode.as_str(),
                    table.mean_excess(n_t, k, mode).unwrap_or(f64::NAN),
                    table.mean_top1(n_t, k, mode).unwrap_or(f64::NAN)
                );
            }
        }
    }
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> CmdResult {
    let spec = a.world.spec(a.records, a.seed);
    let world = ShiftWorld::new(&spec)?;
    let records = world.stream(spec.records, 1)?;
    let header = StreamHeader {
        dim: spec.dim as u32,
        n_classes: spec.n_classes as u32,
        record_count: records.len() as u64,
        truths_present: true,
    };
    let mut w = StreamWriter::new(BufWriter::new(File::create(&a.out)?), header)?;
    for r in &records {
        w.write_record(&r.record)?;
    }
    let bytes = w.finish()?;
    if let Some(bank) = &a.bank {
        write_class_bank(bank, world.bank())?;
    }
    println!(
        "wrote {} records (C = {}, N = {}, {} views each, {bytes} bytes) to {}",
        records.len(),
        spec.dim,
        spec.n_classes,
        spec.views,
        a.out.display()
    );
    Ok(())
}

fn cmd_inspect(a: &InspectArgs) -> CmdResult {
    let mut reader = read_stream(&a.stream)?;
    let h = *reader.header();
    let mut labeled = 0u64;
    let mut views = (usize::MAX, 0usize);
    let mut count = 0u64;
    for rec in reader.by_ref() {
        let rec = rec?;
        count += 1;
        labeled += rec.truth.is_some() as u64;
        views = (views.0.min(rec.views.len()), views.1.max(rec.views.len()));
    }
    println!("format:         EMBS v1");
    println!("C (dim):        {}", h.dim);
    println!("N (classes):    {}", h.n_classes);
    println!("record_count:   {}", h.record_count);
    println!(
        "truths flag:    {}",
        if h.truths_present { "set" } else { "clear" }
    );
    println!("{count} records");
    if count > 0 {
        println!("labeled:        {labeled} of {count}");
        if views.0 == views.1 {
            println!("views/record:   {}", views.0);
        } else {
            println!("views/record:   {}..{}", views.0, views.1);
        }
    }
    println!("norm violations (renormalized): {}", reader.renormalized());
    Ok(())
}
