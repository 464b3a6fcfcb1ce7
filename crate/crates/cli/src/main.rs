use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use spinn_core::flops::{ArchSpec, FlopsComparison};
use spinn_core::model::{load_checkpoint, Arch};
use spinn_core::pde::{PdeProblem, ProblemKind};
use spinn_core::selftest::run_selftest;
use spinn_core::tensor::{write_grid, AxisGrid, GridHeader};
use spinn_core::train::{
    benchmark_scaling, loglog_slope, reference_field, relative_l2, train_with, write_csv, BenchSettings,
    Progress, TrainConfig,
};
use spinn_core::Error;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Overrides the output directory of `train`, `bench` and `flops` when no
/// `--out-dir` flag is given.
const OUTPUT_DIR_ENV: &str = "SPINN_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "spinn", version, about = "Separable physics-informed neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its report, curves and checkpoint.
    Train(TrainArgs),
    /// Relative L2 error of a checkpoint against the reference solution.
    Eval(EvalArgs),
    /// Time training iterations across lattice resolutions.
    Bench(BenchArgs),
    /// Print the operation-count table for forward and derivative passes.
    Flops(FlopsArgs),
    /// Write a checkpoint's field on a lattice as a binary grid file.
    ExportGrid(ExportArgs),
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<ProblemKind>,
    #[arg(long)]
    arch: Option<Arch>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chunk_points: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Only print the final summary.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the problem recorded in the checkpoint.
    #[arg(long)]
    problem: Option<ProblemKind>,
    /// Evaluation lattice resolution; defaults to the training resolution.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ArchChoice {
    Spinn,
    Pinn,
    Both,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "helmholtz3d")]
    problem: ProblemKind,
    #[arg(long, value_enum, default_value = "both")]
    arch: ArchChoice,
    /// Resolutions per axis, comma separated and ascending.
    #[arg(long, value_delimiter = ',', default_value = "8,16,24,32")]
    n: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = 20)]
    measured: usize,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    chunk_points: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Markdown,
    Json,
}

#[derive(Args)]
struct FlopsArgs {
    /// Default architectures on a 90³ lattice (same as omitting --n).
    #[arg(long)]
    defaults: bool,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FieldChoice {
    Prediction,
    Reference,
    Error,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum, default_value = "prediction")]
    field: FieldChoice,
    #[arg(long)]
    out: PathBuf,
}

/// Failures mapped to exit codes: 1 usage/input, 2 numerical, 3 selftest.
enum Failure {
    Usage(String),
    Numerical(String),
    Selftest,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
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
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Flops(a) => cmd_flops(a),
        Command::ExportGrid(a) => cmd_export(a),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Selftest) => ExitCode::from(3),
    }
}

fn output_dir(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let (mut cfg, source) = match &a.config {
        Some(p) => (TrainConfig::load(p)?, Some(fs::read_to_string(p)?)),
        None => (TrainConfig::default(), None),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f.clone() { cfg.$f = v; })* };
    }
    set!(problem, arch, n, rank, hidden, lr, iterations, eval_every, seed, chunk_points);
    if let Some(dir) = output_dir(a.out_dir.clone()) {
        cfg.out_dir = Some(dir);
    }
    let quiet = a.quiet;
    let (report, _) = train_with(&cfg, &mut |p| {
        if quiet {
            return;
        }
        match p {
            Progress::Error(e) => eprintln!("iter {:>6}  rel-L2 {:.4e}", e.iteration, e.relative_l2),
            Progress::Loss(l) if l.iteration % 100 == 0 => eprintln!("iter {:>6}  loss {:.4e}", l.iteration, l.total),
            Progress::Loss(_) => {}
        }
    })?;
    if let (Some(dir), Some(text)) = (&report.config.out_dir, source) {
        fs::write(dir.join("config.source.toml"), text)?;
    }
    let summary = serde_json::json!({
        "problem": report.config.problem,
        "arch": report.config.arch,
        "n": report.config.n,
        "iterations": report.config.iterations,
        "num_params": report.num_params,
        "initial_loss": report.initial_loss(),
        "final_loss": report.final_loss(),
        "relative_l2": report.final_error(),
        "median_ms_per_iter": report.timing.map(|t| t.median_ms),
        "memory_bytes": report.memory_bytes,
        "diverged": report.diverged,
        "checkpoint": report.checkpoint,
    });
    println!("{}", to_json(&summary));
    if report.diverged {
        return Err(Failure::Numerical(format!("loss diverged at iteration {}", report.losses.last().unwrap().iteration)));
    }
    Ok(())
}

/// Problem, resolution and reference settings for a saved checkpoint.
fn checkpoint_context(path: &Path, problem: Option<ProblemKind>, n: Option<usize>) -> Result<(TrainConfig, spinn_core::model::AnyModel, usize), Failure> {
    let (manifest, model) = load_checkpoint(path)?;
    let mut cfg = match &manifest.config {
        Some(text) => TrainConfig::from_toml(text)?,
        None => TrainConfig { arch: manifest.arch, ..Default::default() },
    };
    if manifest.config.is_none() && problem.is_none() {
        return Err(Failure::Usage("checkpoint has no recorded problem; pass --problem".into()));
    }
    if let Some(p) = problem {
        cfg.problem = p;
    }
    if let Some(n) = n {
        cfg.n = n;
    }
    Ok((cfg, model, manifest.iteration))
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let (cfg, model, iteration) = checkpoint_context(&a.checkpoint, a.problem, a.n)?;
    let problem = cfg.problem()?;
    let grid = AxisGrid::uniform(&problem.bounds(), cfg.n)?;
    let reference = reference_field(&problem, &grid, &cfg.reference)?;
    let err = relative_l2(&model.predict_grid(&grid)?, &reference)?;
    let out = serde_json::json!({
        "checkpoint": a.checkpoint,
        "problem": cfg.problem,
        "arch": model.arch(),
        "iteration": iteration,
        "n": cfg.n,
        "relative_l2": err,
    });
    println!("{}", to_json(&out));
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    arch: Arch,
    n: usize,
    points: usize,
    ms_per_iter: f64,
    peak_bytes: usize,
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    let problem = PdeProblem::new(a.problem, Default::default())?;
    let archs = match a.arch {
        ArchChoice::Spinn => vec![Arch::Spinn],
        ArchChoice::Pinn => vec![Arch::Pinn],
        ArchChoice::Both => vec![Arch::Spinn, Arch::Pinn],
    };
    let mut rows = Vec::new();
    for arch in archs {
        let mut s = BenchSettings::for_arch(arch);
        s.warmup = a.warmup;
        s.measured = a.measured;
        if let Some(r) = a.rank {
            s.rank = r;
        }
        if let Some(c) = a.chunk_points {
            s.chunk_points = c;
        }
        let table = benchmark_scaling(&problem, arch, &a.n, &s)?;
        for r in &table {
            eprintln!("{arch} n={:<4} {:>10.2} ms/iter {:>14} bytes", r.n, r.ms_per_iter, r.peak_bytes);
        }
        if table.len() > 1 {
            let xs: Vec<f64> = table.iter().map(|r| r.n as f64).collect();
            let ys: Vec<f64> = table.iter().map(|r| r.ms_per_iter).collect();
            eprintln!("{arch} log-log slope of ms/iter vs n: {:.2}", loglog_slope(&xs, &ys));
        }
        rows.extend(table.into_iter().map(|r| BenchRow { arch, n: r.n, points: r.points, ms_per_iter: r.ms_per_iter, peak_bytes: r.peak_bytes }));
    }
    let mut w = BufWriter::new(io::stdout().lock());
    writeln!(w, "arch,n,points,ms_per_iter,peak_bytes")?;
    for r in &rows {
        writeln!(w, "{},{},{},{},{}", r.arch, r.n, r.points, r.ms_per_iter, r.peak_bytes)?;
    }
    w.flush()?;
    if let Some(dir) = output_dir(a.out_dir) {
        fs::create_dir_all(&dir)?;
        write_csv(&dir.join("scaling.csv"), &rows)?;
        fs::write(dir.join("scaling.json"), to_json(&rows))?;
    }
    Ok(())
}

fn cmd_flops(a: FlopsArgs) -> Result<(), Failure> {
    let n = if a.defaults { 90 } else { a.n.unwrap_or(90) };
    let cmp = FlopsComparison::new(ArchSpec::default_spinn(n), ArchSpec::default_pinn(n))?;
    let md = cmp.to_markdown();
    let json = to_json(&cmp);
    match a.format {
        Format::Markdown => print!("{md}"),
        Format::Json => println!("{json}"),
    }
    if let Some(dir) = output_dir(a.out_dir) {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("flops.md"), md)?;
        fs::write(dir.join("flops.json"), json)?;
    }
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<(), Failure> {
    let (cfg, model, _) = checkpoint_context(&a.checkpoint, None, a.n)?;
    let problem = cfg.problem()?;
    let grid = AxisGrid::uniform(&problem.bounds(), cfg.n)?;
    let (name, field) = match a.field {
        FieldChoice::Prediction => ("prediction", model.predict_grid(&grid)?),
        FieldChoice::Reference => ("reference", reference_field(&problem, &grid, &cfg.reference)?),
        FieldChoice::Error => {
            let p = model.predict_grid(&grid)?;
            let r = reference_field(&problem, &grid, &cfg.reference)?;
            ("error", spinn_core::tensor::ew(spinn_core::tensor::EwOp::Sub, &p, &r)?)
        }
    };
    let header = GridHeader { shape: grid.shape(), bounds: grid.bounds().to_vec(), field: format!("{}/{name}", problem.name()) };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(&a.out)?;
    write_grid(BufWriter::new(file), &header, &field)?;
    println!("{}", to_json(&serde_json::json!({ "out": a.out, "header": header })));
    Ok(())
}

fn cmd_selftest() -> Result<(), Failure> {
    let results = run_selftest();
    for r in &results {
        println!("{} {} ({})", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::Selftest)
    }
}
