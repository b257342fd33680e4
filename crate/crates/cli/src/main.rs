use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use csmr::bench::{self, BenchConfig, Method};
use csmr::io::{self, ModelFile, TruthFile};
use csmr::mixture::{c_step, e_step, fit_csmr, CsmrConfig};
use csmr::regress::LambdaRule;
use csmr::select::{select_k_bic, select_k_cv};
use csmr::sim::{self, SimulationSpec};
use csmr::{metrics, Error};
use serde_json::json;

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_ALGORITHM: u8 = 4;
const EXIT_BENCH_DEGRADED: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "csmr", version, about = "Sparse mixture regression: simulate, fit, select K, evaluate, benchmark")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Base seed for every random draw.
    #[arg(long, global = true, env = "CSMR_SEED", default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (data.csv plus truth.json).
    Simulate(SimulateArgs),
    /// Fit a K-component model and write it as JSON.
    Fit(FitArgs),
    /// Choose K by modified BIC or cross-validation.
    SelectK(SelectArgs),
    /// Score a fitted model against simulation truth.
    Evaluate(EvaluateArgs),
    /// Run the simulation benchmark over cases and repetitions.
    Benchmark(BenchArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Predefined scenario 1..=12; explicit flags below override its fields.
    #[arg(long)]
    case: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    m0: Option<usize>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum RuleArg {
    Min,
    OneSe,
}

#[derive(Args, Debug, Clone)]
struct FitFlags {
    #[arg(long, default_value_t = 10)]
    cv_folds: usize,
    #[arg(long, default_value_t = 100)]
    n_lambda: usize,
    #[arg(long, value_enum, default_value_t = RuleArg::Min)]
    lambda_rule: RuleArg,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 20)]
    refit_iters: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long)]
    n_top: Option<usize>,
    #[arg(long)]
    min_cluster_size: Option<usize>,
    /// Skip the support-restricted refit after each M-step.
    #[arg(long)]
    no_refit: bool,
}

impl FitFlags {
    fn config(&self, seed: u64) -> CsmrConfig {
        CsmrConfig {
            folds: self.cv_folds,
            n_lambda: self.n_lambda,
            lambda_rule: match self.lambda_rule {
                RuleArg::Min => LambdaRule::Min,
                RuleArg::OneSe => LambdaRule::OneSe,
            },
            max_iter: self.max_iter,
            tol_em: self.tol,
            n_top: self.n_top,
            min_cluster_size: self.min_cluster_size,
            refit_iters: self.refit_iters,
            n_restarts: self.restarts,
            refit: !self.no_refit,
            ..CsmrConfig::default()
        }
        .with_seed(seed)
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    /// CSV with columns x1..xP, y and optionally z_true.
    data: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    model_out: PathBuf,
    #[command(flatten)]
    flags: FitFlags,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Bic,
    Cv,
}

#[derive(Args, Debug)]
struct SelectArgs {
    data: PathBuf,
    /// Candidates as `lo:hi` or a comma list.
    #[arg(long, value_parser = parse_k_grid)]
    k_grid: KGrid,
    #[arg(long, value_enum, default_value_t = ModeArg::Bic)]
    mode: ModeArg,
    /// Outer folds of the CV selector.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: FitFlags,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Dataset with a z_true column.
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Case numbers as a comma list, ranges like `7-9`, or `all`.
    #[arg(long, value_parser = parse_cases, default_value = "all")]
    cases: Cases,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    no_baselines: bool,
    #[command(flatten)]
    flags: FitFlags,
}

#[derive(Clone, Debug)]
struct KGrid(Vec<usize>);

#[derive(Clone, Debug)]
struct Cases(Vec<usize>);

fn parse_k_grid(s: &str) -> Result<KGrid, String> {
    let grid: Vec<usize> = if let Some((lo, hi)) = s.split_once(':') {
        let lo: usize = lo.trim().parse().map_err(|_| format!("bad lower bound in {s:?}"))?;
        let hi: usize = hi.trim().parse().map_err(|_| format!("bad upper bound in {s:?}"))?;
        (lo..=hi).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| format!("bad K value {t:?}")))
            .collect::<Result<_, _>>()?
    };
    if grid.is_empty() || grid.contains(&0) {
        return Err("K grid must be nonempty with every K >= 1".into());
    }
    Ok(KGrid(grid))
}

fn parse_cases(s: &str) -> Result<Cases, String> {
    if s == "all" {
        return Ok(Cases((1..=12).collect()));
    }
    let mut cases = Vec::new();
    for part in s.split(',') {
        let bounds = match part.split_once('-') {
            Some((lo, hi)) => (lo.trim().parse::<usize>(), hi.trim().parse::<usize>()),
            None => (part.trim().parse(), part.trim().parse()),
        };
        match bounds {
            (Ok(lo), Ok(hi)) if (1..=12).contains(&lo) && (lo..=12).contains(&hi) => cases.extend(lo..=hi),
            _ => return Err(format!("cases must lie in 1..=12, got {part:?}")),
        }
    }
    Ok(Cases(cases))
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => EXIT_IO,
            Error::Parse { .. }
            | Error::Json(_)
            | Error::InvalidArgument(_)
            | Error::InvalidSpec(_)
            | Error::DimensionMismatch(_) => EXIT_USAGE,
            _ => EXIT_ALGORITHM,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure {
        code: EXIT_IO,
        message: format!("cannot create {}: {e}", dir.display()),
    })
}

fn read_data(path: &Path) -> Result<io::Dataset, Failure> {
    io::read_dataset(path).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

fn simulate(args: &SimulateArgs, seed: u64) -> Result<(), Failure> {
    let base = match args.case {
        Some(c) => sim::case_spec(c)?,
        None => SimulationSpec::default(),
    };
    let spec = SimulationSpec {
        n: args.n.unwrap_or(base.n),
        p: args.p.unwrap_or(base.p),
        k: args.k.unwrap_or(base.k),
        sigma: args.sigma.unwrap_or(base.sigma),
        m0: args.m0.unwrap_or(base.m0),
        a: args.a.unwrap_or(base.a),
        b: args.b.unwrap_or(base.b),
        seed,
    };
    let d = sim::generate(&spec)?;
    ensure_dir(&args.out)?;
    io::write_dataset(&args.out.join("data.csv"), &d.x, &d.y, Some(&d.z_true))?;
    io::write_json(&args.out.join("truth.json"), &TruthFile::from_data(&d))?;
    println!("{}", serde_json::to_string(&spec).expect("spec serializes"));
    Ok(())
}

fn fit(args: &FitArgs, seed: u64) -> Result<(), Failure> {
    if args.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let data = read_data(&args.data)?;
    let cfg = args.flags.config(seed);
    let result = fit_csmr(data.x.view(), data.y.view(), args.k, &cfg)?;
    let config = serde_json::to_value(&cfg).expect("config serializes");
    io::write_json(&args.model_out, &ModelFile::from_fit(&result, seed, config))?;
    let supports: Vec<usize> = result.model.supports().iter().map(Vec::len).collect();
    println!(
        "K={} iterations={} converged={} sizes={:?} support_sizes={:?}",
        args.k, result.iterations, result.converged, result.partition.counts, supports
    );
    Ok(())
}

fn select_k(args: &SelectArgs, seed: u64) -> Result<(), Failure> {
    let data = read_data(&args.data)?;
    let cfg = args.flags.config(seed);
    let grid = &args.k_grid.0;
    let report = match args.mode {
        ModeArg::Bic => select_k_bic(data.x.view(), data.y.view(), grid, &cfg, seed)?,
        ModeArg::Cv => select_k_cv(data.x.view(), data.y.view(), grid, args.folds, args.reps, &cfg, seed)?,
    };
    let doc = json!({
        "schema": "csmr.kselect/1",
        "version": io::VERSION,
        "config": cfg,
        "report": report,
    });
    io::write_json(&args.out, &doc)?;
    println!("chosen K = {}", report.chosen_k);
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<(), Failure> {
    let data = read_data(&args.data)?;
    let z = data
        .z_true
        .as_ref()
        .ok_or_else(|| usage(format!("{} has no z_true column", args.data.display())))?;
    let file: ModelFile = io::read_json(&args.model)?;
    let model = file.to_model()?;
    let truth: TruthFile = io::read_json(&args.truth)?;
    let partition = c_step(&e_step(&model, data.x.view(), data.y.view())?);
    let report = metrics::evaluate(
        &model,
        &partition,
        data.x.view(),
        data.y.view(),
        z,
        &truth.supports0()?,
    )?;
    let text = match args.format {
        FormatArg::Json => {
            let doc = json!({
                "schema": "csmr.eval/1",
                "version": io::VERSION,
                "seed": file.meta.seed,
                "report": report,
            });
            serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"
        }
        FormatArg::Csv => format!("{}\n{}\n", metrics::EvalReport::CSV_HEADER, report.to_csv_row()),
    };
    match &args.out {
        Some(path) => fs::write(path, &text).map_err(Error::from)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn benchmark(args: &BenchArgs, seed: u64) -> Result<u8, Failure> {
    if args.reps == 0 {
        return Err(usage("--reps must be positive"));
    }
    if args.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    let cfg = BenchConfig {
        cases: args.cases.0.clone(),
        reps: args.reps,
        seed,
        csmr: args.flags.config(seed),
        baselines: !args.no_baselines,
    };
    let rows = bench::run_benchmark(&cfg);
    ensure_dir(&args.out)?;
    let write = |name: &str, f: &dyn Fn(fs::File) -> csmr::Result<()>| -> Result<(), Failure> {
        let file = fs::File::create(args.out.join(name)).map_err(Error::from)?;
        f(file).map_err(Failure::from)
    };
    write("table.csv", &|f| bench::write_csv(f, &rows))?;
    write("aggregate.csv", &|f| bench::write_csv(f, &bench::aggregate(&rows)))?;
    write("timings.csv", &|f| bench::write_csv(f, &bench::timings(&rows)))?;
    let rate = bench::success_rate(&rows);
    let doc = json!({
        "schema": "csmr.benchmark/1",
        "version": io::VERSION,
        "seed": seed,
        "config": cfg,
        "success_rate": rate,
    });
    io::write_json(&args.out.join("summary.json"), &doc)?;

    for a in bench::aggregate(&rows) {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "case {:>2} {:<5} ok {}/{}  cor {}  tpr {}  tnr {}  ri {}",
            a.case,
            a.method.name(),
            a.n_ok,
            a.n_total,
            fmt(a.correlation),
            fmt(a.tpr),
            fmt(a.tnr),
            fmt(a.rand_index)
        );
    }
    let median_time = |case: usize| {
        let mut t: Vec<f64> = rows
            .iter()
            .filter(|r| r.case == case && r.method == Method::Csmr && r.ok())
            .map(|r| r.seconds)
            .collect();
        bench::median(&mut t)
    };
    if let (Some(t6), Some(t4)) = (median_time(6), median_time(4)) {
        println!("median fit time ratio case 6 / case 4: {:.2}", t6 / t4);
    }
    if rate < 0.9 {
        eprintln!("only {:.1}% of benchmark cells succeeded", 100.0 * rate);
        return Ok(EXIT_BENCH_DEGRADED);
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(a) => simulate(a, cli.seed).map(|_| 0),
        Command::Fit(a) => fit(a, cli.seed).map(|_| 0),
        Command::SelectK(a) => select_k(a, cli.seed).map(|_| 0),
        Command::Evaluate(a) => evaluate(a).map(|_| 0),
        Command::Benchmark(a) => benchmark(a, cli.seed),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
