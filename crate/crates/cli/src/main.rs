use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mapclust::bnb::{self, BnbOptions, BnbStatus, BranchStrategy};
use mapclust::heuristics::{self, MultiStartSettings, Schedule};
use mapclust::io::{self, finite, ResultFile};
use mapclust::model::DEFAULT_BREAKPOINTS;
use mapclust::{
    build_miqp, conditional_params, solution_metrics, ConstraintSet, Dataset, MapSolution, Precision, ProblemSpec,
    SideConstraint,
};

#[derive(Parser)]
#[command(name = "mapclust", version, about = "Global MAP clustering under a Gaussian mixture with known covariance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Branch-and-bound to a certified relative gap.
    Solve(RunArgs),
    /// Single EM run from a K-means start, rounded to an assignment.
    Em(RunArgs),
    /// Best rounded EM solution over random restarts.
    EmMulti(RunArgs),
    /// Simulated annealing over assignments.
    Sa(RunArgs),
    /// Exhaustive enumeration (tiny instances only).
    Oracle(RunArgs),
    /// Compare a result file against a reference result file.
    Metrics(MetricsArgs),
    /// Project the iris table onto its first principal component.
    Prep(PrepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum Strategy {
    MostInfeasible,
    MostIntegral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum PrecisionSource {
    AvgLabels,
}

/// Everything a run can be configured with. Loaded from `--config` (JSON),
/// then overridden field by field by command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    /// Data CSV (header row; optional `id` and `label` columns).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of components.
    #[arg(long)]
    k: Option<usize>,
    /// Isotropic standard deviation.
    #[arg(long, conflicts_with_all = ["precision_file", "precision"])]
    sigma: Option<f64>,
    /// JSON d×d precision matrix.
    #[arg(long, conflicts_with = "precision")]
    precision_file: Option<PathBuf>,
    /// Precision estimated from the labelled rows.
    #[arg(long, value_enum)]
    precision: Option<PrecisionSource>,
    /// Lower bound on every mean coordinate (comma-separated, one per dimension).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mu_lower: Option<Vec<f64>>,
    /// Upper bound on every mean coordinate (comma-separated, one per dimension).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mu_upper: Option<Vec<f64>>,
    /// Constraint file (JSON list of records).
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Pin every labelled row to its label.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    fix_labels: Option<bool>,
    /// Chords in the piecewise-linear −log π.
    #[arg(long)]
    breakpoints: Option<usize>,
    #[arg(long)]
    pi_min: Option<f64>,
    /// Relative gap at which `solve` stops.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    node_limit: Option<usize>,
    #[arg(long, value_enum)]
    strategy: Option<Strategy>,
    #[arg(long)]
    workers: Option<usize>,
    /// Single worker, reproducible node order.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    /// EM restarts (`em-multi`, and the incumbent seed of `solve`).
    #[arg(long)]
    restarts: Option<usize>,
    /// Annealing steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Initial annealing temperature.
    #[arg(long)]
    t0: Option<f64>,
    /// Result JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trace CSV path (`solve`).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Plain-text MIQP dump path (`solve`).
    #[arg(long)]
    dump_model: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: RunConfig,
}

#[derive(Args)]
struct MetricsArgs {
    /// Result file to score.
    #[arg(long)]
    result: PathBuf,
    /// Reference result file.
    #[arg(long)]
    truth: PathBuf,
    /// Where to write the metrics JSON (stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PrepArgs {
    /// Iris CSV: four feature columns and a `label` column.
    #[arg(long)]
    iris: PathBuf,
    /// Keep the first this-many samples of each class.
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// Fields set in `over` replace those in `base`.
macro_rules! overlay {
    ($base:ident, $over:ident, $($f:ident),* $(,)?) => {
        $( if $over.$f.is_some() { $base.$f = $over.$f.clone(); } )*
    };
}

impl RunConfig {
    fn merged(args: &RunArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => {
                let f = File::open(p).with_context(|| format!("opening config {}", p.display()))?;
                serde_json::from_reader(f).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        let f = &args.flags;
        overlay!(
            cfg, f, data, k, sigma, precision_file, precision, mu_lower, mu_upper, constraints, fix_labels, breakpoints,
            pi_min, epsilon, time_limit, node_limit, strategy, workers, deterministic, seed, restarts, steps, t0, out,
            trace, dump_model,
        );
        if f.sigma.is_some() {
            cfg.precision_file = None;
            cfg.precision = None;
        } else if f.precision_file.is_some() {
            cfg.sigma = None;
            cfg.precision = None;
        } else if f.precision.is_some() {
            cfg.sigma = None;
            cfg.precision_file = None;
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        let data = self.data.as_ref().ok_or_else(|| anyhow!("--data is required"))?;
        require_file(data)?;
        for p in [&self.constraints, &self.precision_file].into_iter().flatten() {
            require_file(p)?;
        }
        if self.k.is_none_or(|k| k == 0) {
            bail!("--k must be a positive integer");
        }
        let sources = [self.sigma.is_some(), self.precision_file.is_some(), self.precision.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            bail!("give exactly one of --sigma, --precision-file, --precision avg-labels");
        }
        if self.sigma.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            bail!("--sigma must be positive");
        }
        if self.epsilon.is_some_and(|e| !(e > 0.0)) {
            bail!("--epsilon must be positive");
        }
        if self.pi_min.is_some_and(|p| !(p > 0.0 && p < 1.0)) {
            bail!("--pi-min must lie in (0, 1)");
        }
        if self.breakpoints == Some(0) {
            bail!("--breakpoints must be positive");
        }
        Ok(())
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

fn require_file(p: &Path) -> Result<()> {
    if !p.is_file() {
        bail!("no such file: {}", p.display());
    }
    Ok(())
}

struct Problem {
    data: Dataset,
    spec: ProblemSpec,
    constraints: ConstraintSet,
}

fn load_problem(cfg: &RunConfig) -> Result<Problem> {
    let path = cfg.data.as_ref().expect("checked");
    let loaded = io::load_csv(path).with_context(|| format!("reading {}", path.display()))?;
    if loaded.missing > 0 {
        eprintln!("warning: {} blank feature cells read as 0", loaded.missing);
    }
    let data = loaded.data;
    let (n, d, k) = (data.n(), data.d(), cfg.k.expect("checked"));
    let precision = if let Some(s) = cfg.sigma {
        Precision::from_sigma(s)
    } else if let Some(p) = &cfg.precision_file {
        io::load_precision(p).with_context(|| format!("reading {}", p.display()))?
    } else {
        io::average_within_label_precision(&data)?
    };
    let mut spec = ProblemSpec::new(k, precision, &data).with_breakpoints(cfg.breakpoints.unwrap_or(DEFAULT_BREAKPOINTS));
    if let Some(p) = cfg.pi_min {
        spec = spec.with_pi_floor(p);
    }
    if cfg.mu_lower.is_some() || cfg.mu_upper.is_some() {
        let lo = cfg.mu_lower.clone().unwrap_or_else(|| spec.mu_lower[0].clone());
        let hi = cfg.mu_upper.clone().unwrap_or_else(|| spec.mu_upper[0].clone());
        if lo.len() != d || hi.len() != d {
            bail!("mean bounds need {d} values");
        }
        spec = spec.with_uniform_bounds(lo, hi);
    }
    spec.validate(&data)?;
    let mut items = match &cfg.constraints {
        Some(p) => io::load_constraints(p, n, k).with_context(|| format!("reading {}", p.display()))?.items().to_vec(),
        None => Vec::new(),
    };
    if cfg.fix_labels == Some(true) {
        if let Some((&i, &l)) = data.known_labels().iter().find(|(_, &l)| l >= k) {
            bail!("row {} has label {} but K = {k}", i + 1, l + 1);
        }
        items.extend(data.known_labels().iter().map(|(&i, &l)| SideConstraint::AssignLabel(i, l)));
    }
    let constraints = ConstraintSet::new(items, n, k)?;
    Ok(Problem { data, spec, constraints })
}

fn echo(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn write_result(cfg: &RunConfig, r: &ResultFile) -> Result<()> {
    match &cfg.out {
        Some(p) => r.write(p).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{}", r.to_json()?);
            Ok(())
        }
    }
}

fn status_name(s: BnbStatus) -> &'static str {
    match s {
        BnbStatus::OptimalWithinEps => "optimal_within_eps",
        BnbStatus::Feasible => "feasible",
        BnbStatus::Infeasible => "infeasible",
        BnbStatus::NoIncumbent => "no_incumbent",
    }
}

fn with_offset(mut r: ResultFile, p: &Problem) -> ResultFile {
    r.objective_offset = p.spec.objective_offset(p.data.n()).ok();
    r
}

fn run_solve(cfg: &RunConfig) -> Result<ExitCode> {
    let p = load_problem(cfg)?;
    let report = p.constraints.validate();
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for c in &report.conflicts {
        eprintln!("conflict: {c}");
    }
    let model = build_miqp(&p.data, &p.spec, &p.constraints)?;
    if let Some(path) = &cfg.dump_model {
        std::fs::write(path, model.dump()).with_context(|| format!("writing {}", path.display()))?;
    }
    let defaults = BnbOptions::default();
    let opts = BnbOptions {
        epsilon: cfg.epsilon.unwrap_or(defaults.epsilon),
        time_limit: cfg.time_limit,
        node_limit: cfg.node_limit,
        strategy: match cfg.strategy {
            Some(Strategy::MostIntegral) => BranchStrategy::MostIntegral,
            _ => BranchStrategy::MostInfeasible,
        },
        workers: cfg.workers.unwrap_or(defaults.workers),
        deterministic: cfg.deterministic == Some(true),
        seed: cfg.seed(),
        em_restarts: cfg.restarts.unwrap_or(defaults.em_restarts),
        ..defaults
    };
    let r = bnb::solve(&model, &opts);
    let mut file = ResultFile::from_solution(status_name(r.status), r.incumbent.as_ref(), cfg.seed(), echo(cfg));
    file.glbd = finite(r.glbd);
    file.true_glbd = finite(r.true_glbd);
    file.gap = finite(r.gap);
    file.e_max = finite(r.e_max);
    file.nodes = r.nodes_explored;
    file.wall_seconds = r.wall_seconds;
    write_result(cfg, &with_offset(file, &p))?;
    if let Some(path) = &cfg.trace {
        let f = File::create(path).with_context(|| format!("writing {}", path.display()))?;
        io::write_trace(&r.trace, BufWriter::new(f))?;
    }
    eprintln!(
        "{}: ubd {} glbd {} gap {:.3e} nodes {} in {:.2}s",
        status_name(r.status),
        r.ubd,
        r.glbd,
        r.gap,
        r.nodes_explored,
        r.wall_seconds
    );
    Ok(match r.status {
        BnbStatus::Infeasible => ExitCode::from(2),
        BnbStatus::NoIncumbent => ExitCode::from(3),
        _ => ExitCode::SUCCESS,
    })
}

fn finish_heuristic(cfg: &RunConfig, p: &Problem, s: Option<&MapSolution>, seconds: f64) -> Result<ExitCode> {
    let status = if s.is_some() { "heuristic" } else { "no_incumbent" };
    let mut file = ResultFile::from_solution(status, s, cfg.seed(), echo(cfg));
    file.wall_seconds = seconds;
    write_result(cfg, &with_offset(file, p))?;
    Ok(if s.is_some() { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn run_heuristic(cfg: &RunConfig, which: &Command) -> Result<ExitCode> {
    let p = load_problem(cfg)?;
    let start = std::time::Instant::now();
    let cs = &p.constraints;
    let sol = match which {
        Command::Em(_) => {
            let a = heuristics::kmeans_init(&p.data, p.spec.k, cfg.seed())?;
            let init = conditional_params(&p.data, &p.spec, &a)?;
            heuristics::em(&p.data, &p.spec, cs, &init, 1000, 1e-10)?.rounded
        }
        Command::EmMulti(_) => {
            let settings = MultiStartSettings {
                restarts: cfg.restarts.unwrap_or(MultiStartSettings::default().restarts),
                time_limit: cfg.time_limit,
                seed: cfg.seed(),
                ..MultiStartSettings::default()
            };
            Some(heuristics::em_multistart(&p.data, &p.spec, cs, &settings)?.best)
        }
        Command::Sa(_) => {
            let defaults = Schedule::default();
            let sched = Schedule { t0: cfg.t0, steps: cfg.steps.unwrap_or(defaults.steps), ..defaults };
            Some(heuristics::simulated_annealing(&p.data, &p.spec, cs, &sched, cfg.seed())?.best)
        }
        _ => unreachable!("not a heuristic"),
    };
    finish_heuristic(cfg, &p, sol.as_ref(), start.elapsed().as_secs_f64())
}

fn run_oracle(cfg: &RunConfig) -> Result<ExitCode> {
    let p = load_problem(cfg)?;
    let start = std::time::Instant::now();
    match mapclust::oracle::brute_force(&p.data, &p.spec, &p.constraints) {
        Ok(s) => {
            let mut file = ResultFile::from_solution("optimal", Some(&s), cfg.seed(), echo(cfg));
            file.wall_seconds = start.elapsed().as_secs_f64();
            write_result(cfg, &with_offset(file, &p))?;
            Ok(ExitCode::SUCCESS)
        }
        Err(mapclust::Error::Infeasible(msg)) => {
            eprintln!("infeasible: {msg}");
            let file = ResultFile::from_solution("infeasible", None, cfg.seed(), echo(cfg));
            write_result(cfg, &file)?;
            Ok(ExitCode::from(2))
        }
        Err(e) => Err(e.into()),
    }
}

fn run_metrics(args: &MetricsArgs) -> Result<ExitCode> {
    let load = |p: &Path| -> Result<MapSolution> {
        ResultFile::read(p)
            .with_context(|| format!("reading {}", p.display()))?
            .solution()?
            .ok_or_else(|| anyhow!("{} holds no solution", p.display()))
    };
    let est = load(&args.result)?;
    let truth = load(&args.truth)?;
    let m = solution_metrics(&est, &truth)?;
    let json = serde_json::to_string_pretty(&m)?;
    match &args.out {
        Some(p) => std::fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn run_prep(args: &PrepArgs) -> Result<ExitCode> {
    let data = io::prep_iris1d(&args.iris, args.subset).with_context(|| format!("reading {}", args.iris.display()))?;
    let f = File::create(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    io::write_csv(&data, BufWriter::new(f))?;
    eprintln!("wrote {} samples", data.n());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Solve(a) => run_solve(&RunConfig::merged(a)?),
        c @ (Command::Em(a) | Command::EmMulti(a) | Command::Sa(a)) => run_heuristic(&RunConfig::merged(a)?, c),
        Command::Oracle(a) => run_oracle(&RunConfig::merged(a)?),
        Command::Metrics(a) => run_metrics(a),
        Command::Prep(a) => run_prep(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
