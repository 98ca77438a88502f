//! `nvmc`: solve, scan, nodal and report subcommands.
//!
//! Exit codes: 0 converged (or success), 2 finished without convergence,
//! 1 error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

use nvmc::config::LossConfig;
use nvmc::nodal::{self, NodalScaling, Sampling};
use nvmc::observables;
use nvmc::report::{self, ReportRow};
use nvmc::scan::{self, ScanPlan};
use nvmc::trainer::{self, MetricRow};
use nvmc::{Error, HamiltonianSpec, Result, RunConfig};

const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "nvmc", version, about = "Neural variational Monte Carlo solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one state and write its run record.
    Solve(SolveArgs),
    /// Run a one- or two-axis parameter scan.
    Scan(ScanArgs),
    /// Moment stability near a nodal manifold.
    Nodal(NodalArgs),
    /// Join run records into a variance against relative-error table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// System tag: ho2d, hydrogen, charmonium, double_well,
    /// hydrogen_magnetic, quantum_dot.
    #[arg(long)]
    system: Option<String>,
    /// System parameter `name=value`, e.g. `separation=3.5` or `l=1`.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    /// `ground`, `first_excited` or an excitation index. Excited states
    /// switch to the residual loss unless `--loss` says otherwise.
    #[arg(long)]
    state: Option<String>,
    /// `variance` or `residual`.
    #[arg(long)]
    loss: Option<String>,
    /// Checkpoint of a frozen lower state (repeatable; residual loss).
    #[arg(long = "ortho")]
    ortho: Vec<PathBuf>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    walkers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    reference: Option<f64>,
    /// Output directory; defaults to `runs/<system>-state<k>-seed<s>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Threads for batch evaluation.
    #[arg(long)]
    workers: Option<usize>,
    /// Validate and print the resolved config without training.
    #[arg(long)]
    dry_run: bool,
    /// Print a progress line every this many steps (0 disables).
    #[arg(long, default_value_t = 100)]
    progress: usize,
    /// Also write density, radial or pair-correlation CSVs of the final
    /// state, estimated from this many |ψ|² samples.
    #[arg(long, value_name = "SAMPLES")]
    observables: Option<usize>,
}

#[derive(Args, Debug)]
struct ScanArgs {
    /// JSON scan plan.
    #[arg(long)]
    plan: PathBuf,
    /// Skip points whose run record is already complete.
    #[arg(long)]
    resume: bool,
    /// Run a second seed per point and warn on disagreement.
    #[arg(long)]
    paranoid: bool,
    /// Concurrent scan points.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct NodalArgs {
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    gamma: f64,
    /// Codimension of the node.
    #[arg(long)]
    k: u32,
    /// Moment order.
    #[arg(long)]
    p: u32,
    /// Uniform rather than |ψ|² sampling.
    #[arg(long)]
    uniform: bool,
    /// Sample sizes of the toy simulation.
    #[arg(long, value_delimiter = ',', default_values_t = [1_000usize, 10_000, 100_000, 1_000_000])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 15)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulation CSV path.
    #[arg(long, default_value = "nodal_moments.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory searched recursively for run records.
    #[arg(default_value = "runs")]
    dir: PathBuf,
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    threshold: f64,
    /// Relative-error bound expected below the threshold.
    #[arg(long, default_value_t = 0.01)]
    max_error: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Scan(a) => cmd_scan(a),
        Command::Nodal(a) => cmd_nodal(a),
        Command::Report(a) => cmd_report(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn default_system_fields(tag: &str) -> Option<Value> {
    let v = match tag {
        "ho2d" | "hydrogen" => serde_json::json!({}),
        "charmonium" => serde_json::json!({"l": 0, "s": 0}),
        "double_well" => serde_json::json!({"separation": 2.0}),
        "hydrogen_magnetic" => serde_json::json!({"field": 1.0}),
        "quantum_dot" => serde_json::json!({"omega_x": 0.1, "omega_y": 0.1, "omega_z": 0.1}),
        _ => return None,
    };
    Some(v)
}

fn parse_param(raw: &str) -> Result<(String, Value)> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--param expects NAME=VALUE, got {raw:?}")))?;
    let value: Value = serde_json::from_str(v.trim())
        .map_err(|_| Error::Config(format!("--param {k}: {v:?} is not a number")))?;
    Ok((k.trim().to_string(), value))
}

fn build_system(tag: Option<&str>, current: Option<&HamiltonianSpec>, params: &[String]) -> Result<Option<HamiltonianSpec>> {
    if tag.is_none() && params.is_empty() {
        return Ok(None);
    }
    let mut fields: Map<String, Value> = match (tag, current) {
        (Some(t), Some(c)) if t == c.tag() => as_object(serde_json::to_value(c)?),
        (Some(t), _) => as_object(default_system_fields(t).ok_or_else(|| {
            Error::Config(format!("unknown system {t:?}"))
        })?),
        (None, Some(c)) => as_object(serde_json::to_value(c)?),
        (None, None) => return Err(Error::Config("--param needs --system or --config".into())),
    };
    if let Some(t) = tag {
        fields.insert("kind".into(), Value::String(t.into()));
    }
    for p in params {
        let (k, v) = parse_param(p)?;
        fields.insert(k, v);
    }
    serde_json::from_value(Value::Object(fields))
        .map(Some)
        .map_err(|e| Error::Config(format!("system: {e}")))
}

fn as_object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

fn parse_state(raw: &str) -> Result<usize> {
    match raw {
        "ground" => Ok(0),
        "first_excited" | "excited" => Ok(1),
        "second_excited" => Ok(2),
        n => n
            .parse()
            .map_err(|_| Error::Config(format!("state {n:?}: expected ground, first_excited or an index"))),
    }
}

fn solve_config(a: &SolveArgs) -> Result<RunConfig> {
    let file = a.config.as_deref().map(RunConfig::from_file).transpose()?;
    let system = build_system(a.system.as_deref(), file.as_ref().map(|c| &c.system), &a.params)?;
    let mut config = match (file, system) {
        (Some(mut c), Some(s)) => {
            c.system = s;
            c
        }
        (Some(c), None) => c,
        (None, Some(s)) => RunConfig::new(s),
        (None, None) => return Err(Error::Config("need --config or --system".into())),
    };
    if let Some(s) = &a.state {
        config.state = parse_state(s)?;
    }
    let loss = match a.loss.as_deref() {
        Some("variance") => Some(false),
        Some("residual") => Some(true),
        Some(other) => return Err(Error::Config(format!("loss {other:?}: expected variance or residual"))),
        None if a.state.is_some() && config.state > 0 => Some(true),
        None => None,
    };
    match loss {
        Some(true) if !config.trainer.loss.is_residual() => {
            config.trainer.loss = LossConfig::Residual {
                initial_energy: None,
                lambda_orth: 1.0,
                lambda_norm: 1.0,
                c0: 1.0,
                population_overlap: true,
                ortho: Vec::new(),
            }
        }
        Some(false) if config.trainer.loss.is_residual() => config.trainer.loss = LossConfig::default(),
        _ => {}
    }
    if !a.ortho.is_empty() {
        match &mut config.trainer.loss {
            LossConfig::Residual { ortho, .. } => ortho.extend(a.ortho.iter().cloned()),
            LossConfig::Variance { .. } => {
                return Err(Error::Config("--ortho needs the residual loss".into()))
            }
        }
    }
    if let Some(v) = a.max_steps {
        config.trainer.max_steps = v;
    }
    if let Some(v) = a.walkers {
        config.sampler.n_walkers = v;
    }
    if let Some(v) = a.seed {
        config.sampler.seed = v;
    }
    if let Some(v) = a.burn_in {
        config.sampler.burn_in = v;
    }
    if let Some(v) = a.layers {
        config.ansatz.layers = v;
    }
    if let Some(v) = a.width {
        config.ansatz.width = v;
    }
    if let Some(v) = a.lr {
        config.trainer.lr.base = v;
    }
    if let Some(v) = a.threshold {
        config.monitor.threshold = v;
    }
    if let Some(v) = a.reference {
        config.reference_energy = Some(v);
    }
    if let Some(v) = &a.out {
        config.output_dir = Some(v.clone());
    }
    if config.output_dir.is_none() {
        config.output_dir = Some(PathBuf::from("runs").join(format!(
            "{}-state{}-seed{}",
            config.system.tag(),
            config.state,
            config.sampler.seed
        )));
    }
    config.validate()?;
    Ok(config.resolved())
}

fn with_workers<T>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T>
where
    T: Send,
{
    match workers {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::Config(format!("worker pool: {e}"))),
    }
}

fn cmd_solve(a: SolveArgs) -> Result<u8> {
    let config = solve_config(&a)?;
    if a.dry_run {
        println!("{}", config.to_json());
        return Ok(0);
    }
    let ortho = trainer::load_ortho_models(&config)?;
    let every = a.progress;
    let progress = |r: &MetricRow| {
        if every > 0 && r.step % every == 0 {
            eprintln!(
                "step {:>6}  E {:>+.6}  var {:.3e}  acc {:.2}",
                r.step, r.energy, r.variance, r.acceptance
            );
        }
    };
    let mut record = with_workers(a.workers, || trainer::train_with(&config, ortho, progress))??;
    let dir = config.output_dir.clone().expect("output dir defaulted");
    record.write(&dir)?;
    if let Some(n) = a.observables {
        let samples = observables::sample_positions(&record.model, &config.system, n, config.sampler.seed)?;
        for (name, csv) in observables::standard_observables(&record.model, &config.system, samples.view())? {
            std::fs::write(dir.join(&name), csv)?;
        }
    }
    let s = &record.summary;
    println!("system      {}", config.system.tag());
    println!("state       {}", config.state);
    println!("energy      {}", s.observable);
    println!("variance    {:.6e}", s.variance);
    if let Some(e) = s.relative_error {
        println!("rel_error   {e:.6e}");
    }
    println!("monitor     {:?}", s.state);
    println!("steps       {}", s.steps);
    if let Some(f) = &s.failure {
        println!("failure     {f}");
    }
    println!("output      {}", dir.display());
    Ok(if s.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn cmd_scan(a: ScanArgs) -> Result<u8> {
    let mut plan = ScanPlan::from_file(&a.plan)?;
    plan.resume |= a.resume;
    plan.paranoid |= a.paranoid;
    if let Some(w) = a.workers {
        plan.workers = w;
    }
    if let Some(o) = a.out {
        plan.output_dir = o;
    }
    plan.validate()?;
    if a.dry_run {
        println!("{}", serde_json::to_string_pretty(&plan)?);
        return Ok(0);
    }
    let table = scan::run_scan(&plan)?;
    let rep = scan::scan_report(&table);
    print!("{}", rep.tidy_csv);
    for f in &rep.flags {
        eprintln!("warning: {f}");
    }
    if let Some(m) = rep.max_asymmetry {
        println!("max_asymmetry {m:.6e}");
    }
    println!("output {}", plan.output_dir.display());
    let all = table.rows.iter().all(|r| r.converged && r.error.is_none());
    Ok(if all { 0 } else { EXIT_NOT_CONVERGED })
}

fn cmd_nodal(a: NodalArgs) -> Result<u8> {
    let sampling = if a.uniform {
        Sampling::Uniform
    } else {
        Sampling::PsiSquared
    };
    let s = NodalScaling::new(a.beta, a.gamma, a.k, a.p, sampling);
    s.validate().map_err(Error::Config)?;
    let v = nodal::moment_converges(&s);
    println!("beta {} gamma {} k {} p {} sampling {:?}", a.beta, a.gamma, a.k, a.p, sampling);
    println!("margin {}", v.margin);
    println!("verdict {}", v.verdict.name());
    if let Some(m) = nodal::analytic_raw_moment(&s) {
        println!("analytic_raw_moment {m}");
    }
    let rows = nodal::simulate_toy_moments(&s, &a.sizes, a.seed, a.replicates);
    println!("{:>10} {:>16} {:>16}", "n", "raw_moment", "central_moment");
    for r in &rows {
        println!("{:>10} {:>16.6e} {:>16.6e}", r.n, r.raw_moment, r.central_moment);
    }
    write(&a.out, &nodal::toy_moments_csv(&rows))?;
    Ok(0)
}

fn cmd_report(a: ReportArgs) -> Result<u8> {
    if !a.dir.is_dir() {
        return Err(Error::Config(format!("{}: not a directory", a.dir.display())));
    }
    let runs = report::collect_runs(&a.dir)?;
    if runs.is_empty() {
        return Err(Error::Config(format!("{}: no run records found", a.dir.display())));
    }
    let rows: Vec<ReportRow> = runs
        .iter()
        .map(|(dir, s, system)| {
            let name = dir.strip_prefix(&a.dir).unwrap_or(dir);
            let name = if name.as_os_str().is_empty() { Path::new(".") } else { name };
            ReportRow::from_summary(&name.display().to_string(), system, s)
        })
        .collect();
    write(&a.out, &report::report_csv(&rows))?;
    print!("{}", report::report_csv(&rows));
    match report::log_log_pearson(&rows) {
        Some(r) => println!("log_log_pearson {r:.6}"),
        None => println!("log_log_pearson undefined"),
    }
    let t = report::threshold_check(&rows, a.threshold, a.max_error);
    println!("below_threshold {} violations {}", t.below, t.violations.len());
    for v in &t.violations {
        eprintln!("warning: {v}");
    }
    Ok(0)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text).map_err(|e| {
        Error::Config(format!("{}: {e}", path.display()))
    })
}
