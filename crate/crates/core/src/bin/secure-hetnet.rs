use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use secure_hetnet::caching::CachingStrategy;
use secure_hetnet::constraints::{check_all, DEFAULT_TOLERANCE};
use secure_hetnet::experiments::{
    estimate_outage, run_one, run_sweep, write_json_lines, write_outage_csv, write_runs_csv, write_sweep_csv, RunRecord, SweepSpec,
};
use secure_hetnet::orchestrator::{explain_outage, Mode, SolverConfig};
use secure_hetnet::{Scenario, ScenarioParams};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "secure-hetnet", version = env!("SECURE_HETNET_BUILD_ID"), about = "Secure energy-efficient resource allocation for cache-enabled SCMA HetNets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON file with scenario parameters; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON file with solver settings.
    #[arg(long)]
    solver_config: Option<PathBuf>,
    #[arg(long, default_value = "sfcd")]
    scenario: Scenario,
    #[arg(long, default_value = "joint")]
    mode: Mode,
    #[arg(long, value_enum, default_value = "csv")]
    out: OutputFormat,
    /// Result file; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// JSON-lines file receiving per-sweep traces.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a single instance.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "lp")]
        strategy: CachingStrategy,
        /// Report violated constraints of every BS in outage on stderr.
        #[arg(long)]
        explain_infeasible: bool,
    },
    /// Sweep one parameter over a list of values and caching strategies.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Parameter name, or one of rho, epsilon, q, alpha.
        #[arg(long, default_value = "rho")]
        axis: String,
        #[arg(long, value_delimiter = ',', default_values_t = [2e-7, 5e-7, 1e-6, 2e-6])]
        values: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        runs: usize,
        /// First seed; runs use consecutive seeds.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "lp")]
        strategy: Vec<CachingStrategy>,
        /// Optional per-run CSV.
        #[arg(long)]
        runs_output: Option<PathBuf>,
    },
    /// Outage probability and transmission inutility of SFCD and MFCD over file sizes.
    Outage {
        #[command(flatten)]
        common: Common,
        /// File size scales in Mbits.
        #[arg(long, value_delimiter = ',', default_values_t = [0.002, 0.004, 0.008, 0.016])]
        sizes: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "lp")]
        strategy: CachingStrategy,
    },
    /// Solve a few instances in both scenarios and check every invariant.
    Validate {
        #[arg(long, default_value = "configs/tiny.json")]
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            serde_json::from_reader(file).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(T::default()),
    }
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn load(common: &Common) -> Result<(ScenarioParams, SolverConfig)> {
    let params: ScenarioParams = read_json(common.config.as_deref())?;
    params.validate()?;
    let solver: SolverConfig = read_json(common.solver_config.as_deref())?;
    Ok((params, solver))
}

fn solve_cmd(common: Common, seed: u64, strategy: CachingStrategy, explain: bool) -> Result<()> {
    let (params, solver) = load(&common)?;
    let cfg = SolverConfig { strategy, ..solver };
    let (inst, out, metrics) = run_one(&params, seed, common.scenario, common.mode, &cfg)?;
    let record = RunRecord {
        axis: "seed".into(),
        value: seed as f64,
        scenario: common.scenario,
        mode: common.mode,
        strategy,
        optimize_split: cfg.optimize_split,
        seed,
        params,
        metrics,
    };
    let writer = sink(common.output.as_deref())?;
    match common.out {
        OutputFormat::Csv => write_runs_csv(writer, &[record])?,
        OutputFormat::Json => write_json_lines(writer, &[record])?,
    }
    if let Some(path) = &common.trace {
        write_json_lines(sink(Some(path))?, &out.trace.records)?;
    }
    if explain && !out.evaluation.all_served() {
        let explanation = explain_outage(&inst, &out.state, common.scenario, cfg.feasibility_tol)?;
        eprintln!("{}", serde_json::to_string_pretty(&explanation)?);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep_cmd(
    common: Common,
    axis: String,
    values: Vec<f64>,
    runs: usize,
    seed: u64,
    strategies: Vec<CachingStrategy>,
    runs_output: Option<PathBuf>,
) -> Result<()> {
    let (params, cfg) = load(&common)?;
    let spec = SweepSpec {
        axis,
        values,
        runs,
        base_seed: seed,
        strategies,
        scenario: common.scenario,
        mode: common.mode,
    };
    let table = run_sweep(&params, &spec, &cfg)?;
    for (value, strategy, seed, err) in &table.excluded {
        eprintln!("excluded value={value} strategy={strategy} seed={seed}: {err}");
    }
    let writer = sink(common.output.as_deref())?;
    match common.out {
        OutputFormat::Csv => write_sweep_csv(writer, &params, seed, &table)?,
        OutputFormat::Json => write_json_lines(writer, &table.rows)?,
    }
    if let Some(path) = runs_output {
        write_runs_csv(sink(Some(&path))?, &table.runs)?;
    }
    Ok(())
}

fn outage_cmd(common: Common, sizes: Vec<f64>, runs: usize, seed: u64, strategy: CachingStrategy) -> Result<()> {
    let (params, solver) = load(&common)?;
    let cfg = SolverConfig { strategy, ..solver };
    let (rows, table) = estimate_outage(&params, &sizes, runs, seed, common.mode, &cfg)?;
    let writer = sink(common.output.as_deref())?;
    match common.out {
        OutputFormat::Csv => write_outage_csv(writer, &params, seed, &rows)?,
        OutputFormat::Json => write_json_lines(writer, &rows)?,
    }
    if let Some(path) = &common.trace {
        write_json_lines(sink(Some(path))?, &table.runs)?;
    }
    Ok(())
}

fn validate_cmd(config: &Path, runs: usize, seed: u64) -> Result<bool> {
    let params: ScenarioParams = read_json(Some(config))?;
    params.validate()?;
    let cfg = SolverConfig::default();
    let mut ok = true;
    for scenario in [Scenario::Sfcd, Scenario::Mfcd] {
        for mode in [Mode::Disjoint, Mode::Joint] {
            for s in seed..seed + runs as u64 {
                let (inst, out, _) = run_one(&params, s, scenario, mode, &cfg)?;
                let report = check_all(&inst, &out.state, scenario, DEFAULT_TOLERANCE)?;
                let theta = out.trace.theta();
                let monotone = theta.windows(2).all(|w| w[1] >= w[0]);
                let pass = report.feasible && monotone;
                println!(
                    "{} {scenario} {mode} seed={s} worst_violation={:.3e} served={}/{} trace_monotone={monotone}",
                    if pass { "PASS" } else { "FAIL" },
                    report.worst_violation.max(0.0),
                    out.evaluation.served_count(),
                    out.evaluation.requesting_count(),
                );
                ok &= pass;
            }
        }
    }
    Ok(ok)
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve {
            common,
            seed,
            strategy,
            explain_infeasible,
        } => solve_cmd(common, seed, strategy, explain_infeasible)?,
        Command::Sweep {
            common,
            axis,
            values,
            runs,
            seed,
            strategy,
            runs_output,
        } => sweep_cmd(common, axis, values, runs, seed, strategy, runs_output)?,
        Command::Outage {
            common,
            sizes,
            runs,
            seed,
            strategy,
        } => outage_cmd(common, sizes, runs, seed, strategy)?,
        Command::Validate { config, runs, seed } => {
            if !validate_cmd(&config, runs, seed)? {
                bail!("invariant check failed");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
