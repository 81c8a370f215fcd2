//! Command-line front end. Each pipeline writes CSV files plus a section of
//! `report.txt` into the output directory.
//!
//! Exit codes: 0 success, 1 configuration or validation failure, 2 runtime
//! or numerical failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::analysis::{effective_r_trace, eradication_certificate, AnalysisError};
use crate::control::{run_controlled, ControlError, ControlMode, ControlPolicy};
use crate::estimator::{gain_sweep, run_observer, settling_time, EstimatorError, ObserverGain, SweepOutcome};
use crate::model::{simulate, ModelError, Trajectory};
use crate::observability::{observability_at_zero, ObservabilityError};
use crate::output::{fmt_float, gnuplot_script, OutputDir, OutputError};
use crate::scenario::{dump_scenario, europe, load_scenario, ConfigError, ControlModeConfig, EtaRange, Pipeline, Scenario};
use crate::synthesis::{solve_feasibility, verify_certificate, Candidate, LmiProblem, SolverOptions, SynthesisError};

pub const OUT_DIR_ENV: &str = "NETSIR_OUT_DIR";
const DEFAULT_OUT: &str = "out";
const DEFAULT_CONTROL_HORIZON: usize = 200;

#[derive(Debug, Parser)]
#[command(name = "netsir", version, about = "Multi-virus networked SIR: simulation, analysis, estimation and control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario file; the built-in europe scenario when omitted.
    #[arg(long, value_name = "PATH")]
    pub scenario: Option<PathBuf>,
    /// Output directory (default: the scenario's run.out, else ./out).
    #[arg(long, value_name = "DIR", env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,
    /// Override the simulation horizon.
    #[arg(long, value_name = "T")]
    pub horizon: Option<usize>,
    /// Also write plot.gp, a gnuplot script for the CSV files.
    #[arg(long)]
    pub gnuplot_script: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ObserveArgs {
    /// Sweep the scale of a uniform gain, `start:step:stop`.
    #[arg(long, value_name = "START:STEP:STOP")]
    pub eta_sweep: Option<EtaRange>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthesisArgs {
    /// Multiplier tau in (0, 1], applied to every virus.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Lipschitz-like constant l >= 0, applied to every virus.
    #[arg(long = "lipschitz-l", value_name = "L")]
    pub lipschitz_l: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the open-loop epidemic.
    Simulate(Common),
    /// Stability certificates, effective reproduction numbers and observability.
    Analyze(Common),
    /// Run the distributed observer along the simulated epidemic.
    Observe {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: ObserveArgs,
    },
    /// Synthesize observer gains from the LMI.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synthesis: SynthesisArgs,
    },
    /// Closed-loop run with feedback-boosted healing.
    Control(Common),
    /// Run the scenario's pipelines in order.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: ObserveArgs,
        #[command(flatten)]
        synthesis: SynthesisArgs,
    },
    /// Print the (validated) scenario as TOML.
    DumpConfig {
        #[arg(long, value_name = "PATH")]
        scenario: Option<PathBuf>,
        /// Write to a file instead of stdout.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario {path}: {message}")]
    MissingSection { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Observability(#[from] ObservabilityError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Output(#[from] OutputError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::MissingSection { .. } => 1,
            _ => 2,
        }
    }
}

/// Parses `args` and runs the command; errors go to stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli.command) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load(path: Option<&Path>) -> Result<Scenario, CliError> {
    Ok(match path {
        Some(p) => load_scenario(p)?,
        None => europe(),
    })
}

struct Context {
    scenario: Scenario,
    out: OutputDir,
    horizon: Option<usize>,
    eta_sweep: Option<EtaRange>,
    tau: Option<f64>,
    lipschitz: Option<f64>,
}

impl Context {
    fn new(common: &Common) -> Result<Self, CliError> {
        let scenario = load(common.scenario.as_deref())?;
        let out_path = common
            .out
            .clone()
            .or_else(|| scenario.config.run.out.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        let out = OutputDir::create(&out_path)?;
        if common.gnuplot_script {
            out.write_text("plot.gp", &gnuplot_script(&scenario.model))?;
        }
        Ok(Self {
            scenario,
            out,
            horizon: common.horizon,
            eta_sweep: None,
            tau: None,
            lipschitz: None,
        })
    }

    fn horizon(&self) -> usize {
        self.horizon.unwrap_or(self.scenario.config.run.horizon)
    }

    fn missing(&self, message: &str) -> CliError {
        CliError::MissingSection {
            path: self.scenario.source.clone(),
            message: message.to_string(),
        }
    }

    fn truth(&self) -> Result<Trajectory, CliError> {
        Ok(simulate(&self.scenario.model, &self.scenario.initial, self.horizon())?)
    }
}

fn execute(command: &Command) -> Result<String, CliError> {
    let (ctx, pipelines) = match command {
        Command::DumpConfig { scenario, output } => {
            let scenario = load(scenario.as_deref())?;
            let text = dump_scenario(&scenario.config);
            return match output {
                Some(path) => {
                    std::fs::write(path, &text).map_err(|source| OutputError::Io {
                        path: path.clone(),
                        source,
                    })?;
                    Ok(format!("wrote {}\n", path.display()))
                }
                None => Ok(text),
            };
        }
        Command::Simulate(common) => (Context::new(common)?, vec![Pipeline::Simulate]),
        Command::Analyze(common) => (Context::new(common)?, vec![Pipeline::Analyze]),
        Command::Control(common) => (Context::new(common)?, vec![Pipeline::Control]),
        Command::Observe { common, sweep } => {
            let mut ctx = Context::new(common)?;
            ctx.eta_sweep = sweep.eta_sweep;
            (ctx, vec![Pipeline::Observe])
        }
        Command::Synthesize { common, synthesis } => {
            let mut ctx = Context::new(common)?;
            ctx.tau = synthesis.tau;
            ctx.lipschitz = synthesis.lipschitz_l;
            (ctx, vec![Pipeline::Synthesize])
        }
        Command::Run {
            common,
            sweep,
            synthesis,
        } => {
            let mut ctx = Context::new(common)?;
            ctx.eta_sweep = sweep.eta_sweep;
            ctx.tau = synthesis.tau;
            ctx.lipschitz = synthesis.lipschitz_l;
            let pipelines = ctx.scenario.config.run.pipelines.clone();
            (ctx, pipelines)
        }
    };
    let mut report = format!(
        "scenario: {}\nnodes: {}\nviruses: {}\nh: {}\n",
        ctx.scenario.source.display(),
        ctx.scenario.model.nodes(),
        ctx.scenario.model.viruses(),
        fmt_float(ctx.scenario.model.h()),
    );
    for p in &pipelines {
        writeln!(report, "\n[{p}]").expect("write to string");
        let section = match p {
            Pipeline::Simulate => cmd_simulate(&ctx)?,
            Pipeline::Analyze => cmd_analyze(&ctx)?,
            Pipeline::Observe => cmd_observe(&ctx)?,
            Pipeline::Synthesize => cmd_synthesize(&ctx)?,
            Pipeline::Control => cmd_control(&ctx)?,
        };
        report.push_str(&section);
    }
    let path = ctx.out.write_text("report.txt", &report)?;
    Ok(format!("{report}\nwrote {}\n", path.display()))
}

fn cmd_simulate(ctx: &Context) -> Result<String, CliError> {
    let model = &ctx.scenario.model;
    let traj = ctx.truth()?;
    let mut s = String::new();
    writeln!(s, "horizon: {}", traj.horizon()).expect("write to string");
    let drift = traj.states.iter().map(|st| st.simplex_deviation()).fold(0.0, f64::max);
    writeln!(s, "max simplex deviation: {}", fmt_float(drift)).expect("write to string");
    for k in 0..model.viruses() {
        ctx.out.write_trajectory("trajectory", model, &traj, k)?;
        let totals = traj.total_infection(k);
        let peak = traj.peak_time(k).unwrap_or(0);
        writeln!(
            s,
            "virus {} ({}): peak t={} total={} final total={}",
            k + 1,
            ctx.scenario.virus_name(k),
            peak,
            fmt_float(totals[peak]),
            fmt_float(*totals.last().expect("non-empty")),
        )
        .expect("write to string");
    }
    Ok(s)
}

fn cmd_analyze(ctx: &Context) -> Result<String, CliError> {
    let model = &ctx.scenario.model;
    let traj = ctx.truth()?;
    let mut s = String::new();
    for k in 0..model.viruses() {
        let cert = eradication_certificate(model, k)?;
        writeln!(
            s,
            "virus {}: rho(M)={} schur_stable={}",
            k + 1,
            fmt_float(cert.rho_m),
            cert.schur_stable
        )
        .expect("write to string");
        if let Some(l) = &cert.lyapunov {
            let p: Vec<String> = l.p.iter().map(|v| fmt_float(*v)).collect();
            writeln!(
                s,
                "  P=diag({}) sigma1={} sigma2={} sigma3={} rate_bound={} lambda_max(M'PM-P)={}",
                p.join(", "),
                fmt_float(l.sigma1),
                fmt_float(l.sigma2),
                fmt_float(l.sigma3),
                fmt_float(l.rate_bound),
                fmt_float(l.decrease_max_eigenvalue),
            )
            .expect("write to string");
        }
        let trace = effective_r_trace(model, &traj, k)?;
        ctx.out.write_rho_tilde(&trace)?;
        let crossing = trace
            .threshold_crossing
            .map_or_else(|| "none".to_string(), |t| t.to_string());
        writeln!(
            s,
            "  rho_tilde: first t with rho<=1: {} peak t: {} min epsilon: {}",
            crossing,
            traj.peak_time(k).unwrap_or(0),
            fmt_float(trace.min_epsilon)
        )
        .expect("write to string");
    }
    let obs = observability_at_zero(model)?;
    writeln!(
        s,
        "observability at s=0: rank {} of {} full_rank={}",
        obs.numerical_rank, obs.matrix_dim.0, obs.full_rank
    )
    .expect("write to string");
    let offending: Vec<&str> = obs.offending_nodes.iter().map(|&i| model.labels()[i].as_str()).collect();
    writeln!(s, "  nodes with repeated healing rates: [{}]", offending.join(", ")).expect("write to string");
    for w in &obs.near_equal {
        writeln!(
            s,
            "  warning: node {} viruses {} and {} have healing rates {} apart",
            model.labels()[w.node],
            w.viruses.0 + 1,
            w.viruses.1 + 1,
            fmt_float(w.difference)
        )
        .expect("write to string");
    }
    Ok(s)
}

/// Gains from the scenario, or synthesized from its LMI settings.
fn observer_gain(ctx: &Context) -> Result<(ObserverGain, &'static str), CliError> {
    if let Some(gain) = ctx.scenario.observer_gain() {
        return Ok((gain?, "scenario"));
    }
    let model = &ctx.scenario.model;
    let mut per_virus = Vec::with_capacity(model.viruses());
    for k in 0..model.viruses() {
        let cert = solve_feasibility(&lmi_problem(ctx, k)?, &solver_options(ctx))?;
        if !cert.feasible {
            return Err(ctx.missing(&format!(
                "no observer gains given and the LMI for virus {} is infeasible",
                k + 1
            )));
        }
        per_virus.push(cert.node_gains());
    }
    Ok((ObserverGain::new(per_virus)?, "synthesized"))
}

fn cmd_observe(ctx: &Context) -> Result<String, CliError> {
    let model = &ctx.scenario.model;
    let obs_cfg = ctx
        .scenario
        .config
        .observer
        .as_ref()
        .ok_or_else(|| ctx.missing("the observe pipeline needs an [observer] section"))?;
    let initial = ctx.scenario.observer_initial().expect("observer section present");
    let (gain, source) = observer_gain(ctx)?;
    let traj = ctx.truth()?;
    let (_, trace) = run_observer(model, &gain, &traj, &initial)?;
    ctx.out.write_observer_error(model, &trace)?;
    let mut s = String::new();
    writeln!(s, "gains: {source}").expect("write to string");
    let settle = settling_time(&trace.aggregate, obs_cfg.threshold)
        .map_or_else(|| "never".to_string(), |t| t.to_string());
    writeln!(
        s,
        "aggregated error below {} from t={} (max {})",
        fmt_float(obs_cfg.threshold),
        settle,
        fmt_float(trace.aggregate.iter().copied().fold(0.0, f64::max))
    )
    .expect("write to string");
    for k in 0..model.viruses() {
        ctx.out.write_lstar(&trace, k)?;
        let err = trace.virus_error(k);
        let first_below = |series: &[f64]| {
            series
                .iter()
                .position(|v| *v < 1e-3)
                .map_or_else(|| "never".to_string(), |t| t.to_string())
        };
        let lmax = trace.lstar.iter().filter_map(|l| l[k]).fold(0.0, f64::max);
        writeln!(
            s,
            "virus {}: sum|e| < 1e-3 first at t={}, sum x < 1e-3 first at t={}, max l*={}",
            k + 1,
            first_below(&err),
            first_below(&traj.total_infection(k)),
            fmt_float(lmax)
        )
        .expect("write to string");
    }
    if let Some(range) = ctx.eta_sweep.or(obs_cfg.eta_sweep) {
        let base = ObserverGain::uniform(model.viruses(), model.nodes(), obs_cfg.sweep_base_gain)?;
        let points = gain_sweep(model, &traj, &initial, &base, &range.values(), obs_cfg.threshold)?;
        ctx.out.write_eta_sweep(&points)?;
        writeln!(s, "eta sweep (uniform base gain {}):", fmt_float(obs_cfg.sweep_base_gain)).expect("write to string");
        for p in &points {
            let text = match p.outcome {
                SweepOutcome::Converged { t_star } => format!("t*={t_star}"),
                SweepOutcome::Diverged { at } => format!("diverged at t={at}"),
                SweepOutcome::NotConverged => "not converged".to_string(),
            };
            writeln!(s, "  eta={} {}", fmt_float(p.eta), text).expect("write to string");
        }
    }
    Ok(s)
}

fn lmi_problem(ctx: &Context, k: usize) -> Result<LmiProblem, CliError> {
    let cfg = ctx.scenario.config.synthesis.as_ref();
    let tau = ctx
        .tau
        .or_else(|| cfg.map(|c| c.tau[k]))
        .ok_or_else(|| ctx.missing("synthesis needs a [synthesis] section or --tau"))?;
    let l = ctx
        .lipschitz
        .or_else(|| cfg.map(|c| c.lipschitz[k]))
        .ok_or_else(|| ctx.missing("synthesis needs a [synthesis] section or --lipschitz-l"))?;
    let problem = LmiProblem::for_virus(&ctx.scenario.model, k, tau, l)?;
    Ok(match cfg {
        Some(c) => problem.with_margin(c.margin)?,
        None => problem,
    })
}

fn solver_options(ctx: &Context) -> SolverOptions {
    let mut options = SolverOptions::default();
    if let Some(c) = &ctx.scenario.config.synthesis {
        options.structure = c.structure.into();
        options.max_iterations = c.max_iterations;
    }
    options
}

fn cmd_synthesize(ctx: &Context) -> Result<String, CliError> {
    let model = &ctx.scenario.model;
    let options = solver_options(ctx);
    let mut s = String::new();
    for k in 0..model.viruses() {
        let problem = lmi_problem(ctx, k)?;
        let cert = solve_feasibility(&problem, &options)?;
        writeln!(
            s,
            "virus {}: tau={} l={} feasible={} iterations={} lambda_max(F)={} lambda_min(Q)={}",
            k + 1,
            fmt_float(problem.tau),
            fmt_float(problem.lipschitz),
            cert.feasible,
            cert.iterations,
            fmt_float(cert.lambda_max_f),
            fmt_float(cert.lambda_min_q),
        )
        .expect("write to string");
        if let Some(reason) = cert.infeasibility {
            writeln!(s, "  infeasible: {reason:?}").expect("write to string");
        }
        if cert.feasible {
            let v = verify_certificate(&problem, &cert.q, Candidate::Multiplier(&cert.r))?;
            writeln!(
                s,
                "  verification: block form negative definite={} schur form negative definite={} agree={} meets margin={}",
                v.lmi_negative_definite, v.schur_negative_definite, v.agree, v.meets_margin
            )
            .expect("write to string");
            let gains = cert.node_gains();
            ctx.out.write_gains(model, &gains, k)?;
            let g: Vec<String> = gains.iter().map(|v| fmt_float(*v)).collect();
            writeln!(s, "  gains: [{}]", g.join(", ")).expect("write to string");
        }
    }
    Ok(s)
}

fn cmd_control(ctx: &Context) -> Result<String, CliError> {
    let model = &ctx.scenario.model;
    let cfg = ctx.scenario.config.control.clone().unwrap_or_default();
    let horizon = ctx.horizon.or(cfg.horizon).unwrap_or(DEFAULT_CONTROL_HORIZON);
    let mut policy = match cfg.mode {
        ControlModeConfig::TrueState => ControlPolicy::true_state(model.viruses()),
        ControlModeConfig::EstimatedState => {
            let initial = ctx
                .scenario
                .observer_initial()
                .ok_or_else(|| ctx.missing("estimated-state control needs an [observer] section"))?;
            ControlPolicy::estimated_state(model.viruses(), observer_gain(ctx)?.0, initial)
        }
    };
    if let Some(enabled) = cfg.enabled {
        policy.enabled = enabled;
    }
    let run = run_controlled(model, &ctx.scenario.initial, &policy, horizon)?;
    let mut s = String::new();
    let mode = match policy.mode {
        ControlMode::TrueState => "true-state",
        ControlMode::EstimatedState { .. } => "estimated-state",
    };
    writeln!(s, "mode: {mode} horizon: {horizon}").expect("write to string");
    for k in 0..model.viruses() {
        ctx.out.write_trajectory("controlled", model, &run.trajectory, k)?;
        let d = &run.decay[k];
        // worst excess of a closed-loop row sum over 1 - h gamma_i
        let excess = run
            .reports
            .iter()
            .flat_map(|r| {
                r.row_sums[k]
                    .iter()
                    .zip(model.gamma(k))
                    .map(|(sum, g)| sum - (1.0 - model.h() * g))
            })
            .fold(f64::NEG_INFINITY, f64::max);
        writeln!(
            s,
            "virus {}: enabled={} rate={} decay violations (2-norm)={} (max-norm)={} worst ratio (2-norm)={} final total={} max row-sum excess={}",
            k + 1,
            d.enabled,
            fmt_float(d.rate),
            d.violations_2.len(),
            d.violations_inf.len(),
            fmt_float(d.worst_ratio_2),
            fmt_float(run.trajectory.states.last().expect("non-empty").total_infection(k)),
            fmt_float(excess),
        )
        .expect("write to string");
    }
    Ok(s)
}
