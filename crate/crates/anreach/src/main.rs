//! Command-line front end: model loading, validation, nominal simulation,
//! extremal solves, and certified reach-tube computation with CSV/JSON
//! output for external plotting.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use anreach::envelope::build_envelope;
use anreach::models::{gps_model, sirs_model};
use anreach::network::{validate, AgentNetwork, ModelJson, Severity};
use anreach::ode::{nominal_trajectory, IntegratorConfig};
use anreach::pontryagin::{solve_extremal, Direction, TargetSpec};
use anreach::reach::{fixed_point_bound, FixedPointConfig, GridSpec, Scale, TubeStatus};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_COMPUTE: u8 = 3;
const EXIT_UNCERTIFIED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "anreach",
    about = "Certified reach tubes for uncertain fluid models via bang-bang optimal control",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    /// Path to a model JSON file.
    #[arg(value_name = "MODEL", required_unless_present = "example")]
    model: Option<PathBuf>,
    /// Built-in model generator: sirs:D or gps:D.
    #[arg(long, value_name = "FAMILY:D", conflicts_with = "model")]
    example: Option<String>,
    /// Uncertainty bound applied to the generated example's rate parameters.
    #[arg(long, default_value_t = 0.05, requires = "example")]
    bound: f64,
    /// Worker threads (default: ANREACH_THREADS, else all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Integrator step override (default: horizon / 3000).
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and semantically check a model; optionally print its envelope.
    Validate {
        #[command(flatten)]
        model: ModelArgs,
        /// Print the affine envelope, one line per term.
        #[arg(long)]
        dump_envelope: bool,
    },
    /// Integrate the nominal concentrations and emit a trajectory CSV.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        /// End time (default: the model horizon).
        #[arg(long)]
        tend: Option<f64>,
        /// Output CSV path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one extremal transient-probability problem and emit its
    /// costate, state, and bang-bang control traces.
    Extremal {
        #[command(flatten)]
        model: ModelArgs,
        /// Objective: a state name, or weights like "{S:1,I:-1}".
        #[arg(long)]
        target: String,
        /// Objective time (default: the model horizon).
        #[arg(long)]
        time: Option<f64>,
        #[arg(long, value_enum, default_value_t = DirectionArg::Max)]
        direction: DirectionArg,
        /// State-deviation bound fed to the envelope.
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        /// Output CSV path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the fixed-point iteration and emit the certified reach tube.
    Bound {
        #[command(flatten)]
        model: ModelArgs,
        /// Width of the objective-time grid.
        #[arg(long, default_value_t = 0.04)]
        dt: f64,
        /// Additive inflation of each iterate.
        #[arg(long, default_value_t = 1e-3)]
        eta: f64,
        #[arg(long, default_value_t = 50)]
        max_iter: usize,
        #[arg(long, value_enum, default_value_t = ScaleArg::Mass)]
        scale: ScaleArg,
        /// Tube CSV path (default: stdout; the summary JSON always goes to
        /// stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Min,
    Max,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Mass,
    Unit,
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }
}

impl From<anreach::Error> for CliError {
    fn from(e: anreach::Error) -> Self {
        CliError::new(EXIT_COMPUTE, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(EXIT_USAGE, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Validate { model, dump_envelope } => cmd_validate(&model, dump_envelope),
        Command::Simulate { model, tend, out } => cmd_simulate(&model, tend, out.as_deref()),
        Command::Extremal { model, target, time, direction, eps, out } => {
            cmd_extremal(&model, &target, time, direction, eps, out.as_deref())
        }
        Command::Bound { model, dt, eta, max_iter, scale, out } => {
            cmd_bound(&model, dt, eta, max_iter, scale, out.as_deref())
        }
    }
}

fn thread_count(args: &ModelArgs) -> Option<usize> {
    args.threads
        .or_else(|| std::env::var("ANREACH_THREADS").ok().and_then(|s| s.parse().ok()))
}

fn init_threads(args: &ModelArgs) -> Result<(), CliError> {
    if let Some(n) = thread_count(args) {
        if n == 0 {
            return Err(CliError::new(EXIT_USAGE, "--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::new(EXIT_USAGE, e.to_string()))?;
    }
    Ok(())
}

fn load_model(args: &ModelArgs) -> Result<AgentNetwork, CliError> {
    let json = if let Some(spec) = &args.example {
        let (family, d) = spec
            .split_once(':')
            .ok_or_else(|| CliError::new(EXIT_USAGE, "--example expects FAMILY:D, e.g. sirs:2"))?;
        let d: usize = d
            .parse()
            .map_err(|_| CliError::new(EXIT_USAGE, format!("invalid class count {d:?}")))?;
        match family {
            "sirs" if d >= 1 => sirs_model(d, args.bound),
            "gps" if d >= 2 => gps_model(d, args.bound),
            "gps" => return Err(CliError::new(EXIT_USAGE, "gps needs at least 2 classes")),
            _ => {
                return Err(CliError::new(
                    EXIT_USAGE,
                    format!("unknown example family {family:?} (expected sirs or gps)"),
                ))
            }
        }
    } else {
        let path = args.model.as_ref().expect("clap enforces model xor example");
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::new(EXIT_USAGE, format!("{}: {e}", path.display())))?;
        ModelJson::from_str(&text).map_err(|e| CliError::new(EXIT_VALIDATION, e.to_string()))?
    };
    json.compile().map_err(|e| CliError::new(EXIT_VALIDATION, e.to_string()))
}

fn integrator_config(args: &ModelArgs, an: &AgentNetwork) -> IntegratorConfig {
    let mut cfg = IntegratorConfig::for_horizon(an.horizon);
    if let Some(step) = args.step {
        cfg.step = step;
    }
    cfg
}

fn write_output(path: Option<&std::path::Path>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn cmd_validate(args: &ModelArgs, dump_envelope: bool) -> Result<u8, CliError> {
    init_threads(args)?;
    let an = load_model(args)?;
    let diags = validate(&an);
    let mut failed = false;
    for d in &diags {
        match d.severity {
            Severity::Error => {
                failed = true;
                eprintln!("error [{}]: {}", d.code, d.message);
            }
            Severity::Warning => eprintln!("warning [{}]: {}", d.code, d.message),
        }
    }
    if failed {
        return Ok(EXIT_VALIDATION);
    }
    println!(
        "ok: {} states, {} reactions, {} parameters, horizon {}",
        an.state_names.len(),
        an.reactions.len(),
        an.params.len(),
        an.horizon
    );
    if dump_envelope {
        let cfg = integrator_config(args, &an);
        let (v0, _) = nominal_trajectory(&an, &cfg)?;
        let env = build_envelope(&an, v0)?;
        print!("{}", env.dump());
    }
    Ok(0)
}

fn cmd_simulate(
    args: &ModelArgs,
    tend: Option<f64>,
    out: Option<&std::path::Path>,
) -> Result<u8, CliError> {
    init_threads(args)?;
    let an = load_model(args)?;
    let tend = tend.unwrap_or(an.horizon);
    if !(tend > 0.0) || tend > an.horizon + 1e-12 {
        return Err(CliError::new(EXIT_USAGE, format!("--tend must lie in (0; {}]", an.horizon)));
    }
    let cfg = integrator_config(args, &an);
    let (v0, _) = nominal_trajectory(&an, &cfg)?;
    let mut csv = String::from("t");
    for name in &an.state_names {
        write!(csv, ",{name}").unwrap();
    }
    csv.push('\n');
    for (i, &t) in v0.times.iter().enumerate() {
        if t > tend + 1e-12 {
            break;
        }
        write!(csv, "{t:.6}").unwrap();
        for &x in v0.row(i) {
            write!(csv, ",{x:.12e}").unwrap();
        }
        csv.push('\n');
    }
    write_output(out, &csv)?;
    Ok(0)
}

fn parse_target(spec: &str, an: &AgentNetwork) -> Result<Vec<f64>, CliError> {
    let mut weights = vec![0.0; an.state_names.len()];
    let state_index = |name: &str| {
        an.state_names
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| CliError::new(EXIT_USAGE, format!("unknown state {name:?}")))
    };
    let trimmed = spec.trim();
    if let Some(body) = trimmed.strip_prefix('{').and_then(|s| s.strip_suffix('}')) {
        for part in body.split(',') {
            let (name, w) = part
                .split_once(':')
                .ok_or_else(|| CliError::new(EXIT_USAGE, "weights must look like {S:1,I:-1}"))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| CliError::new(EXIT_USAGE, format!("invalid weight {w:?}")))?;
            weights[state_index(name.trim())?] = w;
        }
    } else {
        weights[state_index(trimmed)?] = 1.0;
    }
    Ok(weights)
}

fn cmd_extremal(
    args: &ModelArgs,
    target: &str,
    time: Option<f64>,
    direction: DirectionArg,
    eps: f64,
    out: Option<&std::path::Path>,
) -> Result<u8, CliError> {
    init_threads(args)?;
    let an = load_model(args)?;
    let weights = parse_target(target, &an)?;
    let t_hat = time.unwrap_or(an.horizon);
    if !(t_hat > 0.0) || t_hat > an.horizon + 1e-12 {
        return Err(CliError::new(EXIT_USAGE, format!("--time must lie in (0; {}]", an.horizon)));
    }
    let cfg = integrator_config(args, &an);
    let (v0, _) = nominal_trajectory(&an, &cfg)?;
    let env = build_envelope(&an, v0)?;
    let se = env.sample(cfg.step);
    let direction = match direction {
        DirectionArg::Min => Direction::Min,
        DirectionArg::Max => Direction::Max,
    };
    let sol =
        solve_extremal(&se, &TargetSpec { weights, time: t_hat, direction }, eps, cfg.step, true)?;
    let costate = sol.costate.as_ref().expect("recorded");
    let state = sol.state.as_ref().expect("recorded");
    let control = sol.control.as_ref().expect("recorded");

    let mut csv = String::from("t");
    for name in &an.state_names {
        write!(csv, ",p_{name}").unwrap();
    }
    for name in &an.state_names {
        write!(csv, ",pi_{name}").unwrap();
    }
    for u in &env.uncertainties {
        write!(csv, ",{}", u.name).unwrap();
    }
    csv.push('\n');
    for (i, &t) in state.times.iter().enumerate() {
        write!(csv, "{t:.6}").unwrap();
        for &p in costate.value_at(t).iter() {
            write!(csv, ",{p:.12e}").unwrap();
        }
        for &x in state.row(i) {
            write!(csv, ",{x:.12e}").unwrap();
        }
        let ci = i.min(control.times.len() - 1);
        for &u in control.row(ci) {
            write!(csv, ",{u:.12e}").unwrap();
        }
        csv.push('\n');
    }
    write_output(out, &csv)?;

    let min_margin = sol
        .switching_margin
        .iter()
        .copied()
        .filter(|m| m.is_finite())
        .fold(f64::INFINITY, f64::min);
    println!(
        "{{\"value\":{:.12e},\"time\":{t_hat},\"min_switching_margin\":{min_margin:.6e}}}",
        sol.value
    );
    Ok(0)
}

fn cmd_bound(
    args: &ModelArgs,
    dt: f64,
    eta: f64,
    max_iter: usize,
    scale: ScaleArg,
    out: Option<&std::path::Path>,
) -> Result<u8, CliError> {
    init_threads(args)?;
    let an = load_model(args)?;
    if !(dt > 0.0) {
        return Err(CliError::new(EXIT_USAGE, "--dt must be positive"));
    }
    if !(eta > 0.0) {
        return Err(CliError::new(EXIT_USAGE, "--eta must be positive"));
    }
    let cfg = FixedPointConfig {
        eta,
        max_iter,
        scale: match scale {
            ScaleArg::Mass => Scale::Mass,
            ScaleArg::Unit => Scale::Unit,
        },
        step: args.step,
    };
    let start = Instant::now();
    let tube = fixed_point_bound(&an, GridSpec { dt }, &cfg)?;
    let wall = start.elapsed().as_secs_f64();

    let mut csv = String::from("t");
    for name in &tube.state_names {
        write!(csv, ",lo_{name},hi_{name}").unwrap();
    }
    csv.push('\n');
    for (i, &t) in tube.times.iter().enumerate() {
        write!(csv, "{t:.6}").unwrap();
        let lo = tube.lower_row(i);
        let hi = tube.upper_row(i);
        for j in 0..tube.state_names.len() {
            write!(csv, ",{:.12e},{:.12e}", lo[j], hi[j]).unwrap();
        }
        csv.push('\n');
    }
    write_output(out, &csv)?;

    let status = match tube.status {
        TubeStatus::Certified => "certified",
        TubeStatus::FailedEpsPrime => "failed_eps_prime",
        TubeStatus::MaxIterations => "max_iterations",
    };
    let iterates: Vec<String> = tube.iterates.iter().map(|e| format!("{e:.9e}")).collect();
    println!(
        "{{\"status\":\"{status}\",\"eps_star\":{:.9e},\"eps_prime\":{:.9e},\"iterates\":[{}],\"solves\":{},\"wall_time_s\":{wall:.3}}}",
        tube.eps_star,
        tube.eps_prime,
        iterates.join(","),
        tube.solves
    );
    Ok(if tube.status == TubeStatus::Certified { 0 } else { EXIT_UNCERTIFIED })
}
