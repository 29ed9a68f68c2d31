//! `areal`: command-line front end for areal traffic analysis.
//!
//! Exit codes: 0 success, 2 input-format error, 3 numerical or convergence
//! error, 4 CFL or domain error.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use areal_traffic::areal::{measure_region, ArealError, Trajectory, VehicleCategory};
use areal_traffic::ctm::{self, scenarios, CtmError, RunOptions, Scenario};
use areal_traffic::fd::{self, tables, CalibrationOptions, FdError, FdFamily, FdParams};
use areal_traffic::io::{self as fio, IoError, VariablesRow, WindowRow};
use areal_traffic::kinematic::{
    self, KinematicError, MocOptions, PiecewiseInitialCondition, Wave, WaveEvent, WaveKind,
};
use areal_traffic::steady_state::{self, DetectionParams, SteadyError};
use areal_traffic::units::{density, to_density_display};

#[derive(Parser)]
#[command(
    name = "areal",
    version,
    about = "Areal traffic variables, fundamental diagrams, wave analysis and multiclass CTM"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Areal flow, density and speed over space-time regions.
    Variables(VariablesArgs),
    /// Steady-state windows at a virtual detector.
    Steady(SteadyArgs),
    /// Fit fundamental diagrams to speed-density observations.
    Calibrate(CalibrateArgs),
    /// Exact waves of one Riemann problem.
    Riemann(RiemannArgs),
    /// Front-tracking solution for piecewise-constant initial data.
    Moc(MocArgs),
    /// Run the multiclass cell transmission model.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct TrajectoryInput {
    /// Trajectory CSV `vehicle_id,category,t_s,x_m`.
    #[arg(long)]
    input: PathBuf,
    /// Category CSV `category,length_m,width_m,vmax_kmh,vmin_kmh`.
    #[arg(long)]
    categories: PathBuf,
    /// Road width (m).
    #[arg(long)]
    width: f64,
}

#[derive(Args)]
struct VariablesArgs {
    #[command(flatten)]
    data: TrajectoryInput,
    /// Region `x0,x1,t0,t1` (m, s); repeatable.
    #[arg(long = "region", required = true)]
    regions: Vec<String>,
    /// Write `variables.csv` here instead of standard output.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SteadyArgs {
    #[command(flatten)]
    data: TrajectoryInput,
    /// Detector position (m).
    #[arg(long)]
    detector_x: f64,
    /// Detector length along the road (m).
    #[arg(long, default_value_t = 0.0)]
    detector_length: f64,
    /// Shortest accepted window (s).
    #[arg(long, default_value_t = DetectionParams::default().min_duration)]
    min_duration: f64,
    /// Largest residual as a fraction of the window's raw increase.
    #[arg(long, default_value_t = DetectionParams::default().max_residual)]
    max_residual: f64,
    /// Write `windows.csv` here instead of standard output.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Observation CSV `ka,v` (m²/(km·m), km/h).
    #[arg(long)]
    input: PathBuf,
    /// Family name or `all`.
    #[arg(long, default_value = "smulders")]
    family: String,
    /// Multi-start seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Jam density (m²/(km·m)).
    #[arg(long, default_value_t = 1000.0)]
    ka_jam: f64,
    /// Fit ω freely for the two-regime families.
    #[arg(long)]
    free_omega: bool,
    /// Write `params.csv` and `fit.csv` here instead of standard output.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct DiagramArgs {
    /// Parameter CSV; the first row is used.
    #[arg(long, conflicts_with = "location")]
    params: Option<PathBuf>,
    /// Built-in stream diagram by location (chennai, surat, guwahati).
    #[arg(long)]
    location: Option<String>,
    /// Replace ω by the value that makes the flow continuous.
    #[arg(long)]
    derive_omega: bool,
}

#[derive(Args)]
struct RiemannArgs {
    #[command(flatten)]
    diagram: DiagramArgs,
    /// Upstream density (m²/(km·m)).
    #[arg(long)]
    kl: f64,
    /// Downstream density (m²/(km·m)).
    #[arg(long)]
    kr: f64,
    /// Half-width of the sampled road around the discontinuity (m).
    #[arg(long, default_value_t = 500.0)]
    extent: f64,
    /// Simulated time (s).
    #[arg(long, default_value_t = 60.0)]
    horizon: f64,
    /// Sample positions in the density grid.
    #[arg(long, default_value_t = 201)]
    nx: usize,
    /// Sample times in the density grid.
    #[arg(long, default_value_t = 61)]
    nt: usize,
    /// Write `events.csv` and `density.csv` here; otherwise the events go
    /// to standard output.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct MocArgs {
    #[command(flatten)]
    diagram: DiagramArgs,
    /// Initial blocks CSV `x0,x1,ka` on top of the background density.
    #[arg(long)]
    input: PathBuf,
    /// Road length (m) over which the initial data are given.
    #[arg(long)]
    length: f64,
    /// Background density (m²/(km·m)).
    #[arg(long, default_value_t = 0.0)]
    background: f64,
    /// Simulated time (s).
    #[arg(long)]
    horizon: f64,
    /// Linear pieces per curved flux branch.
    #[arg(long, default_value_t = MocOptions::default().n_fan)]
    n_fan: usize,
    /// Sample positions in the density grid.
    #[arg(long, default_value_t = 201)]
    nx: usize,
    /// Sample times in the density grid.
    #[arg(long, default_value_t = 61)]
    nt: usize,
    /// Write `events.csv` and `density.csv` here; otherwise the events go
    /// to standard output.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// `platoon-mixed`, `platoon-separate` or a scenario file.
    #[arg(long)]
    scenario: String,
    /// Cell length (m); overrides the scenario.
    #[arg(long)]
    dx: Option<f64>,
    /// Time step (s); overrides the scenario.
    #[arg(long)]
    dt: Option<f64>,
    /// Simulated time (s); overrides the scenario.
    #[arg(long)]
    horizon: Option<f64>,
    /// Keep every n-th step.
    #[arg(long, default_value_t = 1)]
    record_every: usize,
    /// Directory for `density_<category>.csv` and `fluxes.csv`.
    #[arg(long)]
    output_dir: PathBuf,
}

/// Error carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

const INPUT: u8 = 2;
const NUMERICAL: u8 = 3;
const DOMAIN: u8 = 4;

fn fd_code(e: &FdError) -> u8 {
    match e {
        FdError::Domain { .. } | FdError::InvalidParams { .. } | FdError::Unsupported(_) => DOMAIN,
        FdError::UnknownFamily(_) | FdError::InsufficientObservations { .. } => INPUT,
        FdError::CalibrationFailed { .. } => NUMERICAL,
    }
}

fn areal_code(e: &ArealError) -> u8 {
    match e {
        ArealError::UndefinedSpeed | ArealError::WindowTooLarge { .. } => NUMERICAL,
        _ => INPUT,
    }
}

fn ctm_code(e: &CtmError) -> u8 {
    match e {
        CtmError::Fd(e) => fd_code(e),
        CtmError::Cfl { .. } => DOMAIN,
        CtmError::InvalidScenario(_) => INPUT,
        CtmError::Conservation { .. } => NUMERICAL,
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        let code = match &e {
            IoError::Fd(f) => fd_code(f),
            IoError::Ctm(c) => ctm_code(c),
            IoError::Areal(a) => areal_code(a),
            _ => INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self::input(e.to_string())
    }
}

impl From<FdError> for Failure {
    fn from(e: FdError) -> Self {
        Self {
            code: fd_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<ArealError> for Failure {
    fn from(e: ArealError) -> Self {
        Self {
            code: areal_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<CtmError> for Failure {
    fn from(e: CtmError) -> Self {
        Self {
            code: ctm_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<KinematicError> for Failure {
    fn from(e: KinematicError) -> Self {
        let code = match &e {
            KinematicError::Fd(f) => fd_code(f),
            KinematicError::InvalidInitial(_) | KinematicError::InvalidHorizon(_) => INPUT,
            KinematicError::InteractionCap { .. } => NUMERICAL,
            _ => DOMAIN,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<SteadyError> for Failure {
    fn from(e: SteadyError) -> Self {
        let code = match &e {
            SteadyError::Areal(a) => areal_code(a),
            SteadyError::DegenerateInterval { .. } => NUMERICAL,
            _ => INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn open(path: &Path) -> Result<File, Failure> {
    File::open(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

/// Output sink: a file under the output directory, or standard output.
fn sink(dir: Option<&Path>, name: &str) -> Result<Box<dyn Write>, Failure> {
    match dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            Ok(Box::new(BufWriter::new(File::create(d.join(name))?)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

fn load_trajectories(data: &TrajectoryInput) -> Result<(Vec<VehicleCategory>, Vec<Trajectory>), Failure> {
    let cats = fio::read_categories(open(&data.categories)?)
        .map_err(|e| Failure::input(format!("{}: {e}", data.categories.display())))?;
    let trs = fio::read_trajectories(open(&data.input)?, &cats)
        .map_err(|e| Failure::input(format!("{}: {e}", data.input.display())))?;
    Ok((cats, trs))
}

fn variables(args: &VariablesArgs) -> Outcome {
    let (_, trs) = load_trajectories(&args.data)?;
    let rows = args
        .regions
        .iter()
        .map(|text| {
            let region = fio::parse_region(text, args.data.width)?;
            Ok(VariablesRow::new(&region, &measure_region(&trs, &region).state()))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let mut out = sink(args.output_dir.as_deref(), "variables.csv")?;
    fio::write_variables(&mut out, &rows)?;
    out.flush()?;
    Ok(())
}

fn steady(args: &SteadyArgs) -> Outcome {
    let (_, trs) = load_trajectories(&args.data)?;
    let passages = steady_state::passages_at(&trs, args.detector_x);
    let params = DetectionParams {
        min_duration: args.min_duration,
        max_residual: args.max_residual,
    };
    let windows =
        steady_state::steady_windows_from_passages(&passages, args.detector_length, args.data.width, &params)?;
    let rows: Vec<WindowRow> = windows.iter().map(WindowRow::from).collect();
    let mut out = sink(args.output_dir.as_deref(), "windows.csv")?;
    fio::write_windows(&mut out, &rows)?;
    out.flush()?;
    Ok(())
}

fn calibrate(args: &CalibrateArgs) -> Outcome {
    let obs = fio::read_observations(open(&args.input)?)?;
    let families: Vec<FdFamily> = if args.family.eq_ignore_ascii_case("all") {
        FdFamily::ALL.to_vec()
    } else {
        vec![args.family.parse()?]
    };
    let options = CalibrationOptions {
        k_jam: density(args.ka_jam),
        seed: args.seed,
        free_omega: args.free_omega,
        ..CalibrationOptions::default()
    };
    let mut params = Vec::new();
    let mut reports = Vec::new();
    for family in families {
        let cal = fd::calibrate(family, &obs, &options)?;
        reports.push((family, fio::FitRow::from(&cal.report)));
        params.push(cal.params);
    }
    let dir = args.output_dir.as_deref();
    let mut out = sink(dir, "params.csv")?;
    writeln!(out, "# seed={}", args.seed)?;
    fio::write_params(&mut out, &params)?;
    out.flush()?;
    match dir {
        Some(_) => {
            let mut fit = sink(dir, "fit.csv")?;
            fio::write_fit_reports(&mut fit, args.seed, &reports)?;
            fit.flush()?;
        }
        None => fio::write_fit_reports(io::stderr().lock(), args.seed, &reports)?,
    }
    Ok(())
}

fn load_diagram(args: &DiagramArgs) -> Result<FdParams, Failure> {
    let params = match (&args.params, &args.location) {
        (Some(path), _) => fio::read_params(open(path)?)?
            .into_iter()
            .next()
            .ok_or_else(|| Failure::input(format!("{}: no parameter rows", path.display())))?,
        (None, Some(loc)) => tables::stream(loc).ok_or_else(|| Failure::input(format!("unknown location `{loc}`")))?,
        (None, None) => return Err(Failure::input("give --params or --location")),
    };
    if !args.derive_omega {
        return Ok(params);
    }
    Ok(match params {
        FdParams::Smulders {
            v_max,
            v_crit,
            k_crit,
            k_jam,
            ..
        } => FdParams::Smulders {
            v_max,
            v_crit,
            k_crit,
            omega: fd::wave_speed_congested(v_crit, k_crit, k_jam)?,
            k_jam,
        },
        FdParams::Daganzo {
            v_max, k_crit, k_jam, ..
        } => FdParams::Daganzo {
            v_max,
            k_crit,
            omega: fd::wave_speed_congested(v_max, k_crit, k_jam)?,
            k_jam,
        },
        other => other,
    })
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

fn write_plot_files(dir: Option<&Path>, events: &[WaveEvent], xs: &[f64], ts: &[f64], values: &[Vec<f64>]) -> Outcome {
    let mut out = sink(dir, "events.csv")?;
    fio::write_events(&mut out, events)?;
    out.flush()?;
    if dir.is_some() {
        let mut g = sink(dir, "density.csv")?;
        fio::write_grid(&mut g, xs, ts, values)?;
        g.flush()?;
    }
    Ok(())
}

fn riemann(args: &RiemannArgs) -> Outcome {
    let params = load_diagram(&args.diagram)?;
    let (kl, kr) = (density(args.kl), density(args.kr));
    kinematic::require_concave(&params)?;
    let fan = kinematic::solve_riemann(&params, kl, kr)?;
    let mut events = Vec::new();
    for w in &fan.waves {
        match *w {
            Wave::Shock { left, right, speed } => events.push(WaveEvent {
                t: 0.0,
                x: 0.0,
                kind: WaveKind::Shock,
                left,
                right,
                speed,
            }),
            Wave::Rarefaction { left, right, .. } => {
                let (lo, hi) = w.speed_range();
                let edges: &[f64] = if hi > lo { &[lo, hi] } else { &[lo] };
                for &speed in edges {
                    events.push(WaveEvent {
                        t: 0.0,
                        x: 0.0,
                        kind: WaveKind::Wavelet,
                        left,
                        right,
                        speed,
                    });
                }
            }
        }
    }
    let xs = linspace(-args.extent, args.extent, args.nx);
    let ts = linspace(0.0, args.horizon, args.nt);
    let values: Vec<Vec<f64>> = ts
        .iter()
        .map(|&t| {
            xs.iter()
                .map(|&x| {
                    if t > 0.0 {
                        fan.sample(&params, x / t)
                    } else if x < 0.0 {
                        kl
                    } else {
                        kr
                    }
                })
                .collect()
        })
        .collect();
    write_plot_files(args.output_dir.as_deref(), &events, &xs, &ts, &values)
}

fn moc(args: &MocArgs) -> Outcome {
    let params = load_diagram(&args.diagram)?;
    let mut rdr_blocks = Vec::new();
    for (i, line) in fs::read_to_string(&args.input)
        .map_err(|e| Failure::input(format!("{}: {e}", args.input.display())))?
        .lines()
        .enumerate()
    {
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() || (i == 0 && content.starts_with('x')) {
            continue;
        }
        let f: Vec<f64> = content
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::input(format!("{}: line {}: {e}", args.input.display(), i + 1)))?;
        let [x0, x1, ka] = f[..] else {
            return Err(Failure::input(format!(
                "{}: line {}: expected x0,x1,ka",
                args.input.display(),
                i + 1
            )));
        };
        rdr_blocks.push((x0, x1, density(ka)));
    }
    let init = PiecewiseInitialCondition::from_blocks(args.length, density(args.background), &rdr_blocks)?;
    let options = MocOptions {
        n_fan: args.n_fan,
        ..MocOptions::default()
    };
    let sol = kinematic::moc_solve(&params, &init, args.horizon, &options)?;
    let xs = linspace(0.0, args.length, args.nx);
    let ts = linspace(0.0, args.horizon, args.nt);
    let values = sol.raster(&xs, &ts);
    write_plot_files(args.output_dir.as_deref(), sol.events(), &xs, &ts, &values)
}

fn load_scenario(args: &SimulateArgs) -> Result<(Scenario, f64), Failure> {
    let dx = args.dx.unwrap_or(scenarios::DX);
    let dt = args.dt.unwrap_or(scenarios::DT);
    let built = match args.scenario.as_str() {
        "platoon-mixed" => Some(scenarios::mixed_platoon(dx, dt)?),
        "platoon-separate" => Some(scenarios::separate_platoons(dx, dt)?),
        _ => None,
    };
    if let Some(sc) = built {
        sc.validate()?;
        return Ok((sc, args.horizon.unwrap_or(scenarios::HORIZON)));
    }
    let path = Path::new(&args.scenario);
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let mut cfg = fio::parse_scenario(&text).map_err(|e| {
        let f = Failure::from(e);
        Failure {
            message: format!("{}: {}", path.display(), f.message),
            ..f
        }
    })?;
    if let Some(dx) = args.dx {
        cfg.dx = dx;
    }
    if let Some(dt) = args.dt {
        cfg.dt = dt;
    }
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    Ok((cfg.build()?, cfg.horizon))
}

fn simulate(args: &SimulateArgs) -> Outcome {
    let (scenario, horizon) = load_scenario(args)?;
    let options = RunOptions {
        record_every: args.record_every.max(1),
        log_fluxes: true,
    };
    let result = ctm::run(scenario, horizon, &options)?;
    let dir = Some(args.output_dir.as_path());
    for (i, name) in result.categories.iter().enumerate() {
        let mut out = sink(dir, &format!("density_{name}.csv"))?;
        fio::write_category_history(&mut out, &result, i)?;
        out.flush()?;
    }
    let mut out = sink(dir, "fluxes.csv")?;
    fio::write_fluxes(&mut out, &result)?;
    out.flush()?;
    let last = result.densities.last().map(|s| s.as_slice()).unwrap_or_default();
    for (name, k) in result.categories.iter().zip(last) {
        let peak = k.iter().copied().fold(0.0, f64::max);
        eprintln!(
            "{name}: peak {} m²/(km·m) at t = {} s",
            fio::fmt6(to_density_display(peak)),
            fio::fmt6(*result.times.last().unwrap_or(&0.0))
        );
    }
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Variables(a) => variables(a),
        Command::Steady(a) => steady(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Riemann(a) => riemann(a),
        Command::Moc(a) => moc(a),
        Command::Simulate(a) => simulate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
