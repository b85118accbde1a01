use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sociotraffic::analysis::{StabilityReport, fit_decay};
use sociotraffic::model::{fd_density_grid, fd_to_csv, fundamental_diagram};
use sociotraffic::route_choice::{Route, RouteChoiceOutcome};
use sociotraffic::scenario::Scenario;
use sociotraffic::solver::{Trajectory, run_simulation};

#[derive(Parser)]
#[command(name = "sociotraffic", version, about = "Route choice, stability analysis and simulation of two-class traffic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the route-choice experiment and write per-vehicle values and the class split.
    Choice(Common),
    /// Eigenvalues, hyperbolicity and boundary certificate at the operating point.
    Analyze(Common),
    /// Integrate the perturbed operating point and write states, norms and decay fits.
    Simulate(Common),
    /// Fundamental-diagram table u(d) for a list of cost gradients.
    Fd(FdArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Class splits to run instead of the scenario's own, e.g. `alpha=0.35,0.45,0.55`.
    #[arg(long, value_parser = parse_sweep)]
    sweep: Option<AlphaList>,
}

#[derive(Args)]
struct FdArgs {
    /// Optional; only its name is used for the output file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-0.2,0,0.2")]
    dhdx: Vec<f64>,
    /// Density samples per line.
    #[arg(long, default_value_t = 101)]
    points: usize,
}

#[derive(Clone)]
struct AlphaList(Vec<f64>);

fn parse_sweep(s: &str) -> std::result::Result<AlphaList, String> {
    let list = s
        .strip_prefix("alpha=")
        .ok_or_else(|| format!("expected alpha=<list>, got {s:?}"))?;
    list.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<std::result::Result<_, _>>()
        .map(AlphaList)
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] sociotraffic::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
    #[error("operating point is not strictly hyperbolic at alpha = {0}")]
    NotHyperbolic(f64),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use sociotraffic::Error as E;
        match self {
            CliError::Io { .. } => 1,
            CliError::Usage(_) => 2,
            CliError::NotHyperbolic(_) => 7,
            CliError::Core(e) => match e {
                E::Parse { .. } => 3,
                E::Validation(_) | E::InvalidParameter(_) => 4,
                E::DegenerateSplit { .. } => 5,
                E::Cfl { .. } | E::NonFinite { .. } => 6,
                E::NotHyperbolic(_) => 7,
                _ => 1,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Choice(args) => cmd_choice(&args),
        Command::Analyze(args) => cmd_analyze(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Fd(args) => cmd_fd(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load(args: &Common) -> Result<Scenario> {
    let text = fs::read_to_string(&args.scenario).map_err(|source| CliError::Io {
        path: args.scenario.clone(),
        source,
    })?;
    let mut scenario = Scenario::from_json(&text)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Io { path: path.clone(), source })?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn vehicles_csv(outcome: &RouteChoiceOutcome) -> String {
    let mut s = String::from("vehicle,cpt_route1,cpt_route2,p_route1,p_route2,route\n");
    for (k, v) in outcome.vehicles.iter().enumerate() {
        let route = match v.route {
            Route::One => 1,
            Route::Two => 2,
        };
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            k, v.cpt_values[0], v.cpt_values[1], v.probabilities[0], v.probabilities[1], route
        ));
    }
    s
}

fn cmd_choice(args: &Common) -> Result<()> {
    let scenario = load(args)?;
    if scenario.social.is_none() {
        return Err(CliError::Usage(format!(
            "scenario {:?} gives alpha directly; it has no route-choice experiment",
            scenario.name
        )));
    }
    let resolved = scenario.resolve_alpha()?;
    let outcome = resolved.choice.expect("social scenario yields a choice outcome");
    if scenario.outputs.vehicles {
        write(&args.out, &format!("{}_choice_vehicles.csv", scenario.name), &vehicles_csv(&outcome))?;
    }
    write(
        &args.out,
        &format!("{}_choice_summary.csv", scenario.name),
        &format!("m1,m2,alpha,kappa\n{},{},{},{}\n", outcome.m1, outcome.m2, outcome.alpha, outcome.kappa),
    )?;
    println!("M1 = {}, M2 = {}, alpha = {}", outcome.m1, outcome.m2, outcome.alpha);
    Ok(())
}

fn cmd_analyze(args: &Common) -> Result<()> {
    let scenario = load(args)?;
    let alpha = scenario.resolve_alpha()?.alpha;
    let g_b = scenario.solver_config().g_b;
    let road = scenario.main_road();
    let mu = scenario.analysis.mu_grid();
    let report = StabilityReport::new(&scenario.operating_point, alpha, &g_b, road, &mu);
    let name = &scenario.name;
    write(&args.out, &format!("{name}_report.txt"), &report.to_text())?;
    write(&args.out, &format!("{name}_eigenvalues.csv"), &report.eigenvalues_csv())?;
    write(&args.out, &format!("{name}_certificate.csv"), &report.certificate_csv())?;

    let sweep = args.sweep.clone().map(|l| l.0).unwrap_or_else(|| scenario.analysis.sweep.clone());
    if !sweep.is_empty() {
        let mut csv = String::from(StabilityReport::SWEEP_HEADER);
        for a in sweep {
            check_alpha(a)?;
            csv.push_str(&StabilityReport::new(&scenario.operating_point, a, &g_b, road, &mu).sweep_row());
        }
        write(&args.out, &format!("{name}_sweep.csv"), &csv)?;
    }
    print!("{}", report.to_text());
    if !report.hyperbolicity.hyperbolic {
        return Err(CliError::NotHyperbolic(alpha));
    }
    Ok(())
}

fn check_alpha(a: f64) -> Result<()> {
    if a > 0.0 && a < 1.0 {
        Ok(())
    } else {
        Err(sociotraffic::Error::Validation(vec![format!("sweep: alpha {a} must lie in (0,1)")]).into())
    }
}

const DECAY_HEADER: &str =
    "alpha,epsilon1,prefactor1,r_squared1,epsilon2,prefactor2,r_squared2,final_ratio1,final_ratio2,steps,floored\n";

fn decay_row(scenario: &Scenario, traj: &Trajectory) -> String {
    let times = traj.times();
    let a = &scenario.analysis;
    let fit = |class: usize| match fit_decay(&times, &traj.class_norms(class), a.tail_fraction, a.noise_floor) {
        Ok(f) => format!("{},{},{}", f.epsilon, f.prefactor, f.r_squared),
        Err(e) => {
            eprintln!("warning: alpha = {}: class {} {e}", traj.alpha, class + 1);
            "NaN,NaN,NaN".into()
        }
    };
    let first = traj.norms[0];
    let last = traj.norms[traj.norms.len() - 1];
    let ratio = |k: usize| if first[k] > 0.0 { last[k] / first[k] } else { f64::NAN };
    format!(
        "{},{},{},{},{},{},{}\n",
        traj.alpha,
        fit(0),
        fit(1),
        ratio(0),
        ratio(1),
        traj.steps,
        traj.floored
    )
}

fn cmd_simulate(args: &Common) -> Result<()> {
    let scenario = load(args)?;
    let alphas = match &args.sweep {
        Some(list) => list.0.clone(),
        None if !scenario.analysis.sweep.is_empty() => scenario.analysis.sweep.clone(),
        None => vec![scenario.resolve_alpha()?.alpha],
    };
    for &a in &alphas {
        check_alpha(a)?;
    }
    let config = scenario.solver_config();
    // independent jobs; results are collected in input order
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = alphas
            .iter()
            .map(|&a| {
                let config = &config;
                s.spawn(move || run_simulation(config, a))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });

    let name = &scenario.name;
    let mut decay = String::from(DECAY_HEADER);
    for result in results {
        let traj = result?;
        for w in &traj.warnings {
            eprintln!("warning: {w}");
        }
        let tag = format!("{name}_alpha{}", traj.alpha);
        if scenario.outputs.states {
            write(&args.out, &format!("{tag}_states.csv"), &traj.states_csv())?;
        }
        if scenario.outputs.norms {
            write(&args.out, &format!("{tag}_norms.csv"), &traj.norms_csv())?;
        }
        decay.push_str(&decay_row(&scenario, &traj));
    }
    write(&args.out, &format!("{name}_decay.csv"), &decay)?;
    Ok(())
}

fn cmd_fd(args: &FdArgs) -> Result<()> {
    let name = match &args.scenario {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            Scenario::from_json(&text)?.name
        }
        None => "fd".to_string(),
    };
    if args.points < 2 {
        return Err(CliError::Usage("--points must be at least 2".into()));
    }
    let d = fd_density_grid(&args.dhdx, args.points);
    let rows = fundamental_diagram(&args.dhdx, &d);
    write(&args.out, &format!("{name}_fd.csv"), &fd_to_csv(&rows))?;
    Ok(())
}
