//! Command-line front end for the chain criticality engine.
//!
//! Every subcommand reads a chain document, prints advisory warnings to
//! stderr, writes its outputs into `--out`, and reports the headline numbers
//! on stdout. Exit codes: 0 on success, 2 for validation and input problems,
//! 3 for numeric failures (stalled kernels, exhausted samplers).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chaincrit::model::ChainSpec;
use chaincrit::optimize::{Catalog, Objective, OptimizeContext, TrajectoryPoint};
use chaincrit::spectra::{mb_pdf, MBSpectrum};
use chaincrit::{diffusion, montecarlo, optimize, transport};
use chaincrit::{Error, ErrorKind};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "chaincrit",
    version,
    about = "Criticality analysis for moderated supply chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a chain document and write its criticality report
    Analyze {
        /// Chain document (JSON)
        spec: PathBuf,
        /// Output directory for report.json
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Last-mile escape estimator (rate-ratio or pointwise-mean)
        #[arg(long, default_value = transport::DEFAULT_MODE)]
        lastmile_escape_mode: String,
        /// Print the normalized chain document to stdout and exit
        #[arg(long)]
        echo_spec: bool,
    },
    /// Tabulate the forwarding escape probability vs enthalpy
    Profile {
        spec: PathBuf,
        /// Number of profile rows, log-spaced from H_max down to H_c
        #[arg(long, default_value_t = 256)]
        steps: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Solve the retail-region flux profile and write it as CSV
    Diffuse {
        spec: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Override the feasible-radius multiple from the document
        #[arg(long)]
        feasibility_multiple: Option<f64>,
    },
    /// Tabulate the first- or last-mile enthalpy spectrum
    Sample {
        spec: PathBuf,
        /// Which equilibrium spectrum to tabulate
        #[arg(long, value_enum, default_value_t = Mile::First)]
        mile: Mile,
        /// Number of tabulated rows
        #[arg(long, default_value_t = 256)]
        points: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Simulate items one by one and write stochastic estimates
    Montecarlo {
        spec: PathBuf,
        /// Number of simulated items
        #[arg(long, default_value_t = 100_000)]
        n: u64,
        /// Random seed; falls back to CHAIN_SEED, then 0
        #[arg(long, env = "CHAIN_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Pick the best mediator selection from a catalog under a budget
    Optimize {
        /// Base chain whose mediators the selection replaces
        spec: PathBuf,
        /// Catalog document (candidates, budget, max_copies)
        #[arg(long)]
        catalog: PathBuf,
        /// What to maximize: k (whole-chain product) or ma (mediation ability)
        #[arg(long, default_value = "k")]
        objective: String,
        /// Search strategy (exhaustive or anneal)
        #[arg(long, default_value = "anneal")]
        method: String,
        /// Random seed; falls back to CHAIN_SEED, then 0
        #[arg(long, env = "CHAIN_SEED", default_value_t = 0)]
        seed: u64,
        /// Annealing iterations; ignored by exhaustive search
        #[arg(long, default_value_t = 10_000)]
        iterations: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mile {
    /// Entry spectrum at the first-mile temperature
    First,
    /// Temperature-adjusted spectrum the last mile draws from
    Last,
}

enum AppError {
    Engine(Error),
    Io(PathBuf, std::io::Error),
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Engine(e) => e.fmt(f),
            AppError::Io(path, e) => write!(f, "{}: {e}", path.display()),
        }
    }
}

impl From<Error> for AppError {
    fn from(e: Error) -> Self {
        AppError::Engine(e)
    }
}

impl AppError {
    fn exit_code(&self) -> u8 {
        match self {
            AppError::Engine(e) => match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::Numeric => 3,
            },
            AppError::Io(..) => 2,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), AppError> {
    match command {
        Command::Analyze {
            spec,
            out,
            lastmile_escape_mode,
            echo_spec,
        } => analyze(&spec, &out, &lastmile_escape_mode, echo_spec),
        Command::Profile { spec, steps, out } => profile(&spec, steps, &out),
        Command::Diffuse {
            spec,
            out,
            feasibility_multiple,
        } => diffuse(&spec, &out, feasibility_multiple),
        Command::Sample {
            spec,
            mile,
            points,
            out,
        } => sample(&spec, mile, points, &out),
        Command::Montecarlo { spec, n, seed, out } => montecarlo(&spec, n, seed, &out),
        Command::Optimize {
            spec,
            catalog,
            objective,
            method,
            seed,
            iterations,
            out,
        } => optimize_cmd(&spec, &catalog, &objective, &method, seed, iterations, &out),
    }
}

fn read_text(path: &Path) -> Result<String, AppError> {
    fs::read_to_string(path).map_err(|e| AppError::Io(path.to_owned(), e))
}

fn read_chain(path: &Path) -> Result<ChainSpec, AppError> {
    Ok(ChainSpec::from_json(&read_text(path)?)?)
}

/// Parses, validates, and prints any advisory warnings to stderr.
fn load_chain(path: &Path) -> Result<ChainSpec, AppError> {
    let chain = read_chain(path)?;
    for warning in chain.validate()? {
        eprintln!("warning: {warning}");
    }
    Ok(chain)
}

fn write_file(out: &Path, name: &str, contents: &str) -> Result<PathBuf, AppError> {
    fs::create_dir_all(out).map_err(|e| AppError::Io(out.to_owned(), e))?;
    let path = out.join(name);
    fs::write(&path, contents).map_err(|e| AppError::Io(path.clone(), e))?;
    Ok(path)
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn analyze(spec: &Path, out: &Path, mode: &str, echo_spec: bool) -> Result<(), AppError> {
    if echo_spec {
        let chain = read_chain(spec)?;
        print!("{}", chain.to_canonical_json());
        return Ok(());
    }
    let chain = load_chain(spec)?;
    let report = transport::analyze_with_mode(&chain, mode)?;
    let path = write_file(out, "report.json", &to_pretty_json(&report))?;
    println!(
        "k = {}  k_eff = {}  ({})",
        report.k,
        report.k_eff,
        if report.is_critical {
            "self-sustaining"
        } else {
            "subcritical"
        }
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn profile(spec: &Path, steps: usize, out: &Path) -> Result<(), AppError> {
    let chain = load_chain(spec)?;
    let profile = transport::escape_profile(&chain, steps)?;
    let mut csv = String::from("H,lethargy,p,step_loss_share\n");
    for pt in &profile.points {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            pt.h, pt.lethargy, pt.p, pt.step_loss_share
        ));
    }
    let path = write_file(out, "profile.csv", &csv)?;
    let last = profile.points.last().expect("profile has at least 2 rows");
    println!("p(H_c) = {}", last.p);
    println!("wrote {}", path.display());
    Ok(())
}

fn diffuse(spec: &Path, out: &Path, feasibility_multiple: Option<f64>) -> Result<(), AppError> {
    let chain = load_chain(spec)?;
    let Some(mut diffusion_spec) = chain.diffusion else {
        return Err(Error::Schema(
            "chain document: the diffusion section is missing, nothing to solve".into(),
        )
        .into());
    };
    if let Some(multiple) = feasibility_multiple {
        diffusion_spec.feasibility_multiple = multiple;
    }
    let flux = diffusion::flux_profile_numeric(&diffusion_spec)?;
    let radius = diffusion::feasibility_radius(&diffusion_spec)?;
    let mut csv = String::from("x,phi,phi_over_phi0\n");
    for pt in &flux.points {
        csv.push_str(&format!(
            "{},{},{}\n",
            pt.x,
            pt.phi,
            pt.phi / diffusion_spec.phi0
        ));
    }
    let path = write_file(out, "flux.csv", &csv)?;
    println!(
        "feasibility radius = {} (multiple {})",
        radius,
        diffusion_spec.effective_multiple()
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn sample(spec: &Path, mile: Mile, points: usize, out: &Path) -> Result<(), AppError> {
    if points < 2 {
        return Err(Error::Domain(format!("sample needs at least 2 points, got {points}")).into());
    }
    let chain = load_chain(spec)?;
    let (spectrum, h_hi) = match mile {
        Mile::First => {
            let spectrum = MBSpectrum::new(chain.firstmile_temperature(), chain.total_flow)?;
            // 12 temperatures cover all but ~1e-9 of the spectrum's weight.
            (spectrum, 12.0 * spectrum.t)
        }
        Mile::Last => (transport::lastmile_spectrum(&chain)?, chain.h_c),
    };
    let mut csv = String::from("H,pdf,w\n");
    for i in 0..points {
        let h = h_hi * i as f64 / (points - 1) as f64;
        let pdf = mb_pdf(&spectrum, h)?;
        csv.push_str(&format!("{},{},{}\n", h, pdf, pdf * spectrum.w_total));
    }
    let path = write_file(out, "spectrum.csv", &csv)?;
    println!("T = {}  total flow = {}", spectrum.t, spectrum.w_total);
    println!("wrote {}", path.display());
    Ok(())
}

fn montecarlo(spec: &Path, n: u64, seed: u64, out: &Path) -> Result<(), AppError> {
    let chain = load_chain(spec)?;
    let result = montecarlo::simulate(&chain, n, seed)?;
    let json_path = write_file(out, "mc.json", &to_pretty_json(&result))?;
    // Bin j spans [edges[j], edges[j+1]); its count is the items available at
    // the lower edge. Counts are non-increasing, so empty bins are a suffix
    // and drop out as gaps rather than zero rows.
    let mut csv = String::from("u_lo,u_hi,count\n");
    let hist = &result.histogram;
    for j in 0..hist.available.len() - 1 {
        let count = hist.available[j];
        if count == 0 {
            break;
        }
        csv.push_str(&format!("{},{},{}\n", hist.edges[j], hist.edges[j + 1], count));
    }
    let csv_path = write_file(out, "q_histogram.csv", &csv)?;
    println!(
        "p_e = {} +- {}",
        result.p_e.value, result.p_e.std_error
    );
    println!("p   = {} +- {}", result.p.value, result.p.std_error);
    println!(
        "p_c = {} +- {}",
        result.p_c.value, result.p_c.std_error
    );
    println!(
        "k   = {} +- {}",
        result.k_hat.value, result.k_hat.std_error
    );
    println!("wrote {}", json_path.display());
    println!("wrote {}", csv_path.display());
    Ok(())
}

/// What `optimize` writes: the winning selection plus enough run metadata to
/// reproduce it.
#[derive(Serialize)]
struct OptimumDocument<'a> {
    strategy: &'a str,
    objective: &'a str,
    seed: u64,
    iterations: u64,
    evaluations: u64,
    selected: Vec<&'a str>,
    selection: &'a optimize::Selection,
    trajectory: &'a [TrajectoryPoint],
}

fn optimize_cmd(
    spec: &Path,
    catalog_path: &Path,
    objective: &str,
    method: &str,
    seed: u64,
    iterations: u64,
    out: &Path,
) -> Result<(), AppError> {
    let chain = load_chain(spec)?;
    let catalog = Catalog::from_json(&read_text(catalog_path)?)?;
    let objective: Objective = objective.parse()?;
    let strategy = optimize::strategy(method)?;
    let ctx = OptimizeContext {
        catalog: &catalog,
        base_chain: &chain,
        objective,
        seed,
        iterations,
    };
    let outcome = strategy.optimize(&ctx)?;
    let selected: Vec<&str> = outcome
        .selection
        .indices
        .iter()
        .map(|&i| catalog.candidates[i].name.as_str())
        .collect();
    let document = OptimumDocument {
        strategy: strategy.name(),
        objective: objective.label(),
        seed,
        iterations,
        evaluations: outcome.evaluations,
        selected,
        selection: &outcome.selection,
        trajectory: &outcome.trajectory,
    };
    let path = write_file(out, "optimum.json", &to_pretty_json(&document))?;
    println!(
        "best {} = {}  cost = {}  selection = {:?}",
        objective.label(),
        outcome.selection.objective,
        outcome.selection.total_cost,
        outcome.selection.indices
    );
    println!("wrote {}", path.display());
    Ok(())
}
