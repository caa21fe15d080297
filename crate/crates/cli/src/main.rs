//! `intercon` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 invalid input,
//! 3 infeasible design or schedule, 4 divergence during simulation.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use intercon::analysis::{
    self, certify_nsps, check_envelopes, consensus_metrics, EnvelopeReport, TrackingSeries, MIN_ENSEMBLE,
};
use intercon::design::{residuals, ChainSpec, RESIDUAL_TOL};
use intercon::engine::{certified_schedule, DesignSummary, EnsembleSummary};
use intercon::{Error, ExperimentConfig, SimTrace, Simulation};
use serde::Serialize;

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "intercon", version, about = "Leader tracking under intermittent communication and colored noise")]
struct Cli {
    /// TOML experiment file; omitted sections use the reference experiment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (initial states; ensemble members derive their noise from it).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overrides `output.dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// `section.key=value` override, repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for P and K and report the resilience constants.
    Design,
    /// Generate the ON/OFF schedule and certify every period.
    CertifySchedule,
    /// One closed-loop run: trace CSV, schedule CSV and envelope report.
    Simulate,
    /// Ensemble run with summary statistics and the probability certificate.
    Montecarlo {
        #[arg(long, default_value_t = 20)]
        runs: usize,
        /// Allowed fraction of runs outside the band.
        #[arg(long, default_value_t = 0.1)]
        l0: f64,
    },
    /// Re-analyse a trace CSV written by `simulate`.
    Report {
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Diverged(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match &e {
                e if e.is_infeasibility() => EXIT_INFEASIBLE,
                Error::Divergence { .. } => EXIT_DIVERGED,
                Error::Io(_) => EXIT_FAILURE,
                _ => EXIT_VALIDATION,
            })
        }
        Err(Failure::Diverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path, &overrides)?,
        None => ExperimentConfig::defaults_with(&overrides)?,
    };
    if let Some(dir) = &cli.out_dir {
        cfg.output.dir = dir.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load(cli)?;
    match &cli.command {
        Command::Design => cmd_design(&cfg),
        Command::CertifySchedule => cmd_certify(&cfg),
        Command::Simulate => cmd_simulate(&cfg),
        Command::Montecarlo { runs, l0 } => cmd_montecarlo(&cfg, *runs, *l0),
        Command::Report { trace } => cmd_report(&cfg, trace),
    }
}

fn out_file(cfg: &ExperimentConfig, name: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(&cfg.output.dir)?;
    Ok(cfg.output.dir.join(name))
}

fn save(cfg: &ExperimentConfig, name: &str, text: &str) -> Result<(), Failure> {
    fs::write(out_file(cfg, name)?, text)?;
    Ok(())
}

#[derive(Serialize)]
struct DesignRecord {
    order: usize,
    n_followers: usize,
    lambda_min: f64,
    c0: u32,
    pinning_product: f64,
    c1: f64,
    c2: f64,
    c3: f64,
    c_z: f64,
    p: Vec<Vec<f64>>,
    k: Vec<f64>,
    p_norm: f64,
    c_alpha1: f64,
    c_beta: f64,
    delta_alpha: f64,
    delta_beta: f64,
    max_off_ratio: f64,
    riccati_max_eig: f64,
    growth_max_eig: f64,
    residual_tolerance: f64,
    p_source: String,
    riccati_margin: Option<f64>,
}

fn design_record(summary: &DesignSummary, order: usize) -> Result<DesignRecord, Error> {
    let out = &summary.output;
    let spec = ChainSpec::new(order)?;
    let res = residuals(&spec, &out.p, summary.inputs.c1, summary.inputs.c3);
    let (p_source, margin) = match &summary.riccati {
        Some(sol) => ("riccati".to_string(), Some(sol.margin)),
        None => ("override".to_string(), None),
    };
    Ok(DesignRecord {
        order,
        n_followers: summary.graph.n_followers(),
        lambda_min: summary.lambda_min,
        c0: summary.inputs.c0,
        pinning_product: summary.pinning_product(),
        c1: summary.inputs.c1,
        c2: summary.inputs.c2,
        c3: summary.inputs.c3,
        c_z: summary.inputs.c_z,
        p: out.p.row_iter().map(|r| r.iter().copied().collect()).collect(),
        k: out.k.iter().copied().collect(),
        p_norm: out.p_norm,
        c_alpha1: out.c_alpha1,
        c_beta: out.c_beta,
        delta_alpha: out.delta_alpha,
        delta_beta: out.delta_beta,
        max_off_ratio: out.max_off_ratio,
        riccati_max_eig: res.riccati_max_eig,
        growth_max_eig: res.growth_max_eig,
        residual_tolerance: RESIDUAL_TOL,
        p_source,
        riccati_margin: margin,
    })
}

fn design_text(r: &DesignRecord) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "lambda_min(L + B)  = {:.6}", r.lambda_min);
    let _ = writeln!(s, "c0 * lambda_min    = {:.4} (>= 1 required)", r.pinning_product);
    let _ = writeln!(s, "P ({})", r.p_source);
    for row in &r.p {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>12.4}")).collect();
        let _ = writeln!(s, "  {}", cells.join(" "));
    }
    let k: Vec<String> = r.k.iter().map(|v| format!("{v:.4}")).collect();
    let _ = writeln!(s, "K                  = [{}]", k.join(", "));
    let _ = writeln!(s, "||P||              = {:.4}", r.p_norm);
    let _ = writeln!(s, "residual max eig   = {:.3e} (riccati), {:.3e} (growth)", r.riccati_max_eig, r.growth_max_eig);
    let _ = writeln!(s, "c_alpha1           = {:.4}", r.c_alpha1);
    let _ = writeln!(s, "c_beta             = {:.4}", r.c_beta);
    let _ = writeln!(s, "delta_alpha        = {:.4}", r.delta_alpha);
    let _ = writeln!(s, "delta_beta         = {:.4}", r.delta_beta);
    let _ = writeln!(s, "max OFF/ON ratio   = {:.4} ({:.1} %)", r.max_off_ratio, 100.0 * r.max_off_ratio);
    s
}

fn write_design(cfg: &ExperimentConfig, summary: &DesignSummary) -> Result<String, Failure> {
    let record = design_record(summary, cfg.sim.run.order)?;
    let toml = toml::to_string(&record).map_err(|e| Failure::Other(e.to_string()))?;
    save(cfg, "design.toml", &toml)?;
    Ok(design_text(&record))
}

fn cmd_design(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let summary = DesignSummary::from_config(&cfg.sim)?;
    print!("{}", write_design(cfg, &summary)?);
    Ok(())
}

fn cmd_certify(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let summary = DesignSummary::from_config(&cfg.sim)?;
    let out = &summary.output;
    let schedule = intercon::ModeSchedule::generate(&cfg.sim.schedule, out.max_off_ratio, cfg.sim.run.horizon)?;
    let cert = schedule.certify(out.delta_alpha, out.delta_beta);
    schedule.write_csv(&cert, BufWriter::new(File::create(out_file(cfg, "schedule.csv")?)?))?;
    println!("periods            = {}", cert.periods.len());
    println!("T (longest period) = {:.4}", cert.t_max);
    println!("min Lambda         = {:.6}", cert.lambda);
    println!("certified          = {}", cert.feasible);
    if !cert.feasible {
        return Err(Error::ScheduleInfeasible { lambda: cert.lambda }.into());
    }
    Ok(())
}

fn envelope_text(r: &EnvelopeReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "samples            = {}", r.samples);
    let _ = writeln!(s, "tolerance          = {:.0} %", 100.0 * r.tolerance);
    let _ = writeln!(s, "ON violations      = {} (worst margin {:.4e})", r.on_violations, r.worst_on_margin);
    let _ = writeln!(s, "OFF violations     = {} (worst margin {:.4e})", r.off_violations, r.worst_off_margin);
    let _ = writeln!(s, "global violations  = {} (worst margin {:.4e})", r.global_violations, r.worst_global_margin);
    if let Some(g) = &r.global {
        let _ = writeln!(s, "Lambda = {:.6}, T = {:.4}, kappa = {:.6e}", g.lambda, g.t_max, g.kappa);
        let _ = writeln!(s, "pi1 = {:.6e}, pi2 = {:.6e}, pi* = {:.6e}", g.pi1, g.pi2, g.pi_star);
        let _ = writeln!(s, "eps1 = {:.6e}, eps2 = {:.6e}, eps* = {:.6e}", g.eps1, g.eps2, g.eps_star);
    }
    s
}

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let sim = Simulation::new(cfg.sim.clone())?;
    let trace = sim.run();
    trace.write_csv(BufWriter::new(File::create(out_file(cfg, "trace.csv")?)?))?;
    sim.schedule().write_csv(sim.certificate(), BufWriter::new(File::create(out_file(cfg, "schedule.csv")?)?))?;
    let summary = DesignSummary::from_config(&cfg.sim)?;
    write_design(cfg, &summary)?;
    let report = envelope_text(&check_envelopes(&trace, sim.design(), sim.schedule()));
    save(cfg, "envelope.txt", &report)?;
    println!("rows               = {}", trace.len());
    print!("{report}");
    if let Some(e) = &trace.divergence {
        return Err(Failure::Diverged(e.to_string()));
    }
    Ok(())
}

fn cmd_montecarlo(cfg: &ExperimentConfig, runs: usize, l0: f64) -> Result<(), Failure> {
    if runs == 0 {
        return Err(Error::Validation("--runs must be >= 1".into()).into());
    }
    let sim = Simulation::new(cfg.sim.clone())?;
    let window_start = cfg.sim.run.horizon - analysis::TERMINAL_WINDOW;
    let results = sim.map_members(0..runs as u64, |_, tr| {
        let theta =
            (1..=tr.n_agents()).filter_map(|i| tr.column(&format!("theta_norm{i}"))).flatten().fold(0.0, f64::max);
        (TrackingSeries::from(&tr), theta)
    });
    let series: Vec<TrackingSeries> = results.iter().map(|r| r.0.clone()).collect();
    let summary = EnsembleSummary::from_series(&series);
    summary.write_csv(BufWriter::new(File::create(out_file(cfg, "ensemble_summary.csv")?)?))?;

    let mut s = String::new();
    let _ = writeln!(s, "runs               = {runs}");
    let _ = writeln!(s, "diverged           = {}", summary.diverged);
    let _ = writeln!(s, "max weight norm    = {:.4}", results.iter().map(|r| r.1).fold(0.0, f64::max));
    let inside = series.iter().filter(|t| t.mean_error_after(window_start) <= analysis::TRACKING_BAND).count();
    let _ = writeln!(
        s,
        "terminal band      = {:.4} over t >= {window_start}: {inside}/{runs} runs inside",
        analysis::TRACKING_BAND
    );
    if summary.diverged < runs {
        let m = consensus_metrics(&series)?;
        let _ = writeln!(s, "final-quartile E|z_i - z_r| (t >= {:.2}):", m.window_start);
        for i in 0..m.mean_abs_error.len() {
            let _ = writeln!(
                s,
                "  agent {}: mean {:.5}  max {:.5}  eps_v estimate {:.5}",
                i + 1,
                m.mean_abs_error[i],
                m.max_abs_error[i],
                m.eps_v[i]
            );
        }
    }
    if runs >= MIN_ENSEMBLE {
        let band = |t: f64| if t >= window_start { analysis::SUP_BAND } else { f64::INFINITY };
        let cert = certify_nsps(&series, l0, band, sim.controller_diagnostics())?;
        analysis::write_stability_csv(&cert, BufWriter::new(File::create(out_file(cfg, "stability.csv")?)?))?;
        let _ = writeln!(
            s,
            "probability certificate (l0 = {l0}, band {:.4} for t >= {window_start}): min fraction {:.3}, pass = {}",
            analysis::SUP_BAND,
            cert.min_fraction,
            cert.pass
        );
        for (i, a) in cert.agents.iter().enumerate() {
            let _ = writeln!(
                s,
                "  agent {}: xi* = {:.4}, l_a = {:.3}, c_gamma = {:.3}, l_a*xi* = {:.4}",
                i + 1,
                a.xi_star,
                a.l_a,
                a.c_gamma,
                a.varpi_noise
            );
        }
    } else {
        let _ = writeln!(s, "probability certificate skipped: needs >= {MIN_ENSEMBLE} runs");
    }
    save(cfg, "montecarlo.txt", &s)?;
    print!("{s}");
    if summary.diverged > 0 {
        return Err(Failure::Diverged(format!("{} of {runs} runs diverged", summary.diverged)));
    }
    Ok(())
}

fn cmd_report(cfg: &ExperimentConfig, path: &Path) -> Result<(), Failure> {
    let trace = SimTrace::read_csv(File::open(path)?)?;
    let summary = DesignSummary::from_config(&cfg.sim)?;
    let (schedule, _) = certified_schedule(&cfg.sim, &summary.output)?;
    let mut s = envelope_text(&check_envelopes(&trace, &summary.output, &schedule));
    if !trace.is_empty() {
        let series = TrackingSeries::from(&trace);
        let m = consensus_metrics(std::slice::from_ref(&series))?;
        for i in 0..m.mean_abs_error.len() {
            let _ = writeln!(
                s,
                "agent {}: final-quartile mean |z - z_r| {:.5}, max {:.5}",
                i + 1,
                m.mean_abs_error[i],
                m.max_abs_error[i]
            );
        }
    }
    save(cfg, "report.txt", &s)?;
    print!("{s}");
    Ok(())
}
