//! `dipolescope`: run synthetic scenarios, fit measured records and print line and trap
//! quantities in lab units.
//!
//! Exit codes: 0 on success, 1 on input or usage errors, 2 when a fit does not converge.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dipolescope::angular::HalfInt;
use dipolescope::atomic_physics::{
    dipole_trap_properties, excitation_by_level, excitation_probability, phase_per_atom,
    transition_strengths, AtomicLine, ProbePulseConfig, TrapBeam,
};
use dipolescope::constants::angular;
use dipolescope::estimation::{
    fit_breathing, fit_loading, fit_loss, fit_temperature, fit_waist, Estimate, LoadingFitOptions,
    Series, TemperatureFitConfig,
};
use dipolescope::harness::{run_scenario_with_line, significant, Scenario, ScenarioKind};
use dipolescope::trap_dynamics::{
    ballistic_escape_probability, ballistic_mc_oracle, loss_curve, BallisticParams, LossParams,
};

#[derive(Parser)]
#[command(
    name = "dipolescope",
    version,
    about = "Dispersive probing of dipole-trapped atoms: simulate, fit, compute"
)]
struct Cli {
    /// Output format; human-readable text when omitted.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run a synthetic scenario and write its artifacts.
    Run(RunArgs),
    /// Fit a measured record (CSV with columns t,y,sigma in SI units).
    Fit(FitArgs),
    /// Line and trap quantities.
    #[command(subcommand)]
    Physics(PhysicsQuery),
    /// Reference calculations used to validate the models.
    #[command(subcommand)]
    Oracle(OracleQuery),
}

#[derive(Args)]
struct RunArgs {
    /// Built-in scenario name or path to a scenario JSON file.
    #[arg(long)]
    scenario: String,
    /// Directory receiving `<scenario>-<timestamp>/`.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitKind {
    /// t in s, y in atoms.
    Loading,
    /// t in s, y in atoms.
    Loss,
    /// Evenly spaced t in s, y any signal.
    Breathing,
    /// t in s, y escape fraction.
    Temperature,
    /// t = trap power in W, y = radial frequency in Hz.
    Waist,
}

#[derive(Args)]
struct FitArgs {
    #[arg(value_enum)]
    kind: FitKind,
    /// CSV file with header t,y,sigma.
    #[arg(long)]
    data: PathBuf,
    /// Probe waist for the temperature fit (μm).
    #[arg(long, default_value_t = 20.0)]
    probe_waist_um: f64,
    /// Trap wavelength for the waist fit (nm).
    #[arg(long, default_value_t = 1030.0)]
    trap_wavelength_nm: f64,
    /// Split time between loading and loss segments (ms); smoothed maximum when omitted.
    #[arg(long)]
    split_ms: Option<f64>,
}

#[derive(Subcommand)]
enum PhysicsQuery {
    /// Dispersive phase of bright-level atoms in the probe mode.
    Phase {
        #[arg(long)]
        detuning_mhz: f64,
        #[arg(long)]
        waist_um: f64,
        #[arg(long, default_value_t = 1.0)]
        atoms: f64,
    },
    /// Pulse-integrated excitation probability p_e.
    Pe {
        #[arg(long)]
        detuning_mhz: f64,
        #[arg(long)]
        waist_um: f64,
        #[arg(long)]
        duration_us: f64,
        /// Probe power (μW); give this or --photons.
        #[arg(long, conflicts_with = "photons", required_unless_present = "photons")]
        power_uw: Option<f64>,
        /// Photons per pulse.
        #[arg(long)]
        photons: Option<f64>,
    },
    /// Depth and radial frequency of a single-beam dipole trap.
    Depth {
        #[arg(long)]
        power_w: f64,
        #[arg(long)]
        waist_um: f64,
        #[arg(long)]
        wavelength_nm: f64,
    },
    /// Relative transition strengths S(F → F') of one ground level.
    Strengths {
        /// Ground level, e.g. 4 or 3/2; all levels when omitted.
        #[arg(long = "f")]
        f: Option<HalfInt>,
    },
}

#[derive(Subcommand)]
enum OracleQuery {
    /// Escape probability: closed form against a Monte-Carlo sample.
    Ballistic {
        #[arg(long)]
        temperature_uk: f64,
        #[arg(long)]
        frequency_hz: f64,
        #[arg(long)]
        waist_um: f64,
        /// Last release time (ms).
        #[arg(long, default_value_t = 5.0)]
        t_max_ms: f64,
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Loss curve: closed form against adaptive integration.
    Riccati {
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 1e5)]
        n0: f64,
        #[arg(long, default_value_t = 20)]
        points: usize,
    },
}

/// One printed quantity.
#[derive(Serialize)]
struct Row {
    quantity: String,
    value: f64,
    error: Option<f64>,
    unit: String,
}

impl Row {
    fn new(quantity: impl Into<String>, value: f64, unit: &str) -> Self {
        Row {
            quantity: quantity.into(),
            value,
            error: None,
            unit: unit.into(),
        }
    }

    fn estimate(quantity: &str, e: Estimate, scale: f64, unit: &str) -> Self {
        Row {
            quantity: quantity.into(),
            value: e.value * scale,
            error: Some(e.error * scale),
            unit: unit.into(),
        }
    }
}

fn print_rows(rows: &[Row], format: Option<Format>) -> Result<()> {
    let mut out = io::stdout().lock();
    match format {
        None => {
            for r in rows {
                let value = match r.error {
                    Some(e) if e > 0.0 && e.is_finite() => Estimate {
                        value: r.value,
                        error: e,
                    }
                    .to_string(),
                    _ => significant(r.value),
                };
                writeln!(
                    out,
                    "{:<28} {}",
                    r.quantity,
                    format!("{value} {}", r.unit).trim_end()
                )?;
            }
        }
        Some(Format::Json) => writeln!(out, "{}", serde_json::to_string_pretty(rows)?)?,
        Some(Format::Csv) => {
            let mut w = csv::Writer::from_writer(out);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Outcome of a command that completed without input errors.
enum Status {
    Done,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => {
            eprintln!("error: fit did not converge");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: &Cli) -> Result<Status> {
    let line = AtomicLine::from_env_or_default()?;
    match &cli.command {
        Command::Run(args) => run(args, &line, cli.format),
        Command::Fit(args) => fit(args, &line, cli.format),
        Command::Physics(q) => physics(q, &line, cli.format).map(|_| Status::Done),
        Command::Oracle(q) => oracle(q, &line, cli.format).map(|_| Status::Done),
    }
}

/// A file path takes precedence over a built-in name of the same spelling.
fn load_scenario(source: &str) -> Result<Scenario> {
    if !Path::new(source).exists() {
        return match source.parse::<ScenarioKind>() {
            Ok(kind) => Ok(Scenario::builtin(kind)),
            Err(e) => bail!("`{source}` is neither a scenario file nor a built-in scenario: {e}"),
        };
    }
    let text =
        fs::read_to_string(source).with_context(|| format!("reading scenario `{source}`"))?;
    Scenario::from_json(&text).with_context(|| format!("scenario `{source}`"))
}

fn run(args: &RunArgs, line: &AtomicLine, format: Option<Format>) -> Result<Status> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let output = run_scenario_with_line(&scenario, line)?;
    let dir = output.write_artifacts(&args.out)?;
    let report = &output.report;
    match format {
        None => print!("{}", report.to_text()),
        Some(Format::Json) => println!("{}", report.to_json()?),
        Some(Format::Csv) => {
            let mut w = csv::Writer::from_writer(io::stdout().lock());
            for e in &report.summary {
                w.serialize(e)?;
            }
            w.flush()?;
        }
    }
    eprintln!("artifacts: {}", dir.display());
    Ok(if report.converged {
        Status::Done
    } else {
        Status::NotConverged
    })
}

fn fit(args: &FitArgs, line: &AtomicLine, format: Option<Format>) -> Result<Status> {
    let file =
        fs::File::open(&args.data).with_context(|| format!("opening {}", args.data.display()))?;
    let data =
        Series::read_csv(file).with_context(|| format!("reading {}", args.data.display()))?;
    let (rows, converged) = match args.kind {
        FitKind::Loading => {
            let options = LoadingFitOptions {
                split_time: args.split_ms.map(|ms| ms * 1e-3),
                ..Default::default()
            };
            let f = fit_loading(&data, &options)?;
            let rows = vec![
                Row::estimate("R0", f.r0, 1.0, "atoms/s"),
                Row::estimate("gamma_MOT", f.gamma_mot, 1.0, "1/s"),
                Row::estimate("Gamma_L", f.gamma_l, 1.0, "1/s"),
                Row::estimate("beta_L", f.beta_l, 1.0, "1/s"),
                Row::new("split time", f.split_time * 1e3, "ms"),
                Row::new("reduced chi2", f.final_fit().reduced_chi2, ""),
            ];
            (rows, f.converged)
        }
        FitKind::Loss => {
            let f = fit_loss(&data)?;
            let rows = vec![
                Row::estimate("N0", f.n0, 1.0, "atoms"),
                Row::estimate("Gamma", f.gamma, 1.0, "1/s"),
                Row::estimate("beta", f.beta, 1.0, "1/s"),
                Row::new("reduced chi2", f.fit.reduced_chi2, ""),
            ];
            (rows, f.fit.converged)
        }
        FitKind::Breathing => {
            let f = fit_breathing(&data)?;
            let mut rows = vec![
                Row::estimate("nu_r", f.radial_frequency, 1.0, "Hz"),
                Row::estimate("oscillation frequency", f.signal_frequency, 1.0, "Hz"),
                Row::estimate("damping time", f.damping_time, 1e3, "ms"),
                Row::estimate("depth", f.depth, 1.0, ""),
                Row::new("reduced chi2", f.fit.reduced_chi2, ""),
            ];
            if f.near_nyquist {
                eprintln!("warning: oscillation within two bins of the Nyquist frequency");
                rows.push(Row::new("near nyquist", 1.0, ""));
            }
            (rows, f.fit.converged)
        }
        FitKind::Temperature => {
            let config = TemperatureFitConfig::new(args.probe_waist_um * 1e-6, line);
            let f = fit_temperature(&data, &config)?;
            let rows = vec![
                Row::estimate("T", f.temperature, 1e6, "uK"),
                Row::estimate("nu_r", f.radial_frequency, 1.0, "Hz"),
                Row::new("reduced chi2", f.fit.reduced_chi2, ""),
            ];
            (rows, f.fit.converged)
        }
        FitKind::Waist => {
            let f = fit_waist(&data, args.trap_wavelength_nm * 1e-9, line)?;
            let rows = vec![
                Row::estimate("nu_r / sqrt(P)", f.coefficient, 1.0, "Hz/W^0.5"),
                Row::estimate("trap waist", f.waist, 1e6, "um"),
            ];
            (rows, f.fit.converged)
        }
    };
    print_rows(&rows, format)?;
    Ok(if converged {
        Status::Done
    } else {
        Status::NotConverged
    })
}

fn physics(query: &PhysicsQuery, line: &AtomicLine, format: Option<Format>) -> Result<()> {
    let rows = match *query {
        PhysicsQuery::Phase {
            detuning_mhz,
            waist_um,
            atoms,
        } => {
            let probe = probe(detuning_mhz, waist_um, 1.0, 0.0)?;
            let per_atom = phase_per_atom(line, probe.detuning, probe.mode_area());
            vec![
                Row::new("phase per atom", per_atom, "rad"),
                Row::new("phase", per_atom * atoms, "rad"),
            ]
        }
        PhysicsQuery::Pe {
            detuning_mhz,
            waist_um,
            duration_us,
            power_uw,
            photons,
        } => {
            let mut probe = probe(detuning_mhz, waist_um, duration_us, 0.0)?;
            probe.power = match (power_uw, photons) {
                (Some(p), _) => p * 1e-6,
                (None, Some(n)) => probe.power_for_photons(n, line),
                (None, None) => bail!("give --power-uw or --photons"),
            };
            probe.validate()?;
            let mut rows = vec![
                Row::new("p_e", excitation_probability(&probe, line), ""),
                Row::new("photons per pulse", probe.photons_per_pulse(line), ""),
                Row::new("power", probe.power * 1e6, "uW"),
            ];
            for (fe, p) in excitation_by_level(&probe, line) {
                rows.push(Row::new(format!("p_e via F'={fe}"), p, ""));
            }
            rows
        }
        PhysicsQuery::Depth {
            power_w,
            waist_um,
            wavelength_nm,
        } => {
            let beam = TrapBeam {
                power: power_w,
                waist: waist_um * 1e-6,
                wavelength: wavelength_nm * 1e-9,
            };
            let trap = dipole_trap_properties(&beam, line)?;
            vec![
                Row::new("U/k_B", trap.depth_kelvin * 1e6, "uK"),
                Row::new(
                    "U/h",
                    trap.depth / dipolescope::constants::PLANCK * 1e-6,
                    "MHz",
                ),
                Row::new("nu_r", trap.radial_frequency, "Hz"),
            ]
        }
        PhysicsQuery::Strengths { f } => {
            let table = transition_strengths(line);
            let levels: Vec<HalfInt> = match f {
                Some(f) => {
                    if !line.ground.iter().any(|g| g.f == f) {
                        bail!("{} has no ground level F={f}", line.name);
                    }
                    vec![f]
                }
                None => line.ground.iter().map(|g| g.f).collect(),
            };
            let mut rows = Vec::new();
            for g in levels {
                for e in &line.excited {
                    rows.push(Row::new(
                        format!("S(F={g} -> F'={})", e.f),
                        table.get(g, e.f),
                        "",
                    ));
                }
                rows.push(Row::new(
                    format!("sum over F' for F={g}"),
                    table.sum_for(g),
                    "",
                ));
            }
            rows
        }
    };
    print_rows(&rows, format)
}

fn probe(
    detuning_mhz: f64,
    waist_um: f64,
    duration_us: f64,
    power: f64,
) -> Result<ProbePulseConfig> {
    if !(waist_um > 0.0) {
        bail!("--waist-um must be positive, got {waist_um}");
    }
    if !(duration_us > 0.0) {
        bail!("--duration-us must be positive, got {duration_us}");
    }
    Ok(ProbePulseConfig {
        detuning: angular(detuning_mhz * 1e6),
        power,
        waist: waist_um * 1e-6,
        duration: duration_us * 1e-6,
        period: 2.0 * duration_us * 1e-6,
        pulse_count: 1,
    })
}

fn oracle(query: &OracleQuery, line: &AtomicLine, format: Option<Format>) -> Result<()> {
    let mut rows = Vec::new();
    match *query {
        OracleQuery::Ballistic {
            temperature_uk,
            frequency_hz,
            waist_um,
            t_max_ms,
            points,
            samples,
            seed,
        } => {
            if points == 0 || !(t_max_ms > 0.0) {
                bail!("need at least one point and a positive --t-max-ms");
            }
            let params =
                BallisticParams::new(temperature_uk * 1e-6, frequency_hz, waist_um * 1e-6, line);
            let times: Vec<f64> = (1..=points)
                .map(|i| t_max_ms * 1e-3 * i as f64 / points as f64)
                .collect();
            let mc = ballistic_mc_oracle(&params, &times, samples, seed)?;
            for (t, m) in times.iter().zip(&mc) {
                let label = format!("P at {:.4} ms", t * 1e3);
                rows.push(Row::new(
                    format!("{label} closed form"),
                    ballistic_escape_probability(&params, *t),
                    "",
                ));
                rows.push(Row {
                    quantity: format!("{label} monte carlo"),
                    value: m.value,
                    error: Some(m.std_error),
                    unit: String::new(),
                });
            }
        }
        OracleQuery::Riccati {
            gamma,
            beta,
            n0,
            points,
        } => {
            use dipolescope::ode::{integrate, Tolerances};
            let params = LossParams { gamma, beta };
            params.validate()?;
            if points == 0 || !(gamma > 0.0) {
                bail!("need at least one point and a positive --gamma");
            }
            let times: Vec<f64> = (0..=points)
                .map(|i| 5.0 / gamma * i as f64 / points as f64)
                .collect();
            let closed = loss_curve(&params, n0, &times)?;
            let ode = integrate(
                move |_, y: &[f64; 1]| [-gamma * y[0] - beta * y[0] * y[0]],
                [n0],
                &times,
                Tolerances::default(),
            )?;
            for ((t, c), y) in times.iter().zip(&closed).zip(&ode) {
                let label = format!("N at {:.4} ms", t * 1e3);
                rows.push(Row::new(format!("{label} closed form"), *c, "atoms"));
                rows.push(Row::new(format!("{label} ode"), y[0], "atoms"));
            }
            let worst = closed
                .iter()
                .zip(&ode)
                .map(|(c, y)| {
                    if *c > 0.0 {
                        (y[0] / c - 1.0).abs()
                    } else {
                        0.0
                    }
                })
                .fold(0.0, f64::max);
            rows.push(Row::new("max relative difference", worst, ""));
        }
    }
    print_rows(&rows, format)
}
