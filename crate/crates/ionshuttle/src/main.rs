use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use ionshuttle::analytic::{bangbang, iea_ramp, iea_tmin_scan};
use ionshuttle::classical::{propagate_classical, transport_excitation, PropagationMode};
use ionshuttle::classical_oct::{optimize_classical, IterationRecord};
use ionshuttle::error::{Result, ShuttleError};
use ionshuttle::experiment::{
    bangbang_floor, build_model, design_ramp, fit_power_law, oct_config, quantum_oct_config,
    quantum_sample_floor, read_scan_csv, reproduce, scan_tmin_classical, transport_quantum_run,
    Method, TaskConfig,
};
use ionshuttle::quantum::write_observables_csv;
use ionshuttle::quantum_oct::{optimize_transport_quantum, QuantumIterationRecord};
use ionshuttle::ramp::{guess_voltages, TransportFunction, VoltageRamp};

#[derive(Parser)]
#[command(
    name = "ionshuttle",
    version,
    about = "Design and simulate voltage ramps that shuttle a trapped ion between electrode wells"
)]
struct Cli {
    /// JSON task config; defaults apply when omitted, flags override the file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for the command's bundle (default out/<command>).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Cap on worker threads for scans.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Seed echoed into the bundle; every pipeline is deterministic.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the bias forming a well of the configured frequency on each electrode.
    Calibrate,
    /// Emit the quasistatic tracking ramp.
    Guess,
    /// Propagate the configured method's ramp classically.
    SimulateClassical,
    /// Refine the tracking ramp against classical final excitation.
    OptimizeClassical,
    /// Propagate the configured method's ramp quantum mechanically.
    SimulateQuantum,
    /// Refine a seed ramp against quantum ground-state fidelity.
    OptimizeQuantum,
    /// Emit the force-compensated (invariant-engineered) ramp.
    Iea,
    /// Emit the time-optimal two-segment ramp.
    Bangbang,
    /// Scan minimum transport durations over the configured voltage bounds.
    ScanTmin,
    /// Fit T = a * U^-b to a scan table.
    Fit {
        /// CSV with header umax_V,tmin_us.
        input: PathBuf,
    },
    /// Rebuild one figure's data bundle under <out>/<figure>/.
    Reproduce {
        /// One of fig3, fig4, fig5, fig6, fig7.
        figure: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Calibrate => "calibrate",
            Command::Guess => "guess",
            Command::SimulateClassical => "simulate-classical",
            Command::OptimizeClassical => "optimize-classical",
            Command::SimulateQuantum => "simulate-quantum",
            Command::OptimizeQuantum => "optimize-quantum",
            Command::Iea => "iea",
            Command::Bangbang => "bangbang",
            Command::ScanTmin => "scan-tmin",
            Command::Fit { .. } => "fit",
            Command::Reproduce { .. } => "reproduce",
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => TaskConfig::load(path)?,
        None => TaskConfig::default(),
    };
    if let Some(jobs) = cli.jobs {
        config.jobs = Some(jobs);
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    if let Some(jobs) = config.jobs {
        // Only the first call can size the global pool; later runs in the
        // same process keep the existing one.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }

    if let Command::Reproduce { figure } = &cli.command {
        let base = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        let dir = reproduce(figure, &config, &base)?;
        println!("wrote {}", dir.display());
        return Ok(());
    }

    let dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(cli.command.name()));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.json"), config.to_pretty_json())?;

    match &cli.command {
        Command::Calibrate => cmd_calibrate(&config, &dir),
        Command::Guess => cmd_guess(&config, &dir),
        Command::SimulateClassical => cmd_simulate_classical(&config, &dir),
        Command::OptimizeClassical => cmd_optimize_classical(&config, &dir),
        Command::SimulateQuantum => cmd_simulate_quantum(&config, &dir),
        Command::OptimizeQuantum => cmd_optimize_quantum(&config, &dir),
        Command::Iea => cmd_iea(&config, &dir),
        Command::Bangbang => cmd_bangbang(&config, &dir),
        Command::ScanTmin => cmd_scan_tmin(&config, &dir),
        Command::Fit { input } => cmd_fit(input, &dir),
        Command::Reproduce { .. } => unreachable!("handled above"),
    }
}

fn write_ramp(dir: &Path, name: &str, ramp: &VoltageRamp) -> Result<()> {
    fs::write(dir.join(name), ramp.to_csv_string())?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn classical_iterations_csv(records: &[IterationRecord]) -> String {
    let mut s = String::from("iter,J,energy,max_delta_u_V,lambda,accepted\n");
    for (k, r) in records.iter().enumerate() {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            k + 1,
            r.j,
            r.energy,
            r.max_delta_u,
            r.lambda,
            r.accepted as u8
        ));
    }
    s
}

fn quantum_iterations_csv(records: &[QuantumIterationRecord]) -> String {
    let mut s = String::from("iter,J,fidelity,max_delta_u_V,lambda,accepted\n");
    for (k, r) in records.iter().enumerate() {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            k + 1,
            r.j,
            r.fidelity,
            r.max_delta_u,
            r.lambda,
            r.accepted as u8
        ));
    }
    s
}

fn cmd_calibrate(config: &TaskConfig, dir: &Path) -> Result<()> {
    let model = build_model(config)?;
    let mut csv = String::from("electrode,bias_V\n");
    for k in 0..model.electrodes.len() {
        let bias = model.calibrate_bias(k, config.freq_mhz)?;
        println!(
            "electrode {k}: {bias:.6} V forms a {} MHz well at {} um",
            config.freq_mhz, model.electrodes[k].center
        );
        csv.push_str(&format!("{k},{bias}\n"));
    }
    fs::write(dir.join("calibration.csv"), csv)?;
    Ok(())
}

fn cmd_guess(config: &TaskConfig, dir: &Path) -> Result<()> {
    let model = build_model(config)?;
    let ramp = design_ramp(&model, config, Method::Guess)?;
    write_ramp(dir, "ramp.csv", &ramp)?;
    println!(
        "tracking ramp: {} samples over {} us, peak |U| = {:.4} V",
        ramp.n_samples(),
        ramp.duration,
        ramp.max_abs()
    );
    Ok(())
}

fn cmd_simulate_classical(config: &TaskConfig, dir: &Path) -> Result<()> {
    let model = build_model(config)?;
    let ramp = design_ramp(&model, config, config.method)?;
    let traj = propagate_classical(
        &model,
        &ramp,
        model.electrodes[0].center,
        0.0,
        PropagationMode::FixedRk4,
    )?;
    let phonons = transport_excitation(&model, &ramp, config.freq_mhz, PropagationMode::FixedRk4)?;
    let (x, v) = traj.final_state();
    write_ramp(dir, "ramp.csv", &ramp)?;
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    fs::write(dir.join("trajectory.csv"), buf)?;
    write_json(
        dir,
        "summary.json",
        &serde_json::json!({
            "method": config.method.to_string(),
            "duration_us": ramp.duration,
            "final_x_um": x,
            "final_v_um_per_us": v,
            "final_phonons": phonons,
        }),
    )?;
    println!(
        "{} ramp over {} us: final excitation {phonons:.3e} phonons",
        config.method, ramp.duration
    );
    Ok(())
}

fn cmd_optimize_classical(config: &TaskConfig, dir: &Path) -> Result<()> {
    let model = build_model(config)?;
    let tf = TransportFunction::across(&model, config.duration_us)?;
    let guess = guess_voltages(&model, &tf, config.freq_mhz, config.n_samples)?;
    let oct = oct_config(config, config.u_max_v);
    let report = optimize_classical(&model, &guess, &oct)?;
    write_ramp(dir, "ramp.csv", &report.ramp)?;
    fs::write(
        dir.join("iterations.csv"),
        classical_iterations_csv(&report.iterations),
    )?;
    let traj = propagate_classical(
        &model,
        &report.ramp,
        model.electrodes[0].center,
        0.0,
        PropagationMode::FixedRk4,
    )?;
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    fs::write(dir.join("trajectory.csv"), buf)?;
    write_json(
        dir,
        "summary.json",
        &serde_json::json!({
            "converged": report.converged,
            "iterations": report.iterations.len(),
            "final_energy": report.final_energy,
            "final_phonons": report.final_phonons,
        }),
    )?;
    println!(
        "classical optimization: converged={} after {} iterations, {:.3e} phonons",
        report.converged,
        report.iterations.len(),
        report.final_phonons
    );
    Ok(())
}

fn cmd_simulate_quantum(config: &TaskConfig, dir: &Path) -> Result<()> {
    let model = build_model(config)?;
    let ramp = design_ramp(&model, config, config.method)?;
    let run = transport_quantum_run(&model, &ramp, config)?;
    write_ramp(dir, "ramp.csv", &run.ramp)?;
    let mut buf = Vec::new();
    write_observables_csv(&run.propagation.observables, &mut buf)?;
    fs::write(dir.join("observables.csv"), buf)?;
    let last = run.propagation.observables.last().expect("nonempty series");
    write_json(
        dir,
        "summary.json",
        &serde_json::json!({
            "method": config.method.to_string(),
            "duration_us": run.ramp.duration,
            "n_samples": run.ramp.n_samples(),
            "final_phonons": last.phonons,
            "uncert_product_hbar": last.uncert_hbar,
            "target_fidelity": run.target_fidelity,
        }),
    )?;
    println!(
        "{} ramp over {} us: {:.3e} phonons, fidelity {:.6}",
        config.method, run.ramp.duration, last.phonons, run.target_fidelity
    );
    Ok(())
}

fn cmd_optimize_quantum(config: &TaskConfig, dir: &Path) -> Result<()> {
    let model = build_model(config)?;
    let seed = match config.method {
        Method::ClassicalOct => {
            let tf = TransportFunction::across(&model, config.duration_us)?;
            let guess = guess_voltages(&model, &tf, config.freq_mhz, config.n_samples)?;
            optimize_classical(&model, &guess, &oct_config(config, config.u_max_v))?.ramp
        }
        Method::QuantumOct | Method::Guess => design_ramp(&model, config, Method::Guess)?,
        method => design_ramp(&model, config, method)?,
    };
    let qcfg = quantum_oct_config(config)?;
    let floor = quantum_sample_floor(&model, seed.duration, qcfg.grid);
    let seed = if seed.n_samples() < floor {
        seed.resampled(floor)?
    } else {
        seed
    };
    let report = optimize_transport_quantum(&model, &seed, &qcfg)?;
    write_ramp(dir, "ramp.csv", &report.ramp)?;
    fs::write(
        dir.join("iterations.csv"),
        quantum_iterations_csv(&report.iterations),
    )?;
    write_json(
        dir,
        "summary.json",
        &serde_json::json!({
            "converged": report.converged,
            "iterations": report.iterations.len(),
            "final_fidelity": report.final_fidelity,
        }),
    )?;
    println!(
        "quantum optimization: converged={} after {} iterations, fidelity {:.6}",
        report.converged,
        report.iterations.len(),
        report.final_fidelity
    );
    Ok(())
}

fn cmd_iea(config: &TaskConfig, dir: &Path) -> Result<()> {
    let model = build_model(config)?;
    let tf = TransportFunction::across(&model, config.duration_us)?;
    let ramp = iea_ramp(&model, &tf, config.freq_mhz, config.n_samples)?;
    write_ramp(dir, "ramp.csv", &ramp.total)?;
    write_ramp(dir, "base.csv", &ramp.base)?;
    write_ramp(dir, "compensation.csv", &ramp.compensation)?;
    write_json(
        dir,
        "summary.json",
        &serde_json::json!({
            "duration_us": ramp.total.duration,
            "max_abs_V": ramp.max_abs,
            "force_residual": ramp.force_residual,
            "curvature_residual": ramp.curvature_residual,
        }),
    )?;
    println!(
        "compensated ramp over {} us: peak |U| = {:.4} V",
        ramp.total.duration, ramp.max_abs
    );
    Ok(())
}

fn cmd_bangbang(config: &TaskConfig, dir: &Path) -> Result<()> {
    let model = build_model(config)?;
    let bb = bangbang(
        config.volt_freq_mhz,
        config.u_max_v,
        model.electrodes[0].center,
        model.electrodes[1].center,
    )?;
    let ramp = bb.ramp(config.n_samples)?;
    write_ramp(dir, "ramp.csv", &ramp)?;
    write_json(
        dir,
        "summary.json",
        &serde_json::json!({
            "u_max_v": bb.u_max,
            "t_min_us": bb.t_min,
            "t_switch_us": bb.t_switch,
        }),
    )?;
    println!("T_min = {:.6} us, switch at {:.6} us", bb.t_min, bb.t_switch);
    Ok(())
}

fn cmd_scan_tmin(config: &TaskConfig, dir: &Path) -> Result<()> {
    let model = build_model(config)?;
    let table = match config.method {
        Method::ClassicalOct => scan_tmin_classical(&model, config, &config.u_max_list)?,
        Method::Iea => {
            let tf = TransportFunction::across(&model, config.duration_us)?;
            iea_tmin_scan(
                &model,
                &tf,
                config.freq_mhz,
                &config.u_max_list,
                config.n_samples,
                1e-4,
            )?
        }
        Method::Bangbang => config
            .u_max_list
            .iter()
            .map(|&u| (u, bangbang_floor(config.volt_freq_mhz, u)))
            .collect(),
        method => {
            return Err(ShuttleError::Config(format!(
                "scan-tmin supports methods classical-oct, iea, and bangbang, not {method}"
            )))
        }
    };
    let mut buf = Vec::new();
    ionshuttle::experiment::write_scan_csv(&mut buf, &table)?;
    fs::write(dir.join("scan.csv"), buf)?;
    for &(u, t) in &table {
        println!("U_max = {u:>7.2} V  ->  T_min = {t:.4} us");
    }
    if table.len() >= 3 {
        let fit = fit_power_law(&table)?;
        write_json(dir, "fit.json", &serde_json::to_value(fit).expect("fit serializes"))?;
        println!(
            "fit: T = ({:.4} +- {:.4}) us * U^-({:.4} +- {:.4})",
            fit.a, fit.a_err, fit.b, fit.b_err
        );
    }
    Ok(())
}

fn cmd_fit(input: &Path, dir: &Path) -> Result<()> {
    let table = read_scan_csv(BufReader::new(fs::File::open(input)?))?;
    let fit = fit_power_law(&table)?;
    write_json(dir, "fit.json", &serde_json::to_value(fit).expect("fit serializes"))?;
    println!(
        "T = ({:.6} +- {:.6}) us * U^-({:.6} +- {:.6}), rms log residual {:.3e}",
        fit.a, fit.a_err, fit.b, fit.b_err, fit.residual
    );
    Ok(())
}
