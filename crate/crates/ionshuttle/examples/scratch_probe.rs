use std::time::Instant;

use ionshuttle::analytic::iea_tmin_scan;
use ionshuttle::classical::{
    propagate_classical, stability_window, transport_excitation, PropagationMode,
};
use ionshuttle::classical_oct::optimize_classical;
use ionshuttle::error::Result;
use ionshuttle::experiment::{
    bangbang_floor, build_grid, build_model, descend_classical, fit_power_law, oct_config,
    quantum_sample_floor, scan_tmin_classical, transport_quantum_run, xi_trio, Backend, Method,
    TaskConfig,
};
use ionshuttle::potential::{PotentialModel, TRAP_FREQ_MHZ};
use ionshuttle::quantum::{ground_state, propagate_quantum};
use ionshuttle::ramp::{guess_voltages, TransportFunction, VoltageRamp};

fn scan_config() -> TaskConfig {
    let mut c = TaskConfig::default();
    c.n_samples = 250;
    c.max_iterations = 10000;
    c
}

fn scans() -> Result<()> {
    for backend in [Backend::Harmonic, Backend::Surrogate] {
        let mut config = scan_config();
        config.backend = backend;
        let model = build_model(&config)?;
        let t0 = Instant::now();
        let table = scan_tmin_classical(&model, &config, &config.u_max_list)?;
        let fit = fit_power_law(&table)?;
        println!("{backend:?}: {:.1} s", t0.elapsed().as_secs_f64());
        for (u, t) in &table {
            println!("  U={u} -> T_min={t:.4}");
        }
        println!(
            "  fit a={:.4}+-{:.4} b={:.4}+-{:.4} resid={:.2e}",
            fit.a, fit.a_err, fit.b, fit.b_err, fit.residual
        );
    }
    Ok(())
}

fn quantum() -> Result<()> {
    let config = scan_config();
    let model = build_model(&config)?;
    let grid = build_grid(&config)?;
    let oct = oct_config(&config, 10.0);
    let t0 = Instant::now();
    let points = descend_classical(&model, &oct, config.n_samples, 1.05, 0.97, 0)?;
    println!("ladder: {} rungs in {:.1} s", points.len(), t0.elapsed().as_secs_f64());
    let mut quantum_tmin = f64::NAN;
    let mut classical_tmin = f64::NAN;
    for p in &points {
        if !p.converged {
            println!("  T={:.4} NOT converged ({:.3e} ph)", p.duration, p.final_phonons);
            continue;
        }
        classical_tmin = p.duration;
        let t1 = Instant::now();
        let floor = quantum_sample_floor(&model, p.duration, grid);
        let run = transport_quantum_run(&model, &p.ramp, &config)?;
        let o = run.propagation.observables.last().unwrap();
        println!(
            "  T={:.4} cl={:.2e} qu={:.4e} uncert={:.8} n={} ({:.1} s)",
            p.duration,
            p.final_phonons,
            o.phonons,
            o.uncert_hbar,
            floor.max(config.n_samples),
            t1.elapsed().as_secs_f64()
        );
        if o.phonons < 0.01 {
            quantum_tmin = p.duration;
        }
    }
    println!(
        "classical T_min ~ {classical_tmin:.4}, quantum T_min ~ {quantum_tmin:.4}, ratio {:.3}",
        quantum_tmin / classical_tmin
    );

    // squeezing hold: propagate the fastest feasible ramp, then hold the
    // final well for two periods and watch dp breathe
    if let Some(p) = points.iter().rev().find(|p| p.converged) {
        let run = transport_quantum_run(&model, &p.ramp, &config)?;
        let hold_values = vec![*run.ramp.values.last().unwrap(); 801];
        let hold = VoltageRamp::new(1.6, hold_values)?;
        let prop = propagate_quantum(&model, &hold, &run.propagation.final_state, config.freq_mhz)?;
        let dps: Vec<f64> = prop.observables.iter().map(|o| o.dp).collect();
        let dp_min = dps.iter().cloned().fold(f64::INFINITY, f64::min);
        let dp_max = dps.iter().cloned().fold(0.0f64, f64::max);
        let u_last = prop.observables.last().unwrap().uncert_hbar;
        println!(
            "hold after T={:.4}: dp in [{dp_min:.4}, {dp_max:.4}] ratio {:.3}, uncert drift {:.2e}",
            p.duration,
            dp_max / dp_min,
            (u_last - run.propagation.observables.last().unwrap().uncert_hbar).abs()
        );
    }
    Ok(())
}

fn windows() -> Result<()> {
    let config = scan_config();
    let model = build_model(&config)?;
    let t_star = 3.351;
    let n = 2001;

    let excitation_of = |ramp: &VoltageRamp| {
        let ramp = ramp.clone();
        let model = model.clone();
        move |t: f64| -> Result<f64> {
            transport_excitation(&model, &ramp.stretched(t)?, TRAP_FREQ_MHZ, PropagationMode::FixedRk4)
        }
    };

    let tf = TransportFunction::across(&model, t_star)?;
    let iea = ionshuttle::analytic::iea_ramp(&model, &tf, TRAP_FREQ_MHZ, n)?.total;
    let w = stability_window(excitation_of(&iea), t_star, 0.1, 0.1, 1e-5)?;
    println!("iea window: [{:.5}, {:.5}] = {:.2} ns (clipped {} {})", w.lo, w.hi, w.width_ns(), w.clipped_lo, w.clipped_hi);

    let guess = guess_voltages(&model, &tf, TRAP_FREQ_MHZ, n)?;
    let probe = excitation_of(&guess);
    let mut best = (t_star, f64::INFINITY);
    for k in 0..=600 {
        let t = t_star - 0.15 + 0.0005 * k as f64;
        let e = probe(t)?;
        if e < best.1 {
            best = (t, e);
        }
    }
    println!("guess minimum near {:.4}: {:.3e} phonons", best.0, best.1);
    if best.1 < 0.1 {
        let w = stability_window(excitation_of(&guess), best.0, 0.1, 0.05, 1e-5)?;
        println!("guess window: {:.3} ns", w.width_ns());
    }

    let oct = oct_config(&config, 10.0);
    let seed = guess_voltages(&model, &tf, TRAP_FREQ_MHZ, n)?;
    let report = optimize_classical(&model, &seed, &oct)?;
    println!("opt at {t_star}: converged={} iters={} ph={:.2e}", report.converged, report.iterations.len(), report.final_phonons);
    let w = stability_window(excitation_of(&report.ramp), t_star, 0.1, 0.2, 1e-5)?;
    println!("opt window: [{:.5}, {:.5}] = {:.2} ns (clipped {} {})", w.lo, w.hi, w.width_ns(), w.clipped_lo, w.clipped_hi);
    Ok(())
}

fn xi() -> Result<()> {
    let config = scan_config();
    let model = build_model(&config)?;
    let oct = oct_config(&config, 10.0);
    let t0 = Instant::now();
    let t_start = 4.5 * bangbang_floor(config.volt_freq_mhz, 10.0);
    let points = descend_classical(&model, &oct, config.n_samples, t_start, 0.97, 0)?;
    let base = points.iter().rev().find(|p| p.converged).unwrap();
    println!("base ramp T={:.4} after {:.1} s", base.duration, t0.elapsed().as_secs_f64());

    let mut task = config.clone();
    task.max_iterations = 2000;
    let t1 = Instant::now();
    let trio = xi_trio(&task, &base.ramp, 0.4)?;
    println!(
        "xi=0.4: classical F={:.5} iea F={:.5} oct F={:.6} ({} iters, converged={}) in {:.1} s",
        trio.classical_seed_fidelity,
        trio.iea_fidelity,
        trio.oct_fidelity,
        trio.oct_iterations,
        trio.oct_converged,
        t1.elapsed().as_secs_f64()
    );
    Ok(())
}

fn iea_harm() -> Result<()> {
    let mut config = TaskConfig::default();
    config.backend = Backend::Harmonic;
    config.method = Method::Iea;
    config.grid_widths = 32.0;
    let model = build_model(&config)?;
    let tf = TransportFunction::across(&model, 1.0)?;
    let t0 = Instant::now();
    let scan = iea_tmin_scan(&model, &tf, TRAP_FREQ_MHZ, &[10.0], 2001, 1e-4)?;
    let t_min = scan[0].1;
    println!("harmonic IEA T_min(10 V) = {:.5} us ({:.1} s)", t_min, t0.elapsed().as_secs_f64());

    let tf_min = TransportFunction::across(&model, t_min)?;
    let grid = build_grid(&config)?;
    let floor = quantum_sample_floor(&model, t_min, grid);
    for mult in [8usize, 16, 32] {
        let n = floor * mult;
        let t1 = Instant::now();
        let ramp = ionshuttle::analytic::iea_ramp(&model, &tf_min, TRAP_FREQ_MHZ, n)?.total;
        let psi0 = ground_state(&model, &ramp.values[0], model.electrodes[0].center, grid)?;
        let target = ground_state(&model, ramp.values.last().unwrap(), model.electrodes[1].center, grid)?;
        match propagate_quantum(&model, &ramp, &psi0, TRAP_FREQ_MHZ) {
            Ok(prop) => {
                let f = ionshuttle::quantum::fidelity(&prop.final_state, &target);
                println!(
                    "n={n} infidelity={:.3e} final_dx={:.4e} ({:.1} s)",
                    1.0 - f.value,
                    prop.observables.last().unwrap().dx,
                    t1.elapsed().as_secs_f64()
                );
            }
            Err(e) => println!("n={n} failed: {e}"),
        }
    }

    let zero = iea_tmin_scan(&model, &tf, 0.0, &[5.0, 10.0, 20.0, 40.0, 80.0], 2001, 1e-5)?;
    let fit = fit_power_law(&zero)?;
    println!("omega=0 exponent b = {:.6} +- {:.2e}", fit.b, fit.b_err);

    // classical excitation of the harmonic IEA ramp right at T_min
    let ramp = ionshuttle::analytic::iea_ramp(&model, &tf_min, TRAP_FREQ_MHZ, 4001)?.total;
    let traj = propagate_classical(&model, &ramp, 0.0, 0.0, PropagationMode::FixedRk4)?;
    let (x, v) = traj.final_state();
    println!("classical endpoint: x-d = {:.3e}, v = {:.3e}", x - model.spacing(), v);
    Ok(())
}

fn ordering() -> Result<()> {
    // T_bb <= T_cOCT <= T_IEA on the same surrogate and bound
    let config = scan_config();
    let model = build_model(&config)?;
    let t_bb = bangbang_floor(config.volt_freq_mhz, 10.0);
    let t_oct = scan_tmin_classical(&model, &config, &[10.0])?[0].1;
    let tf = TransportFunction::across(&model, 1.0)?;
    let t_iea = iea_tmin_scan(&model, &tf, TRAP_FREQ_MHZ, &[10.0], 1001, 1e-4)?[0].1;
    println!("surrogate 10 V: bb={t_bb:.4} oct={t_oct:.4} iea={t_iea:.4}");
    Ok(())
}

fn suspect() -> Result<()> {
    // spot check: per-volt curvature of the surrogate at an electrode center
    let model = PotentialModel::standard_surrogate();
    let bias = model.calibrate_bias(0, TRAP_FREQ_MHZ)?;
    println!("surrogate bias for 1.3 MHz: {bias:.5} V");
    Ok(())
}

fn main() -> Result<()> {
    let which = std::env::args().nth(1).unwrap_or_default();
    match which.as_str() {
        "scans" => scans(),
        "quantum" => quantum(),
        "windows" => windows(),
        "xi" => xi(),
        "iea" => iea_harm(),
        "ordering" => ordering(),
        _ => suspect(),
    }
}
