use ionshuttle::error::Result;
use ionshuttle::experiment::{
    build_model, descend_classical, oct_config, transport_quantum_run, Backend, TaskConfig,
};
use std::time::Instant;

fn main() -> Result<()> {
    let mut config = TaskConfig::default();
    config.backend = Backend::Harmonic;
    config.n_samples = 250;
    config.max_iterations = 10000;
    let model = build_model(&config)?;
    let oct = oct_config(&config, 10.0);
    let t0 = Instant::now();
    let points = descend_classical(&model, &oct, config.n_samples, 0.90, 0.97, 3)?;
    println!("ladder: {} rungs in {:.1} s", points.len(), t0.elapsed().as_secs_f64());
    let mut quantum_tmin = f64::NAN;
    let mut classical_tmin = f64::NAN;
    for p in &points {
        if !p.converged {
            println!("  T={:.4} NOT converged ({:.3e} ph)", p.duration, p.final_phonons);
            continue;
        }
        classical_tmin = p.duration;
        let run = transport_quantum_run(&model, &p.ramp, &config)?;
        let o = *run.propagation.observables.last().unwrap();
        println!(
            "  T={:.4} cl={:.2e} qu={:.4e} uncert={:.8} n={}",
            p.duration,
            p.final_phonons,
            o.phonons,
            o.uncert_hbar,
            run.ramp.n_samples()
        );
        if o.phonons < 0.01 {
            quantum_tmin = p.duration;
        }
    }
    println!(
        "harmonic: classical T_min ~ {classical_tmin:.4}, quantum T_min ~ {quantum_tmin:.4}, ratio {:.3}",
        quantum_tmin / classical_tmin
    );
    Ok(())
}
