//! Batch layer behind the command-line tool: task configuration, minimum-time
//! scans, power-law fits, the scaled-geometry benchmark family, and the
//! deterministic CSV bundles for the survey figures.

use std::fs;
use std::io::{BufRead, Write as IoWrite};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{bangbang, iea_ramp, iea_tmin_scan};
use crate::classical::{propagate_classical, transport_excitation, PropagationMode};
use crate::classical_oct::{optimize_classical, OptimizationConfig};
use crate::error::{Result, ShuttleError};
use crate::potential::{PotentialModel, TRAP_FREQ_MHZ, VOLT_FREQ_MHZ, WELL_SPACING};
use crate::quantum::{
    fidelity, ground_state, propagate_quantum, write_observables_csv, GridSpec,
    QuantumPropagation,
};
use crate::quantum_oct::{
    convergence_study, optimize_quantum, QuantumOptimizationConfig, StudyRow, STUDY_CSV_HEADER,
};
use crate::ramp::{guess_voltages, TransportFunction, VoltageRamp};
use crate::units::{angular, ground_width, HBAR, MASS_CA40};

pub const SCHEMA_VERSION: u64 = 1;
pub const SCAN_CSV_HEADER: &str = "umax_V,tmin_us";

/// Bisection resolution for minimum-duration scans, us (1 ns).
const TMIN_RESOLUTION: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Surrogate,
    Harmonic,
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Surrogate => "surrogate",
            Backend::Harmonic => "harmonic",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Guess,
    ClassicalOct,
    QuantumOct,
    Iea,
    Bangbang,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Guess => "guess",
            Method::ClassicalOct => "classical-oct",
            Method::QuantumOct => "quantum-oct",
            Method::Iea => "iea",
            Method::Bangbang => "bangbang",
        })
    }
}

/// One batch task: the trap, the transport, and the method designing the
/// ramp. Defaults describe the reference transport (40 u ion, 280 um wells,
/// 10 V electrodes, 1.3 MHz well).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub schema_version: u64,
    pub backend: Backend,
    pub method: Method,
    /// Ion mass, atomic mass units.
    pub mass_u: f64,
    /// Transported-well frequency, MHz. Zero selects the vanishing-frequency
    /// limit and is accepted only for the force-compensation method.
    pub freq_mhz: f64,
    /// Well frequency per volt of bias, MHz; sets the bang-bang bound and the
    /// harmonic backend's curvature.
    pub volt_freq_mhz: f64,
    /// Electrode spacing (transport distance), um. The electrode profile is
    /// scaled geometrically along with it.
    pub distance_um: f64,
    pub duration_us: f64,
    pub u_max_v: f64,
    /// Ramp samples, endpoints included.
    pub n_samples: usize,
    /// Spatial grid points for quantum propagation; a power of two.
    pub grid_points: usize,
    /// Moving-window width in ground-state widths.
    pub grid_widths: f64,
    pub target_phonons: f64,
    pub target_infidelity: f64,
    pub max_iterations: usize,
    /// Update weight for the optimizers; omit to let them pick one.
    pub lambda_a: Option<f64>,
    /// Voltage bounds visited by scans.
    pub u_max_list: Vec<f64>,
    /// Recorded for provenance; no current pipeline draws random numbers.
    pub seed: u64,
    /// Worker-thread cap for scans; omit to use every core.
    pub jobs: Option<usize>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            backend: Backend::Surrogate,
            method: Method::Guess,
            mass_u: MASS_CA40,
            freq_mhz: TRAP_FREQ_MHZ,
            volt_freq_mhz: VOLT_FREQ_MHZ,
            distance_um: WELL_SPACING,
            duration_us: 3.351,
            u_max_v: 10.0,
            n_samples: 1001,
            grid_points: 256,
            grid_widths: 64.0,
            target_phonons: 0.01,
            target_infidelity: 1e-3,
            max_iterations: 2000,
            lambda_a: None,
            u_max_list: vec![10.0, 20.0, 40.0, 80.0],
            seed: 0,
            jobs: None,
        }
    }
}

impl TaskConfig {
    /// Parse a JSON config. The text must declare `schema_version`; every
    /// other field falls back to its default.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(serde_json::Value::as_u64) {
            None => {
                return Err(ShuttleError::Config(
                    "config must declare an integer top-level schema_version".into(),
                ))
            }
            Some(v) if v != SCHEMA_VERSION => {
                return Err(ShuttleError::Config(format!(
                    "unsupported schema_version {v}; this build reads version {SCHEMA_VERSION}"
                )))
            }
            Some(_) => {}
        }
        let config: Self = serde_json::from_value(value)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ShuttleError::Config(format!(
                "unsupported schema_version {}; this build reads version {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        for (name, v) in [
            ("mass_u", self.mass_u),
            ("volt_freq_mhz", self.volt_freq_mhz),
            ("distance_um", self.distance_um),
            ("duration_us", self.duration_us),
            ("u_max_v", self.u_max_v),
            ("grid_widths", self.grid_widths),
            ("target_phonons", self.target_phonons),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ShuttleError::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.freq_mhz >= 0.0 && self.freq_mhz.is_finite()) {
            return Err(ShuttleError::Config(format!(
                "freq_mhz must be nonnegative and finite, got {}",
                self.freq_mhz
            )));
        }
        if self.freq_mhz == 0.0 && self.method != Method::Iea {
            return Err(ShuttleError::Config(
                "freq_mhz = 0 is the pure force-compensation limit; it needs method = iea".into(),
            ));
        }
        if !(self.target_infidelity >= 0.0 && self.target_infidelity.is_finite()) {
            return Err(ShuttleError::Config(format!(
                "target_infidelity must be nonnegative and finite, got {}",
                self.target_infidelity
            )));
        }
        if self.n_samples < 2 {
            return Err(ShuttleError::Config(format!(
                "n_samples must be at least 2, got {}",
                self.n_samples
            )));
        }
        if self.max_iterations == 0 {
            return Err(ShuttleError::Config("max_iterations must be at least 1".into()));
        }
        if !(self.grid_points >= 32 && self.grid_points.is_power_of_two()) {
            return Err(ShuttleError::Config(format!(
                "grid_points must be a power of two no smaller than 32, got {}",
                self.grid_points
            )));
        }
        if self.u_max_list.is_empty() {
            return Err(ShuttleError::Config("u_max_list must not be empty".into()));
        }
        for &u in &self.u_max_list {
            if !(u > 0.0 && u.is_finite()) {
                return Err(ShuttleError::Config(format!(
                    "u_max_list entries must be positive and finite, got {u}"
                )));
            }
        }
        if let Some(l) = self.lambda_a {
            if !(l > 0.0 && l.is_finite()) {
                return Err(ShuttleError::Config(format!(
                    "lambda_a must be positive and finite when given, got {l}"
                )));
            }
        }
        if self.jobs == Some(0) {
            return Err(ShuttleError::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Trap model described by the config. The surrogate profile scales
/// geometrically with the electrode spacing; the harmonic backend rebuilds
/// its curvature from `volt_freq_mhz` at any spacing.
pub fn build_model(config: &TaskConfig) -> Result<PotentialModel> {
    let model = match config.backend {
        Backend::Surrogate => PotentialModel::standard_surrogate()
            .scaled(config.distance_um / WELL_SPACING)?,
        Backend::Harmonic => PotentialModel::harmonic_pair(
            config.distance_um,
            config.volt_freq_mhz,
            config.mass_u,
        ),
    };
    if config.backend == Backend::Surrogate && config.mass_u != MASS_CA40 {
        let mut model = model;
        model.mass = config.mass_u;
        return Ok(model);
    }
    Ok(model)
}

pub fn build_grid(config: &TaskConfig) -> Result<GridSpec> {
    GridSpec::for_trap(
        config.mass_u,
        config.freq_mhz,
        config.grid_points,
        config.grid_widths,
    )
}

/// Ramp produced by one of the closed-form designers. The optimizing methods
/// have dedicated entry points and are rejected here.
pub fn design_ramp(model: &PotentialModel, config: &TaskConfig, method: Method) -> Result<VoltageRamp> {
    let tf = TransportFunction::across(model, config.duration_us)?;
    match method {
        Method::Guess => guess_voltages(model, &tf, config.freq_mhz, config.n_samples),
        Method::Iea => Ok(iea_ramp(model, &tf, config.freq_mhz, config.n_samples)?.total),
        Method::Bangbang => {
            let bb = bangbang(
                config.volt_freq_mhz,
                config.u_max_v,
                model.electrodes[0].center,
                model.electrodes[1].center,
            )?;
            bb.ramp(config.n_samples)
        }
        Method::ClassicalOct | Method::QuantumOct => Err(ShuttleError::Config(format!(
            "method {method} needs an optimize subcommand; the simulators take guess, iea, or bangbang"
        ))),
    }
}

pub fn oct_config(config: &TaskConfig, u_max: f64) -> OptimizationConfig {
    let mut oct = OptimizationConfig::new(config.freq_mhz, u_max);
    oct.lambda_a = config.lambda_a;
    oct.max_iterations = config.max_iterations;
    oct.target_phonons = config.target_phonons;
    oct
}

pub fn quantum_oct_config(config: &TaskConfig) -> Result<QuantumOptimizationConfig> {
    let grid = build_grid(config)?;
    let mut q = QuantumOptimizationConfig::new(config.u_max_v, grid);
    q.lambda_a = config.lambda_a;
    q.max_iterations = config.max_iterations;
    q.target_infidelity = config.target_infidelity;
    Ok(q)
}

/// Shortest two-segment transport time under the per-volt frequency and the
/// voltage cap; the hard floor for any bounded ramp.
pub fn bangbang_floor(volt_freq_mhz: f64, u_max: f64) -> f64 {
    std::f64::consts::SQRT_2 / (angular(volt_freq_mhz) * u_max.sqrt())
}

/// Fit of `T = a * U^(-b)` with standard errors from the log-log linear fit.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// Prefactor, us.
    pub a: f64,
    pub b: f64,
    pub a_err: f64,
    pub b_err: f64,
    /// Root-mean-square residual of log T.
    pub residual: f64,
}

pub fn fit_power_law(table: &[(f64, f64)]) -> Result<PowerLawFit> {
    if table.len() < 3 {
        return Err(ShuttleError::Fit(format!(
            "a power-law fit needs at least three points, got {}",
            table.len()
        )));
    }
    for &(u, t) in table {
        if !(u > 0.0 && t > 0.0 && u.is_finite() && t.is_finite()) {
            return Err(ShuttleError::Domain(format!(
                "power-law data must be positive and finite, got ({u}, {t})"
            )));
        }
    }
    let mut bounds: Vec<f64> = table.iter().map(|p| p.0).collect();
    bounds.sort_by(f64::total_cmp);
    if bounds.windows(2).any(|w| w[0] == w[1]) {
        return Err(ShuttleError::Fit(
            "power-law fit points must have distinct voltage bounds".into(),
        ));
    }
    let n = table.len() as f64;
    let xs: Vec<f64> = table.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = table.iter().map(|p| p.1.ln()).collect();
    let x_bar = xs.iter().sum::<f64>() / n;
    let y_bar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_bar).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_bar) * (y - y_bar)).sum();
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let b = -slope;
    if !(b > 0.0) {
        return Err(ShuttleError::Fit(format!(
            "fitted exponent b = {b:.3e} is not positive; the durations do not fall off with the bound"
        )));
    }
    let s2 = ssr / (n - 2.0);
    let a = intercept.exp();
    Ok(PowerLawFit {
        a,
        b,
        a_err: a * (s2 * (1.0 / n + x_bar * x_bar / sxx)).sqrt(),
        b_err: (s2 / sxx).sqrt(),
        residual: (ssr / n).sqrt(),
    })
}

pub fn write_scan_csv<W: IoWrite>(mut w: W, table: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "{SCAN_CSV_HEADER}")?;
    for &(u, t) in table {
        writeln!(w, "{u},{t}")?;
    }
    Ok(())
}

pub fn read_scan_csv<R: BufRead>(r: R) -> Result<Vec<(f64, f64)>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| ShuttleError::Config("empty scan file".into()))??;
    if header.trim() != SCAN_CSV_HEADER {
        return Err(ShuttleError::Config(format!(
            "expected scan header '{SCAN_CSV_HEADER}', got '{}'",
            header.trim()
        )));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(ShuttleError::Config(format!(
                "scan row {} has {} fields, expected 2",
                i + 2,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| {
                ShuttleError::Config(format!("scan row {}: '{s}' is not a number", i + 2))
            })
        };
        out.push((parse(fields[0])?, parse(fields[1])?));
    }
    Ok(out)
}

/// Ok(Some) when the optimizer reached the phonon target, Ok(None) when it
/// exhausted its budget, diverged, or lost the ion; Err on setup failures.
fn converge(
    model: &PotentialModel,
    oct: &OptimizationConfig,
    seed: &VoltageRamp,
) -> Result<Option<VoltageRamp>> {
    match optimize_classical(model, seed, oct) {
        Ok(r) if r.converged => Ok(Some(r.ramp)),
        Ok(_) => Ok(None),
        Err(ShuttleError::Divergence(_)) | Err(ShuttleError::Escape { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn classical_tmin(
    model: &PotentialModel,
    config: &TaskConfig,
    u_max: f64,
    chain: Option<&(f64, f64, VoltageRamp)>,
) -> Result<(f64, VoltageRamp)> {
    let oct = oct_config(config, u_max);
    // The equation of motion is linear in the voltages, so a converged ramp
    // under the bound u at duration T maps exactly onto the bound c u at
    // duration T / sqrt(c) after scaling voltages by c. Seed from a scaled
    // neighbour when one is available instead of descending from scratch.
    let mut warm = None;
    if let Some((u_prev, t_prev, ramp_prev)) = chain {
        let c = u_max / u_prev;
        let t_try = 1.05 * t_prev / c.sqrt();
        let seed = scale_ramp_voltages(ramp_prev, c)?.stretched(t_try)?;
        if let Some(ramp) = converge(model, &oct, &seed)? {
            warm = Some((t_try, ramp));
        }
    }
    if warm.is_none() {
        let mut t_try = 4.5 * bangbang_floor(config.volt_freq_mhz, u_max);
        for _ in 0..6 {
            let tf = TransportFunction::across(model, t_try)?;
            let guess = guess_voltages(model, &tf, config.freq_mhz, config.n_samples)?;
            if let Some(ramp) = converge(model, &oct, &guess)? {
                warm = Some((t_try, ramp));
                break;
            }
            t_try *= 1.5;
        }
    }
    let (mut t_good, mut ramp_good) = warm.ok_or_else(|| {
        ShuttleError::Divergence(format!(
            "classical optimization never reached {} phonons under {u_max} V",
            config.target_phonons,
        ))
    })?;
    // Warm-started geometric descent. Single missed rungs are often budget
    // stalls rather than the physical floor, so keep seeding through them and
    // only stop after several consecutive misses.
    let mut t = t_good;
    let mut seed_ramp = ramp_good.clone();
    let mut misses = 0usize;
    for _ in 0..400 {
        t *= 0.97;
        let seed = seed_ramp.stretched(t)?;
        match optimize_classical(model, &seed, &oct) {
            Ok(r) => {
                if r.converged {
                    t_good = t;
                    ramp_good = r.ramp.clone();
                    misses = 0;
                } else {
                    misses += 1;
                }
                seed_ramp = r.ramp;
                if misses > 3 {
                    break;
                }
            }
            Err(ShuttleError::Divergence(_)) | Err(ShuttleError::Escape { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    if misses == 0 {
        return Err(ShuttleError::Divergence(format!(
            "descent under {u_max} V never hit an infeasible duration; scan aborted"
        )));
    }
    let mut lo = t_good * 0.97;
    let mut hi = t_good;
    while hi - lo > TMIN_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        let seed = ramp_good.stretched(mid)?;
        match converge(model, &oct, &seed)? {
            Some(r) => {
                hi = mid;
                ramp_good = r;
            }
            None => lo = mid,
        }
    }
    Ok((hi, ramp_good))
}

/// Minimum feasible duration per voltage bound: warm-started descent to
/// repeated failure, then bisection to 1 ns on "the optimizer reaches the
/// phonon target within its budget". Points run in ascending voltage order so
/// each seeds the next through the exact voltage-time scaling of the equation
/// of motion; the table keeps the input order.
pub fn scan_tmin_classical(
    model: &PotentialModel,
    config: &TaskConfig,
    umax_list: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if umax_list.is_empty() {
        return Err(ShuttleError::Config(
            "the scan needs at least one voltage bound".into(),
        ));
    }
    for &u in umax_list {
        if !(u > 0.0 && u.is_finite()) {
            return Err(ShuttleError::Config(format!(
                "voltage bounds must be positive and finite, got {u}"
            )));
        }
    }
    let mut order: Vec<usize> = (0..umax_list.len()).collect();
    order.sort_by(|&a, &b| umax_list[a].total_cmp(&umax_list[b]));
    let mut table = vec![(0.0, 0.0); umax_list.len()];
    let mut chain: Option<(f64, f64, VoltageRamp)> = None;
    for &i in &order {
        let u = umax_list[i];
        let (t, ramp) = classical_tmin(model, config, u, chain.as_ref())?;
        table[i] = (u, t);
        chain = Some((u, t, ramp));
    }
    Ok(table)
}

/// One rung of a warm-started descent in duration.
#[derive(Clone, Debug)]
pub struct LadderPoint {
    pub duration: f64,
    pub ramp: VoltageRamp,
    pub converged: bool,
    pub final_phonons: f64,
}

/// Optimize along a geometric grid of durations, seeding each rung with the
/// previous ramp stretched onto the new grid. Descends from `t_start` by
/// `factor` and stops once a rung has missed the phonon target and
/// `extra_rungs` rungs after it missed too (or the optimizer diverges).
pub fn descend_classical(
    model: &PotentialModel,
    oct: &OptimizationConfig,
    n_samples: usize,
    t_start: f64,
    factor: f64,
    extra_rungs: usize,
) -> Result<Vec<LadderPoint>> {
    if !(factor > 0.0 && factor < 1.0) {
        return Err(ShuttleError::Domain("descent factor must lie in (0, 1)".into()));
    }
    let tf = TransportFunction::across(model, t_start)?;
    let guess = guess_voltages(model, &tf, oct.freq_mhz, n_samples)?;
    let first = optimize_classical(model, &guess, oct)?;
    if !first.converged {
        return Err(ShuttleError::Divergence(format!(
            "the descent start T = {t_start} us did not reach the phonon target; start longer"
        )));
    }
    let mut points = vec![LadderPoint {
        duration: t_start,
        ramp: first.ramp.clone(),
        converged: true,
        final_phonons: first.final_phonons,
    }];
    let mut seed_ramp = first.ramp;
    let mut t = t_start;
    let mut failures = 0usize;
    for _ in 0..500 {
        t *= factor;
        let seed = seed_ramp.stretched(t)?;
        match optimize_classical(model, &seed, oct) {
            Ok(r) => {
                points.push(LadderPoint {
                    duration: t,
                    ramp: r.ramp.clone(),
                    converged: r.converged,
                    final_phonons: r.final_phonons,
                });
                failures = if r.converged { 0 } else { failures + 1 };
                seed_ramp = r.ramp;
                if failures > extra_rungs {
                    break;
                }
            }
            Err(ShuttleError::Divergence(_)) | Err(ShuttleError::Escape { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(points)
}

/// Smallest ramp sample count keeping one propagation step's frame travel
/// under a quarter of the moving window.
pub fn quantum_sample_floor(model: &PotentialModel, duration: f64, grid: GridSpec) -> usize {
    let v_peak = 1.875 * model.spacing() / duration;
    let n = (4.0 * v_peak * duration / grid.width).ceil() as usize + 2;
    n.max(2)
}

fn resample_for_quantum(
    model: &PotentialModel,
    ramp: &VoltageRamp,
    grid: GridSpec,
) -> Result<VoltageRamp> {
    let mut floor = quantum_sample_floor(model, ramp.duration, grid);
    // The frame momentum is held fixed within a step, so the force at the
    // wavepacket kicks the envelope by F dt / hbar per step; keep that kick
    // inside half the grid's momentum band or the window aliases. Bound F
    // along the classical trajectory plus a curvature term over the packet's
    // possible extent.
    let probe = if ramp.n_samples() < 2001 {
        ramp.resampled(2001)?
    } else {
        ramp.clone()
    };
    if let Ok(traj) = propagate_classical(
        model,
        &probe,
        model.electrodes[0].center,
        0.0,
        PropagationMode::FixedRk4,
    ) {
        let mut f_max = 0.0_f64;
        let mut c_max = 0.0_f64;
        for k in 0..traj.n_samples() {
            let u = probe.value_at(traj.time(k))?;
            let (_, dv, ddv) = model.eval_unchecked(&u, traj.x[k]);
            f_max = f_max.max(dv.abs());
            c_max = c_max.max(ddv.abs());
        }
        let f_bound = 1.5 * f_max + c_max * 0.25 * grid.width;
        let k_half = 0.5 * std::f64::consts::PI / grid.dx();
        let force_floor = (ramp.duration * f_bound / (HBAR * k_half)).ceil() as usize + 2;
        floor = floor.max(force_floor);
    }
    if ramp.n_samples() < floor {
        ramp.resampled(floor)
    } else {
        Ok(ramp.clone())
    }
}

/// A ramp propagated quantum mechanically between the endpoint wells'
/// ground states.
#[derive(Debug)]
pub struct QuantumRun {
    /// The ramp as propagated (resampled when the design was too coarse for
    /// the moving window).
    pub ramp: VoltageRamp,
    pub propagation: QuantumPropagation,
    /// Squared overlap with the destination well's ground state.
    pub target_fidelity: f64,
}

pub fn transport_quantum_run(
    model: &PotentialModel,
    ramp: &VoltageRamp,
    config: &TaskConfig,
) -> Result<QuantumRun> {
    if config.freq_mhz == 0.0 {
        return Err(ShuttleError::Config(
            "quantum propagation needs a confining well; set freq_mhz > 0".into(),
        ));
    }
    let grid = build_grid(config)?;
    let ramp = resample_for_quantum(model, ramp, grid)?;
    let x0 = model.electrodes[0].center;
    let x1 = model.electrodes[model.electrodes.len() - 1].center;
    let psi0 = ground_state(model, &ramp.values[0], x0, grid)?;
    let target = ground_state(model, ramp.values.last().expect("nonempty ramp"), x1, grid)?;
    let propagation = propagate_quantum(model, &ramp, &psi0, config.freq_mhz)?;
    let target_fidelity = fidelity(&propagation.final_state, &target).value;
    Ok(QuantumRun {
        ramp,
        propagation,
        target_fidelity,
    })
}

/// Geometric family sweeping the wavepacket-width-to-distance ratio xi at
/// fixed trap frequency. Voltages carry over from the reference geometry
/// multiplied by `voltage_scale`.
#[derive(Clone, Debug)]
pub struct XiFamily {
    pub model: PotentialModel,
    pub xi: f64,
    pub length_scale: f64,
    pub voltage_scale: f64,
}

/// Width-to-distance ratio of the reference trap.
pub fn xi_reference() -> f64 {
    ground_width(MASS_CA40, angular(TRAP_FREQ_MHZ)) / WELL_SPACING
}

pub fn xi_family(xi: f64) -> Result<XiFamily> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(ShuttleError::Domain("xi must be positive and finite".into()));
    }
    let length_scale = xi_reference() / xi;
    let model = PotentialModel::standard_surrogate().scaled(length_scale)?;
    Ok(XiFamily {
        model,
        xi,
        length_scale,
        voltage_scale: length_scale * length_scale,
    })
}

/// Same waveform with every voltage (and any finite bound) multiplied by
/// `scale`.
pub fn scale_ramp_voltages(ramp: &VoltageRamp, scale: f64) -> Result<VoltageRamp> {
    let values = ramp
        .values
        .iter()
        .map(|v| [v[0] * scale, v[1] * scale])
        .collect();
    let mut out = VoltageRamp::new(ramp.duration, values)?;
    if ramp.u_max.is_finite() {
        out.u_max = ramp.u_max * scale.abs();
    }
    Ok(out)
}

/// Quantum benchmark at one xi: the reference classical ramp mapped onto the
/// family, the force-compensated analytic ramp, and a Krotov refinement of
/// the classical seed.
#[derive(Clone, Debug, Serialize)]
pub struct XiTrio {
    pub xi: f64,
    pub duration_us: f64,
    pub classical_seed_fidelity: f64,
    pub iea_fidelity: f64,
    pub oct_fidelity: f64,
    pub oct_iterations: usize,
    pub oct_converged: bool,
}

pub fn xi_trio(config: &TaskConfig, base_ramp: &VoltageRamp, xi: f64) -> Result<XiTrio> {
    let fam = xi_family(xi)?;
    let grid = build_grid(config)?;
    let base = resample_for_quantum(&fam.model, base_ramp, grid)?;
    let seed = scale_ramp_voltages(&base, fam.voltage_scale)?;
    let x0 = fam.model.electrodes[0].center;
    let x1 = fam.model.electrodes[1].center;
    let psi0 = ground_state(&fam.model, &seed.values[0], x0, grid)?;
    let target = ground_state(&fam.model, seed.values.last().expect("nonempty"), x1, grid)?;
    let prop = propagate_quantum(&fam.model, &seed, &psi0, config.freq_mhz)?;
    let classical_seed_fidelity = fidelity(&prop.final_state, &target).value;

    let tf = TransportFunction::across(&fam.model, seed.duration)?;
    let comp = iea_ramp(&fam.model, &tf, config.freq_mhz, seed.n_samples())?;
    let psi0_iea = ground_state(&fam.model, &comp.total.values[0], x0, grid)?;
    let target_iea = ground_state(
        &fam.model,
        comp.total.values.last().expect("nonempty"),
        x1,
        grid,
    )?;
    let prop_iea = propagate_quantum(&fam.model, &comp.total, &psi0_iea, config.freq_mhz)?;
    let iea_fidelity = fidelity(&prop_iea.final_state, &target_iea).value;

    let mut qcfg = QuantumOptimizationConfig::new(config.u_max_v * fam.voltage_scale, grid);
    qcfg.lambda_a = config.lambda_a;
    qcfg.max_iterations = config.max_iterations;
    qcfg.target_infidelity = config.target_infidelity;
    let report = optimize_quantum(&fam.model, &seed, &psi0, &target, &qcfg)?;
    Ok(XiTrio {
        xi,
        duration_us: seed.duration,
        classical_seed_fidelity,
        iea_fidelity,
        oct_fidelity: report.final_fidelity,
        oct_iterations: report.iterations.len(),
        oct_converged: report.converged,
    })
}

/// Fixed-weight refinement studies over a (xi, lambda) grid, each seeded with
/// the reference classical ramp mapped onto its geometry. Runs concurrently;
/// rows keep grid order (xi outer, lambda inner).
pub fn xi_lambda_study(
    config: &TaskConfig,
    base_ramp: &VoltageRamp,
    xi_list: &[f64],
    lambda_list: &[f64],
    study_iterations: usize,
) -> Result<Vec<(f64, StudyRow)>> {
    let mut tasks = Vec::new();
    for &xi in xi_list {
        for &lambda in lambda_list {
            tasks.push((xi, lambda));
        }
    }
    tasks
        .par_iter()
        .map(|&(xi, lambda)| {
            let fam = xi_family(xi)?;
            let grid = build_grid(config)?;
            let base = resample_for_quantum(&fam.model, base_ramp, grid)?;
            let seed = scale_ramp_voltages(&base, fam.voltage_scale)?;
            let psi0 = ground_state(&fam.model, &seed.values[0], fam.model.electrodes[0].center, grid)?;
            let target = ground_state(
                &fam.model,
                seed.values.last().expect("nonempty"),
                fam.model.electrodes[1].center,
                grid,
            )?;
            let mut qcfg = QuantumOptimizationConfig::new(config.u_max_v * fam.voltage_scale, grid);
            qcfg.study_iterations = study_iterations;
            let rows = convergence_study(&fam.model, &seed, &psi0, &target, &qcfg, &[lambda])?;
            Ok((xi, rows.into_iter().next().expect("one row per weight")))
        })
        .collect()
}

fn write_string(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn scan_csv_string(table: &[(f64, f64)]) -> String {
    let mut buf = Vec::new();
    write_scan_csv(&mut buf, table).expect("in-memory write");
    String::from_utf8(buf).expect("csv is ascii")
}

fn pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

/// Write one figure's deterministic CSV bundle (plus the resolved config)
/// under `out/<figure>/`, returning the bundle directory.
pub fn reproduce(figure: &str, config: &TaskConfig, out: &Path) -> Result<PathBuf> {
    let run: fn(&TaskConfig, &Path) -> Result<()> = match figure {
        "fig3" => fig3_energy_vs_duration,
        "fig4" => fig4_classical_tmin,
        "fig5" => fig5_quantum_excitation,
        "fig6" => fig6_iea_tmin,
        "fig7" => fig7_weight_study,
        _ => {
            return Err(ShuttleError::Config(format!(
                "unknown figure id '{figure}'; expected fig3, fig4, fig5, fig6, or fig7"
            )))
        }
    };
    let dir = out.join(figure);
    fs::create_dir_all(&dir)?;
    write_string(&dir, "config.json", &config.to_pretty_json())?;
    run(config, &dir)?;
    Ok(dir)
}

/// Final excitation against duration: the tracking ramp as designed, and
/// optimized ramps under 10, 20, and 30 V caps descending through their
/// feasibility walls.
fn fig3_energy_vs_duration(config: &TaskConfig, dir: &Path) -> Result<()> {
    let model = build_model(config)?;
    let durations: Vec<f64> = (0..=370).map(|k| 0.3 + 0.01 * k as f64).collect();
    let rows: Result<Vec<_>> = durations
        .par_iter()
        .map(|&t| {
            let tf = TransportFunction::across(&model, t)?;
            let ramp = guess_voltages(&model, &tf, config.freq_mhz, config.n_samples)?;
            let phonons =
                transport_excitation(&model, &ramp, config.freq_mhz, PropagationMode::FixedRk4)?;
            Ok((t, phonons))
        })
        .collect();
    let mut csv = String::from("t_us,excitation_phonons\n");
    for (t, p) in rows? {
        csv.push_str(&format!("{t},{p}\n"));
    }
    write_string(dir, "guess.csv", &csv)?;

    for u in [10.0, 20.0, 30.0] {
        let oct = oct_config(config, u);
        let t_start = 4.5 * bangbang_floor(config.volt_freq_mhz, u);
        let points = descend_classical(&model, &oct, config.n_samples, t_start, 0.97, 5)?;
        let mut csv = String::from("t_us,excitation_phonons\n");
        for p in points.iter().rev() {
            csv.push_str(&format!("{},{}\n", p.duration, p.final_phonons));
        }
        write_string(dir, &format!("optimized_{u:.0}V.csv"), &csv)?;
    }
    Ok(())
}

/// Classical minimum-duration scan with its power-law fit and the analytic
/// two-segment floor.
fn fig4_classical_tmin(config: &TaskConfig, dir: &Path) -> Result<()> {
    let model = build_model(config)?;
    let scan = scan_tmin_classical(&model, config, &config.u_max_list)?;
    write_string(dir, "scan.csv", &scan_csv_string(&scan))?;
    if scan.len() >= 3 {
        write_string(dir, "fit.json", &pretty_json(&fit_power_law(&scan)?))?;
    }
    let bb: Vec<(f64, f64)> = config
        .u_max_list
        .iter()
        .map(|&u| (u, bangbang_floor(config.volt_freq_mhz, u)))
        .collect();
    write_string(dir, "bangbang.csv", &scan_csv_string(&bb))?;
    Ok(())
}

fn quantum_point(
    model: &PotentialModel,
    config: &TaskConfig,
    grid: GridSpec,
    ramp: &VoltageRamp,
) -> Result<(f64, f64, f64, f64)> {
    let classical =
        transport_excitation(model, ramp, config.freq_mhz, PropagationMode::FixedRk4)?;
    let ramp = resample_for_quantum(model, ramp, grid)?;
    let psi0 = ground_state(model, &ramp.values[0], model.electrodes[0].center, grid)?;
    let prop = propagate_quantum(model, &ramp, &psi0, config.freq_mhz)?;
    let o = prop.observables.last().expect("nonempty series");
    Ok((ramp.duration, classical, o.phonons, o.uncert_hbar))
}

const QUANTUM_CURVE_HEADER: &str = "t_us,classical_phonons,quantum_phonons,uncert_product_hbar";

/// Quantum-propagated final excitation against duration for optimized,
/// tracking, and force-compensated ramps, plus squeezing diagnostics for the
/// fastest feasible optimized transport.
fn fig5_quantum_excitation(config: &TaskConfig, dir: &Path) -> Result<()> {
    let model = build_model(config)?;
    let grid = build_grid(config)?;
    let oct = oct_config(config, config.u_max_v);
    let points = descend_classical(&model, &oct, config.n_samples, 1.05, 0.97, 0)?;
    let converged: Vec<&LadderPoint> = points.iter().filter(|p| p.converged).collect();
    let rows: Result<Vec<_>> = converged
        .par_iter()
        .map(|p| quantum_point(&model, config, grid, &p.ramp))
        .collect();
    let mut csv = String::from(QUANTUM_CURVE_HEADER);
    csv.push('\n');
    for (t, c, q, u) in rows?.iter().rev() {
        csv.push_str(&format!("{t},{c},{q},{u}\n"));
    }
    write_string(dir, "optimized.csv", &csv)?;

    let durations: Vec<f64> = (0..=28).map(|k| 0.30 + 0.025 * k as f64).collect();
    for (name, method) in [("guess.csv", Method::Guess), ("iea.csv", Method::Iea)] {
        let rows: Result<Vec<_>> = durations
            .par_iter()
            .map(|&t| {
                let mut task = config.clone();
                task.duration_us = t;
                let ramp = design_ramp(&model, &task, method)?;
                quantum_point(&model, config, grid, &ramp)
            })
            .collect();
        let mut csv = String::from(QUANTUM_CURVE_HEADER);
        csv.push('\n');
        for (t, c, q, u) in rows? {
            csv.push_str(&format!("{t},{c},{q},{u}\n"));
        }
        write_string(dir, name, &csv)?;
    }

    if let Some(p) = converged.last() {
        let ramp = resample_for_quantum(&model, &p.ramp, grid)?;
        let psi0 = ground_state(&model, &ramp.values[0], model.electrodes[0].center, grid)?;
        let prop = propagate_quantum(&model, &ramp, &psi0, config.freq_mhz)?;
        let mut buf = Vec::new();
        write_observables_csv(&prop.observables, &mut buf)?;
        write_string(
            dir,
            "observables_fast.csv",
            std::str::from_utf8(&buf).expect("csv is ascii"),
        )?;
        let wf = &prop.final_state;
        let mut csv = String::from("x_um,prob_per_um\n");
        for j in 0..wf.grid.n {
            csv.push_str(&format!("{},{}\n", wf.x_cl + wf.grid.xi(j), wf.psi[j].norm_sqr()));
        }
        write_string(dir, "final_density_fast.csv", &csv)?;
    }
    Ok(())
}

/// Force-compensated minimum durations at the working frequency and in the
/// vanishing-frequency limit, next to the classical scan.
fn fig6_iea_tmin(config: &TaskConfig, dir: &Path) -> Result<()> {
    let model = build_model(config)?;
    let tf = TransportFunction::across(&model, config.duration_us)?;
    for (name, freq) in [("iea_trap.csv", config.freq_mhz), ("iea_zero.csv", 0.0)] {
        let scan = iea_tmin_scan(&model, &tf, freq, &config.u_max_list, config.n_samples, 1e-4)?;
        write_string(dir, name, &scan_csv_string(&scan))?;
        if freq == 0.0 && scan.len() >= 3 {
            write_string(dir, "fit_zero.json", &pretty_json(&fit_power_law(&scan)?))?;
        }
    }
    let classical = scan_tmin_classical(&model, config, &config.u_max_list)?;
    write_string(dir, "classical.csv", &scan_csv_string(&classical))?;
    Ok(())
}

/// Update-weight study across the geometry family plus the three-way
/// benchmark at xi = 0.4.
fn fig7_weight_study(config: &TaskConfig, dir: &Path) -> Result<()> {
    let model = build_model(config)?;
    let oct = oct_config(config, config.u_max_v);
    let t_start = 4.5 * bangbang_floor(config.volt_freq_mhz, config.u_max_v);
    let points = descend_classical(&model, &oct, config.n_samples, t_start, 0.97, 0)?;
    let base = points
        .iter()
        .rev()
        .find(|p| p.converged)
        .expect("descent starts from a converged rung");
    let xi_list = [xi_reference(), 1e-3, 1e-2, 1e-1, 0.4];
    let lambda_list: Vec<f64> = (2..=9).map(|e| 10f64.powi(e)).collect();
    let rows = xi_lambda_study(config, &base.ramp, &xi_list, &lambda_list, 100)?;
    let mut csv = String::from(STUDY_CSV_HEADER);
    csv.push('\n');
    for (xi, r) in rows {
        csv.push_str(&format!(
            "{xi},{},{},{},{}\n",
            r.lambda_a, r.mean_dj, r.final_fidelity, r.unstable as u8
        ));
    }
    write_string(dir, "study.csv", &csv)?;
    write_string(dir, "trio_xi0.4.json", &pretty_json(&xi_trio(config, &base.ramp, 0.4)?))?;
    Ok(())
}
