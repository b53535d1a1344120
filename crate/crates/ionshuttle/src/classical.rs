//! Classical trajectory propagation under a voltage ramp.
//!
//! Two integrator modes: a fixed-step RK4 that steps exactly on the ramp
//! sample grid (the optimizer needs a deterministic step-per-sample
//! correspondence) and an adaptive Dormand-Prince 5(4) for verification.

use std::io::Write as IoWrite;

use crate::error::{Result, ShuttleError};
use crate::potential::PotentialModel;
use crate::ramp::VoltageRamp;
use crate::units::{angular, HBAR};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PropagationMode {
    /// Classic RK4, one step per ramp sample interval.
    FixedRk4,
    /// Dormand-Prince 5(4) with local relative tolerance `rtol`, landing
    /// exactly on every ramp sample time.
    Adaptive { rtol: f64 },
}

impl Default for PropagationMode {
    fn default() -> Self {
        PropagationMode::Adaptive { rtol: 1e-12 }
    }
}

/// Position and velocity sampled on the ramp time grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub duration: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl Trajectory {
    pub fn n_samples(&self) -> usize {
        self.x.len()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.duration * k as f64 / (self.n_samples() - 1) as f64
    }

    pub fn final_state(&self) -> (f64, f64) {
        (self.x[self.x.len() - 1], self.v[self.v.len() - 1])
    }

    /// CSV dump (`t_us,x_um,v_um_per_us`).
    pub fn write_csv<W: IoWrite>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_us,x_um,v_um_per_us")?;
        for k in 0..self.n_samples() {
            writeln!(w, "{},{},{}", self.time(k), self.x[k], self.v[k])?;
        }
        Ok(())
    }
}

/// Harmonic excitation energy about `target_x`:
/// `E = m v^2 / 2 + m omega^2 (x - target_x)^2 / 2`.
pub fn excitation_energy(mass: f64, freq_mhz: f64, target_x: f64, x: f64, v: f64) -> f64 {
    let omega = angular(freq_mhz);
    0.5 * mass * v * v + 0.5 * mass * omega * omega * (x - target_x) * (x - target_x)
}

/// Energy in units of the oscillator quantum (no zero-point offset).
pub fn phonons(energy: f64, freq_mhz: f64) -> f64 {
    energy / (HBAR * angular(freq_mhz))
}

/// Final excitation energy of a trajectory about `target_x`.
pub fn final_energy(traj: &Trajectory, model: &PotentialModel, freq_mhz: f64, target_x: f64) -> f64 {
    let (x, v) = traj.final_state();
    excitation_energy(model.mass, freq_mhz, target_x, x, v)
}

/// Propagate from rest in the first well and report the final excitation
/// about the second well, in phonons.
pub fn transport_excitation(
    model: &PotentialModel,
    ramp: &VoltageRamp,
    freq_mhz: f64,
    mode: PropagationMode,
) -> Result<f64> {
    let x0 = model.electrodes[0].center;
    let traj = propagate_classical(model, ramp, x0, 0.0, mode)?;
    let e = final_energy(&traj, model, freq_mhz, model.electrodes[1].center);
    Ok(phonons(e, freq_mhz))
}

/// Propagate under a sampled ramp with linear interpolation between samples.
pub fn propagate_classical(
    model: &PotentialModel,
    ramp: &VoltageRamp,
    x0: f64,
    v0: f64,
    mode: PropagationMode,
) -> Result<Trajectory> {
    propagate_controls(
        model,
        |t| ramp.lerp(t),
        ramp.duration,
        ramp.n_samples(),
        x0,
        v0,
        mode,
    )
}

/// Propagate under arbitrary control voltages `u(t)`, reporting the state on
/// a uniform grid of `n_out` samples. Used directly for piecewise-constant
/// controls where sampling would smear a switch.
pub fn propagate_controls<F: Fn(f64) -> [f64; 2]>(
    model: &PotentialModel,
    controls: F,
    duration: f64,
    n_out: usize,
    x0: f64,
    v0: f64,
    mode: PropagationMode,
) -> Result<Trajectory> {
    if n_out < 2 {
        return Err(ShuttleError::Domain(
            "propagation needs at least two output samples".into(),
        ));
    }
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(ShuttleError::Domain("duration must be positive".into()));
    }
    if !model.contains(x0) {
        return Err(ShuttleError::Domain(format!(
            "initial position {x0} um outside working window"
        )));
    }
    match mode {
        PropagationMode::FixedRk4 => fixed_rk4(model, &controls, duration, n_out, x0, v0),
        PropagationMode::Adaptive { rtol } => {
            adaptive_dopri(model, &controls, duration, n_out, x0, v0, rtol)
        }
    }
}

fn check_state(model: &PotentialModel, t: f64, x: f64, v: f64) -> Result<()> {
    if !x.is_finite() || !v.is_finite() {
        return Err(ShuttleError::Divergence(format!(
            "non-finite classical state at t = {t:.6} us"
        )));
    }
    if !model.contains(x) {
        return Err(ShuttleError::Escape { t });
    }
    Ok(())
}

fn fixed_rk4<F: Fn(f64) -> [f64; 2]>(
    model: &PotentialModel,
    controls: &F,
    duration: f64,
    n_out: usize,
    x0: f64,
    v0: f64,
) -> Result<Trajectory> {
    let mut x = vec![0.0; n_out];
    let mut v = vec![0.0; n_out];
    x[0] = x0;
    v[0] = v0;
    let grid = |k: usize| duration * k as f64 / (n_out - 1) as f64;
    let accel = |t: f64, xx: f64| model.acceleration(&controls(t), xx);
    for k in 0..n_out - 1 {
        let t = grid(k);
        let h = grid(k + 1) - t;
        let (xk, vk) = (x[k], v[k]);
        let a1 = accel(t, xk);
        let a2 = accel(t + 0.5 * h, xk + 0.5 * h * vk);
        let v2 = vk + 0.5 * h * a1;
        let a3 = accel(t + 0.5 * h, xk + 0.5 * h * v2);
        let v3 = vk + 0.5 * h * a2;
        let a4 = accel(t + h, xk + h * v3);
        let v4 = vk + h * a3;
        x[k + 1] = xk + h / 6.0 * (vk + 2.0 * v2 + 2.0 * v3 + v4);
        v[k + 1] = vk + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        check_state(model, grid(k + 1), x[k + 1], v[k + 1])?;
    }
    Ok(Trajectory { duration, x, v })
}

// Dormand-Prince 5(4) coefficients.
const C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 6] = [
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[allow(clippy::too_many_arguments)]
fn adaptive_dopri<F: Fn(f64) -> [f64; 2]>(
    model: &PotentialModel,
    controls: &F,
    duration: f64,
    n_out: usize,
    x0: f64,
    v0: f64,
    rtol: f64,
) -> Result<Trajectory> {
    let mut xs = vec![0.0; n_out];
    let mut vs = vec![0.0; n_out];
    xs[0] = x0;
    vs[0] = v0;
    let grid = |k: usize| duration * k as f64 / (n_out - 1) as f64;
    let deriv = |t: f64, y: [f64; 2]| -> [f64; 2] {
        [y[1], model.acceleration(&controls(t.min(duration)), y[0])]
    };
    // Error scale: relative to the state magnitude with a floor of one
    // internal unit, so small-amplitude motion is resolved no more coarsely
    // than large transports.
    let atol = rtol;
    let mut y = [x0, v0];
    let mut t = 0.0_f64;
    let mut h = duration / (n_out - 1) as f64;
    let mut k1 = deriv(t, y);
    for out in 1..n_out {
        let t_end = grid(out);
        while t < t_end {
            let h_try = h.min(t_end - t);
            let mut k = [[0.0; 2]; 7];
            k[0] = k1;
            for stage in 0..6 {
                let mut yi = y;
                for (j, kj) in k.iter().enumerate().take(stage + 1) {
                    yi[0] += h_try * A[stage][j] * kj[0];
                    yi[1] += h_try * A[stage][j] * kj[1];
                }
                k[stage + 1] = deriv(t + C[stage] * h_try, yi);
            }
            let mut y5 = y;
            let mut y4 = y;
            for (j, kj) in k.iter().enumerate() {
                y5[0] += h_try * B5[j] * kj[0];
                y5[1] += h_try * B5[j] * kj[1];
                y4[0] += h_try * B4[j] * kj[0];
                y4[1] += h_try * B4[j] * kj[1];
            }
            let mut err = 0.0_f64;
            for i in 0..2 {
                let sc = atol + rtol * y[i].abs().max(y5[i].abs());
                err = err.max(((y5[i] - y4[i]) / sc).abs());
            }
            if err <= 1.0 {
                t += h_try;
                y = y5;
                k1 = k[6];
                check_state(model, t, y[0], y[1])?;
            }
            let factor = if err > 0.0 {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            } else {
                5.0
            };
            h = (h_try * factor).min(duration);
            if h < 1e-14 * duration {
                return Err(ShuttleError::Divergence(format!(
                    "adaptive step size underflow at t = {t:.6} us"
                )));
            }
        }
        xs[out] = y[0];
        vs[out] = y[1];
    }
    Ok(Trajectory {
        duration,
        x: xs,
        v: vs,
    })
}

/// Contiguous interval around a reference duration where an excitation
/// measure stays below a threshold.
#[derive(Clone, Copy, Debug)]
pub struct StabilityWindow {
    pub lo: f64,
    pub hi: f64,
    /// The search radius cut the window off on that side.
    pub clipped_lo: bool,
    pub clipped_hi: bool,
}

impl StabilityWindow {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn width_ns(&self) -> f64 {
        self.width() * 1e3
    }
}

/// Find the largest contiguous duration interval around `t_star` where
/// `excitation(T) < threshold`, searching at most `radius` on each side and
/// resolving each edge to `resolution` by bisection. Propagation failures
/// during the search count as above threshold. The excitation at `t_star`
/// itself must not exceed the threshold; sitting exactly on it yields a
/// zero-width window.
pub fn stability_window<F>(
    excitation: F,
    t_star: f64,
    threshold: f64,
    radius: f64,
    resolution: f64,
) -> Result<StabilityWindow>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(radius > 0.0 && resolution > 0.0) {
        return Err(ShuttleError::Domain(
            "search radius and resolution must be positive".into(),
        ));
    }
    let center = excitation(t_star)?;
    if center > threshold {
        return Err(ShuttleError::NoWindow(format!(
            "excitation {center:.3e} at T = {t_star} us already exceeds threshold {threshold:.3e}"
        )));
    }
    if center == threshold {
        return Ok(StabilityWindow {
            lo: t_star,
            hi: t_star,
            clipped_lo: false,
            clipped_hi: false,
        });
    }
    let below = |t: f64| -> bool { matches!(excitation(t), Ok(e) if e < threshold) };
    let edge = |sign: f64| -> (f64, bool) {
        let step = (radius / 64.0).max(resolution);
        let mut good = t_star;
        let mut offset = step;
        // Coarse march to bracket the boundary.
        let mut bad = loop {
            if offset >= radius {
                if below(t_star + sign * radius) {
                    return (t_star + sign * radius, true);
                }
                break t_star + sign * radius;
            }
            let t = t_star + sign * offset;
            if below(t) {
                good = t;
                offset += step;
            } else {
                break t;
            }
        };
        while (bad - good).abs() > resolution {
            let mid = 0.5 * (good + bad);
            if below(mid) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        (good, false)
    };
    let (hi, clipped_hi) = edge(1.0);
    let (lo, clipped_lo) = edge(-1.0);
    Ok(StabilityWindow {
        lo,
        hi,
        clipped_lo,
        clipped_hi,
    })
}
