//! Iterative voltage-ramp optimization against the classical dynamics.
//!
//! Minimizes `J = (E(T) - E_target)^2` by alternating a backward costate
//! propagation with a forward sweep that updates every sample immediately
//! from the local costate, clamped to the hardware bound. The update weight
//! doubles whenever an iteration would increase `J`.

use serde::{Deserialize, Serialize};

use crate::classical::{
    excitation_energy, phonons, propagate_classical, PropagationMode, Trajectory,
};
use crate::error::{Result, ShuttleError};
use crate::potential::PotentialModel;
use crate::ramp::VoltageRamp;
use crate::units::{angular, VOLT};

/// Envelope that gates the update strength over the ramp; it vanishes at both
/// ends so the boundary voltages stay fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeFunction {
    SinSquared,
    /// Suppress all updates (useful to test the plumbing).
    Zero,
}

impl ShapeFunction {
    pub fn eval(&self, t: f64, duration: f64) -> f64 {
        match self {
            ShapeFunction::SinSquared => {
                let s = (std::f64::consts::PI * t / duration).sin();
                s * s
            }
            ShapeFunction::Zero => 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizationConfig {
    /// Final-well frequency defining the excitation energy, MHz.
    pub freq_mhz: f64,
    /// Hardware voltage bound applied to every updated sample.
    pub u_max: f64,
    /// Update weight; larger is more cautious. `None` picks a weight so the
    /// first sweep moves voltages by about five percent of the bound.
    pub lambda_a: Option<f64>,
    pub shape: ShapeFunction,
    pub max_iterations: usize,
    /// Desired final energy (internal units); zero means transport to rest.
    pub e_target: f64,
    /// Stop once `|E(T) - e_target|` is below this many quanta.
    pub target_phonons: f64,
}

impl OptimizationConfig {
    pub fn new(freq_mhz: f64, u_max: f64) -> Self {
        Self {
            freq_mhz,
            u_max,
            lambda_a: Some(1e3),
            shape: ShapeFunction::SinSquared,
            max_iterations: 2000,
            e_target: 0.0,
            target_phonons: 0.01,
        }
    }
}

/// Costate samples conjugate to position and velocity on the ramp grid.
#[derive(Clone, Debug)]
pub struct Costate {
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub j: f64,
    pub energy: f64,
    pub max_delta_u: f64,
    pub lambda: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub ramp: VoltageRamp,
    pub final_energy: f64,
    pub final_phonons: f64,
}

/// Position between grid samples from the stored states (cubic Hermite using
/// the stored velocities as slopes).
fn hermite_midpoint(x0: f64, v0: f64, x1: f64, v1: f64, h: f64) -> f64 {
    0.5 * (x0 + x1) + 0.125 * h * (v0 - v1)
}

/// Integrate the costate equations backward over the full grid:
/// `p1' = V''(x) p2 / m`, `p2' = -p1`, from the terminal condition
/// `p(T) = -2 m (E(T) - e_target) (omega^2 (x(T) - x_target), v(T))`.
pub fn costate_backward(
    model: &PotentialModel,
    ramp: &VoltageRamp,
    traj: &Trajectory,
    freq_mhz: f64,
    e_target: f64,
    x_target: f64,
) -> Costate {
    let n = traj.n_samples();
    let omega = angular(freq_mhz);
    let (xt, vt) = traj.final_state();
    let energy = excitation_energy(model.mass, freq_mhz, x_target, xt, vt);
    let pref = -2.0 * model.mass * (energy - e_target);
    let mut p1 = vec![0.0; n];
    let mut p2 = vec![0.0; n];
    p1[n - 1] = pref * omega * omega * (xt - x_target);
    p2[n - 1] = pref * vt;
    let curv = |t: f64, x: f64| model.curvature(&ramp.lerp(t), x) / model.mass;
    for k in (0..n - 1).rev() {
        let t0 = traj.time(k);
        let t1 = traj.time(k + 1);
        let h = t0 - t1; // negative: stepping backward
        let x_mid = hermite_midpoint(traj.x[k], traj.v[k], traj.x[k + 1], traj.v[k + 1], t1 - t0);
        let c_hi = curv(t1, traj.x[k + 1]);
        let c_mid = curv(0.5 * (t0 + t1), x_mid);
        let c_lo = curv(t0, traj.x[k]);
        let (a1, b1) = (c_hi * p2[k + 1], -p1[k + 1]);
        let p1_2 = p1[k + 1] + 0.5 * h * a1;
        let p2_2 = p2[k + 1] + 0.5 * h * b1;
        let (a2, b2) = (c_mid * p2_2, -p1_2);
        let p1_3 = p1[k + 1] + 0.5 * h * a2;
        let p2_3 = p2[k + 1] + 0.5 * h * b2;
        let (a3, b3) = (c_mid * p2_3, -p1_3);
        let p1_4 = p1[k + 1] + h * a3;
        let p2_4 = p2[k + 1] + h * b3;
        let (a4, b4) = (c_lo * p2_4, -p1_4);
        p1[k] = p1[k + 1] + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        p2[k] = p2[k + 1] + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
    }
    Costate { p1, p2 }
}

/// First-order sensitivity of `J` to each voltage sample (per volt, per us):
/// `g_i(t) = 2 (E - E_target) * p2-free form`; concretely the adjoint gives
/// `dJ = Int g_i(t) dU_i(t) dt` with `g_i = (VOLT/m) p2 phi_i'(x)`.
pub fn gradient(model: &PotentialModel, traj: &Trajectory, costate: &Costate) -> Vec<[f64; 2]> {
    let scale = VOLT / model.mass;
    (0..traj.n_samples())
        .map(|k| {
            let x = traj.x[k];
            [
                scale * costate.p2[k] * model.electrodes[0].dphi(x),
                scale * costate.p2[k] * model.electrodes[1].dphi(x),
            ]
        })
        .collect()
}

struct SweepResult {
    ramp: VoltageRamp,
    max_delta_u: f64,
}

/// Forward propagation with the concurrent update: each sample is corrected
/// from the costate before the step that leaves it.
fn sweep(
    model: &PotentialModel,
    ramp: &VoltageRamp,
    costate: &Costate,
    shape: ShapeFunction,
    lambda: f64,
    u_max: f64,
    x0: f64,
    v0: f64,
) -> Result<SweepResult> {
    let n = ramp.n_samples();
    let duration = ramp.duration;
    let mut values = ramp.values.clone();
    let mut max_delta = 0.0_f64;
    let mut x = x0;
    let mut v = v0;
    for k in 0..n {
        let t = ramp.time(k);
        let s = shape.eval(t, duration);
        let factor = -s / lambda * costate.p2[k];
        let old = values[k];
        let updated = [
            (old[0] + factor * model.electrodes[0].dphi(x)).clamp(-u_max, u_max),
            (old[1] + factor * model.electrodes[1].dphi(x)).clamp(-u_max, u_max),
        ];
        max_delta = max_delta
            .max((updated[0] - old[0]).abs())
            .max((updated[1] - old[1]).abs());
        values[k] = updated;
        if k == n - 1 {
            break;
        }
        // Step to the next sample; the right endpoint still holds the old
        // voltages, which the next loop turn updates.
        let h = ramp.time(k + 1) - t;
        let u_at = |tau: f64| -> [f64; 2] {
            let frac = ((tau - t) / h).clamp(0.0, 1.0);
            let b = values[k + 1];
            [
                updated[0] + frac * (b[0] - updated[0]),
                updated[1] + frac * (b[1] - updated[1]),
            ]
        };
        let accel = |tau: f64, xx: f64| model.acceleration(&u_at(tau), xx);
        let a1 = accel(t, x);
        let v2 = v + 0.5 * h * a1;
        let a2 = accel(t + 0.5 * h, x + 0.5 * h * v);
        let v3 = v + 0.5 * h * a2;
        let a3 = accel(t + 0.5 * h, x + 0.5 * h * v2);
        let v4 = v + h * a3;
        let a4 = accel(t + h, x + h * v3);
        x += h / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4);
        v += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        if !x.is_finite() || !v.is_finite() {
            return Err(ShuttleError::Divergence(format!(
                "non-finite state during update sweep at t = {t:.6} us"
            )));
        }
        if !model.contains(x) {
            return Err(ShuttleError::Escape { t: ramp.time(k + 1) });
        }
    }
    let mut out = VoltageRamp::new(duration, values)?;
    out.u_max = u_max;
    Ok(SweepResult {
        ramp: out,
        max_delta_u: max_delta,
    })
}

/// Optimize a ramp for minimal final excitation. The transport endpoints are
/// the first two electrode centers; the ion starts at rest in the first well.
pub fn optimize_classical(
    model: &PotentialModel,
    guess: &VoltageRamp,
    config: &OptimizationConfig,
) -> Result<OptimizationReport> {
    if !(config.u_max > 0.0) {
        return Err(ShuttleError::Domain("voltage bound must be positive".into()));
    }
    let x0 = model.electrodes[0].center;
    let x_target = model.electrodes[1].center;
    let quantum = crate::units::HBAR * angular(config.freq_mhz);
    let tol_energy = config.target_phonons * quantum;

    let mut current = guess.clone();
    current.u_max = config.u_max;
    let mut reference =
        propagate_classical(model, &current, x0, 0.0, PropagationMode::FixedRk4)?;
    let measure = |traj: &Trajectory| {
        let (x, v) = traj.final_state();
        let e = excitation_energy(model.mass, config.freq_mhz, x_target, x, v);
        (e, (e - config.e_target) * (e - config.e_target))
    };
    let (mut energy, mut j) = measure(&reference);
    let mut iterations = Vec::new();
    let mut converged = (energy - config.e_target).abs() <= tol_energy;
    let mut lambda = config.lambda_a.unwrap_or(0.0);
    let mut rejects = 0_u32;

    let mut iter = 0;
    // The costate depends only on the accepted state, so rejected attempts
    // reuse it.
    let mut cached_costate = None;
    while !converged && iter < config.max_iterations {
        iter += 1;
        let costate = cached_costate.take().unwrap_or_else(|| {
            costate_backward(
                model,
                &current,
                &reference,
                config.freq_mhz,
                config.e_target,
                x_target,
            )
        });
        if lambda <= 0.0 {
            // Scale the weight so the first sweep moves voltages by about
            // five percent of the bound.
            let u_ref = if config.u_max.is_finite() {
                config.u_max
            } else {
                current.max_abs().max(1.0)
            };
            let mut peak = 0.0_f64;
            for k in 0..reference.n_samples() {
                let s = config.shape.eval(reference.time(k), reference.duration);
                let x = reference.x[k];
                let slope = model.electrodes[0]
                    .dphi(x)
                    .abs()
                    .max(model.electrodes[1].dphi(x).abs());
                peak = peak.max(s * costate.p2[k].abs() * slope);
            }
            lambda = if peak > 0.0 { peak / (0.05 * u_ref) } else { 1.0 };
        }
        let attempt = sweep(
            model,
            &current,
            &costate,
            config.shape,
            lambda,
            config.u_max,
            x0,
            0.0,
        );
        let outcome = attempt.and_then(|sw| {
            let traj =
                propagate_classical(model, &sw.ramp, x0, 0.0, PropagationMode::FixedRk4)?;
            Ok((sw, traj))
        });
        match outcome {
            Ok((sw, traj)) => {
                let (e_new, j_new) = measure(&traj);
                if j_new <= j {
                    iterations.push(IterationRecord {
                        j: j_new,
                        energy: e_new,
                        max_delta_u: sw.max_delta_u,
                        lambda,
                        accepted: true,
                    });
                    current = sw.ramp;
                    reference = traj;
                    energy = e_new;
                    j = j_new;
                    rejects = 0;
                    converged = (energy - config.e_target).abs() <= tol_energy;
                    // Trust-region style: grow the step after a success so the
                    // weight tracks the largest productive step size.
                    lambda *= 0.5;
                } else {
                    iterations.push(IterationRecord {
                        j: j_new,
                        energy: e_new,
                        max_delta_u: sw.max_delta_u,
                        lambda,
                        accepted: false,
                    });
                    lambda *= 2.0;
                    rejects += 1;
                    cached_costate = Some(costate);
                }
            }
            Err(_) => {
                iterations.push(IterationRecord {
                    j: f64::INFINITY,
                    energy: f64::INFINITY,
                    max_delta_u: f64::NAN,
                    lambda,
                    accepted: false,
                });
                lambda *= 2.0;
                rejects += 1;
                cached_costate = Some(costate);
            }
        }
        if rejects > 10 {
            return Err(ShuttleError::Divergence(format!(
                "cost increased for {rejects} consecutive attempts; raise the update \
                 weight lambda_a (last value {lambda:.3e}) or relax the bound"
            )));
        }
    }
    Ok(OptimizationReport {
        iterations,
        converged,
        ramp: current,
        final_energy: energy,
        final_phonons: phonons(energy, config.freq_mhz),
    })
}
