//! Closed-form controls: time-optimal bang-bang ramps and compensated
//! transport ramps that null the inertial force along the path.

use crate::error::{Result, ShuttleError};
use crate::potential::PotentialModel;
use crate::ramp::{solve_tracking, TransportFunction, VoltageRamp};
use crate::units::{angular, VOLT};

/// Time-optimal transport in the two-electrode harmonic control model, where
/// saturated controls of opposite sign, `u_1 = -u_2 = u_max`, tilt the
/// potential into a uniform acceleration `2 omega_0^2 u_max d`. A single
/// mid-course sign flip then realizes the fastest rest-to-rest transfer:
/// `T_min = sqrt(2) / (omega_0 sqrt(u_max))`, independent of the distance.
#[derive(Clone, Copy, Debug)]
pub struct BangBangSolution {
    /// Angular per-unit-control well frequency, rad/us.
    pub omega0: f64,
    pub u_max: f64,
    pub x_start: f64,
    pub x_end: f64,
    pub t_min: f64,
    pub t_switch: f64,
}

impl BangBangSolution {
    pub fn distance(&self) -> f64 {
        self.x_end - self.x_start
    }

    /// Piecewise-quadratic optimal trajectory.
    pub fn position(&self, t: f64) -> f64 {
        let d = self.distance();
        let c = self.u_max * self.omega0 * self.omega0 * d;
        if t <= self.t_switch {
            self.x_start + c * t * t
        } else {
            self.x_end - c * (t - self.t_min) * (t - self.t_min)
        }
    }

    pub fn velocity(&self, t: f64) -> f64 {
        let d = self.distance();
        let c = 2.0 * self.u_max * self.omega0 * self.omega0 * d;
        if t <= self.t_switch {
            c * t
        } else {
            c * (self.t_min - t)
        }
    }

    /// Exact piecewise-constant controls (accelerate, then flip sign).
    pub fn controls(&self, t: f64) -> [f64; 2] {
        let s = if t < self.t_switch { 1.0 } else { -1.0 } * self.distance().signum();
        [s * self.u_max, -s * self.u_max]
    }

    /// Sampled ramp with the switch snapped to the sample grid.
    pub fn ramp(&self, n_samples: usize) -> Result<VoltageRamp> {
        let values = (0..n_samples)
            .map(|k| {
                let t = self.t_min * k as f64 / (n_samples - 1) as f64;
                self.controls(t)
            })
            .collect();
        VoltageRamp::new(self.t_min, values)
    }
}

/// Construct the time-optimal bang-bang solution for a per-unit-control well
/// frequency `volt_freq_mhz` and control bound `u_max`.
pub fn bangbang(
    volt_freq_mhz: f64,
    u_max: f64,
    x_start: f64,
    x_end: f64,
) -> Result<BangBangSolution> {
    if !(volt_freq_mhz > 0.0) {
        return Err(ShuttleError::Domain(
            "per-unit-control frequency must be positive".into(),
        ));
    }
    if !(u_max > 0.0) {
        return Err(ShuttleError::Domain("control bound must be positive".into()));
    }
    if x_end == x_start {
        return Err(ShuttleError::Domain(
            "transport distance must be nonzero".into(),
        ));
    }
    let omega0 = angular(volt_freq_mhz);
    let t_min = std::f64::consts::SQRT_2 / (omega0 * u_max.sqrt());
    Ok(BangBangSolution {
        omega0,
        u_max,
        x_start,
        x_end,
        t_min,
        t_switch: 0.5 * t_min,
    })
}

/// Transport ramp split into its quasistatic part and the inertial-force
/// compensation. The total ramp holds a well of the commanded frequency on
/// the path while its gradient supplies exactly the force `m alpha''(t)`.
#[derive(Clone, Debug)]
pub struct IeaRamp {
    /// Quasistatic well voltages (zero-slope condition).
    pub base: VoltageRamp,
    /// Compensation voltages, proportional to the path acceleration.
    pub compensation: VoltageRamp,
    /// Sum of base and compensation.
    pub total: VoltageRamp,
    /// Largest absolute total voltage.
    pub max_abs: f64,
    /// Worst relative defect of the force condition over all samples.
    pub force_residual: f64,
    /// Worst relative defect of the curvature condition over all samples.
    pub curvature_residual: f64,
}

/// Build the compensated transport ramp: at every sample the potential obeys
/// `V'(alpha) = -m alpha''` and `V''(alpha) = m omega^2`. A zero frequency
/// drops the confinement condition (pure force compensation).
pub fn iea_ramp(
    model: &PotentialModel,
    tf: &TransportFunction,
    freq_mhz: f64,
    n_samples: usize,
) -> Result<IeaRamp> {
    if n_samples < 2 {
        return Err(ShuttleError::Domain(
            "a ramp needs at least two samples".into(),
        ));
    }
    if !(freq_mhz >= 0.0) {
        return Err(ShuttleError::Domain(
            "well frequency must be nonnegative".into(),
        ));
    }
    let omega = angular(freq_mhz);
    let rhs_curv = model.mass * omega * omega / VOLT;
    let times: Vec<f64> = (0..n_samples)
        .map(|k| tf.duration * k as f64 / (n_samples - 1) as f64)
        .collect();
    let positions: Vec<f64> = times.iter().map(|&t| tf.position(t)).collect();
    let accels: Vec<f64> = times.iter().map(|&t| tf.acceleration(t)).collect();
    let rhs_force: Vec<f64> = accels.iter().map(|a| -model.mass * a / VOLT).collect();
    let total_values = solve_tracking(model, &positions, &rhs_force, rhs_curv)?;
    let base_values = solve_tracking(model, &positions, &vec![0.0; n_samples], rhs_curv)?;
    // The compensation solves the same system with the confinement condition
    // dropped; solving it directly keeps full precision where it is small
    // against the quasistatic part.
    let comp_values = solve_tracking(model, &positions, &rhs_force, 0.0)?;

    let mut force_residual = 0.0_f64;
    let mut curvature_residual = 0.0_f64;
    for k in 0..n_samples {
        let x = positions[k];
        let u = &total_values[k];
        let (d1, dd1) = {
            let p = model.electrodes[0].phi_all(x);
            (p.1, p.2)
        };
        let (d2, dd2) = {
            let p = model.electrodes[1].phi_all(x);
            (p.1, p.2)
        };
        let dv = VOLT * (u[0] * d1 + u[1] * d2);
        let ddv = VOLT * (u[0] * dd1 + u[1] * dd2);
        let f_scale = VOLT * (u[0] * d1).abs().max((u[1] * d2).abs());
        let c_scale = VOLT * (u[0] * dd1).abs().max((u[1] * dd2).abs());
        let f_def = (dv + model.mass * accels[k]).abs();
        let c_def = (ddv - model.mass * omega * omega).abs();
        if f_def > 0.0 && f_scale > 0.0 {
            force_residual = force_residual.max(f_def / f_scale);
        }
        if c_def > 0.0 && c_scale > 0.0 {
            curvature_residual = curvature_residual.max(c_def / c_scale);
        }
    }

    let total = VoltageRamp::new(tf.duration, total_values)?;
    let max_abs = total.max_abs();
    Ok(IeaRamp {
        base: VoltageRamp::new(tf.duration, base_values)?,
        compensation: VoltageRamp::new(tf.duration, comp_values)?,
        total,
        max_abs,
        force_residual,
        curvature_residual,
    })
}

/// For each control bound, bisect for the shortest duration whose compensated
/// ramp stays within the bound. Resolution is in us. A frequency of zero
/// scans the pure force-compensation limit.
pub fn iea_tmin_scan(
    model: &PotentialModel,
    tf_template: &TransportFunction,
    freq_mhz: f64,
    umax_list: &[f64],
    n_samples: usize,
    resolution: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(resolution > 0.0) {
        return Err(ShuttleError::Domain("scan resolution must be positive".into()));
    }
    let mut out = Vec::with_capacity(umax_list.len());
    for &u_max in umax_list {
        if !(u_max > 0.0) {
            return Err(ShuttleError::Domain(
                "control bounds must be positive".into(),
            ));
        }
        let feasible = |t: f64| -> Result<bool> {
            let tf = tf_template.stretched(t)?;
            Ok(iea_ramp(model, &tf, freq_mhz, n_samples)?.max_abs <= u_max)
        };
        // Bracket the feasibility boundary.
        let mut t_hi = tf_template.duration.max(resolution);
        while !feasible(t_hi)? {
            t_hi *= 2.0;
            if t_hi > 1e4 {
                return Err(ShuttleError::Domain(format!(
                    "bound {u_max} V is below the static voltage requirement; \
                     no duration is feasible"
                )));
            }
        }
        let mut t_lo = t_hi;
        while feasible(t_lo)? {
            t_lo *= 0.5;
            if t_lo < 1e-6 {
                break;
            }
        }
        while t_hi - t_lo > resolution {
            let mid = 0.5 * (t_lo + t_hi);
            if feasible(mid)? {
                t_hi = mid;
            } else {
                t_lo = mid;
            }
        }
        out.push((u_max, t_hi));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{
        excitation_energy, phonons, propagate_controls, transport_excitation, PropagationMode,
    };
    use crate::potential::{TRAP_FREQ_MHZ, VOLT_FREQ_MHZ, WELL_SPACING};
    use crate::ramp::shape_d2;
    use crate::units::MASS_CA40;

    #[test]
    fn bangbang_reference_prefactor() {
        let sol = bangbang(VOLT_FREQ_MHZ, 1.0, 0.0, WELL_SPACING).unwrap();
        let omega0 = angular(VOLT_FREQ_MHZ);
        assert!((sol.t_min - std::f64::consts::SQRT_2 / omega0).abs() < 1e-15);
        assert!((sol.t_min - 0.41).abs() <= 0.01 * 0.41);
        assert_eq!(sol.t_switch.to_bits(), (0.5 * sol.t_min).to_bits());
    }

    #[test]
    fn bangbang_quadrupled_bound_halves_time() {
        let t1 = bangbang(VOLT_FREQ_MHZ, 1.0, 0.0, WELL_SPACING).unwrap().t_min;
        let t4 = bangbang(VOLT_FREQ_MHZ, 4.0, 0.0, WELL_SPACING).unwrap().t_min;
        assert!((t4 - 0.5 * t1).abs() <= 1e-15 * t1);
    }

    #[test]
    fn bangbang_trajectory_is_continuous_and_rest_to_rest() {
        let sol = bangbang(VOLT_FREQ_MHZ, 2.5, 0.0, WELL_SPACING).unwrap();
        let d = WELL_SPACING;
        let ts = sol.t_switch;
        // Continuity across the switch, evaluated from both arcs.
        let left_x = sol.x_start + sol.u_max * sol.omega0.powi(2) * d * ts * ts;
        let right_x =
            sol.x_end - sol.u_max * sol.omega0.powi(2) * d * (ts - sol.t_min).powi(2);
        assert!((left_x - right_x).abs() <= 1e-12 * d);
        assert!((sol.position(ts) - 0.5 * d).abs() <= 1e-12 * d);
        let v_scale = d / sol.t_min;
        let left_v = 2.0 * sol.u_max * sol.omega0.powi(2) * d * ts;
        let right_v = 2.0 * sol.u_max * sol.omega0.powi(2) * d * (sol.t_min - ts);
        assert!((left_v - right_v).abs() <= 1e-12 * v_scale);
        // Rest-to-rest boundary conditions.
        assert_eq!(sol.position(0.0), 0.0);
        assert_eq!(sol.velocity(0.0), 0.0);
        assert!((sol.position(sol.t_min) - d).abs() <= 1e-12 * d);
        assert!(sol.velocity(sol.t_min).abs() <= 1e-12 * v_scale);
    }

    #[test]
    fn bangbang_ramp_switches_on_the_grid() {
        let sol = bangbang(VOLT_FREQ_MHZ, 1.0, 0.0, WELL_SPACING).unwrap();
        let ramp = sol.ramp(2000).unwrap();
        assert_eq!(ramp.duration, sol.t_min);
        assert_eq!(ramp.values[0], [1.0, -1.0]);
        assert_eq!(ramp.values[999], [1.0, -1.0]);
        assert_eq!(ramp.values[1000], [-1.0, 1.0]);
        assert_eq!(ramp.values[1999], [-1.0, 1.0]);
    }

    #[test]
    fn bangbang_propagation_arrives_cold() {
        // Matched harmonic pair: opposite-sign controls of one unit tilt the
        // potential into acceleration 2 omega0^2 d, which is a per-volt well
        // frequency of sqrt(2) omega0.
        let sol = bangbang(VOLT_FREQ_MHZ, 1.0, 0.0, WELL_SPACING).unwrap();
        let model = PotentialModel::harmonic_pair(
            WELL_SPACING,
            std::f64::consts::SQRT_2 * VOLT_FREQ_MHZ,
            MASS_CA40,
        );
        // Integrate the two constant-control segments exactly (a sampled ramp
        // would smear the switch over one sample interval).
        let mode = PropagationMode::default();
        let first = propagate_controls(
            &model,
            |_| [sol.u_max, -sol.u_max],
            sol.t_switch,
            201,
            0.0,
            0.0,
            mode,
        )
        .unwrap();
        let (x_sw, v_sw) = first.final_state();
        assert!((x_sw - sol.position(sol.t_switch)).abs() < 1e-8 * WELL_SPACING);
        let second = propagate_controls(
            &model,
            |_| [-sol.u_max, sol.u_max],
            sol.t_min - sol.t_switch,
            201,
            x_sw,
            v_sw,
            mode,
        )
        .unwrap();
        let (x_end, v_end) = second.final_state();
        let e = excitation_energy(MASS_CA40, VOLT_FREQ_MHZ, WELL_SPACING, x_end, v_end);
        assert!(
            phonons(e, VOLT_FREQ_MHZ) < 1e-6,
            "arrival excitation {:.3e} quanta",
            phonons(e, VOLT_FREQ_MHZ)
        );
        // The propagated path follows the closed form.
        for k in 0..first.n_samples() {
            let t = first.time(k);
            assert!((first.x[k] - sol.position(t)).abs() < 1e-8 * WELL_SPACING);
        }
    }

    #[test]
    fn compensation_vanishes_without_transport() {
        let model = PotentialModel::standard_surrogate();
        let tf = TransportFunction {
            x_start: 0.0,
            x_end: 0.0,
            duration: 1.0,
        };
        let iea = iea_ramp(&model, &tf, TRAP_FREQ_MHZ, 101).unwrap();
        for (c, (t, b)) in iea
            .compensation
            .values
            .iter()
            .zip(iea.total.values.iter().zip(&iea.base.values))
        {
            assert_eq!(*c, [0.0, 0.0]);
            assert_eq!(t, b);
        }
    }

    #[test]
    fn compensation_scales_inversely_with_squared_duration() {
        let model = PotentialModel::standard_surrogate();
        let tf = TransportFunction::across(&model, 1.1).unwrap();
        let slow = tf.stretched(2.2).unwrap();
        let fast_iea = iea_ramp(&model, &tf, TRAP_FREQ_MHZ, 301).unwrap();
        let slow_iea = iea_ramp(&model, &slow, TRAP_FREQ_MHZ, 301).unwrap();
        for k in 1..300 {
            for i in 0..2 {
                let f = fast_iea.compensation.values[k][i];
                let s = slow_iea.compensation.values[k][i];
                if f != 0.0 {
                    assert!(
                        (4.0 * s - f).abs() <= 1e-13 * f.abs(),
                        "sample {k}: {f:.6e} vs 4x{s:.6e}"
                    );
                }
            }
        }
    }

    #[test]
    fn compensation_harmonic_closed_form() {
        let model = PotentialModel::standard_harmonic();
        let tf = TransportFunction::across(&model, 0.9).unwrap();
        let iea = iea_ramp(&model, &tf, TRAP_FREQ_MHZ, 401).unwrap();
        let omega0 = angular(VOLT_FREQ_MHZ);
        for k in 0..401 {
            let t = tf.duration * k as f64 / 400.0;
            let expect = tf.acceleration(t) / (omega0 * omega0 * WELL_SPACING);
            let got = iea.compensation.values[k];
            assert!((got[0] - expect).abs() <= 1e-12 * expect.abs().max(1e-12));
            assert!((got[0] + got[1]).abs() <= 1e-12 * expect.abs().max(1e-12));
        }
    }

    #[test]
    fn compensated_ramp_satisfies_both_conditions() {
        let model = PotentialModel::standard_surrogate();
        let tf = TransportFunction::across(&model, 2.0).unwrap();
        let iea = iea_ramp(&model, &tf, TRAP_FREQ_MHZ, 501).unwrap();
        assert!(iea.force_residual <= 1e-8, "{:.3e}", iea.force_residual);
        assert!(
            iea.curvature_residual <= 1e-8,
            "{:.3e}",
            iea.curvature_residual
        );
        let omega = angular(TRAP_FREQ_MHZ);
        for k in (0..501).step_by(25) {
            let t = tf.duration * k as f64 / 500.0;
            let x = tf.position(t);
            let (_, dv, ddv) = model.eval(&iea.total.values[k], x).unwrap();
            assert!((dv + model.mass * tf.acceleration(t)).abs() <= 1e-6);
            assert!((ddv - model.mass * omega * omega).abs() <= 1e-6 * model.mass * omega * omega);
        }
        // Compensation vanishes at both ends where the path acceleration is
        // zero.
        assert_eq!(iea.compensation.values[0], [0.0, 0.0]);
        assert_eq!(iea.compensation.values[500], [0.0, 0.0]);
    }

    #[test]
    fn compensated_transport_is_classically_cold_at_any_duration() {
        let model = PotentialModel::standard_surrogate();
        for t in [0.6, 1.0, 2.3] {
            let tf = TransportFunction::across(&model, t).unwrap();
            let iea = iea_ramp(&model, &tf, TRAP_FREQ_MHZ, 2000).unwrap();
            let e = transport_excitation(
                &model,
                &iea.total,
                TRAP_FREQ_MHZ,
                PropagationMode::default(),
            )
            .unwrap();
            assert!(e < 1e-4, "excitation {e:.3e} phonons at T = {t}");
        }
    }

    #[test]
    fn scan_at_zero_frequency_matches_closed_form() {
        // Without a confinement condition the bound binds at the acceleration
        // peak: T_min = sqrt(max|P''| / (omega0^2 u)).
        let model = PotentialModel::standard_harmonic();
        let tf = TransportFunction::across(&model, 1.0).unwrap();
        let omega0 = angular(VOLT_FREQ_MHZ);
        let peak = 10.0 / 3.0_f64.sqrt();
        let scan = iea_tmin_scan(&model, &tf, 0.0, &[10.0, 40.0], 2000, 1e-6).unwrap();
        for &(u, t) in &scan {
            let expect = (peak / (omega0 * omega0 * u)).sqrt();
            assert!(
                (t - expect).abs() <= 1e-4 * expect,
                "u = {u}: scan {t:.6}, closed form {expect:.6}"
            );
        }
        let exponent = (scan[0].1 / scan[1].1).ln() / (40.0_f64 / 10.0).ln();
        assert!((exponent - 0.5).abs() <= 1e-3, "exponent {exponent:.5}");
        let _ = shape_d2(0.3);
    }

    #[test]
    fn scan_harmonic_bound_binds_at_tmin() {
        let model = PotentialModel::standard_harmonic();
        let tf = TransportFunction::across(&model, 1.0).unwrap();
        let scan =
            iea_tmin_scan(&model, &tf, TRAP_FREQ_MHZ, &[10.0], 2000, 1e-5).unwrap();
        let (_, t_min) = scan[0];
        assert!((0.2..0.25).contains(&t_min), "T_min = {t_min:.4} us");
        let at = |t: f64| {
            iea_ramp(&model, &tf.stretched(t).unwrap(), TRAP_FREQ_MHZ, 2000)
                .unwrap()
                .max_abs
        };
        assert!(at(t_min) <= 10.0);
        assert!(at(0.99 * t_min) > 10.0);
        // Faster than the compensated ramp: the time-optimal switch solution.
        let bb = bangbang(VOLT_FREQ_MHZ, 10.0, 0.0, WELL_SPACING).unwrap();
        assert!(bb.t_min < t_min);
    }

    #[test]
    fn scan_approaches_zero_frequency_limit_at_large_bounds() {
        let model = PotentialModel::standard_harmonic();
        let tf = TransportFunction::across(&model, 1.0).unwrap();
        let with_conf =
            iea_tmin_scan(&model, &tf, TRAP_FREQ_MHZ, &[100.0], 2000, 1e-5).unwrap()[0].1;
        let without =
            iea_tmin_scan(&model, &tf, 0.0, &[100.0], 2000, 1e-5).unwrap()[0].1;
        let ratio = with_conf / without;
        assert!((1.0..1.05).contains(&ratio), "ratio {ratio:.4}");
    }

    #[test]
    fn doubling_distance_doubles_compensation() {
        let model = PotentialModel::standard_harmonic();
        let tf1 = TransportFunction::new(0.0, WELL_SPACING, 0.8).unwrap();
        let tf2 = TransportFunction::new(-140.0, 420.0, 0.8).unwrap();
        let a = iea_ramp(&model, &tf1, 0.0, 301).unwrap();
        let b = iea_ramp(&model, &tf2, 0.0, 301).unwrap();
        for k in 1..300 {
            for i in 0..2 {
                let x = a.compensation.values[k][i];
                let y = b.compensation.values[k][i];
                if x != 0.0 {
                    assert!((y - 2.0 * x).abs() <= 1e-13 * x.abs());
                }
            }
        }
        let t1 = iea_tmin_scan(&model, &tf1, 0.0, &[10.0], 2000, 1e-6).unwrap()[0].1;
        let t2 = iea_tmin_scan(&model, &tf2, 0.0, &[10.0], 2000, 1e-6).unwrap()[0].1;
        assert!(
            (t2 / t1 - std::f64::consts::SQRT_2).abs() <= 1e-4,
            "ratio {:.6}",
            t2 / t1
        );
    }

    #[test]
    fn scan_rejects_bound_below_static_requirement() {
        // Holding the commanded frequency at rest already needs
        // (omega/omega0)^2 volts; below that no duration helps.
        let model = PotentialModel::standard_harmonic();
        let tf = TransportFunction::across(&model, 1.0).unwrap();
        let static_need = (angular(TRAP_FREQ_MHZ) / angular(VOLT_FREQ_MHZ)).powi(2);
        assert!(static_need > 3.0);
        assert!(matches!(
            iea_tmin_scan(&model, &tf, TRAP_FREQ_MHZ, &[3.0], 500, 1e-4),
            Err(ShuttleError::Domain(_))
        ));
    }
}
