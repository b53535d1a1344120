//! Transport paths and sampled voltage ramps.
//!
//! The transport function is the minimal-jerk polynomial path between the two
//! wells; voltage ramps are uniformly sampled per-electrode waveforms with
//! linear interpolation between samples.

use std::io::{BufRead, Write as IoWrite};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShuttleError};
use crate::potential::PotentialModel;
use crate::units::angular;

/// Path `alpha(t) = x_start + (x_end - x_start) P(t/T)` with
/// `P(s) = 10 s^3 - 15 s^4 + 6 s^5`. `P` and its first two derivatives
/// vanish at `s = 0` and `P(1) = 1` with vanishing derivatives, so the ion
/// starts and ends at rest in an instantaneous well. Outside `[0, T]` the
/// endpoints are held.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TransportFunction {
    pub x_start: f64,
    pub x_end: f64,
    pub duration: f64,
}

/// `P(s) = s^3 (10 - 15 s + 6 s^2)`.
pub fn shape(s: f64) -> f64 {
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

/// `P'(s) = 30 s^2 (1 - s)^2`.
pub fn shape_d1(s: f64) -> f64 {
    30.0 * s * s * (1.0 - s) * (1.0 - s)
}

/// `P''(s) = 60 s (1 - s)(1 - 2 s)`.
pub fn shape_d2(s: f64) -> f64 {
    60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
}

impl TransportFunction {
    pub fn new(x_start: f64, x_end: f64, duration: f64) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(ShuttleError::Domain(
                "transport duration must be positive".into(),
            ));
        }
        Ok(Self {
            x_start,
            x_end,
            duration,
        })
    }

    /// Path between the first two electrode centers of `model`.
    pub fn across(model: &PotentialModel, duration: f64) -> Result<Self> {
        Self::new(
            model.electrodes[0].center,
            model.electrodes[1].center,
            duration,
        )
    }

    pub fn distance(&self) -> f64 {
        self.x_end - self.x_start
    }

    fn s(&self, t: f64) -> f64 {
        (t / self.duration).clamp(0.0, 1.0)
    }

    pub fn position(&self, t: f64) -> f64 {
        self.x_start + self.distance() * shape(self.s(t))
    }

    pub fn velocity(&self, t: f64) -> f64 {
        self.distance() * shape_d1(self.s(t)) / self.duration
    }

    pub fn acceleration(&self, t: f64) -> f64 {
        self.distance() * shape_d2(self.s(t)) / (self.duration * self.duration)
    }

    /// Copy with a new duration (same path, retraced slower or faster).
    pub fn stretched(&self, duration: f64) -> Result<Self> {
        Self::new(self.x_start, self.x_end, duration)
    }
}

fn unbounded() -> f64 {
    f64::INFINITY
}

/// Uniformly sampled two-electrode voltage waveform over `[0, duration]`,
/// endpoints included. Between samples the voltages interpolate linearly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VoltageRamp {
    pub duration: f64,
    pub values: Vec<[f64; 2]>,
    /// Hardware voltage bound used by [`VoltageRamp::clamped`] and by the
    /// optimizers; unbounded by default and not persisted.
    #[serde(skip, default = "unbounded")]
    pub u_max: f64,
}

impl VoltageRamp {
    pub fn new(duration: f64, values: Vec<[f64; 2]>) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(ShuttleError::Domain(
                "ramp duration must be positive".into(),
            ));
        }
        if values.len() < 2 {
            return Err(ShuttleError::Domain(
                "a ramp needs at least two samples".into(),
            ));
        }
        Ok(Self {
            duration,
            values,
            u_max: f64::INFINITY,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.values.len()
    }

    pub fn dt(&self) -> f64 {
        self.duration / (self.n_samples() - 1) as f64
    }

    /// Time of sample `k`; exact at both endpoints.
    pub fn time(&self, k: usize) -> f64 {
        self.duration * k as f64 / (self.n_samples() - 1) as f64
    }

    /// Linear interpolation, exact at the sample times. Times outside
    /// `[0, duration]` are rejected.
    pub fn value_at(&self, t: f64) -> Result<[f64; 2]> {
        if !(t >= 0.0 && t <= self.duration) {
            return Err(ShuttleError::Domain(format!(
                "t = {t} us outside ramp interval [0, {}]",
                self.duration
            )));
        }
        let n = self.n_samples();
        let s = t / self.duration * (n - 1) as f64;
        let nearest = s.round();
        if (s - nearest).abs() < 1e-9 {
            return Ok(self.values[(nearest as usize).min(n - 1)]);
        }
        let k = (s.floor() as usize).min(n - 2);
        let frac = s - k as f64;
        let a = self.values[k];
        let b = self.values[k + 1];
        Ok([
            a[0] + frac * (b[0] - a[0]),
            a[1] + frac * (b[1] - a[1]),
        ])
    }

    /// Unchecked linear interpolation for the integrators: `t` is clamped
    /// into the ramp interval and samples are not snapped.
    pub(crate) fn lerp(&self, t: f64) -> [f64; 2] {
        let n = self.n_samples();
        let s = (t / self.duration * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
        let k = (s.floor() as usize).min(n - 2);
        let frac = s - k as f64;
        let a = self.values[k];
        let b = self.values[k + 1];
        [a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1])]
    }

    /// Largest absolute voltage over all samples and electrodes.
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Copy with every sample clamped to `[-u_max, u_max]`. Idempotent.
    pub fn clamped(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            v[0] = v[0].clamp(-self.u_max, self.u_max);
            v[1] = v[1].clamp(-self.u_max, self.u_max);
        }
        out
    }

    /// Copy re-sampled to `n` evenly spaced points by linear interpolation.
    /// The represented waveform is unchanged when `n - 1` is a multiple of
    /// the current interval count.
    pub fn resampled(&self, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(ShuttleError::Domain(
                "a ramp needs at least two samples".into(),
            ));
        }
        let values = (0..n)
            .map(|k| self.lerp(self.duration * k as f64 / (n - 1) as f64))
            .collect();
        let mut out = Self::new(self.duration, values)?;
        out.u_max = self.u_max;
        Ok(out)
    }

    /// Copy with the same samples replayed over a new duration.
    pub fn stretched(&self, duration: f64) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(ShuttleError::Domain(
                "ramp duration must be positive".into(),
            ));
        }
        let mut out = self.clone();
        out.duration = duration;
        Ok(out)
    }

    const CSV_HEADER: &'static str = "t_us,U1_V,U2_V";

    /// Write as CSV (`t_us,U1_V,U2_V`). Numbers use the shortest decimal
    /// form that parses back to the identical value.
    pub fn write_csv<W: IoWrite>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{},{}", self.time(k), v[0], v[1])?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is ascii")
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| ShuttleError::Config("empty ramp file".into()))??;
        if header.trim() != Self::CSV_HEADER {
            return Err(ShuttleError::Config(format!(
                "expected ramp header '{}', got '{}'",
                Self::CSV_HEADER,
                header.trim()
            )));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(ShuttleError::Config(format!(
                    "ramp row {} has {} fields, expected 3",
                    i + 2,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| ShuttleError::Config(format!("ramp row {}: {e}", i + 2)))
            };
            times.push(parse(fields[0])?);
            values.push([parse(fields[1])?, parse(fields[2])?]);
        }
        if values.len() < 2 {
            return Err(ShuttleError::Config(
                "a ramp file needs at least two samples".into(),
            ));
        }
        let n = values.len();
        let duration = times[n - 1];
        if !(duration > 0.0) || times[0] != 0.0 {
            return Err(ShuttleError::Config(
                "ramp times must start at 0 and end at a positive duration".into(),
            ));
        }
        let dt = duration / (n - 1) as f64;
        for (k, &t) in times.iter().enumerate() {
            if (t - k as f64 * dt).abs() > 1e-9 * duration {
                return Err(ShuttleError::Config(format!(
                    "ramp sample times are not uniform near row {}",
                    k + 2
                )));
            }
        }
        Self::new(duration, values)
    }
}

/// Per-sample static-well solve shared by the guess and the compensated
/// ramps: at each position find the voltage pair with the requested potential
/// slope (`rhs_force`, in profile units) and curvature (`rhs_curv`).
pub(crate) fn solve_tracking(
    model: &PotentialModel,
    positions: &[f64],
    rhs_force: &[f64],
    rhs_curv: f64,
) -> Result<Vec<[f64; 2]>> {
    if model.electrodes.len() != 2 {
        return Err(ShuttleError::Domain(
            "voltage inversion requires exactly two electrodes".into(),
        ));
    }
    assert_eq!(positions.len(), rhs_force.len());
    let mut rows = Vec::with_capacity(positions.len());
    let mut min_det = f64::INFINITY;
    let mut max_det = 0.0_f64;
    for &x in positions {
        let (_, d1, dd1) = model.electrodes[0].phi_all(x);
        let (_, d2, dd2) = model.electrodes[1].phi_all(x);
        let det = d1 * dd2 - d2 * dd1;
        min_det = min_det.min(det.abs());
        max_det = max_det.max(det.abs());
        rows.push((d1, dd1, d2, dd2, det));
    }
    if max_det == 0.0 || min_det < 1e-12 * max_det {
        return Err(ShuttleError::DegenerateGeometry(format!(
            "electrode profiles cannot independently set slope and curvature \
             along the path (|det| spans {min_det:.3e} to {max_det:.3e})"
        )));
    }
    Ok(rows
        .iter()
        .zip(rhs_force)
        .map(|(&(d1, dd1, d2, dd2, det), &rf)| {
            [
                (rf * dd2 - d2 * rhs_curv) / det,
                (d1 * rhs_curv - dd1 * rf) / det,
            ]
        })
        .collect())
}

/// Voltage ramp that keeps an instantaneous well of frequency `freq_mhz`
/// centered on the transport path: at every sample the potential has zero
/// slope and curvature `m omega^2` at `alpha(t)`.
pub fn guess_voltages(
    model: &PotentialModel,
    tf: &TransportFunction,
    freq_mhz: f64,
    n_samples: usize,
) -> Result<VoltageRamp> {
    if n_samples < 2 {
        return Err(ShuttleError::Domain(
            "a ramp needs at least two samples".into(),
        ));
    }
    if !(freq_mhz > 0.0) {
        return Err(ShuttleError::Domain("well frequency must be positive".into()));
    }
    let omega = angular(freq_mhz);
    let rhs_curv = model.mass * omega * omega / crate::units::VOLT;
    let positions: Vec<f64> = (0..n_samples)
        .map(|k| tf.position(tf.duration * k as f64 / (n_samples - 1) as f64))
        .collect();
    let rhs_force = vec![0.0; n_samples];
    let values = solve_tracking(model, &positions, &rhs_force, rhs_curv)?;
    VoltageRamp::new(tf.duration, values)
}
