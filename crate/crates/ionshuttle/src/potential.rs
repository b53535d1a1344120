//! Electrode potentials and the assembled time-dependent trap potential.
//!
//! Each electrode contributes a dimensionless spatial profile `phi_i(x)`; the
//! trap potential for a voltage set `U` is `V(x) = VOLT * sum_i U_i phi_i(x)`
//! (energy for a single elementary charge). Attractive wells therefore need
//! negative biases.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShuttleError};
use crate::units::{angular, MASS_CA40, VOLT};

/// Default spacing between the two transport wells, um.
pub const WELL_SPACING: f64 = 280.0;
/// Default axial trap frequency, MHz.
pub const TRAP_FREQ_MHZ: f64 = 1.3;
/// Per-volt well frequency of the harmonic electrode model, MHz.
pub const VOLT_FREQ_MHZ: f64 = 0.55;
/// Surrogate electrode strip width, um. Tuned once together with
/// [`SURROGATE_HEIGHT`] so that a single electrode calibrates to the reference
/// frequency near -7 V, neighbouring-electrode forces are shielded across one
/// spacing, and the two-electrode inversion stays solvable below 10 V along
/// the whole transport path.
pub const SURROGATE_WIDTH: f64 = 225.0;
/// Surrogate electrode height parameter (distance scale of the ion above the
/// strip), um.
pub const SURROGATE_HEIGHT: f64 = 286.0;

/// Spatial profile of a single electrode.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ElectrodeShape {
    /// `phi(x) = -k/2 (x - c)^2`: an idealised electrode whose bias adds pure
    /// curvature. A bias of -1 V yields a well of curvature `VOLT * k`.
    Harmonic { curvature_per_volt: f64 },
    /// `phi(x) = (1/pi) [atan((x-c+w/2)/h) - atan((x-c-w/2)/h)]`: the
    /// potential of a biased strip of width `w` seen at height `h`, a smooth
    /// analytic stand-in for a real segmented-trap electrode.
    Surrogate { width: f64, height: f64 },
    /// Chebyshev series over `[lo, hi]`, produced by [`fit_tabulated`].
    Series { coeffs: Vec<f64>, lo: f64, hi: f64 },
}

/// One electrode: nominal center plus spatial profile.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ElectrodePotential {
    pub center: f64,
    pub shape: ElectrodeShape,
}

impl ElectrodePotential {
    pub fn harmonic(center: f64, curvature_per_volt: f64) -> Self {
        Self {
            center,
            shape: ElectrodeShape::Harmonic { curvature_per_volt },
        }
    }

    pub fn surrogate(center: f64, width: f64, height: f64) -> Self {
        Self {
            center,
            shape: ElectrodeShape::Surrogate { width, height },
        }
    }

    /// Profile value and its first two spatial derivatives at `x`.
    pub fn phi_all(&self, x: f64) -> (f64, f64, f64) {
        match &self.shape {
            ElectrodeShape::Harmonic { curvature_per_volt: k } => {
                let u = x - self.center;
                (-0.5 * k * u * u, -k * u, -k)
            }
            ElectrodeShape::Surrogate { width, height } => {
                let h = *height;
                let a = x - self.center + 0.5 * width;
                let b = x - self.center - 0.5 * width;
                let qa = h * h + a * a;
                let qb = h * h + b * b;
                let inv_pi = std::f64::consts::FRAC_1_PI;
                let phi = inv_pi * ((a / h).atan() - (b / h).atan());
                let dphi = inv_pi * h * (1.0 / qa - 1.0 / qb);
                let ddphi = 2.0 * inv_pi * h * (b / (qb * qb) - a / (qa * qa));
                (phi, dphi, ddphi)
            }
            ElectrodeShape::Series { coeffs, lo, hi } => series_eval(coeffs, *lo, *hi, x),
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        self.phi_all(x).0
    }

    pub fn dphi(&self, x: f64) -> f64 {
        self.phi_all(x).1
    }

    pub fn ddphi(&self, x: f64) -> f64 {
        self.phi_all(x).2
    }
}

/// Chebyshev series value and first two derivatives by forward recurrence on
/// `T_k`, `T_k'`, `T_k''` in the mapped variable, chain-ruled back to `x`.
fn series_eval(coeffs: &[f64], lo: f64, hi: f64, x: f64) -> (f64, f64, f64) {
    let scale = 2.0 / (hi - lo);
    let u = (2.0 * x - lo - hi) / (hi - lo);
    let (mut p, mut dp, mut ddp) = (0.0, 0.0, 0.0);
    // T_{k-1}, T_k and their derivatives.
    let (mut tm, mut t) = (1.0, u);
    let (mut dtm, mut dt) = (0.0, 1.0);
    let (mut ddtm, mut ddt) = (0.0, 0.0);
    if let Some(&c0) = coeffs.first() {
        p += c0;
    }
    if let Some(&c1) = coeffs.get(1) {
        p += c1 * t;
        dp += c1;
    }
    for &c in coeffs.iter().skip(2) {
        let tn = 2.0 * u * t - tm;
        let dtn = 2.0 * t + 2.0 * u * dt - dtm;
        let ddtn = 4.0 * dt + 2.0 * u * ddt - ddtm;
        p += c * tn;
        dp += c * dtn;
        ddp += c * ddtn;
        tm = t;
        t = tn;
        dtm = dt;
        dt = dtn;
        ddtm = ddt;
        ddt = ddtn;
    }
    (p, dp * scale, ddp * scale * scale)
}

/// A set of electrodes with the ion mass and the working window.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PotentialModel {
    pub electrodes: Vec<ElectrodePotential>,
    /// Ion mass, u.
    pub mass: f64,
    /// Positions outside `[window.0, window.1]` are rejected by checked
    /// evaluation and count as escape during propagation.
    pub window: (f64, f64),
}

impl PotentialModel {
    pub fn new(
        electrodes: Vec<ElectrodePotential>,
        mass: f64,
        window: (f64, f64),
    ) -> Result<Self> {
        if electrodes.len() < 2 {
            return Err(ShuttleError::Domain(
                "a transport model needs at least two electrodes".into(),
            ));
        }
        if !electrodes.windows(2).all(|w| w[0].center < w[1].center) {
            return Err(ShuttleError::Domain(
                "electrode centers must be strictly increasing".into(),
            ));
        }
        if !(mass > 0.0) {
            return Err(ShuttleError::Domain("mass must be positive".into()));
        }
        if !(window.0 < window.1) {
            return Err(ShuttleError::Domain("empty working window".into()));
        }
        Ok(Self {
            electrodes,
            mass,
            window,
        })
    }

    /// Two surrogate electrodes a distance `spacing` apart, working window
    /// half a spacing beyond each well.
    pub fn surrogate_pair(spacing: f64, width: f64, height: f64, mass: f64) -> Self {
        Self::new(
            vec![
                ElectrodePotential::surrogate(0.0, width, height),
                ElectrodePotential::surrogate(spacing, width, height),
            ],
            mass,
            (-0.5 * spacing, 1.5 * spacing),
        )
        .expect("valid surrogate pair")
    }

    /// Two harmonic electrodes whose unit bias gives a well at `volt_freq_mhz`.
    pub fn harmonic_pair(spacing: f64, volt_freq_mhz: f64, mass: f64) -> Self {
        let k = mass * angular(volt_freq_mhz).powi(2) / VOLT;
        Self::new(
            vec![
                ElectrodePotential::harmonic(0.0, k),
                ElectrodePotential::harmonic(spacing, k),
            ],
            mass,
            (-0.5 * spacing, 1.5 * spacing),
        )
        .expect("valid harmonic pair")
    }

    /// The reference surrogate model: 40 u ion, 280 um spacing.
    pub fn standard_surrogate() -> Self {
        Self::surrogate_pair(WELL_SPACING, SURROGATE_WIDTH, SURROGATE_HEIGHT, MASS_CA40)
    }

    /// The reference harmonic model: 40 u ion, 280 um spacing, 0.55 MHz/V.
    pub fn standard_harmonic() -> Self {
        Self::harmonic_pair(WELL_SPACING, VOLT_FREQ_MHZ, MASS_CA40)
    }

    /// Distance between the first two electrode centers (the transport span).
    pub fn spacing(&self) -> f64 {
        self.electrodes[1].center - self.electrodes[0].center
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.window.0 && x <= self.window.1
    }

    fn check_window(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(ShuttleError::Domain(format!(
                "x = {x} um outside working window [{}, {}]",
                self.window.0, self.window.1
            )))
        }
    }

    fn check_voltages(&self, voltages: &[f64]) {
        assert_eq!(
            voltages.len(),
            self.electrodes.len(),
            "voltage count must match electrode count"
        );
    }

    /// Potential and its first two spatial derivatives, window-checked.
    pub fn eval(&self, voltages: &[f64], x: f64) -> Result<(f64, f64, f64)> {
        self.check_window(x)?;
        Ok(self.eval_unchecked(voltages, x))
    }

    /// Potential and derivatives without the window check (hot paths; escape
    /// is enforced by the integrators).
    pub fn eval_unchecked(&self, voltages: &[f64], x: f64) -> (f64, f64, f64) {
        self.check_voltages(voltages);
        let (mut v, mut dv, mut ddv) = (0.0, 0.0, 0.0);
        for (e, &u) in self.electrodes.iter().zip(voltages) {
            let (p, dp, ddp) = e.phi_all(x);
            v += u * p;
            dv += u * dp;
            ddv += u * ddp;
        }
        (VOLT * v, VOLT * dv, VOLT * ddv)
    }

    pub fn potential(&self, voltages: &[f64], x: f64) -> Result<f64> {
        Ok(self.eval(voltages, x)?.0)
    }

    /// Acceleration `-V'(x)/m`, unchecked.
    pub fn acceleration(&self, voltages: &[f64], x: f64) -> f64 {
        let mut dv = 0.0;
        for (e, &u) in self.electrodes.iter().zip(voltages) {
            dv += u * e.dphi(x);
        }
        -VOLT * dv / self.mass
    }

    /// Curvature `V''(x)`, unchecked.
    pub fn curvature(&self, voltages: &[f64], x: f64) -> f64 {
        let mut ddv = 0.0;
        for (e, &u) in self.electrodes.iter().zip(voltages) {
            ddv += u * e.ddphi(x);
        }
        VOLT * ddv
    }

    /// Bias on one electrode (others grounded) that forms a well of frequency
    /// `freq_mhz` at that electrode's center. The defining relation
    /// `VOLT * U * phi''(c) = m omega^2` is linear in `U`, so the root solve
    /// is closed-form.
    pub fn calibrate_bias(&self, electrode: usize, freq_mhz: f64) -> Result<f64> {
        let e = self.electrodes.get(electrode).ok_or_else(|| {
            ShuttleError::Domain(format!("no electrode with index {electrode}"))
        })?;
        if !(freq_mhz > 0.0) {
            return Err(ShuttleError::Calibration(
                "target frequency must be positive".into(),
            ));
        }
        let ddp = e.ddphi(e.center);
        if !(ddp < 0.0) {
            return Err(ShuttleError::Calibration(format!(
                "phi''(center) = {ddp:.3e} at electrode {electrode}; a trapping well \
                 requires negative profile curvature at the electrode center"
            )));
        }
        let omega = angular(freq_mhz);
        Ok(self.mass * omega * omega / (VOLT * ddp))
    }

    /// Geometrically scaled copy: all lengths multiplied by `factor`, the mass
    /// unchanged. Together with voltages scaled by `factor^2` the classical
    /// dynamics are invariant, which is how the wavepacket-to-distance ratio
    /// is swept without changing the trap frequency.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(ShuttleError::Domain("scale factor must be positive".into()));
        }
        let electrodes = self
            .electrodes
            .iter()
            .map(|e| {
                let shape = match &e.shape {
                    ElectrodeShape::Harmonic { curvature_per_volt } => ElectrodeShape::Harmonic {
                        curvature_per_volt: curvature_per_volt / (factor * factor),
                    },
                    ElectrodeShape::Surrogate { width, height } => ElectrodeShape::Surrogate {
                        width: width * factor,
                        height: height * factor,
                    },
                    ElectrodeShape::Series { coeffs, lo, hi } => ElectrodeShape::Series {
                        coeffs: coeffs.clone(),
                        lo: lo * factor,
                        hi: hi * factor,
                    },
                };
                ElectrodePotential {
                    center: e.center * factor,
                    shape,
                }
            })
            .collect();
        Self::new(
            electrodes,
            self.mass,
            (self.window.0 * factor, self.window.1 * factor),
        )
    }
}

/// Result of fitting a tabulated two-electrode potential.
#[derive(Clone, Debug)]
pub struct TabulatedFit {
    pub electrodes: [ElectrodePotential; 2],
    /// Largest absolute deviation between fit and samples.
    pub residual: f64,
}

/// Fit Chebyshev series of the given degree to tabulated profiles
/// `(x, phi1, phi2)`. Requires strictly increasing `x` and at least
/// `4 * degree` samples; rejects ill-conditioned systems.
pub fn fit_tabulated(samples: &[(f64, f64, f64)], degree: usize) -> Result<TabulatedFit> {
    if degree == 0 {
        return Err(ShuttleError::Domain("fit degree must be at least 1".into()));
    }
    let n = samples.len();
    if !samples.windows(2).all(|w| w[0].0 < w[1].0) {
        return Err(ShuttleError::Domain(
            "sample positions must be strictly increasing".into(),
        ));
    }
    if n < 4 * degree {
        return Err(ShuttleError::Fit(format!(
            "degree {degree} needs at least {} samples, got {n}",
            4 * degree
        )));
    }
    let lo = samples[0].0;
    let hi = samples[n - 1].0;
    let cols = degree + 1;
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, cols);
    for (i, &(x, _, _)) in samples.iter().enumerate() {
        let u = (2.0 * x - lo - hi) / (hi - lo);
        let (mut tm, mut t) = (1.0, u);
        a[(i, 0)] = 1.0;
        if cols > 1 {
            a[(i, 1)] = u;
        }
        for j in 2..cols {
            let tn = 2.0 * u * t - tm;
            a[(i, j)] = tn;
            tm = t;
            t = tn;
        }
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-12) {
        return Err(ShuttleError::Fit(format!(
            "ill-conditioned fit (condition estimate {:.1e}); lower the degree",
            smax / smin.max(f64::MIN_POSITIVE)
        )));
    }
    let mut rhs = nalgebra::DMatrix::<f64>::zeros(n, 2);
    for (i, &(_, p1, p2)) in samples.iter().enumerate() {
        rhs[(i, 0)] = p1;
        rhs[(i, 1)] = p2;
    }
    let sol = svd
        .solve(&rhs, 0.0)
        .map_err(|e| ShuttleError::Fit(e.to_string()))?;
    let fitted = &a * &sol;
    let mut residual = 0.0_f64;
    for i in 0..n {
        residual = residual.max((fitted[(i, 0)] - samples[i].1).abs());
        residual = residual.max((fitted[(i, 1)] - samples[i].2).abs());
    }
    let mut centers = [lo; 2];
    for (col, center) in centers.iter_mut().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for &(x, p1, p2) in samples {
            let p = if col == 0 { p1 } else { p2 };
            if p > best {
                best = p;
                *center = x;
            }
        }
    }
    let shape = |col: usize| ElectrodeShape::Series {
        coeffs: sol.column(col).iter().copied().collect(),
        lo,
        hi,
    };
    Ok(TabulatedFit {
        electrodes: [
            ElectrodePotential {
                center: centers[0],
                shape: shape(0),
            },
            ElectrodePotential {
                center: centers[1],
                shape: shape(1),
            },
        ],
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::HBAR;
    use proptest::prelude::*;

    fn omega_ref() -> f64 {
        angular(TRAP_FREQ_MHZ)
    }

    #[test]
    fn surrogate_profile_shape() {
        let m = PotentialModel::standard_surrogate();
        let e = &m.electrodes[0];
        let half = 0.5 * SURROGATE_WIDTH / SURROGATE_HEIGHT;
        let expected = 2.0 * std::f64::consts::FRAC_1_PI * half.atan();
        assert!((e.phi(0.0) - expected).abs() < 1e-15);
        // Positive, even, decaying.
        for x in [-400.0, -50.0, 10.0, 133.7, 420.0] {
            assert!(e.phi(x) > 0.0);
            assert!((e.phi(x) - e.phi(-x)).abs() < 1e-15);
        }
        assert!(e.phi(1e6) < 1e-3);
        assert!(e.phi(0.0) <= 1.0);
    }

    #[test]
    fn surrogate_shields_neighbouring_well() {
        let m = PotentialModel::standard_surrogate();
        let e = &m.electrodes[0];
        let at_far_well = e.dphi(WELL_SPACING).abs();
        let at_midpoint = e.dphi(0.5 * WELL_SPACING).abs();
        assert!(
            at_far_well < at_midpoint,
            "shielding violated: |phi'({WELL_SPACING})| = {at_far_well:.3e} >= \
             |phi'({})| = {at_midpoint:.3e}",
            0.5 * WELL_SPACING
        );
    }

    #[test]
    fn harmonic_pair_is_exact_quadratic() {
        let m = PotentialModel::standard_harmonic();
        let w0 = angular(VOLT_FREQ_MHZ);
        for u in [0.3, 1.0, 5.5] {
            for x in [-100.0, 0.0, 77.0, 350.0] {
                let (v, dv, ddv) = m.eval(&[-u, 0.0], x).unwrap();
                let expect = 0.5 * m.mass * w0 * w0 * u * x * x;
                assert!((v - expect).abs() <= 1e-12 * expect.abs().max(1.0));
                assert!((dv - m.mass * w0 * w0 * u * x).abs() <= 1e-10);
                assert!((ddv - m.mass * w0 * w0 * u).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn eval_rejects_outside_window() {
        let m = PotentialModel::standard_surrogate();
        assert!(m.eval(&[1.0, 1.0], -141.0).is_err());
        assert!(m.eval(&[1.0, 1.0], 420.5).is_err());
        assert!(m.eval(&[1.0, 1.0], -140.0).is_ok());
        assert!(m.eval(&[1.0, 1.0], 420.0).is_ok());
    }

    #[test]
    fn zero_voltages_zero_potential() {
        let m = PotentialModel::standard_surrogate();
        let (v, dv, ddv) = m.eval(&[0.0, 0.0], 33.0).unwrap();
        assert_eq!((v, dv, ddv), (0.0, 0.0, 0.0));
    }

    #[test]
    fn first_derivative_matches_differences_of_potential() {
        let m = PotentialModel::standard_surrogate();
        let u = [-6.0, -2.5];
        let h = 1e-4;
        let scale: f64 = (0..200)
            .map(|i| {
                let x = -130.0 + 2.7 * i as f64;
                m.eval(&u, x).map(|d| d.1.abs()).unwrap_or(0.0)
            })
            .fold(0.0, f64::max);
        for i in 0..200 {
            let x = -130.0 + 2.7 * i as f64;
            let (_, dv, _) = m.eval(&u, x).unwrap();
            let fd = (m.eval_unchecked(&u, x + h).0 - m.eval_unchecked(&u, x - h).0) / (2.0 * h);
            assert!(
                (fd - dv).abs() <= 1e-6 * scale,
                "V' mismatch at x = {x}: analytic {dv:.6e}, differences {fd:.6e}"
            );
        }
    }

    #[test]
    fn second_derivative_matches_differences_of_first() {
        // V'' against central differences of the analytic V'. (A second
        // difference of V itself cannot reach this accuracy in f64: V is ~1e8
        // internal units and the curvature only ~1e3.)
        for m in [
            PotentialModel::standard_surrogate(),
            PotentialModel::standard_harmonic(),
        ] {
            let u = [-6.0, -2.5];
            let h = 1e-4;
            let scale: f64 = (0..200)
                .map(|i| {
                    let x = -130.0 + 2.7 * i as f64;
                    m.eval(&u, x).map(|d| d.2.abs()).unwrap_or(0.0)
                })
                .fold(0.0, f64::max);
            for i in 0..200 {
                let x = -130.0 + 2.7 * i as f64;
                let (_, _, ddv) = m.eval(&u, x).unwrap();
                let fd =
                    (m.eval_unchecked(&u, x + h).1 - m.eval_unchecked(&u, x - h).1) / (2.0 * h);
                assert!(
                    (fd - ddv).abs() <= 1e-6 * scale,
                    "V'' mismatch at x = {x}: analytic {ddv:.6e}, differences {fd:.6e}"
                );
            }
        }
    }

    #[test]
    fn profile_derivatives_continuous_on_fine_grid() {
        let surrogate = PotentialModel::standard_surrogate();
        let samples: Vec<(f64, f64, f64)> = (0..400)
            .map(|i| {
                let x = -140.0 + 1.4 * i as f64;
                (
                    x,
                    surrogate.electrodes[0].phi(x),
                    surrogate.electrodes[1].phi(x),
                )
            })
            .collect();
        let fit = fit_tabulated(&samples, 24).unwrap();
        let series_model = PotentialModel::new(
            fit.electrodes.to_vec(),
            MASS_CA40,
            (-140.0, 418.6),
        )
        .unwrap();
        for m in [&surrogate, &series_model] {
            for e in &m.electrodes {
                let delta = 1e-3;
                let n = ((m.window.1 - m.window.0) / delta) as usize;
                let mut max_dd = 0.0_f64;
                let mut max_d = 0.0_f64;
                for i in 0..=n {
                    let x = m.window.0 + delta * i as f64;
                    max_dd = max_dd.max(e.ddphi(x).abs());
                    max_d = max_d.max(e.dphi(x).abs());
                }
                let mut prev = e.dphi(m.window.0);
                for i in 1..=n {
                    let x = m.window.0 + delta * i as f64;
                    let d = e.dphi(x);
                    let jump = (d - prev).abs();
                    assert!(
                        jump <= 1.5 * max_dd * delta + 1e-9 * max_d,
                        "phi' jump {jump:.3e} at x = {x}"
                    );
                    prev = d;
                }
            }
        }
    }

    #[test]
    fn calibrate_harmonic_unit_bias() {
        let m = PotentialModel::standard_harmonic();
        let bias = m.calibrate_bias(0, VOLT_FREQ_MHZ).unwrap();
        assert!((bias + 1.0).abs() < 1e-12);
        // Doubling the frequency quadruples the bias.
        let bias2 = m.calibrate_bias(0, 2.0 * VOLT_FREQ_MHZ).unwrap();
        assert!((bias2 + 4.0).abs() < 1e-12);
    }

    #[test]
    fn calibrate_surrogate_near_reference_bias() {
        let m = PotentialModel::standard_surrogate();
        let bias = m.calibrate_bias(0, TRAP_FREQ_MHZ).unwrap();
        assert!(
            (bias + 7.0).abs() <= 0.15 * 7.0,
            "calibrated bias {bias:.4} V outside 15% of -7 V"
        );
        // The calibrated bias closes the loop: V''(x1)/m = omega^2.
        let curv = m.curvature(&[bias, 0.0], 0.0) / m.mass;
        let target = omega_ref() * omega_ref();
        assert!((curv - target).abs() <= 1e-9 * target);
    }

    #[test]
    fn calibrate_rejects_wrong_curvature_sign() {
        // A profile with positive curvature at its center cannot trap with
        // the stored sign convention.
        let e = ElectrodePotential {
            center: 0.0,
            shape: ElectrodeShape::Series {
                coeffs: vec![0.0, 0.0, 1.0],
                lo: -1.0,
                hi: 1.0,
            },
        };
        let m = PotentialModel::new(
            vec![e, ElectrodePotential::harmonic(10.0, 1.0)],
            MASS_CA40,
            (-1.0, 11.0),
        )
        .unwrap();
        assert!(matches!(
            m.calibrate_bias(0, 1.0),
            Err(ShuttleError::Calibration(_))
        ));
    }

    #[test]
    fn fit_recovers_exact_low_order_polynomial() {
        let poly = |x: f64| 0.3 + 1e-3 * x - 2e-5 * x * x + 1e-7 * x * x * x - 5e-10 * x.powi(4);
        let samples: Vec<(f64, f64, f64)> = (0..40)
            .map(|i| {
                let x = -140.0 + 14.0 * i as f64;
                (x, poly(x), 0.5 * poly(x))
            })
            .collect();
        let fit = fit_tabulated(&samples, 4).unwrap();
        assert!(fit.residual < 1e-12, "residual {:.3e}", fit.residual);
    }

    #[test]
    fn fit_reproduces_surrogate_with_derivatives() {
        let m = PotentialModel::standard_surrogate();
        let samples: Vec<(f64, f64, f64)> = (0..280)
            .map(|i| {
                let x = -140.0 + 2.0 * i as f64;
                (x, m.electrodes[0].phi(x), m.electrodes[1].phi(x))
            })
            .collect();
        let fit = fit_tabulated(&samples, 24).unwrap();
        let peak = m.electrodes[0].phi(0.0);
        assert!(fit.residual < 1e-8 * peak, "residual {:.3e}", fit.residual);
        // Interior derivatives track the analytic profile.
        for i in 0..250 {
            let x = -120.0 + 2.0 * i as f64;
            for (se, ae) in fit.electrodes.iter().zip(&m.electrodes) {
                assert!((se.phi(x) - ae.phi(x)).abs() < 1e-8);
                assert!((se.dphi(x) - ae.dphi(x)).abs() < 1e-6 * 1e-3);
                assert!((se.ddphi(x) - ae.ddphi(x)).abs() < 1e-5 * 1e-5);
            }
        }
    }

    #[test]
    fn fit_rejects_underdetermined_input() {
        let samples = vec![(0.0, 1.0, 0.0), (1.0, 0.5, 0.5), (2.0, 0.0, 1.0)];
        assert!(matches!(
            fit_tabulated(&samples, 24),
            Err(ShuttleError::Fit(_))
        ));
    }

    #[test]
    fn fit_rejects_rank_deficient_clusters() {
        // 96 strictly increasing samples in three tight clusters: rank 3
        // cannot support degree 24.
        let mut samples = Vec::new();
        for (ci, cx) in [0.0, 140.0, 280.0].iter().enumerate() {
            for j in 0..32 {
                let x = cx + 1e-9 * (ci * 32 + j) as f64;
                samples.push((x, (ci as f64).sin(), (ci as f64).cos()));
            }
        }
        assert!(matches!(
            fit_tabulated(&samples, 24),
            Err(ShuttleError::Fit(_))
        ));
    }

    #[test]
    fn fit_rejects_unsorted_positions() {
        let samples = vec![(0.0, 1.0, 0.0), (2.0, 0.5, 0.5), (1.0, 0.0, 1.0), (3.0, 0.0, 0.0)];
        assert!(matches!(
            fit_tabulated(&samples, 1),
            Err(ShuttleError::Domain(_))
        ));
    }

    #[test]
    fn scaled_preserves_calibration_and_curvature() {
        let base = PotentialModel::standard_surrogate();
        let factor = 1e-3;
        let scaled = base.scaled(factor).unwrap();
        let bias = base.calibrate_bias(0, TRAP_FREQ_MHZ).unwrap();
        let bias_scaled = scaled.calibrate_bias(0, TRAP_FREQ_MHZ).unwrap();
        assert!((bias_scaled - bias * factor * factor).abs() <= 1e-9 * bias.abs());
        // Same well frequency after scaling voltages by factor^2.
        let curv = scaled.curvature(&[bias_scaled, 0.0], 0.0) / scaled.mass;
        let target = omega_ref() * omega_ref();
        assert!((curv - target).abs() <= 1e-9 * target);
        // Ground-width-to-spacing ratio grows by 1/factor.
        let sigma = crate::units::ground_width(base.mass, omega_ref());
        assert!((scaled.spacing() - factor * base.spacing()).abs() < 1e-12 * base.spacing());
        let xi_base = sigma / base.spacing();
        let xi_scaled = sigma / scaled.spacing();
        assert!((xi_scaled - xi_base / factor).abs() < 1e-9 * xi_scaled);
    }

    #[test]
    fn reference_ratio_of_width_to_spacing() {
        let sigma = crate::units::ground_width(MASS_CA40, omega_ref());
        let xi = sigma / WELL_SPACING;
        assert!((xi - 4.98e-5).abs() < 2e-7, "xi = {xi:.3e}");
        let _ = HBAR;
    }

    proptest! {
        #[test]
        fn potential_is_linear_in_voltages(
            u1 in -10.0..10.0f64, u2 in -10.0..10.0f64,
            w1 in -10.0..10.0f64, w2 in -10.0..10.0f64,
            a in -2.0..2.0f64, b in -2.0..2.0f64,
            x in -140.0..420.0f64,
        ) {
            let m = PotentialModel::standard_surrogate();
            let ua = [u1, u2];
            let ub = [w1, w2];
            let mixed = [a * u1 + b * w1, a * u2 + b * w2];
            let ea = m.eval(&ua, x).unwrap();
            let eb = m.eval(&ub, x).unwrap();
            let em = m.eval(&mixed, x).unwrap();
            let scale = VOLT * 40.0;
            prop_assert!((em.0 - (a * ea.0 + b * eb.0)).abs() <= 1e-12 * scale);
            prop_assert!((em.1 - (a * ea.1 + b * eb.1)).abs() <= 1e-12 * scale);
            prop_assert!((em.2 - (a * ea.2 + b * eb.2)).abs() <= 1e-12 * scale);
        }

        #[test]
        fn surrogate_decays_monotonically(x1 in 0.0..300.0f64, dx in 0.1..100.0f64) {
            let e = ElectrodePotential::surrogate(0.0, SURROGATE_WIDTH, SURROGATE_HEIGHT);
            prop_assert!(e.phi(x1 + dx) < e.phi(x1) + 1e-15);
        }
    }
}
