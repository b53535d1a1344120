//! Wavepacket propagation on a co-moving Fourier window.
//!
//! The state is stored as an envelope on a small window centered at `x_cl`
//! with the bulk momentum `p_cl` factored out: the lab wavefunction is
//! `Psi(x) = psi(x - x_cl) * exp(i p_cl (x - x_cl) / hbar)` up to a tracked
//! global phase. Each step evolves the envelope exactly (lab Hamiltonian,
//! kinetic operator `(hbar k + p_cl)^2 / 2m` in Fourier space) with a
//! Chebyshev expansion of the propagator, then re-centers the window on the
//! measured position and momentum means. Windows of ~100 points then suffice
//! for transports thousands of wavepacket widths long.

use std::io::Write as IoWrite;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShuttleError};
use crate::potential::PotentialModel;
use crate::ramp::VoltageRamp;
use crate::units::{angular, ground_width, HBAR};

/// Wavepacket width over transport distance, the scale parameter that
/// separates the inverse-engineering and quantum-optimization regimes.
pub fn relative_size(model: &PotentialModel, freq_mhz: f64) -> f64 {
    ground_width(model.mass, angular(freq_mhz)) / model.spacing()
}

/// Volume of classical phase space covered by the transport, in units of
/// Planck's constant: m d^2 omega / (2 pi h).
pub fn phase_space_volume(model: &PotentialModel, freq_mhz: f64) -> f64 {
    let d = model.spacing();
    let omega = angular(freq_mhz);
    model.mass * d * d * omega / (4.0 * std::f64::consts::PI * std::f64::consts::PI * HBAR)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Number of window points; a power of two, at least 32.
    pub n: usize,
    /// Window width in um.
    pub width: f64,
}

impl GridSpec {
    pub fn new(n: usize, width: f64) -> Result<Self> {
        if n < 32 || !n.is_power_of_two() {
            return Err(ShuttleError::Config(format!(
                "grid size must be a power of two >= 32, got {n}"
            )));
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(ShuttleError::Config(format!(
                "grid width must be positive, got {width}"
            )));
        }
        Ok(Self { n, width })
    }

    /// Window sized in multiples of the ground-state width of the reference
    /// well.
    pub fn for_trap(mass: f64, freq_mhz: f64, n: usize, n_widths: f64) -> Result<Self> {
        Self::new(n, n_widths * ground_width(mass, angular(freq_mhz)))
    }

    pub fn dx(&self) -> f64 {
        self.width / self.n as f64
    }

    /// Window coordinate of point `j`, centered so xi = 0 is mid-window.
    pub fn xi(&self, j: usize) -> f64 {
        (j as f64 - (self.n / 2) as f64) * self.dx()
    }

    /// Signed wavenumber of Fourier mode `m` (standard FFT ordering).
    pub fn wavenumber(&self, m: usize) -> f64 {
        let half = self.n / 2;
        let idx = if m < half {
            m as f64
        } else {
            m as f64 - self.n as f64
        };
        2.0 * std::f64::consts::PI * idx / self.width
    }
}

/// Envelope wavefunction on a co-moving window.
#[derive(Clone, Debug)]
pub struct MovingWavefunction {
    pub grid: GridSpec,
    pub psi: Vec<Complex64>,
    /// Lab position of the window center, um.
    pub x_cl: f64,
    /// Factored-out bulk momentum, u um/us.
    pub p_cl: f64,
    pub t: f64,
}

impl MovingWavefunction {
    pub fn norm_sq(&self) -> f64 {
        self.psi.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    pub fn normalize(&mut self) {
        let s = self.norm_sq().sqrt();
        if s > 0.0 {
            for c in &mut self.psi {
                *c /= s;
            }
        }
    }

    /// In-window density moments: (norm^2, mean xi, std of xi).
    pub fn position_moments(&self) -> (f64, f64, f64) {
        let dx = self.grid.dx();
        let (mut w, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for (j, c) in self.psi.iter().enumerate() {
            let p = c.norm_sqr();
            let xi = self.grid.xi(j);
            w += p;
            m1 += p * xi;
            m2 += p * xi * xi;
        }
        let mean = m1 / w;
        let var = (m2 / w - mean * mean).max(0.0);
        (w * dx, mean, var.sqrt())
    }

    /// Lab-frame mean position.
    pub fn mean_position(&self) -> f64 {
        self.x_cl + self.position_moments().1
    }
}

/// Per-sample wavepacket observables in lab units.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ObservableSet {
    pub t: f64,
    pub x_mean: f64,
    pub p_mean: f64,
    pub dx: f64,
    pub dp: f64,
    /// Delta x * Delta p in units of hbar.
    pub uncert_hbar: f64,
    pub energy: f64,
    /// Energy above the terminal well's zero point, in quanta. Mid-transport
    /// values are dominated by bulk kinetic energy; the final entry is the
    /// residual motional excitation.
    pub phonons: f64,
}

pub const OBSERVABLE_CSV_HEADER: &str =
    "t_us,x_mean_um,p_mean,dx_um,dp,uncert_product_hbar,excitation_phonons";

pub fn write_observables_csv<W: IoWrite>(series: &[ObservableSet], mut w: W) -> Result<()> {
    writeln!(w, "{OBSERVABLE_CSV_HEADER}")?;
    for o in series {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            o.t, o.x_mean, o.p_mean, o.dx, o.dp, o.uncert_hbar, o.phonons
        )?;
    }
    Ok(())
}

/// Regular Bessel functions J_0..J_N at `x >= 0` by downward (Miller)
/// recurrence, normalized with J_0 + 2 J_2 + 2 J_4 + ... = 1. The sequence
/// runs past the turning point and is trimmed where |J_n| drops below `tail`.
fn bessel_j_sequence(x: f64, tail: f64) -> Vec<f64> {
    debug_assert!(x >= 0.0 && x.is_finite());
    if x < 1e-300 {
        return vec![1.0];
    }
    let n_keep = (x + 12.0 * (x + 1.0).powf(1.0 / 3.0) + 25.0).ceil() as usize;
    let start = n_keep + 30 + n_keep / 10;
    let mut out = vec![0.0; n_keep + 1];
    let mut jp = 0.0_f64;
    let mut jc = 1e-300_f64;
    let mut even_sum = 0.0_f64;
    for n in (0..start).rev() {
        let jm = (2.0 * (n + 1) as f64 / x) * jc - jp;
        jp = jc;
        jc = jm;
        if n + 1 <= n_keep {
            out[n + 1] = jp;
        }
        if (n + 1) % 2 == 0 {
            even_sum += jp;
        }
        if jc.abs() > 1e250 {
            jc *= 1e-250;
            jp *= 1e-250;
            even_sum *= 1e-250;
            for v in &mut out {
                *v *= 1e-250;
            }
        }
    }
    out[0] = jc;
    let norm = jc + 2.0 * even_sum;
    for v in &mut out {
        *v /= norm;
    }
    let turning = x.ceil() as usize;
    let mut cut = out.len();
    for (n, v) in out.iter().enumerate() {
        if n > turning && v.abs() < tail {
            cut = n + 1;
            break;
        }
    }
    out.truncate(cut);
    out
}

/// Ratios I_n(x)/I_0(x) of modified Bessel functions by downward recurrence,
/// trimmed where the ratio falls below `tail`.
fn bessel_i_ratios(x: f64, tail: f64) -> Vec<f64> {
    debug_assert!(x >= 0.0 && x.is_finite());
    if x < 1e-300 {
        return vec![1.0];
    }
    let n_keep = (x + 12.0 * (x + 1.0).powf(1.0 / 3.0) + 25.0).ceil() as usize;
    let start = n_keep + 30 + n_keep / 10;
    let mut out = vec![0.0; n_keep + 1];
    let mut ip = 0.0_f64;
    let mut ic = 1e-300_f64;
    for n in (0..start).rev() {
        let im = ip + (2.0 * (n + 1) as f64 / x) * ic;
        ip = ic;
        ic = im;
        if n + 1 <= n_keep {
            out[n + 1] = ip;
        }
        if ic.abs() > 1e250 {
            ic *= 1e-250;
            ip *= 1e-250;
            for v in &mut out {
                *v *= 1e-250;
            }
        }
    }
    out[0] = ic;
    let norm = out[0];
    for v in &mut out {
        *v /= norm;
    }
    let mut cut = out.len();
    for (n, v) in out.iter().enumerate() {
        if n > 0 && *v < tail {
            cut = n + 1;
            break;
        }
    }
    out.truncate(cut);
    out
}

/// Chebyshev propagation engine for one grid shape. Owns the transform plans
/// and scratch buffers.
pub struct QuantumEngine {
    grid: GridSpec,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
    xi: Vec<f64>,
    kin: Vec<f64>,
    pot: Vec<f64>,
    buf: Vec<Complex64>,
    fft_scratch: Vec<Complex64>,
    w_prev: Vec<Complex64>,
    w_cur: Vec<Complex64>,
    w_next: Vec<Complex64>,
    accum: Vec<Complex64>,
    /// Chebyshev truncation tolerance (coefficients below this are dropped).
    pub tol: f64,
}

impl QuantumEngine {
    pub fn new(grid: GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft(grid.n, FftDirection::Forward);
        let ifft = planner.plan_fft(grid.n, FftDirection::Inverse);
        let scratch = fft
            .get_inplace_scratch_len()
            .max(ifft.get_inplace_scratch_len());
        let n = grid.n;
        Self {
            grid,
            fft,
            ifft,
            k: (0..n).map(|m| grid.wavenumber(m)).collect(),
            xi: (0..n).map(|j| grid.xi(j)).collect(),
            kin: vec![0.0; n],
            pot: vec![0.0; n],
            buf: vec![Complex64::default(); n],
            fft_scratch: vec![Complex64::default(); scratch],
            w_prev: vec![Complex64::default(); n],
            w_cur: vec![Complex64::default(); n],
            w_next: vec![Complex64::default(); n],
            accum: vec![Complex64::default(); n],
            tol: 1e-12,
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    fn check_grid(&self, wf: &MovingWavefunction) {
        assert_eq!(wf.grid.n, self.grid.n, "wavefunction grid mismatch");
        assert!(
            (wf.grid.width - self.grid.width).abs() <= 1e-12 * self.grid.width,
            "wavefunction window mismatch"
        );
    }

    fn forward(&mut self) {
        self.fft
            .process_with_scratch(&mut self.buf, &mut self.fft_scratch);
    }

    fn inverse(&mut self) {
        self.ifft
            .process_with_scratch(&mut self.buf, &mut self.fft_scratch);
    }

    /// Fill the kinetic and potential arrays for the wavefunction's frame.
    fn load_operators(&mut self, model: &PotentialModel, wf: &MovingWavefunction, u: &[f64; 2]) {
        let kbar = wf.p_cl / HBAR;
        let half_inv_mass = 0.5 / model.mass;
        for m in 0..self.grid.n {
            let q = HBAR * (self.k[m] + kbar);
            self.kin[m] = q * q * half_inv_mass;
        }
        for j in 0..self.grid.n {
            self.pot[j] = model.eval_unchecked(u, wf.x_cl + self.xi[j]).0;
        }
    }

    /// dst = (H src - e_mid src)/half with H given by the loaded arrays;
    /// src/dst select among the recurrence buffers.
    fn apply_scaled(&mut self, src_is_cur: bool, e_mid: f64, half: f64, dst_is_next: bool) {
        let n = self.grid.n;
        if src_is_cur {
            self.buf.copy_from_slice(&self.w_cur);
        } else {
            self.buf.copy_from_slice(&self.w_prev);
        }
        self.forward();
        for m in 0..n {
            self.buf[m] *= self.kin[m];
        }
        self.inverse();
        let scale = 1.0 / n as f64;
        let inv_half = 1.0 / half;
        for j in 0..n {
            let src = if src_is_cur {
                self.w_cur[j]
            } else {
                self.w_prev[j]
            };
            let v = (self.buf[j] * scale + src * (self.pot[j] - e_mid)) * inv_half;
            if dst_is_next {
                self.w_next[j] = v;
            } else {
                self.w_cur[j] = v;
            }
        }
    }

    /// Spectral bounds of the loaded operators (Weyl: the discrete spectrum
    /// lies within [min T + min V, max T + max V]).
    fn spectral_interval(&self) -> Result<(f64, f64)> {
        let (mut kin_lo, mut kin_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in &self.kin {
            kin_lo = kin_lo.min(v);
            kin_hi = kin_hi.max(v);
        }
        let (mut pot_lo, mut pot_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in &self.pot {
            if !v.is_finite() {
                return Err(ShuttleError::Divergence(
                    "non-finite potential on the window".into(),
                ));
            }
            pot_lo = pot_lo.min(v);
            pot_hi = pot_hi.max(v);
        }
        Ok((kin_lo + pot_lo, kin_hi + pot_hi))
    }

    /// Apply exp(-i H dt / hbar) to `psi` (dt may be negative for backward
    /// propagation). Operators must be loaded.
    fn evolve_loaded(&mut self, psi: &mut [Complex64], dt: f64) -> Result<()> {
        let (e_min, e_max) = self.spectral_interval()?;
        let e_mid = 0.5 * (e_max + e_min);
        let half = (0.525 * (e_max - e_min)).max(1e-12);
        let alpha = half * dt / HBAR;
        if alpha.abs() > 5e5 {
            return Err(ShuttleError::Divergence(format!(
                "Chebyshev expansion order {:.2e} too large; reduce the step or the window",
                alpha.abs()
            )));
        }
        let js = bessel_j_sequence(alpha.abs(), self.tol);
        // exp(-i a x) = sum_n (2 - delta_n0) (-i sgn a)^n J_n(|a|) T_n(x)
        let rot = Complex64::new(0.0, -alpha.signum());
        let mut phase = Complex64::new(1.0, 0.0);
        self.w_cur.copy_from_slice(psi);
        for (a, &w) in self.accum.iter_mut().zip(self.w_cur.iter()) {
            *a = w * js[0];
        }
        if js.len() > 1 {
            self.w_prev.copy_from_slice(psi);
            self.apply_scaled(false, e_mid, half, false);
            // Now w_prev = T_0 psi, w_cur = T_1 psi.
            phase *= rot;
            let c1 = phase * (2.0 * js[1]);
            for (a, &w) in self.accum.iter_mut().zip(self.w_cur.iter()) {
                *a += w * c1;
            }
            let n = self.grid.n;
            for jn in js.iter().skip(2) {
                self.apply_scaled(true, e_mid, half, true);
                for j in 0..n {
                    self.w_next[j] = self.w_next[j] * 2.0 - self.w_prev[j];
                }
                phase *= rot;
                let c = phase * (2.0 * jn);
                std::mem::swap(&mut self.w_prev, &mut self.w_cur);
                std::mem::swap(&mut self.w_cur, &mut self.w_next);
                for (a, &w) in self.accum.iter_mut().zip(self.w_cur.iter()) {
                    *a += w * c;
                }
            }
        }
        let global = Complex64::from_polar(1.0, -e_mid * dt / HBAR);
        for (p, &a) in psi.iter_mut().zip(self.accum.iter()) {
            *p = a * global;
        }
        Ok(())
    }

    /// Re-center the window on the measured position and momentum means,
    /// preserving the lab wavefunction exactly (including its phase).
    pub fn recenter(&mut self, wf: &mut MovingWavefunction) -> Result<()> {
        self.check_grid(wf);
        let n = self.grid.n;
        let (norm2, mean_xi, sigma) = wf.position_moments();
        if !(norm2 > 0.0) || !norm2.is_finite() {
            return Err(ShuttleError::Divergence("wavefunction norm lost".into()));
        }
        let l = self.grid.width;
        if 12.0 * sigma > l {
            return Err(ShuttleError::GridTooSmall(format!(
                "wavepacket spread {sigma:.3e} um needs a window wider than {:.3e} um",
                12.0 * sigma
            )));
        }
        if mean_xi.abs() + 6.0 * sigma > 0.5 * l {
            return Err(ShuttleError::GridTooSmall(format!(
                "wavepacket drifted {mean_xi:.3e} um off-center within one step; \
                 widen the window or refine the time grid"
            )));
        }
        self.buf.copy_from_slice(&wf.psi);
        self.forward();
        let mut wk = 0.0;
        let mut mk = 0.0;
        for m in 0..n {
            let p = self.buf[m].norm_sqr();
            wk += p;
            mk += p * self.k[m];
        }
        let mean_k = mk / wk;
        // Translate the envelope by mean_xi, shift its momentum content by
        // mean_k, and restore the lab phase picked up by the frame move.
        for m in 0..n {
            self.buf[m] *= Complex64::from_polar(1.0, self.k[m] * mean_xi);
        }
        self.inverse();
        let kbar_old = wf.p_cl / HBAR;
        let global = Complex64::from_polar(1.0, kbar_old * mean_xi);
        let scale = 1.0 / n as f64;
        for j in 0..n {
            let ph = Complex64::from_polar(1.0, -mean_k * self.xi[j]);
            wf.psi[j] = self.buf[j] * scale * ph * global;
        }
        wf.x_cl += mean_xi;
        wf.p_cl += HBAR * mean_k;
        Ok(())
    }

    /// One full propagation step: evolve under the voltages (held fixed over
    /// the step), then re-center the window.
    pub fn step(
        &mut self,
        model: &PotentialModel,
        wf: &mut MovingWavefunction,
        voltages: [f64; 2],
        dt: f64,
    ) -> Result<()> {
        self.check_grid(wf);
        let norm_before = wf.norm_sq();
        self.load_operators(model, wf, &voltages);
        self.evolve_loaded(&mut wf.psi, dt)?;
        let drift = (wf.norm_sq() / norm_before - 1.0).abs();
        if drift > 1e-8 {
            return Err(ShuttleError::NormDrift { drift });
        }
        self.recenter(wf)?;
        wf.t += dt;
        Ok(())
    }

    /// One imaginary-time step exp(-H dtau / hbar) followed by
    /// renormalization; used for ground-state relaxation. No re-centering.
    fn step_imaginary(
        &mut self,
        model: &PotentialModel,
        wf: &mut MovingWavefunction,
        voltages: &[f64; 2],
        dtau: f64,
    ) -> Result<()> {
        self.check_grid(wf);
        self.load_operators(model, wf, voltages);
        let (e_min, e_max) = self.spectral_interval()?;
        let e_mid = 0.5 * (e_max + e_min);
        let half = (0.525 * (e_max - e_min)).max(1e-12);
        let beta = half * dtau / HBAR;
        // exp(-b x) = I_0(b) [1 + 2 sum_n (-1)^n (I_n/I_0) T_n(x)]; the
        // overall scale is irrelevant under renormalization.
        let ratios = bessel_i_ratios(beta, self.tol);
        self.w_cur.copy_from_slice(&wf.psi);
        for (a, &w) in self.accum.iter_mut().zip(self.w_cur.iter()) {
            *a = w * ratios[0];
        }
        if ratios.len() > 1 {
            self.w_prev.copy_from_slice(&wf.psi);
            self.apply_scaled(false, e_mid, half, false);
            let c1 = -2.0 * ratios[1];
            for (a, &w) in self.accum.iter_mut().zip(self.w_cur.iter()) {
                *a += w * c1;
            }
            let n = self.grid.n;
            let mut sign = 1.0;
            for rn in ratios.iter().skip(2) {
                self.apply_scaled(true, e_mid, half, true);
                for j in 0..n {
                    self.w_next[j] = self.w_next[j] * 2.0 - self.w_prev[j];
                }
                let c = sign * 2.0 * rn;
                sign = -sign;
                std::mem::swap(&mut self.w_prev, &mut self.w_cur);
                std::mem::swap(&mut self.w_cur, &mut self.w_next);
                for (a, &w) in self.accum.iter_mut().zip(self.w_cur.iter()) {
                    *a += w * c;
                }
            }
        }
        wf.psi.copy_from_slice(&self.accum);
        wf.normalize();
        let (_, _, sigma) = wf.position_moments();
        if 12.0 * sigma > self.grid.width {
            return Err(ShuttleError::GridTooSmall(format!(
                "relaxed wavepacket spread {sigma:.3e} um exceeds the window"
            )));
        }
        Ok(())
    }

    /// Lab-frame momentum mean and spread.
    pub fn momentum_moments(&mut self, wf: &MovingWavefunction) -> (f64, f64) {
        self.check_grid(wf);
        self.buf.copy_from_slice(&wf.psi);
        self.forward();
        let (mut w, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for m in 0..self.grid.n {
            let p = self.buf[m].norm_sqr();
            let k = self.k[m];
            w += p;
            m1 += p * k;
            m2 += p * k * k;
        }
        let mean_k = m1 / w;
        let var = (m2 / w - mean_k * mean_k).max(0.0);
        (wf.p_cl + HBAR * mean_k, HBAR * var.sqrt())
    }

    /// Total energy expectation under the given voltages.
    pub fn energy(
        &mut self,
        model: &PotentialModel,
        wf: &MovingWavefunction,
        voltages: &[f64; 2],
    ) -> f64 {
        self.check_grid(wf);
        self.load_operators(model, wf, voltages);
        self.buf.copy_from_slice(&wf.psi);
        self.forward();
        let (mut wk, mut t_sum) = (0.0, 0.0);
        for m in 0..self.grid.n {
            let p = self.buf[m].norm_sqr();
            wk += p;
            t_sum += p * self.kin[m];
        }
        let (mut wx, mut v_sum) = (0.0, 0.0);
        for j in 0..self.grid.n {
            let p = wf.psi[j].norm_sqr();
            wx += p;
            v_sum += p * self.pot[j];
        }
        t_sum / wk + v_sum / wx
    }

    /// Full observable set; phonons are referenced to the supplied well
    /// bottom `v_ref` and trap frequency.
    pub fn observe(
        &mut self,
        model: &PotentialModel,
        wf: &MovingWavefunction,
        voltages: &[f64; 2],
        freq_mhz: f64,
        v_ref: f64,
    ) -> ObservableSet {
        let (_, mean_xi, dx) = wf.position_moments();
        let (p_mean, dp) = self.momentum_moments(wf);
        let energy = self.energy(model, wf, voltages);
        let quantum = HBAR * angular(freq_mhz);
        ObservableSet {
            t: wf.t,
            x_mean: wf.x_cl + mean_xi,
            p_mean,
            dx,
            dp,
            uncert_hbar: dx * dp / HBAR,
            energy,
            phonons: (energy - v_ref - 0.5 * quantum) / quantum,
        }
    }

    /// Express `src` on `frame`'s window, folding in all representation
    /// phases so that `<frame|W|src> = sum_j conj(frame.psi[j]) W(x_j) out[j] dx`.
    /// Returns the samples and whether the windows were disjoint.
    pub fn envelope_in_frame(
        &mut self,
        src: &MovingWavefunction,
        frame: &MovingWavefunction,
    ) -> (Vec<Complex64>, bool) {
        self.check_grid(src);
        self.check_grid(frame);
        let n = self.grid.n;
        let l = self.grid.width;
        let shift = frame.x_cl - src.x_cl;
        if shift.abs() >= l {
            return (vec![Complex64::default(); n], true);
        }
        // Band-limited translation: psi_src evaluated at xi + shift.
        self.buf.copy_from_slice(&src.psi);
        self.forward();
        for m in 0..n {
            self.buf[m] *= Complex64::from_polar(1.0, self.k[m] * shift);
        }
        self.inverse();
        let scale = 1.0 / n as f64;
        let kbar_src = src.p_cl / HBAR;
        let kbar_frame = frame.p_cl / HBAR;
        let mut out = vec![Complex64::default(); n];
        for j in 0..n {
            let xi_f = self.xi[j];
            let xi_s = xi_f + shift;
            // Mask samples that wrapped around the periodic source window.
            if xi_s.abs() > 0.5 * l {
                continue;
            }
            let phase = Complex64::from_polar(1.0, kbar_src * xi_s - kbar_frame * xi_f);
            out[j] = self.buf[j] * scale * phase;
        }
        (out, false)
    }

    /// Lab-frame overlap `<a|b>`, with a flag for disjoint windows.
    pub fn overlap(&mut self, a: &MovingWavefunction, b: &MovingWavefunction) -> (Complex64, bool) {
        let (b_on_a, disjoint) = self.envelope_in_frame(b, a);
        if disjoint {
            return (Complex64::default(), true);
        }
        let dx = self.grid.dx();
        let mut s = Complex64::default();
        for (ca, cb) in a.psi.iter().zip(&b_on_a) {
            s += ca.conj() * cb;
        }
        (s * dx, false)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FidelityResult {
    pub value: f64,
    /// True when the two windows share no support; the overlap is then zero
    /// by construction.
    pub disjoint: bool,
}

/// Squared overlap |<a|b>|^2 of two lab-frame states on matching grids,
/// normalized by both state norms so that slow norm decay from propagator
/// truncation does not register as infidelity.
pub fn fidelity(a: &MovingWavefunction, b: &MovingWavefunction) -> FidelityResult {
    let mut engine = QuantumEngine::new(a.grid);
    let (ov, disjoint) = engine.overlap(a, b);
    FidelityResult {
        value: ov.norm_sqr() / (a.norm_sq() * b.norm_sq()),
        disjoint,
    }
}

/// Locate a potential minimum near `x0` by Newton iteration on V'. Returns
/// (position, depth, curvature).
pub fn well_minimum(
    model: &PotentialModel,
    voltages: &[f64; 2],
    x0: f64,
) -> Result<(f64, f64, f64)> {
    let mut x = x0;
    for _ in 0..80 {
        let (_, dv, ddv) = model.eval_unchecked(voltages, x);
        if ddv.abs() < 1e-300 {
            break;
        }
        let step = dv / ddv;
        x -= step;
        if !x.is_finite() {
            break;
        }
        if step.abs() < 1e-13 * x.abs().max(1.0) {
            let (v, _, ddv) = model.eval_unchecked(voltages, x);
            if ddv > 0.0 {
                return Ok((x, v, ddv));
            }
            break;
        }
    }
    Err(ShuttleError::Domain(format!(
        "no potential minimum found near x = {x0} um"
    )))
}

/// Ground state of the local well near `center`: harmonic-approximation
/// Gaussian refined by imaginary-time relaxation until the energy settles to
/// 1e-12.
pub fn ground_state(
    model: &PotentialModel,
    voltages: &[f64; 2],
    center: f64,
    grid: GridSpec,
) -> Result<MovingWavefunction> {
    let (x_min, _, ddv) = well_minimum(model, voltages, center)?;
    let omega_loc = (ddv / model.mass).sqrt();
    let w = (HBAR / (model.mass * omega_loc)).sqrt();
    let mut wf = MovingWavefunction {
        grid,
        psi: (0..grid.n)
            .map(|j| {
                let xi = grid.xi(j);
                Complex64::new((-0.5 * xi * xi / (w * w)).exp(), 0.0)
            })
            .collect(),
        x_cl: x_min,
        p_cl: 0.0,
        t: 0.0,
    };
    wf.normalize();
    let mut engine = QuantumEngine::new(grid);
    let dtau = 1.0 / omega_loc;
    let mut e_prev = engine.energy(model, &wf, voltages);
    for _ in 0..500 {
        engine.step_imaginary(model, &mut wf, voltages, dtau)?;
        let e = engine.energy(model, &wf, voltages);
        if (e - e_prev).abs() < 1e-12 {
            engine.recenter(&mut wf)?;
            wf.t = 0.0;
            return Ok(wf);
        }
        e_prev = e;
    }
    Err(ShuttleError::Divergence(
        "imaginary-time relaxation did not settle within 500 steps".into(),
    ))
}

#[derive(Clone, Copy, Debug)]
pub struct PropagationOptions {
    /// Re-center the window after every step (disable only for static-grid
    /// reference runs).
    pub recenter: bool,
    /// Keep the full state history (observables are always kept).
    pub store_states: bool,
    /// Chebyshev truncation tolerance.
    pub tol: f64,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            recenter: true,
            store_states: false,
            tol: 1e-12,
        }
    }
}

#[derive(Debug)]
pub struct QuantumPropagation {
    /// One state per ramp sample (empty unless requested).
    pub states: Vec<MovingWavefunction>,
    pub observables: Vec<ObservableSet>,
    pub final_state: MovingWavefunction,
}

impl QuantumPropagation {
    pub fn final_phonons(&self) -> f64 {
        self.observables.last().expect("nonempty series").phonons
    }
}

/// Propagate `psi0` under the ramp, one step per ramp interval with voltages
/// held at the interval midpoint. Phonon numbers are referenced to the well
/// the terminal voltages form near the destination electrode.
pub fn propagate_quantum(
    model: &PotentialModel,
    ramp: &VoltageRamp,
    psi0: &MovingWavefunction,
    freq_mhz: f64,
) -> Result<QuantumPropagation> {
    propagate_quantum_with(model, ramp, psi0, freq_mhz, &PropagationOptions::default())
}

pub fn propagate_quantum_with(
    model: &PotentialModel,
    ramp: &VoltageRamp,
    psi0: &MovingWavefunction,
    freq_mhz: f64,
    opts: &PropagationOptions,
) -> Result<QuantumPropagation> {
    let n = ramp.n_samples();
    let u_final = *ramp.values.last().expect("nonempty ramp");
    let dest = model.electrodes.last().expect("nonempty model").center;
    let (_, v_ref, _) = well_minimum(model, &u_final, dest)?;
    let mut engine = QuantumEngine::new(psi0.grid);
    engine.tol = opts.tol;
    let mut wf = psi0.clone();
    let mut states = Vec::new();
    let mut observables = Vec::with_capacity(n);
    observables.push(engine.observe(model, &wf, &ramp.values[0], freq_mhz, v_ref));
    if opts.store_states {
        states.push(wf.clone());
    }
    for kstep in 0..n - 1 {
        let t0 = ramp.time(kstep);
        let t1 = ramp.time(kstep + 1);
        let dt = t1 - t0;
        let u_mid = ramp.lerp(0.5 * (t0 + t1));
        let norm_before = wf.norm_sq();
        engine.load_operators(model, &wf, &u_mid);
        engine.evolve_loaded(&mut wf.psi, dt)?;
        let drift = (wf.norm_sq() / norm_before - 1.0).abs();
        if drift > 1e-8 {
            return Err(ShuttleError::NormDrift { drift });
        }
        if opts.recenter {
            engine.recenter(&mut wf)?;
        } else {
            let (_, _, sigma) = wf.position_moments();
            if 12.0 * sigma > wf.grid.width {
                return Err(ShuttleError::GridTooSmall(format!(
                    "wavepacket spread {sigma:.3e} um exceeds the static window"
                )));
            }
        }
        wf.t = t1;
        observables.push(engine.observe(model, &wf, &ramp.values[kstep + 1], freq_mhz, v_ref));
        if opts.store_states {
            states.push(wf.clone());
        }
    }
    Ok(QuantumPropagation {
        states,
        observables,
        final_state: wf,
    })
}

/// Excitation in quanta above the ground state of the well formed by
/// `voltages` near `center`.
pub fn excitation_phonons(
    model: &PotentialModel,
    wf: &MovingWavefunction,
    voltages: &[f64; 2],
    freq_mhz: f64,
    center: f64,
) -> Result<f64> {
    let (_, v_ref, _) = well_minimum(model, voltages, center)?;
    let mut engine = QuantumEngine::new(wf.grid);
    let energy = engine.energy(model, wf, voltages);
    let quantum = HBAR * angular(freq_mhz);
    Ok((energy - v_ref - 0.5 * quantum) / quantum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::TRAP_FREQ_MHZ;
    use crate::units::MASS_CA40;

    fn series_j0(x: f64) -> f64 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for m in 1..40 {
            term *= -(x * x) / (4.0 * (m * m) as f64);
            sum += term;
        }
        sum
    }

    #[test]
    fn bessel_j_against_series_and_trig_identities() {
        for &x in &[0.3, 1.0, 2.5] {
            let js = bessel_j_sequence(x, 1e-18);
            assert!((js[0] - series_j0(x)).abs() < 1e-14, "J0({x})");
        }
        // cos x = J0 - 2J2 + 2J4 - ..., sin x = 2J1 - 2J3 + ...
        for &x in &[1.3, 17.7, 120.4] {
            let js = bessel_j_sequence(x, 1e-18);
            let mut c = js[0];
            let mut s = 0.0;
            let mut sign = -1.0;
            for n in (2..js.len()).step_by(2) {
                c += 2.0 * sign * js[n];
                sign = -sign;
            }
            sign = 1.0;
            for n in (1..js.len()).step_by(2) {
                s += 2.0 * sign * js[n];
                sign = -sign;
            }
            assert!((c - x.cos()).abs() < 1e-12, "cos({x})");
            assert!((s - x.sin()).abs() < 1e-12, "sin({x})");
        }
    }

    fn series_i(n: usize, x: f64) -> f64 {
        // I_n(x) = sum_m (x/2)^{n+2m} / (m! (n+m)!), all terms positive.
        let h = 0.5 * x;
        let mut term = (1..=n).fold(1.0, |t, k| t * h / k as f64);
        let mut sum = term;
        for m in 1..400 {
            term *= h * h / (m as f64 * (n + m) as f64);
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
        }
        sum
    }

    #[test]
    fn bessel_i_ratios_match_power_series() {
        for &beta in &[0.7, 5.0, 40.0, 182.0] {
            let r = bessel_i_ratios(beta, 1e-18);
            let i0 = series_i(0, beta);
            for n in 1..=10.min(r.len() - 1) {
                let want = series_i(n, beta) / i0;
                assert!(
                    (r[n] / want - 1.0).abs() < 1e-12,
                    "beta = {beta}, n = {n}: {} vs {want}",
                    r[n]
                );
            }
        }
        // Small-argument sanity: e^b = 1 + 2 sum_n r_n scaled by I_0.
        let beta = 2.5_f64;
        let r = bessel_i_ratios(beta, 1e-18);
        let total = 1.0 + 2.0 * r.iter().skip(1).sum::<f64>();
        assert!((total * series_i(0, beta) / beta.exp() - 1.0).abs() < 1e-12);
    }

    fn harmonic_setup() -> (PotentialModel, [f64; 2], f64, f64) {
        let model = PotentialModel::standard_harmonic();
        let bias = model.calibrate_bias(0, TRAP_FREQ_MHZ).unwrap();
        let omega = angular(TRAP_FREQ_MHZ);
        let w = ground_width(MASS_CA40, omega);
        (model, [bias, 0.0], omega, w)
    }

    fn analytic_gaussian(grid: GridSpec, w: f64, x_cl: f64) -> MovingWavefunction {
        let mut wf = MovingWavefunction {
            grid,
            psi: (0..grid.n)
                .map(|j| {
                    let xi = grid.xi(j);
                    Complex64::new((-0.5 * xi * xi / (w * w)).exp(), 0.0)
                })
                .collect(),
            x_cl,
            p_cl: 0.0,
            t: 0.0,
        };
        wf.normalize();
        wf
    }

    #[test]
    fn harmonic_ground_state_is_exact() {
        let (model, voltages, omega, w) = harmonic_setup();
        let grid = GridSpec::new(128, 16.0 * w).unwrap();
        let wf = ground_state(&model, &voltages, 0.3, grid).unwrap();
        assert!(wf.x_cl.abs() < 1e-9, "center {}", wf.x_cl);
        let mut engine = QuantumEngine::new(grid);
        let e = engine.energy(&model, &wf, &voltages);
        let e0 = 0.5 * HBAR * omega;
        assert!((e / e0 - 1.0).abs() < 1e-10, "E = {e}, hbar omega/2 = {e0}");
        // The discrete Gaussian is already the eigenstate: relaxation must
        // leave it essentially untouched.
        let reference = analytic_gaussian(grid, w, 0.0);
        for (j, (c, r)) in wf.psi.iter().zip(reference.psi.iter()).enumerate() {
            assert!(
                (c.re - r.re).abs() < 1e-8 && c.im.abs() < 1e-10,
                "sample {j}: {c} vs {r}"
            );
        }
    }

    #[test]
    fn surrogate_ground_state_energy_near_half_quantum() {
        let model = PotentialModel::standard_surrogate();
        let bias = model.calibrate_bias(0, TRAP_FREQ_MHZ).unwrap();
        let grid = GridSpec::for_trap(MASS_CA40, TRAP_FREQ_MHZ, 128, 16.0).unwrap();
        let wf = ground_state(&model, &[bias, 0.0], 0.0, grid).unwrap();
        let mut engine = QuantumEngine::new(grid);
        let e = engine.energy(&model, &wf, &[bias, 0.0]);
        let floor = model.eval_unchecked(&[bias, 0.0], wf.x_cl).0;
        let e0 = 0.5 * HBAR * angular(TRAP_FREQ_MHZ);
        assert!(
            ((e - floor) / e0 - 1.0).abs() < 0.01,
            "(E - V_min)/E0 = {}",
            (e - floor) / e0
        );
    }

    #[test]
    fn ground_state_needs_a_well() {
        let model = PotentialModel::standard_surrogate();
        // Positive voltage makes a hill, not a well.
        let r = ground_state(
            &model,
            &[6.0, 0.0],
            0.0,
            GridSpec::for_trap(MASS_CA40, TRAP_FREQ_MHZ, 64, 16.0).unwrap(),
        );
        assert!(matches!(r, Err(ShuttleError::Domain(_))), "{r:?}");
    }

    #[test]
    fn too_small_window_is_rejected() {
        let (model, voltages, _, w) = harmonic_setup();
        let grid = GridSpec::new(32, 4.0 * w).unwrap();
        let r = ground_state(&model, &voltages, 0.0, grid);
        assert!(matches!(r, Err(ShuttleError::GridTooSmall(_))), "{r:?}");
    }

    fn static_ramp(bias: f64, duration: f64, n: usize) -> VoltageRamp {
        VoltageRamp::new(duration, vec![[bias, 0.0]; n]).unwrap()
    }

    #[test]
    fn stationary_state_autocorrelation() {
        let (model, voltages, omega, w) = harmonic_setup();
        let grid = GridSpec::new(128, 16.0 * w).unwrap();
        let wf0 = ground_state(&model, &voltages, 0.0, grid).unwrap();
        let period = 2.0 * std::f64::consts::PI / omega;
        let ramp = static_ramp(voltages[0], 3.0 * period, 1500);
        let run = propagate_quantum(&model, &ramp, &wf0, TRAP_FREQ_MHZ).unwrap();
        let f = fidelity(&run.final_state, &wf0);
        assert!(!f.disjoint);
        assert!(f.value > 1.0 - 1e-9, "autocorrelation {}", f.value);
        assert!((run.final_state.norm_sq() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn coherent_state_tracks_the_classical_oscillation() {
        let (model, voltages, omega, w) = harmonic_setup();
        let grid = GridSpec::new(128, 16.0 * w).unwrap();
        let mut wf0 = ground_state(&model, &voltages, 0.0, grid).unwrap();
        let delta = 0.5 * w;
        wf0.x_cl += delta;
        let period = 2.0 * std::f64::consts::PI / omega;
        let ramp = static_ramp(voltages[0], 2.0 * period, 2000);
        let run = propagate_quantum(&model, &ramp, &wf0, TRAP_FREQ_MHZ).unwrap();
        let dx0 = run.observables[0].dx;
        for o in &run.observables {
            let want = delta * (omega * o.t).cos();
            assert!(
                (o.x_mean - want).abs() < 1e-6 * delta,
                "t = {}: x = {}, want {}",
                o.t,
                o.x_mean,
                want
            );
            assert!((o.dx - dx0).abs() < 1e-8, "width drift at t = {}", o.t);
            assert!(o.uncert_hbar >= 0.5 - 1e-12);
            assert!(
                (o.uncert_hbar - 0.5).abs() < 1e-9,
                "uncertainty {}",
                o.uncert_hbar
            );
        }
        assert!((run.final_state.norm_sq() - 1.0).abs() < 1e-10);
        // Excitation above the well equals the classical displacement energy.
        let phonons = run.final_phonons();
        let want = 0.5 * model.mass * omega * omega * delta * delta / (HBAR * omega);
        assert!((phonons - want).abs() < 1e-6, "phonons {phonons} want {want}");
    }

    #[test]
    fn ehrenfest_velocity_matches_momentum() {
        let (model, voltages, omega, w) = harmonic_setup();
        let grid = GridSpec::new(128, 16.0 * w).unwrap();
        let mut wf0 = ground_state(&model, &voltages, 0.0, grid).unwrap();
        wf0.x_cl += 0.5 * w;
        let period = 2.0 * std::f64::consts::PI / omega;
        let ramp = static_ramp(voltages[0], period, 2000);
        let run = propagate_quantum(&model, &ramp, &wf0, TRAP_FREQ_MHZ).unwrap();
        let obs = &run.observables;
        let h = obs[1].t - obs[0].t;
        let v_scale = obs.iter().map(|o| o.p_mean.abs()).fold(0.0, f64::max) / model.mass;
        for i in (2..obs.len() - 2).step_by(17) {
            let d = (-obs[i + 2].x_mean + 8.0 * obs[i + 1].x_mean - 8.0 * obs[i - 1].x_mean
                + obs[i - 2].x_mean)
                / (12.0 * h);
            let v = obs[i].p_mean / model.mass;
            assert!(
                (d - v).abs() <= 1e-6 * v_scale,
                "step {i}: d<x>/dt = {d}, <p>/m = {v}"
            );
        }
    }

    #[test]
    fn moving_and_static_grids_agree() {
        let (model, voltages, omega, w) = harmonic_setup();
        let delta = 0.5 * w;
        let period = 2.0 * std::f64::consts::PI / omega;
        let ramp = static_ramp(voltages[0], period, 1200);

        let moving_grid = GridSpec::new(128, 16.0 * w).unwrap();
        let mut m0 = ground_state(&model, &voltages, 0.0, moving_grid).unwrap();
        m0.x_cl += delta;
        let run_m = propagate_quantum(&model, &ramp, &m0, TRAP_FREQ_MHZ).unwrap();
        let tgt_m = ground_state(&model, &voltages, 0.0, moving_grid).unwrap();
        let f_m = fidelity(&run_m.final_state, &tgt_m).value;

        // Static reference: a window wide enough for the whole motion, never
        // re-centered. The harmonic eigenstate is known analytically.
        let static_grid = GridSpec::new(1024, 64.0 * w).unwrap();
        let s0 = analytic_gaussian(static_grid, w, delta);
        let opts = PropagationOptions {
            recenter: false,
            ..Default::default()
        };
        let run_s = propagate_quantum_with(&model, &ramp, &s0, TRAP_FREQ_MHZ, &opts).unwrap();
        let tgt_s = analytic_gaussian(static_grid, w, 0.0);
        let f_s = fidelity(&run_s.final_state, &tgt_s).value;

        assert!((f_m - f_s).abs() < 1e-8, "moving {f_m} vs static {f_s}");
        let om = run_m.observables.last().unwrap();
        let os = run_s.observables.last().unwrap();
        assert!((om.x_mean - os.x_mean).abs() < 1e-7);
        assert!((om.phonons - os.phonons).abs() < 1e-7);
    }

    #[test]
    fn tightened_truncation_changes_nothing() {
        let (model, voltages, omega, w) = harmonic_setup();
        let grid = GridSpec::new(128, 16.0 * w).unwrap();
        let mut wf0 = ground_state(&model, &voltages, 0.0, grid).unwrap();
        wf0.x_cl += 0.5 * w;
        let period = 2.0 * std::f64::consts::PI / omega;
        let ramp = static_ramp(voltages[0], period, 600);
        let tgt = ground_state(&model, &voltages, 0.0, grid).unwrap();
        let mut f = [0.0; 2];
        for (i, tol) in [1e-12, 1e-14].into_iter().enumerate() {
            let opts = PropagationOptions {
                tol,
                ..Default::default()
            };
            let run = propagate_quantum_with(&model, &ramp, &wf0, TRAP_FREQ_MHZ, &opts).unwrap();
            f[i] = fidelity(&run.final_state, &tgt).value;
        }
        assert!((f[0] - f[1]).abs() < 1e-10, "{} vs {}", f[0], f[1]);
    }

    #[test]
    fn loose_truncation_reports_norm_drift() {
        let (model, voltages, _, w) = harmonic_setup();
        let grid = GridSpec::new(64, 16.0 * w).unwrap();
        let mut wf0 = ground_state(&model, &voltages, 0.0, grid).unwrap();
        wf0.x_cl += 2.0 * w;
        let ramp = static_ramp(voltages[0], 1.0, 40);
        let opts = PropagationOptions {
            tol: 0.2,
            ..Default::default()
        };
        let r = propagate_quantum_with(&model, &ramp, &wf0, TRAP_FREQ_MHZ, &opts);
        assert!(
            matches!(r, Err(ShuttleError::NormDrift { .. })),
            "expected norm drift, got {r:?}"
        );
    }

    #[test]
    fn fidelity_basics_and_excited_state() {
        let (model, voltages, _, w) = harmonic_setup();
        let grid = GridSpec::new(128, 16.0 * w).unwrap();
        let gs = ground_state(&model, &voltages, 0.0, grid).unwrap();
        assert!((fidelity(&gs, &gs).value - 1.0).abs() < 1e-12);

        // First excited state: odd Gaussian, exactly one quantum up.
        let mut e1 = gs.clone();
        for (j, c) in e1.psi.iter_mut().enumerate() {
            *c *= grid.xi(j);
        }
        e1.normalize();
        assert!(fidelity(&gs, &e1).value < 1e-12);
        let phonons = excitation_phonons(&model, &e1, &voltages, TRAP_FREQ_MHZ, 0.0).unwrap();
        assert!((phonons - 1.0).abs() < 1e-9, "excited phonons {phonons}");
    }

    #[test]
    fn fidelity_across_shifted_frames() {
        let (model, voltages, _, w) = harmonic_setup();
        let grid = GridSpec::new(128, 16.0 * w).unwrap();
        let gs = ground_state(&model, &voltages, 0.0, grid).unwrap();
        // The same physical state written on a window displaced by a few
        // samples, with the envelope re-evaluated analytically.
        let shift = 5.0 * grid.dx();
        let mut other = gs.clone();
        other.x_cl += shift;
        for (j, c) in other.psi.iter_mut().enumerate() {
            let xi = grid.xi(j) + shift;
            *c = Complex64::new((-0.5 * xi * xi / (w * w)).exp(), 0.0);
        }
        other.normalize();
        let f = fidelity(&gs, &other);
        assert!(!f.disjoint);
        assert!((f.value - 1.0).abs() < 1e-10, "fidelity {}", f.value);

        // Far-apart windows are flagged disjoint.
        let mut far = gs.clone();
        far.x_cl += 100.0 * w;
        let ff = fidelity(&gs, &far);
        assert!(ff.disjoint && ff.value == 0.0);
    }

    #[test]
    fn observables_csv_has_header_and_rows() {
        let (model, voltages, _, w) = harmonic_setup();
        let grid = GridSpec::new(64, 16.0 * w).unwrap();
        let gs = ground_state(&model, &voltages, 0.0, grid).unwrap();
        let ramp = static_ramp(voltages[0], 0.05, 6);
        let run = propagate_quantum(&model, &ramp, &gs, TRAP_FREQ_MHZ).unwrap();
        let mut buf = Vec::new();
        write_observables_csv(&run.observables, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), OBSERVABLE_CSV_HEADER);
        assert_eq!(lines.count(), run.observables.len());
    }

    #[test]
    fn grid_spec_rejects_bad_shapes() {
        assert!(GridSpec::new(48, 1.0).is_err());
        assert!(GridSpec::new(16, 1.0).is_err());
        assert!(GridSpec::new(64, 0.0).is_err());
        assert!(GridSpec::new(64, f64::NAN).is_err());
        let g = GridSpec::new(64, 3.2).unwrap();
        assert_eq!(g.dx(), 0.05);
        assert_eq!(g.xi(32), 0.0);
        assert_eq!(g.wavenumber(0), 0.0);
        assert!((g.wavenumber(1) - 2.0 * std::f64::consts::PI / 3.2).abs() < 1e-15);
        assert!(g.wavenumber(63) < 0.0);
    }
}
