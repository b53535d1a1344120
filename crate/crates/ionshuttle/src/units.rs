//! Internal unit system: lengths in micrometres, times in microseconds, masses
//! in atomic mass units, control voltages in volts.
//!
//! One um/us equals one m/s, so velocities read naturally. Energies come out
//! in u um^2/us^2. [`VOLT`] is the energy of one elementary charge across one
//! volt in those units, so electrode potentials enter as
//! `V(x, t) = VOLT * sum_i U_i(t) * phi_i(x)` with `phi_i` dimensionless.

/// Reduced Planck constant, u um^2 / us.
pub const HBAR: f64 = 1.054_571_817e-34 / 1.660_539_066_60e-27 * 1e6;

/// One elementary charge times one volt, u um^2 / us^2.
pub const VOLT: f64 = 1.602_176_634e-19 / 1.660_539_066_60e-27;

/// Mass of the reference ion (40Ca+), u.
pub const MASS_CA40: f64 = 40.0;

/// Angular frequency (rad/us) for a frequency given in MHz.
pub fn angular(freq_mhz: f64) -> f64 {
    2.0 * std::f64::consts::PI * freq_mhz
}

/// Gaussian width parameter sigma0 = sqrt(hbar / (m omega)) of a ground-state
/// wavepacket, um. This is the wavefunction's Gaussian parameter
/// (`psi ~ exp(-x^2 / (2 sigma0^2))`); the position uncertainty of the same
/// state is `sigma0 / sqrt(2)`.
pub fn ground_width(mass: f64, omega: f64) -> f64 {
    (HBAR / (mass * omega)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_match_si_conversions() {
        // hbar / (1 u) in m^2/s, then to um^2/us: 1 m^2/s = 1e6 um^2/us.
        assert!((HBAR - 6.350_779_9e-2).abs() < 1e-8);
        // e * 1 V / (1 u) in m^2/s^2 equals um^2/us^2 numerically.
        assert!((VOLT - 9.648_533_2e7).abs() < 1e2);
    }

    #[test]
    fn quantum_of_reference_trap() {
        let omega = angular(1.3);
        assert!((omega - 8.168_140_9).abs() < 1e-6);
        let quantum = HBAR * omega;
        assert!((quantum - 0.518_740_7).abs() < 1e-6);
    }

    #[test]
    fn ground_width_of_reference_trap() {
        let sigma0 = ground_width(MASS_CA40, angular(1.3));
        assert!((sigma0 - 1.394_2e-2).abs() < 1e-5);
        // Position uncertainty of the ground state is sigma0 / sqrt(2).
        let dx = sigma0 / 2f64.sqrt();
        assert!((dx - 9.858e-3).abs() < 2e-5);
    }
}
