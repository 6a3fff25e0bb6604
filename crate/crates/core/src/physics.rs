//! Optical pulse broadening and single-photon detector response.

use std::f64::consts::{LN_2, PI};

use rand_distr::SkewNormal;

use crate::error::{invalid, Result};
use crate::numeric::{simpson, std_normal_cdf, std_normal_pdf};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// `1 ps/(nm·km)` expressed in s/m².
pub const PS_PER_NM_KM: f64 = 1e-6;

/// Fiber link carrying a chirped Gaussian pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalLink {
    /// Carrier wavelength (m).
    pub wavelength: f64,
    /// Intensity FWHM of the emitted pulse (s).
    pub pulse_fwhm: f64,
    /// Quadratic temporal phase coefficient `phi(t) = chirp * t^2` (rad/s²).
    pub chirp: f64,
    /// Fiber dispersion coefficient D (s/m²).
    pub dispersion: f64,
    /// Fiber length (m).
    pub fiber_length: f64,
    /// Fiber attenuation (dB/km).
    pub attenuation_db_per_km: f64,
    /// Lumped extra loss, e.g. a variable attenuator (dB).
    pub extra_loss_db: f64,
}

impl Default for OpticalLink {
    /// 1550 nm gain-switched DFB pulse (77 ps, down-chirped) into back-to-back fiber.
    fn default() -> Self {
        OpticalLink {
            wavelength: 1550e-9,
            pulse_fwhm: 77e-12,
            chirp: -3.7e20,
            dispersion: 17.0 * PS_PER_NM_KM,
            fiber_length: 0.0,
            attenuation_db_per_km: 0.2,
            extra_loss_db: 0.0,
        }
    }
}

impl OpticalLink {
    pub fn with_fiber_km(mut self, km: f64) -> Self {
        self.fiber_length = km * 1e3;
        self
    }

    pub fn with_extra_loss_db(mut self, db: f64) -> Self {
        self.extra_loss_db = db;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pulse_fwhm > 0.0) {
            return Err(invalid("pulse_fwhm", "must be > 0"));
        }
        if !(self.fiber_length >= 0.0) {
            return Err(invalid("fiber_length", "must be >= 0"));
        }
        if !(self.attenuation_db_per_km >= 0.0) {
            return Err(invalid("attenuation", "must be >= 0"));
        }
        if !(self.wavelength > 0.0) {
            return Err(invalid("wavelength", "must be > 0"));
        }
        Ok(())
    }

    /// Field 1/e half-width `t_g = tau_FWHM / sqrt(2 ln 2)`.
    pub fn field_half_width(&self) -> f64 {
        self.pulse_fwhm / (2.0 * LN_2).sqrt()
    }

    /// Group-velocity dispersion `k'' = -lambda^2 D / (2 pi c)` (s²/m).
    pub fn gvd(&self) -> f64 {
        -self.wavelength * self.wavelength * self.dispersion / (2.0 * PI * SPEED_OF_LIGHT)
    }

    /// Total loss in dB.
    pub fn total_loss_db(&self) -> f64 {
        self.attenuation_db_per_km * self.fiber_length * 1e-3 + self.extra_loss_db
    }
}

/// Standard deviation of the photon arrival-time density after propagation, `t_g(z)/2`.
///
/// The chirp-dispersion product `xi * z` is evaluated directly, so `z = 0` needs no
/// special treatment beyond the explicit branch. The chirp term enters with the sign
/// that follows from propagating `cos(w0 t + chirp t^2)`: a down-chirp in anomalous
/// dispersion broadens monotonically.
pub fn pulse_sigma_at_distance(link: &OpticalLink) -> f64 {
    let tg = link.field_half_width();
    if link.fiber_length == 0.0 {
        return tg / 2.0;
    }
    let tg2 = tg * tg;
    let tg4 = tg2 * tg2;
    let b2t4 = link.chirp * link.chirp * tg4;
    let xi_z = (2.0 * link.gvd() * link.fiber_length * (1.0 + b2t4) + link.chirp * tg4) / tg2;
    let tgz2 = tg2 * (1.0 + xi_z * xi_z) / (1.0 + b2t4);
    tgz2.sqrt() / 2.0
}

/// Channel transmittance `10^(-loss_dB / 10)`.
pub fn channel_transmittance(link: &OpticalLink) -> f64 {
    10f64.powf(-link.total_loss_db() / 10.0)
}

/// Single-photon avalanche diode: skew-normal timing jitter plus counting parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpadModel {
    /// Skew-normal shape (dimensionless).
    pub skew_shape: f64,
    /// Skew-normal scale (s).
    pub skew_scale: f64,
    /// Detection efficiency.
    pub efficiency: f64,
    /// Non-paralyzable dead time (s).
    pub dead_time: f64,
    /// Dark count rate (1/s).
    pub dark_count_rate: f64,
}

impl Default for SpadModel {
    fn default() -> Self {
        SpadModel {
            skew_shape: 3.0,
            skew_scale: 150e-12,
            efficiency: 0.25,
            dead_time: 15e-6,
            dark_count_rate: 1800.0,
        }
    }
}

impl SpadModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.skew_scale > 0.0) {
            return Err(invalid("skew_scale", "must be > 0"));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(invalid("efficiency", "must be in (0, 1]"));
        }
        if !(self.dead_time >= 0.0) {
            return Err(invalid("dead_time", "must be >= 0"));
        }
        if !(self.dark_count_rate >= 0.0) {
            return Err(invalid("dark_count_rate", "must be >= 0"));
        }
        if !self.skew_shape.is_finite() {
            return Err(invalid("skew_shape", "must be finite"));
        }
        Ok(())
    }

    /// `delta = alpha / sqrt(1 + alpha^2)`.
    pub fn delta(&self) -> f64 {
        self.skew_shape / (1.0 + self.skew_shape * self.skew_shape).sqrt()
    }

    /// Location chosen so the kernel has zero mean.
    pub fn location(&self) -> f64 {
        -self.skew_scale * self.delta() * (2.0 / PI).sqrt()
    }

    /// Kernel standard deviation `omega * sqrt(1 - 2 delta^2 / pi)`.
    pub fn jitter_std(&self) -> f64 {
        let d = self.delta();
        self.skew_scale * (1.0 - 2.0 * d * d / PI).sqrt()
    }

    /// Interval outside which the kernel carries negligible mass (< 1e-15).
    pub fn support(&self) -> (f64, f64) {
        let loc = self.location();
        let w = self.skew_scale;
        (loc - 8.5 * w, loc + 8.5 * w)
    }

    /// Distribution object for sampling jitter values.
    pub fn jitter_distribution(&self) -> SkewNormal<f64> {
        SkewNormal::new(self.location(), self.skew_scale, self.skew_shape)
            .expect("validated skew-normal parameters")
    }
}

/// Zero-mean skew-normal timing kernel `k(t)`.
pub fn spad_kernel(spad: &SpadModel, t: f64) -> f64 {
    let z = (t - spad.location()) / spad.skew_scale;
    2.0 / spad.skew_scale * std_normal_pdf(z) * std_normal_cdf(spad.skew_shape * z)
}

/// Argument of the kernel's first Fourier coefficient at period `t_bin`.
///
/// This is the phase offset the skewed response adds to a circular mean; symmetric
/// kernels give exactly zero.
pub fn spad_phase_bias(spad: &SpadModel, t_bin: f64) -> f64 {
    if spad.skew_shape == 0.0 {
        return 0.0;
    }
    let (lo, hi) = spad.support();
    let n = (((hi - lo) / 0.25e-12).ceil() as usize).max(2000);
    let k = 2.0 * PI / t_bin;
    let re = simpson(|u| (k * u).cos() * spad_kernel(spad, u), lo, hi, n);
    let im = simpson(|u| (k * u).sin() * spad_kernel(spad, u), lo, hi, n);
    im.atan2(re)
}

/// Detection rates after dead-time correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveRates {
    /// Ideal rate of detections from Alice's photons, `f_A n eta_d eta_ch`.
    pub ideal_alice: f64,
    /// Effective rate of Alice-photon detections.
    pub alice: f64,
    /// Effective dark-count rate.
    pub dark: f64,
    /// Mean fraction of emitted pulses that end up detected, `alice / f_A`.
    pub detection_fraction: f64,
}

impl EffectiveRates {
    pub fn total(&self) -> f64 {
        self.alice + self.dark
    }
}

pub fn effective_rates(spad: &SpadModel, f_alice: f64, mean_photon: f64, eta_ch: f64) -> EffectiveRates {
    let ideal_alice = f_alice * mean_photon * spad.efficiency * eta_ch;
    let ideal_total = ideal_alice + spad.dark_count_rate;
    let denom = 1.0 + ideal_total * spad.dead_time;
    let alice = ideal_alice / denom;
    EffectiveRates {
        ideal_alice,
        alice,
        dark: spad.dark_count_rate / denom,
        detection_fraction: alice / f_alice,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::simpson;

    fn kernel_moments(spad: &SpadModel) -> (f64, f64, f64) {
        let (lo, hi) = spad.support();
        let n = 40_000;
        let m0 = simpson(|t| spad_kernel(spad, t), lo, hi, n);
        let m1 = simpson(|t| t * spad_kernel(spad, t), lo, hi, n);
        let m2 = simpson(|t| t * t * spad_kernel(spad, t), lo, hi, n);
        (m0, m1, m2)
    }

    #[test]
    fn sigma_without_propagation_or_chirp() {
        let link = OpticalLink { chirp: 0.0, ..OpticalLink::default() };
        let s = pulse_sigma_at_distance(&link);
        assert!((s - 77e-12 / (2.0 * (2.0 * LN_2).sqrt())).abs() < 1e-20);
        assert!((s * 1e12 - 32.7).abs() < 0.05);
    }

    #[test]
    fn sigma_is_continuous_at_origin() {
        let link = OpticalLink::default();
        let s0 = pulse_sigma_at_distance(&link);
        let s1 = pulse_sigma_at_distance(&link.with_fiber_km(1e-6));
        assert!((s0 - s1).abs() < 1e-18);
    }

    #[test]
    fn sigma_monotone_over_200_km() {
        let mut prev = 0.0;
        for i in 0..=200 {
            let s = pulse_sigma_at_distance(&OpticalLink::default().with_fiber_km(i as f64));
            assert!(s >= prev, "sigma decreased at {i} km");
            prev = s;
        }
    }

    #[test]
    fn transmittance_examples() {
        let l = OpticalLink::default();
        assert_eq!(channel_transmittance(&l), 1.0);
        let l = OpticalLink { attenuation_db_per_km: 0.719, ..l }.with_fiber_km(16.0);
        assert!((channel_transmittance(&l) - 0.0708).abs() < 2e-4);
        let l = OpticalLink::default().with_extra_loss_db(30.0);
        assert!((channel_transmittance(&l) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn symmetric_kernel_is_gaussian() {
        let spad = SpadModel { skew_shape: 0.0, ..SpadModel::default() };
        let k0 = spad_kernel(&spad, 0.0);
        assert!((k0 * spad.skew_scale * (2.0 * PI).sqrt() - 1.0).abs() < 1e-12);
        assert_eq!(spad_phase_bias(&spad, 1e-9), 0.0);
    }

    #[test]
    fn kernel_std_closed_form_matches_quadrature() {
        let spad = SpadModel::default();
        let (m0, m1, m2) = kernel_moments(&spad);
        let std = (m2 / m0 - (m1 / m0).powi(2)).sqrt();
        assert!((std / spad.jitter_std() - 1.0).abs() < 1e-9);
        assert!((spad.jitter_std() * 1e12 - 98.0).abs() < 0.1);
    }

    #[test]
    fn kernel_normalised_zero_mean_over_parameter_box() {
        for &alpha in &[-5.0, -2.0, 0.0, 0.5, 3.0, 5.0] {
            for &omega in &[5e-12, 50e-12, 150e-12, 1e-9] {
                let spad = SpadModel { skew_shape: alpha, skew_scale: omega, ..SpadModel::default() };
                let (m0, m1, _) = kernel_moments(&spad);
                assert!((m0 - 1.0).abs() < 1e-9, "norm {m0} for {alpha} {omega}");
                assert!(m1.abs() < 1e-15, "mean {m1} for {alpha} {omega}");
            }
        }
    }

    #[test]
    fn phase_bias_vanishes_for_narrow_kernel() {
        let spad = SpadModel { skew_scale: 1e-15, ..SpadModel::default() };
        assert!(spad_phase_bias(&spad, 1e-9).abs() < 1e-5);
    }

    #[test]
    fn rates_without_losses() {
        let spad = SpadModel { dark_count_rate: 0.0, dead_time: 0.0, ..SpadModel::default() };
        let r = effective_rates(&spad, 500e6, 0.2, 0.01);
        assert_eq!(r.alice, 500e6 * 0.2 * 0.25 * 0.01);
        assert_eq!(r.dark, 0.0);
    }

    #[test]
    fn rates_saturate_at_inverse_dead_time() {
        let spad = SpadModel::default();
        let r = effective_rates(&spad, 500e6, 1e4, 1.0);
        assert!((r.total() * spad.dead_time - 1.0).abs() < 1e-4);
        assert!(r.total() < 1.0 / spad.dead_time);
    }
}
