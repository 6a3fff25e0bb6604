//! Circular-mean clock synchronization.
//!
//! Histograms folded over `T_bin` are reduced to a complex phasor mean. Two consecutive
//! means give the signed drift, the first (or second) mean gives the TDC delay that
//! re-centres the early bin, and a Pearson correlation against Alice's known pattern
//! resolves the remaining whole-bin ambiguity.

mod controller;
mod link;

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::numeric::{rem_floor, wrap_angle};
use crate::physics::{effective_rates, SpadModel};
use crate::sim::{Histogram, Pattern};

pub use controller::{
    converged_after, write_trace_csv, IterationRecord, Phase, RampConfig, SyncController, SyncState, TRACE_HEADER,
};
pub use link::{baseline_qber, expected_qber, BinnedLink, ExpectedQber, SlotMasses, SyncLink};

/// Default lower bound on `|m|` below which a mean is treated as flat.
pub const MODULUS_FLOOR: f64 = 0.05;

/// Phasor mean of a folded histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircularMean {
    pub value: Complex64,
    pub count: f64,
}

impl CircularMean {
    pub fn modulus(&self) -> f64 {
        self.value.norm()
    }

    pub fn arg(&self) -> f64 {
        self.value.arg()
    }

    /// Centre of the folded distribution in `[0, T_bin)`, corrected by `phi_q`.
    pub fn center(&self, t_bin: f64, phi_q: f64) -> f64 {
        rem_floor(t_bin / (2.0 * PI) * (self.arg() - phi_q), t_bin)
    }
}

/// `m = (1/C) sum_k c_k exp(2 pi i tau_k / T_bin)` over bin centres `tau_k`.
pub fn circular_mean(hist: &Histogram, t_bin: f64) -> Result<CircularMean> {
    let w: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    circular_mean_weights(&w, hist.bin_width, t_bin)
}

/// Circular mean of non-negative bin weights (e.g. expected counts).
pub fn circular_mean_weights(weights: &[f64], bin_width: f64, t_bin: f64) -> Result<CircularMean> {
    let period = weights.len() as f64 * bin_width;
    let cycles = (period / t_bin).round();
    if cycles < 1.0 || (cycles * t_bin - period).abs() > 1e-9 * period {
        return Err(invalid("t_bin", "histogram period must be a whole number of time bins"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoCounts);
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, &c) in weights.iter().enumerate() {
        if c != 0.0 {
            let theta = 2.0 * PI * (k as f64 + 0.5) * bin_width / t_bin;
            acc += Complex64::from_polar(c, theta);
        }
    }
    Ok(CircularMean {
        value: acc / total,
        count: total,
    })
}

/// Signed drift `(T_bin / (2 pi T_int)) arg(m2 conj(m1))` with the default modulus floor.
pub fn estimate_drift(m1: &CircularMean, m2: &CircularMean, t_int: f64, t_bin: f64) -> Result<f64> {
    estimate_drift_with_floor(m1, m2, t_int, t_bin, MODULUS_FLOOR)
}

pub fn estimate_drift_with_floor(
    m1: &CircularMean,
    m2: &CircularMean,
    t_int: f64,
    t_bin: f64,
    floor: f64,
) -> Result<f64> {
    if !(t_int > 0.0) {
        return Err(invalid("t_int", "must be > 0"));
    }
    for m in [m1, m2] {
        if m.modulus() < floor {
            return Err(Error::FlatHistogram {
                modulus: m.modulus(),
                floor,
            });
        }
    }
    let dphi = (m2.value * m1.value.conj()).arg();
    Ok(t_bin / (2.0 * PI * t_int) * dphi)
}

/// TDC delay increment from the first histogram: the centre predicted at the start of
/// the next acquisition, `1.5 T_int` after the first mean, is moved onto `mu_e`.
pub fn estimate_delay(m1: &CircularMean, drift: f64, t_int: f64, t_bin: f64, mu_e: f64, phi_q: f64) -> f64 {
    delay_from(m1, 1.5, drift, t_int, t_bin, mu_e, phi_q)
}

/// Same correction computed from the second histogram, `0.5 T_int` before the end.
pub fn estimate_delay_late(m2: &CircularMean, drift: f64, t_int: f64, t_bin: f64, mu_e: f64, phi_q: f64) -> f64 {
    delay_from(m2, 0.5, drift, t_int, t_bin, mu_e, phi_q)
}

fn delay_from(m: &CircularMean, lead: f64, drift: f64, t_int: f64, t_bin: f64, mu_e: f64, phi_q: f64) -> f64 {
    let predicted = t_bin / (2.0 * PI) * (m.arg() - phi_q) + lead * drift * t_int;
    mu_e - rem_floor(predicted, t_bin)
}

/// Wraps a delay correction into `(-T_bin/2, T_bin/2]`.
pub fn wrap_delay(delay: f64, t_bin: f64) -> f64 {
    wrap_angle(2.0 * PI * delay / t_bin) * t_bin / (2.0 * PI)
}

/// Result of a pattern correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetLock {
    pub shift_bins: usize,
    /// `shift_bins * bin_width`, in `[0, period)`.
    pub shift: f64,
    pub peak: f64,
}

/// Default minimum Pearson coefficient for an offset lock.
pub const LOCK_THRESHOLD: f64 = 0.5;

/// Expected counts per bin over one pattern period when early photons of each slot
/// follow `slot_profile` (bins of one qubit slot, early photon at its nominal centre).
/// Late photons use the profile rotated by half a slot.
pub fn pattern_template(pattern: &Pattern, slot_profile: &[f64]) -> Result<Vec<f64>> {
    let b = slot_profile.len();
    if b == 0 || b % 2 != 0 {
        return Err(invalid("slot_profile", "needs an even, non-zero number of bins"));
    }
    let mut out = Vec::with_capacity(pattern.len() * b);
    for &late in pattern.bits() {
        for i in 0..b {
            let j = if late { (i + b - b / 2) % b } else { i };
            out.push(slot_profile[j]);
        }
    }
    Ok(out)
}

/// Cyclic shift of `template` best matching `hist` by Pearson correlation:
/// `hist[i] ~ template[i - shift]`.
pub fn recover_offset(hist: &Histogram, template: &[f64], threshold: f64) -> Result<OffsetLock> {
    let n = hist.counts.len();
    if template.len() != n {
        return Err(Error::GridMismatch(format!(
            "histogram has {n} bins, template {}",
            template.len()
        )));
    }
    if hist.total() == 0 {
        return Err(Error::NoCounts);
    }
    let h: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let hm = h.iter().sum::<f64>() / n as f64;
    let tm = template.iter().sum::<f64>() / n as f64;
    let hc: Vec<f64> = h.iter().map(|x| x - hm).collect();
    let tc: Vec<f64> = template.iter().map(|x| x - tm).collect();
    let hn = hc.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tn = tc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if hn == 0.0 || tn == 0.0 {
        return Err(Error::NoLock { peak: 0.0, threshold });
    }
    // only template support contributes
    let support: Vec<(usize, f64)> = tc.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
    let mut best = (0usize, f64::NEG_INFINITY);
    for s in 0..n {
        let mut acc = 0.0;
        for &(j, v) in &support {
            let i = j + s;
            acc += v * hc[if i >= n { i - n } else { i }];
        }
        if acc > best.1 {
            best = (s, acc);
        }
    }
    let peak = best.1 / (hn * tn);
    if peak < threshold {
        return Err(Error::NoLock { peak, threshold });
    }
    Ok(OffsetLock {
        shift_bins: best.0,
        shift: best.0 as f64 * hist.bin_width,
        peak,
    })
}

/// Inputs of the practical drift limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PracticalLimitConfig {
    pub n_bar_align: f64,
    pub photons_per_hist: f64,
    pub safety: f64,
}

impl Default for PracticalLimitConfig {
    fn default() -> Self {
        PracticalLimitConfig {
            n_bar_align: 10.0,
            photons_per_hist: 10.0,
            safety: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PracticalLimit {
    /// Integration time collecting the requested photons (s).
    pub t_int: f64,
    /// `T_bin / (2 T_int)`.
    pub raw: f64,
    /// `safety * raw`.
    pub limit: f64,
}

/// Largest drift recoverable from the first, shortest acquisitions.
pub fn practical_drift_limit(
    cfg: &PracticalLimitConfig,
    spad: &SpadModel,
    f_alice: f64,
    eta_ch: f64,
    t_bin: f64,
) -> Result<PracticalLimit> {
    if !(cfg.photons_per_hist >= 1.0) {
        return Err(invalid("photons_per_hist", "must be >= 1"));
    }
    if !(cfg.safety > 0.0 && cfg.safety <= 1.0) {
        return Err(invalid("safety", "must be in (0, 1]"));
    }
    let rates = effective_rates(spad, f_alice, cfg.n_bar_align, eta_ch);
    if rates.alice <= 0.0 {
        return Err(Error::NoCounts);
    }
    let t_int = cfg.photons_per_hist / rates.alice;
    let raw = t_bin / (2.0 * t_int);
    Ok(PracticalLimit {
        t_int,
        raw,
        limit: cfg.safety * raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hist(counts: Vec<u64>) -> Histogram {
        Histogram { counts, bin_width: 100e-12, acq_start: 0.0, acq_duration: 1e-3 }
    }

    #[test]
    fn single_bin_mean_is_unit_phasor() {
        let mut c = vec![0; 10];
        c[3] = 17;
        let m = circular_mean(&hist(c), 1e-9).unwrap();
        assert!((m.modulus() - 1.0).abs() < 1e-12);
        assert!((m.arg() - wrap_angle(2.0 * PI * 0.35)).abs() < 1e-12);
    }

    #[test]
    fn uniform_histogram_cancels() {
        let m = circular_mean(&hist(vec![100; 10]), 1e-9).unwrap();
        assert!(m.modulus() < 1e-12);
    }

    #[test]
    fn empty_histogram_is_an_error() {
        assert_eq!(circular_mean(&hist(vec![0; 10]), 1e-9), Err(Error::NoCounts));
    }

    #[test]
    fn equal_means_give_zero_drift() {
        let m = circular_mean(&hist(vec![1, 5, 9, 5, 1, 0, 0, 0, 0, 0]), 1e-9).unwrap();
        assert_eq!(estimate_drift(&m, &m, 1e-3, 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn drift_aliases_beyond_half_bin() {
        let t_bin = 1e-9;
        let t_int = 1e-3;
        let at = |c: f64| CircularMean { value: Complex64::from_polar(0.9, 2.0 * PI * c / t_bin), count: 100.0 };
        let est = estimate_drift(&at(0.2e-9), &at(0.2e-9 + 0.6 * t_bin), t_int, t_bin).unwrap();
        assert!((est - (-0.4 * t_bin / t_int)).abs() < 1e-12 * t_bin / t_int);
    }

    #[test]
    fn flat_mean_is_rejected() {
        let flat = CircularMean { value: Complex64::new(0.01, 0.0), count: 10.0 };
        let ok = CircularMean { value: Complex64::new(0.5, 0.0), count: 10.0 };
        assert!(matches!(estimate_drift(&flat, &ok, 1e-3, 1e-9), Err(Error::FlatHistogram { .. })));
    }

    #[test]
    fn centred_histogram_needs_no_delay() {
        let m = CircularMean { value: Complex64::from_polar(0.8, PI), count: 100.0 };
        let d = estimate_delay(&m, 0.0, 0.5, 1e-9, 0.5e-9, 0.0);
        assert!(wrap_delay(d, 1e-9).abs() < 1e-20);
    }

    #[test]
    fn offset_recovery_finds_known_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pattern = Pattern::random(500, &mut rng);
        let mut profile = vec![0.0; 20];
        profile[4] = 0.3;
        profile[5] = 0.5;
        profile[6] = 0.2;
        let template = pattern_template(&pattern, &profile).unwrap();
        let n = template.len();
        for &shift in &[0usize, 137, 9_999] {
            let counts = (0..n).map(|i| (100.0 * template[(i + n - shift) % n]).round() as u64).collect();
            let lock = recover_offset(&hist(counts), &template, LOCK_THRESHOLD).unwrap();
            assert_eq!(lock.shift_bins, shift);
            assert!((lock.shift - shift as f64 * 100e-12).abs() < 1e-18);
        }
    }

    #[test]
    fn practical_limit_scales_inversely_with_photons() {
        let spad = SpadModel::default();
        let a = practical_drift_limit(&PracticalLimitConfig::default(), &spad, 500e6, 0.01, 1e-9).unwrap();
        let cfg = PracticalLimitConfig { photons_per_hist: 20.0, ..Default::default() };
        let b = practical_drift_limit(&cfg, &spad, 500e6, 0.01, 1e-9).unwrap();
        assert!((a.limit / b.limit - 2.0).abs() < 1e-12);
        assert!((a.limit / a.raw - 0.7).abs() < 1e-12);
    }
}
