//! Two-clock drift model, calibration updates and clock-stability budgets.

use crate::error::{invalid, Error, Result};

/// Alice's and Bob's oscillators as seen from Bob's timestamping frame.
///
/// `aging_rate` is the derivative of the relative drift (1/s). Time arguments are
/// measured from the moment the pair was last calibrated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockPair {
    pub f_alice: f64,
    pub f_bob: f64,
    pub static_offset: f64,
    pub aging_rate: f64,
    pub elapsed_since_calibration: f64,
}

impl ClockPair {
    pub fn new(f_alice: f64, f_bob: f64) -> Result<Self> {
        let pair = ClockPair {
            f_alice,
            f_bob,
            static_offset: 0.0,
            aging_rate: 0.0,
            elapsed_since_calibration: 0.0,
        };
        pair.validate()?;
        Ok(pair)
    }

    /// Pair whose relative drift `(f_B - f_A)/f_A` equals `drift` exactly up to rounding.
    pub fn with_drift(f_alice: f64, drift: f64) -> Result<Self> {
        Self::new(f_alice, f_alice * (1.0 + drift))
    }

    pub fn offset(mut self, t0: f64) -> Self {
        self.static_offset = t0;
        self
    }

    pub fn aging(mut self, rate: f64) -> Self {
        self.aging_rate = rate;
        self
    }

    /// Worst case of two identical clocks aging in opposite directions: the relative rate
    /// is twice the single-clock rate.
    pub fn opposing_aging(mut self, single_clock_rate: f64) -> Self {
        self.aging_rate = 2.0 * single_clock_rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_alice > 0.0) || !(self.f_bob > 0.0) {
            return Err(invalid("frequency", "clock frequencies must be > 0"));
        }
        if self.drift().abs() >= 1.0 {
            return Err(invalid("drift", "|drift| must be < 1"));
        }
        Ok(())
    }

    /// Relative drift `(f_B - f_A) / f_A`.
    pub fn drift(&self) -> f64 {
        (self.f_bob - self.f_alice) / self.f_alice
    }

    /// Accumulated shift between Alice's time seen by Bob and Bob's time.
    pub fn time_shift(&self, t: f64) -> f64 {
        self.drift() * t + 0.5 * self.aging_rate * t * t + self.static_offset
    }

    /// Mean arrival time of a photon from the bin centred at `bin_center`, at Bob time `t`.
    pub fn expected_arrival(&self, t: f64, bin_center: f64) -> f64 {
        self.drift() * t + self.static_offset + bin_center
    }

    /// Mean of `expected_arrival` over `[0, t_int]`.
    pub fn mean_arrival(&self, t_int: f64, bin_center: f64) -> f64 {
        self.drift() * t_int / 2.0 + self.static_offset + bin_center
    }

    /// Advances the pair by `dt`: aging moves Bob's frequency and the static offset
    /// absorbs the shift accumulated so far.
    pub fn advanced(&self, dt: f64) -> ClockPair {
        let drift = self.drift() + self.aging_rate * dt;
        ClockPair {
            f_bob: self.f_alice * (1.0 + drift),
            static_offset: self.time_shift(dt),
            elapsed_since_calibration: self.elapsed_since_calibration + dt,
            ..*self
        }
    }

    /// Bob's frequency update `f_B' = f_B / (1 + t_hat)`.
    pub fn apply_frequency_update(&self, drift_estimate: f64) -> Result<ClockPair> {
        if !(1.0 + drift_estimate > 0.0) {
            return Err(invalid("drift_estimate", "1 + estimate must be > 0"));
        }
        Ok(ClockPair {
            f_bob: self.f_bob / (1.0 + drift_estimate),
            ..*self
        })
    }

    /// Alice's calibration frequency that turns the estimated drift into `target_drift`.
    pub fn init_alice_calibration(&self, drift_estimate: f64, target_drift: f64) -> Result<f64> {
        if !(1.0 + target_drift > 0.0) {
            return Err(invalid("target_drift", "1 + target must be > 0"));
        }
        Ok(self.f_alice * (1.0 + drift_estimate) / (1.0 + target_drift))
    }
}

/// Relative drift of Bob against Alice when each has its own drift against a reference.
pub fn compose_drifts(drift_alice: f64, drift_bob: f64) -> f64 {
    (drift_bob - drift_alice) / (1.0 + drift_alice)
}

/// Histogram timing parameters shared by the QBER model and the synchronizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingBudget {
    pub t_bin: f64,
    pub t_int: f64,
    pub window_width: f64,
    pub error_threshold: f64,
}

impl TimingBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_width > 0.0 && self.window_width <= self.t_bin) {
            return Err(invalid("window_width", "must be in (0, t_bin]"));
        }
        if !(self.t_int > 0.0) {
            return Err(invalid("t_int", "must be > 0"));
        }
        if !(self.error_threshold > 0.0 && self.error_threshold < 0.5) {
            return Err(invalid("error_threshold", "must be in (0, 0.5)"));
        }
        Ok(())
    }
}

/// Largest drift measurable without sign ambiguity, `T_bin / (2 tau_D)`.
pub fn max_unambiguous_drift(t_bin: f64, dead_time: f64) -> Result<f64> {
    if dead_time <= 0.0 {
        return Err(Error::Unbounded);
    }
    Ok(t_bin / (2.0 * dead_time))
}

/// Longest time after calibration before aging alone reaches `T_bin / (2 tau_D)`.
///
/// Returns `f64::INFINITY` for a non-aging pair.
pub fn max_calibration_interval(aging_rate: f64, t_bin: f64, dead_time: f64) -> Result<f64> {
    Ok(calibration_interval_for_limit(aging_rate, max_unambiguous_drift(t_bin, dead_time)?))
}

/// Longest time after calibration before aging alone exceeds `drift_limit`.
pub fn calibration_interval_for_limit(aging_rate: f64, drift_limit: f64) -> f64 {
    if aging_rate == 0.0 {
        return f64::INFINITY;
    }
    drift_limit / aging_rate.abs()
}

/// Upper bound on `|d t_drift / dt|` keeping the residual shift of the next two
/// acquisitions below `drift_limit`.
pub fn short_term_stability_bound(t_int: f64, drift_limit: f64) -> Result<f64> {
    if !(t_int > 0.0) {
        return Err(invalid("t_int", "must be > 0"));
    }
    Ok(drift_limit / (4.0 * t_int * t_int))
}

#[cfg(test)]
mod tests {
    use super::*;

    const YEAR: f64 = 365.25 * 86400.0;

    #[test]
    fn shift_examples() {
        let c = ClockPair::new(500e6, 500e6).unwrap();
        assert_eq!(c.time_shift(3.0), 0.0);
        let c = ClockPair::with_drift(500e6, 1e-6).unwrap();
        assert!((c.time_shift(1.0) - 1e-6).abs() < 1e-15);
        let c = ClockPair::new(500e6, 500e6).unwrap().aging(12e-12);
        assert!((c.time_shift(10.0) - 600e-12).abs() < 1e-22);
    }

    #[test]
    fn arrival_examples() {
        let c = ClockPair::new(500e6, 500e6).unwrap();
        assert_eq!(c.expected_arrival(0.7, 0.5e-9), 0.5e-9);
        let c = ClockPair::with_drift(500e6, 1e-6).unwrap();
        assert!((c.expected_arrival(0.5, 0.5e-9) - 500.5e-9).abs() < 1e-15);
        // midpoint of the linear ramp
        let t_int = 0.3;
        let mean = crate::numeric::simpson(|t| c.expected_arrival(t, 0.5e-9), 0.0, t_int, 64) / t_int;
        assert!((mean - c.mean_arrival(t_int, 0.5e-9)).abs() < 1e-18);
    }

    #[test]
    fn drift_limit_examples() {
        assert!((max_unambiguous_drift(1e-9, 15e-6).unwrap() - 33.333e-6).abs() < 1e-9);
        assert!((max_unambiguous_drift(2e-9, 15e-6).unwrap() - 66.667e-6).abs() < 1e-9);
        assert!((max_unambiguous_drift(1e-9, 30e-6).unwrap() - 16.667e-6).abs() < 1e-9);
        assert_eq!(max_unambiguous_drift(1e-9, 0.0), Err(Error::Unbounded));
    }

    #[test]
    fn calibration_interval_examples() {
        let single = 50e-6 / (10.0 * YEAR);
        let rate = ClockPair::new(1.0, 1.0).unwrap().opposing_aging(single).aging_rate;
        let theo = max_calibration_interval(rate, 1e-9, 15e-6).unwrap();
        assert!((theo / YEAR - 3.33).abs() < 0.01, "{}", theo / YEAR);
        let practical = calibration_interval_for_limit(rate, 2.3e-6);
        assert!((practical / YEAR - 0.23).abs() < 0.005);
        assert_eq!(max_calibration_interval(0.0, 1e-9, 15e-6).unwrap(), f64::INFINITY);
        assert!((calibration_interval_for_limit(2.0 * rate, 2.3e-6) - practical / 2.0).abs() < 1e-6);
    }

    #[test]
    fn short_term_examples() {
        let b = short_term_stability_bound(0.5, 23e-12).unwrap();
        assert!((b - 23e-12).abs() < 1e-24);
        assert!((short_term_stability_bound(0.25, 23e-12).unwrap() / b - 4.0).abs() < 1e-12);
        assert!((short_term_stability_bound(0.5, 46e-12).unwrap() / b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn xo_daily_aging_rate() {
        let single = 500e-9 / 86400.0;
        let rate = ClockPair::new(1.0, 1.0).unwrap().opposing_aging(single).aging_rate;
        assert!((rate * 1e12 - 11.6).abs() < 0.1);
    }

    #[test]
    fn frequency_update_examples() {
        let c = ClockPair::with_drift(500e6, 2.3e-6).unwrap();
        let exact = c.apply_frequency_update(c.drift()).unwrap();
        assert!(exact.drift().abs() < 1e-14);
        assert_eq!(c.apply_frequency_update(0.0).unwrap(), c);
        let partial = c.apply_frequency_update(2.0e-6).unwrap();
        let expected = (2.3e-6 - 2.0e-6) / (1.0 + 2.0e-6);
        assert!((partial.drift() - expected).abs() < 1e-15);
        assert!((partial.drift() - 3.0e-7).abs() < 1e-11);
    }

    #[test]
    fn alice_calibration_examples() {
        let c = ClockPair::new(500e6, 500e6).unwrap();
        assert_eq!(c.init_alice_calibration(1e-6, 1e-6).unwrap(), 500e6);
        assert!((c.init_alice_calibration(1e-6, 0.0).unwrap() - 500e6 * (1.0 + 1e-6)).abs() < 1e-6);
        let fa = c.init_alice_calibration(0.0, 2.3e-6).unwrap();
        assert!((fa - 499.998_85e6).abs() < 1.0);
        let calibrated = ClockPair::new(fa, c.f_bob).unwrap();
        assert!((calibrated.drift() - 2.3e-6).abs() < 1e-12);
    }

    #[test]
    fn two_clock_composition() {
        for &(a, b) in &[(1e-5, -3e-5), (-9e-5, 9e-5), (5e-6, 5e-6)] {
            // first order in the drifts
            assert!((compose_drifts(a, b) - (b - a)).abs() <= 1.01 * (a * (b - a)).abs());
        }
    }

    #[test]
    fn advance_is_additive() {
        let c = ClockPair::with_drift(500e6, 1.7e-6).unwrap().offset(3e-9).aging(2e-9);
        let direct = c.time_shift(7.0);
        let stepped = c.advanced(3.0).time_shift(4.0);
        assert!((direct - stepped).abs() < 1e-18);
    }

    #[test]
    fn budget_validation() {
        let b = TimingBudget { t_bin: 1e-9, t_int: 0.5, window_width: 0.3e-9, error_threshold: 1e-3 };
        assert!(b.validate().is_ok());
        assert!(TimingBudget { window_width: 2e-9, ..b }.validate().is_err());
        assert!(TimingBudget { error_threshold: 0.5, ..b }.validate().is_err());
    }
}
