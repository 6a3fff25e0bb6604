//! Stochastic detection timestamps, TDC histograms and QBER measurement.
//!
//! Two acquisition paths are provided: the event-level [`Simulator`], which models dead
//! time, dark counts, jitter and clock drift detection by detection, and the
//! Poisson-per-bin sampler ([`poisson_histogram`], [`FoldedProfile`]) used for long
//! accelerated runs.

mod profile;
mod stream;

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{invalid, Error, Result};
use crate::pdf::{ArrivalPdf, FilterWindow};

pub use profile::FoldedProfile;
pub use stream::{
    sample_event_stream, DetectionModel, OscillatorNoise, Pattern, QubitSource, SimScenario, Simulator,
    PATTERN_SLOTS,
};

/// Time-to-digital converter: binning, folding period and programmable delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdcModel {
    pub bin_width: f64,
    delay_register: f64,
    pub delay_resolution: f64,
    pub period: f64,
}

impl TdcModel {
    pub fn new(bin_width: f64, period: f64, delay_resolution: f64) -> Result<Self> {
        if !(bin_width > 0.0) {
            return Err(invalid("bin_width", "must be > 0"));
        }
        if !(delay_resolution > 0.0) {
            return Err(invalid("delay_resolution", "must be > 0"));
        }
        let n = (period / bin_width).round();
        if n < 1.0 || (n * bin_width - period).abs() > 1e-9 * period {
            return Err(invalid("period", "must be an integer multiple of bin_width"));
        }
        Ok(TdcModel {
            bin_width,
            delay_register: 0.0,
            delay_resolution,
            period,
        })
    }

    /// 100 ps bins, 11 ps delay steps, folding over `period`.
    pub fn standard(period: f64) -> Result<Self> {
        Self::new(100e-12, period, 11e-12)
    }

    pub fn n_bins(&self) -> usize {
        (self.period / self.bin_width).round() as usize
    }

    pub fn delay_register(&self) -> f64 {
        self.delay_register
    }

    /// Same converter folding over a different period.
    pub fn with_period(&self, period: f64) -> Result<Self> {
        let mut t = Self::new(self.bin_width, period, self.delay_resolution)?;
        t.delay_register = self.delay_register;
        Ok(t)
    }

    /// Quantizes `requested` to the delay resolution and loads it; returns the residue
    /// `requested - loaded`.
    pub fn set_delay(&mut self, requested: f64) -> f64 {
        let steps = (requested / self.delay_resolution).round();
        self.delay_register = steps * self.delay_resolution;
        requested - self.delay_register
    }

    /// Adds `increment` plus the carried residue, leaving the new residue in `carry`.
    pub fn adjust_delay(&mut self, increment: f64, carry: &mut f64) {
        let target = self.delay_register + increment + *carry;
        *carry = self.set_delay(target);
    }

    pub fn bin_index(&self, tau: f64) -> usize {
        let tau = crate::numeric::rem_floor(tau, self.period);
        ((tau / self.bin_width) as usize).min(self.n_bins() - 1)
    }
}

/// Counts per TDC bin over one folding period.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub counts: Vec<u64>,
    pub bin_width: f64,
    pub acq_start: f64,
    pub acq_duration: f64,
}

impl Histogram {
    pub fn zeros(n_bins: usize, bin_width: f64, acq_start: f64, acq_duration: f64) -> Self {
        Histogram {
            counts: vec![0; n_bins],
            bin_width,
            acq_start,
            acq_duration,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn period(&self) -> f64 {
        self.counts.len() as f64 * self.bin_width
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.bin_width
    }

    /// Refolds onto a shorter period that divides this one.
    pub fn refold(&self, period: f64) -> Result<Histogram> {
        let n = (period / self.bin_width).round() as usize;
        if n == 0 || self.counts.len() % n != 0 {
            return Err(invalid("period", "must divide the histogram period in whole bins"));
        }
        let mut counts = vec![0; n];
        for (i, c) in self.counts.iter().enumerate() {
            counts[i % n] += c;
        }
        Ok(Histogram { counts, ..*self })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_start_ps,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{}", fmt_ps(i as f64 * self.bin_width), c)?;
        }
        Ok(())
    }
}

pub(crate) fn fmt_ps(t: f64) -> String {
    let ps = t * 1e12;
    if (ps - ps.round()).abs() < 1e-6 {
        format!("{}", ps.round() as i64)
    } else {
        format!("{ps:.3}")
    }
}

/// Who a detection belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Early,
    Late,
    Dark,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Early => "early",
            Label::Late => "late",
            Label::Dark => "dark",
        }
    }
}

/// A detection: `delay` is measured in Bob's frame from the nominal start of Alice's
/// qubit slot `slot`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub slot: u64,
    pub delay: f64,
    pub label: Label,
}

/// Detections in time order together with the qubit slot period they refer to.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventStream {
    pub slot_period: f64,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn time(&self, e: &Event) -> f64 {
        e.slot as f64 * self.slot_period + e.delay
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Start–stop delay of `e` folded over `period`, after the TDC delay `register`.
    pub fn folded_delay(&self, e: &Event, period: f64, register: f64) -> Result<f64> {
        let offset = slot_offset(e.slot, self.slot_period, period)?;
        Ok(crate::numeric::rem_floor(offset + e.delay + register, period))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_ps,label")?;
        for e in &self.events {
            writeln!(w, "{:.3},{}", self.time(e) * 1e12, e.label.as_str())?;
        }
        Ok(())
    }
}

/// Position of slot `slot` within a folding period.
fn slot_offset(slot: u64, slot_period: f64, period: f64) -> Result<f64> {
    let k = (period / slot_period).round();
    if k >= 1.0 && (k * slot_period - period).abs() < 1e-9 * period {
        return Ok((slot % k as u64) as f64 * slot_period);
    }
    let m = (slot_period / period).round();
    if m >= 1.0 && (m * period - slot_period).abs() < 1e-9 * slot_period {
        return Ok(0.0);
    }
    Err(invalid("fold_period", "must be commensurate with the qubit slot period"))
}

/// Histogram of the events whose time falls in `[acq_window.0, acq_window.1)`.
pub fn build_histogram(
    stream: &EventStream,
    tdc: &TdcModel,
    acq_window: (f64, f64),
    fold_period: f64,
) -> Result<Histogram> {
    let tdc = tdc.with_period(fold_period)?;
    let (t_a, t_b) = acq_window;
    let mut h = Histogram::zeros(tdc.n_bins(), tdc.bin_width, t_a, t_b - t_a);
    for e in &stream.events {
        let t = stream.time(e);
        if t < t_a || t >= t_b {
            continue;
        }
        let tau = stream.folded_delay(e, fold_period, tdc.delay_register())?;
        h.counts[tdc.bin_index(tau)] += 1;
    }
    Ok(h)
}

/// Draws a histogram with independent Poisson counts
/// `lambda_i = T_int (cps_alice P_i + cps_dark / N_bins)`.
pub fn poisson_histogram<R: Rng + ?Sized>(
    pdf: &ArrivalPdf,
    rates: (f64, f64),
    t_int: f64,
    tdc: &TdcModel,
    rng: &mut R,
) -> Result<Histogram> {
    match pdf.period() {
        Some(p) if (p - tdc.period).abs() <= 1e-9 * p => {}
        _ => return Err(invalid("pdf", "must be folded to the TDC period")),
    }
    let probs = pdf.bin_probabilities(tdc.bin_width)?;
    poisson_from_probabilities(&probs, rates, t_int, tdc.bin_width, rng)
}

pub(crate) fn poisson_from_probabilities<R: Rng + ?Sized>(
    probs: &[f64],
    (cps_alice, cps_dark): (f64, f64),
    t_int: f64,
    bin_width: f64,
    rng: &mut R,
) -> Result<Histogram> {
    if !(t_int >= 0.0) {
        return Err(invalid("t_int", "must be >= 0"));
    }
    let n = probs.len() as f64;
    let counts = probs
        .iter()
        .map(|p| poisson_draw(t_int * (cps_alice * p.max(0.0) + cps_dark / n), rng))
        .collect();
    Ok(Histogram {
        counts,
        bin_width,
        acq_start: 0.0,
        acq_duration: t_int,
    })
}

pub(crate) fn poisson_draw<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

/// How the reference bit of a detection is determined when counting errors.
#[derive(Debug, Clone, Copy)]
pub enum AssignmentRule<'a> {
    /// The simulator's own label; dark counts are compared against a fair coin.
    TruthLabel,
    /// Alice's pattern, indexed by the slot Bob infers from the detection time.
    Pattern(&'a Pattern),
}

/// QBER with and without temporal filtering.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QberMeasurement {
    pub unfiltered: f64,
    pub filtered: f64,
    pub kept_fraction: f64,
    pub n_unfiltered: u64,
    pub n_filtered: u64,
    pub errors_unfiltered: u64,
    pub errors_filtered: u64,
}

impl QberMeasurement {
    pub fn from_counts(n_unfiltered: u64, errors_unfiltered: u64, n_filtered: u64, errors_filtered: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
        QberMeasurement {
            unfiltered: ratio(errors_unfiltered, n_unfiltered),
            filtered: ratio(errors_filtered, n_filtered),
            kept_fraction: ratio(n_filtered, n_unfiltered),
            n_unfiltered,
            n_filtered,
            errors_unfiltered,
            errors_filtered,
        }
    }
}

/// Counts bit errors in `stream`.
///
/// Each detection is assigned to the early half `[0, T_bin)` or the late half of its
/// `2 T_bin` slot. With filtering, only detections inside one of `windows` are kept and
/// assigned by window. The intrinsic error flips the reference bit independently.
pub fn measure_qber<R: Rng + ?Sized>(
    stream: &EventStream,
    tdc: &TdcModel,
    t_bin: f64,
    windows: (FilterWindow, FilterWindow),
    rule: AssignmentRule<'_>,
    intrinsic_error: f64,
    rng: &mut R,
) -> Result<QberMeasurement> {
    if !(0.0..=0.5).contains(&intrinsic_error) {
        return Err(invalid("intrinsic_error", "must be in [0, 0.5]"));
    }
    let slot = 2.0 * t_bin;
    if (stream.slot_period - slot).abs() > 1e-9 * slot {
        return Err(Error::GridMismatch("slot period must equal 2 T_bin".into()));
    }
    let register = tdc.delay_register();
    let (mut n_all, mut err_all, mut n_kept, mut err_kept) = (0u64, 0u64, 0u64, 0u64);
    for e in &stream.events {
        let raw = e.delay + register;
        let slot_shift = (raw / slot).floor();
        let tau = raw - slot_shift * slot;
        let assigned_late = tau >= t_bin;
        let reference_late = match rule {
            AssignmentRule::TruthLabel => match e.label {
                Label::Early => false,
                Label::Late => true,
                Label::Dark => rng.random::<bool>(),
            },
            AssignmentRule::Pattern(p) => {
                let bob_slot = e.slot as i128 + slot_shift as i128;
                p.is_late(bob_slot.rem_euclid(p.len() as i128) as u64)
            }
        };
        let flipped = intrinsic_error > 0.0 && rng.random::<f64>() < intrinsic_error;
        let error = (assigned_late != reference_late) ^ flipped;
        n_all += 1;
        err_all += error as u64;
        let in_e = windows.0.contains(tau, slot);
        let in_l = windows.1.contains(tau, slot);
        if in_e || in_l {
            n_kept += 1;
            err_kept += ((in_l != reference_late) ^ flipped) as u64;
        }
    }
    Ok(QberMeasurement::from_counts(n_all, err_all, n_kept, err_kept))
}

/// Early and late filtering windows of width `w` at the nominal bin centres.
pub fn standard_windows(t_bin: f64, w: f64) -> (FilterWindow, FilterWindow) {
    (FilterWindow::new(0.5 * t_bin, w), FilterWindow::new(1.5 * t_bin, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn delay_quantization_with_carry() {
        let mut tdc = TdcModel::standard(1e-9).unwrap();
        let mut carry = 0.0;
        for _ in 0..100 {
            tdc.adjust_delay(5e-12, &mut carry);
        }
        let steps = tdc.delay_register() / 11e-12;
        assert!((steps - steps.round()).abs() < 1e-9);
        assert!((tdc.delay_register() + carry - 500e-12).abs() < 1e-15);
        assert!(carry.abs() <= 5.5e-12 + 1e-18);
    }

    #[test]
    fn tdc_rejects_incommensurate_period() {
        assert!(TdcModel::new(100e-12, 1.05e-9, 11e-12).is_err());
    }

    #[test]
    fn single_delay_lands_in_floor_bin() {
        let tdc = TdcModel::standard(1e-9).unwrap();
        let stream = EventStream {
            slot_period: 2e-9,
            events: (0..50).map(|s| Event { slot: s, delay: 333e-12, label: Label::Early }).collect(),
        };
        let h = build_histogram(&stream, &tdc, (0.0, 1.0), 1e-9).unwrap();
        assert_eq!(h.counts[3], 50);
        assert_eq!(h.total(), 50);
    }

    #[test]
    fn empty_stream_gives_empty_histogram() {
        let tdc = TdcModel::standard(2e-9).unwrap();
        let h = build_histogram(&EventStream { slot_period: 2e-9, events: vec![] }, &tdc, (0.0, 1.0), 2e-9).unwrap();
        assert_eq!(h.counts.len(), 20);
        assert_eq!(h.total(), 0);
    }

    #[test]
    fn pattern_fold_uses_slot_position() {
        let tdc = TdcModel::standard(1e-6).unwrap();
        let stream = EventStream {
            slot_period: 2e-9,
            events: vec![Event { slot: 503, delay: 0.55e-9, label: Label::Early }],
        };
        let h = build_histogram(&stream, &tdc, (0.0, 1.0), 1e-6).unwrap();
        assert_eq!(h.counts[65], 1);
    }

    #[test]
    fn zero_integration_time_gives_zero_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = poisson_from_probabilities(&[0.5, 0.5], (1e5, 10.0), 0.0, 1e-10, &mut rng).unwrap();
        assert_eq!(h.total(), 0);
    }

    #[test]
    fn refold_sums_periods() {
        let h = Histogram { counts: vec![1, 2, 3, 4], bin_width: 1.0, acq_start: 0.0, acq_duration: 1.0 };
        assert_eq!(h.refold(2.0).unwrap().counts, vec![4, 6]);
        assert!(h.refold(3.0).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let h = Histogram { counts: vec![7, 0], bin_width: 100e-12, acq_start: 0.0, acq_duration: 1.0 };
        let mut out = Vec::new();
        h.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "bin_start_ps,count\n0,7\n100,0\n");
    }
}
