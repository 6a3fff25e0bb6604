//! Start–stop arrival-time densities under clock drift.
//!
//! Densities live on uniform grids anchored at integer multiples of the step, so that
//! folding over any period that is a multiple of the step maps samples onto samples.

use std::ops::RangeInclusive;

use crate::error::{invalid, Error, Result};
use crate::numeric::{normal_mass, std_normal_pdf};
use crate::physics::{spad_kernel, SpadModel};

/// Default grid step (s).
pub const DEFAULT_STEP: f64 = 0.5e-12;

/// Half-width of the Gaussian support in standard deviations.
const GAUSS_SPAN: f64 = 10.0;

/// Parameters of the drift-smeared arrival density of one time bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftParams {
    /// Pulse arrival-time standard deviation (s).
    pub sigma: f64,
    pub t_drift: f64,
    pub t_int: f64,
    /// Static offset `t_0` (s).
    pub t_0: f64,
    /// Nominal bin centre `mu_j` (s).
    pub bin_center: f64,
}

impl DriftParams {
    /// Drift-induced shift over the acquisition, `t_drift * T_int`.
    pub fn shift(&self) -> f64 {
        self.t_drift * self.t_int
    }

    pub fn mean(&self) -> f64 {
        self.shift() / 2.0 + self.t_0 + self.bin_center
    }

    /// Closed-form standard deviation `sqrt(sigma^2 + shift^2 / 12)`.
    pub fn std(&self) -> f64 {
        (self.sigma * self.sigma + self.shift() * self.shift() / 12.0).sqrt()
    }
}

/// Density of the start–stop delay for one time bin, evaluated at `t`.
///
/// A Gaussian pulse whose centre slides linearly by `t_drift * t_int` during the
/// acquisition: the difference of two normal CDFs divided by the slide. Slides below
/// `1e-4 sigma` use the Gaussian limit. Negative drifts are handled symmetrically.
pub fn drift_pdf(sigma: f64, t_drift: f64, t_int: f64, t_0: f64, bin_center: f64, t: f64) -> f64 {
    let shift = t_drift * t_int;
    let center = bin_center + t_0 + shift / 2.0;
    let half = shift.abs() / 2.0;
    if shift.abs() < 1e-4 * sigma {
        return std_normal_pdf((t - center) / sigma) / sigma;
    }
    let lo = (t - center - half) / sigma;
    let hi = (t - center + half) / sigma;
    normal_mass(lo, hi) / (2.0 * half)
}

/// Periodic filtering window `[center - width/2, center + width/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterWindow {
    pub center: f64,
    pub width: f64,
}

impl FilterWindow {
    pub fn new(center: f64, width: f64) -> Self {
        FilterWindow { center, width }
    }

    pub fn start(&self) -> f64 {
        self.center - self.width / 2.0
    }

    pub fn end(&self) -> f64 {
        self.center + self.width / 2.0
    }

    pub fn contains(&self, tau: f64, period: f64) -> bool {
        let rel = crate::numeric::rem_floor(tau - self.start(), period);
        rel < self.width
    }
}

/// Provenance carried along with a density.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PdfMeta {
    pub t_drift: f64,
    pub t_int: f64,
    pub t_0: f64,
    pub sigma: f64,
    pub spad: Option<SpadModel>,
}

/// Sampled arrival-time density, either on an open support or folded over a period.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalPdf {
    /// Grid index of the first sample: sample `i` sits at `(first + i) * step`.
    first: i64,
    step: f64,
    density: Vec<f64>,
    period: Option<f64>,
    pub meta: PdfMeta,
}

impl ArrivalPdf {
    /// Samples the drift density on a grid of the given step.
    pub fn from_drift(params: &DriftParams, step: f64) -> Result<Self> {
        if !(params.sigma > 0.0) {
            return Err(invalid("sigma", "must be > 0"));
        }
        if !(params.t_int > 0.0) {
            return Err(invalid("t_int", "must be > 0"));
        }
        if !(step > 0.0) {
            return Err(invalid("step", "must be > 0"));
        }
        let half = params.shift().abs() / 2.0 + GAUSS_SPAN * params.sigma;
        let first = ((params.mean() - half) / step).floor() as i64;
        let last = ((params.mean() + half) / step).ceil() as i64;
        let density = (first..=last)
            .map(|g| {
                drift_pdf(
                    params.sigma,
                    params.t_drift,
                    params.t_int,
                    params.t_0,
                    params.bin_center,
                    g as f64 * step,
                )
            })
            .collect();
        Ok(ArrivalPdf {
            first,
            step,
            density,
            period: None,
            meta: PdfMeta {
                t_drift: params.t_drift,
                t_int: params.t_int,
                t_0: params.t_0,
                sigma: params.sigma,
                spad: None,
            },
        })
    }

    /// Builds an unfolded density from raw samples starting at grid index `first`.
    pub fn from_samples(first: i64, step: f64, density: Vec<f64>) -> Self {
        ArrivalPdf {
            first,
            step,
            density,
            period: None,
            meta: PdfMeta::default(),
        }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn is_folded(&self) -> bool {
        self.period.is_some()
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    pub fn first_index(&self) -> i64 {
        self.first
    }

    /// Time of sample `i`.
    pub fn time(&self, i: usize) -> f64 {
        (self.first + i as i64) as f64 * self.step
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.density.len()).map(|i| self.time(i)).collect()
    }

    /// Trapezoid integral over the support (or over one period when folded).
    pub fn integral(&self) -> f64 {
        match self.period {
            Some(_) => self.density.iter().sum::<f64>() * self.step,
            None => trapezoid(&self.density, self.step),
        }
    }

    /// Mean of an unfolded density.
    pub fn mean(&self) -> f64 {
        debug_assert!(!self.is_folded());
        let w = self.integral();
        let m: Vec<f64> = self.density.iter().enumerate().map(|(i, d)| d * self.time(i)).collect();
        trapezoid(&m, self.step) / w
    }

    /// Standard deviation of an unfolded density.
    pub fn std(&self) -> f64 {
        let mu = self.mean();
        let w = self.integral();
        let v: Vec<f64> = self
            .density
            .iter()
            .enumerate()
            .map(|(i, d)| d * (self.time(i) - mu).powi(2))
            .collect();
        (trapezoid(&v, self.step) / w).sqrt()
    }

    /// Linearly interpolated density value (periodic when folded).
    pub fn value_at(&self, t: f64) -> f64 {
        let x = t / self.step - self.first as f64;
        match self.period {
            Some(_) => {
                let n = self.density.len();
                let x = x.rem_euclid(n as f64);
                let i = (x.floor() as usize).min(n - 1);
                let f = x - i as f64;
                self.density[i] * (1.0 - f) + self.density[(i + 1) % n] * f
            }
            None => {
                if x < 0.0 || x > (self.density.len() - 1) as f64 {
                    return 0.0;
                }
                let i = (x.floor() as usize).min(self.density.len() - 2);
                let f = x - i as f64;
                self.density[i] * (1.0 - f) + self.density[i + 1] * f
            }
        }
    }

    /// Integral of the piecewise-linear interpolant over `[a, b)`; wraps when folded.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        self.cumulative(b) - self.cumulative(a)
    }

    fn cumulative(&self, t: f64) -> f64 {
        let h = self.step;
        let x = t / h - self.first as f64;
        match self.period {
            Some(_) => {
                let n = self.density.len();
                let cycles = (x / n as f64).floor();
                let xr = x - cycles * n as f64;
                let total = self.integral();
                let i = (xr.floor() as usize).min(n - 1);
                let f = xr - i as f64;
                let mut acc = 0.0;
                for k in 0..i {
                    acc += 0.5 * (self.density[k] + self.density[(k + 1) % n]) * h;
                }
                let d0 = self.density[i];
                let d1 = self.density[(i + 1) % n];
                acc += h * (d0 * f + (d1 - d0) * f * f / 2.0);
                cycles * total + acc
            }
            None => {
                let n = self.density.len();
                if x <= 0.0 {
                    return 0.0;
                }
                let xe = x.min((n - 1) as f64);
                let i = (xe.floor() as usize).min(n - 2);
                let f = xe - i as f64;
                let mut acc = 0.0;
                for k in 0..i {
                    acc += 0.5 * (self.density[k] + self.density[k + 1]) * h;
                }
                let d0 = self.density[i];
                let d1 = self.density[i + 1];
                acc + h * (d0 * f + (d1 - d0) * f * f / 2.0)
            }
        }
    }

    /// Cumulative distribution of a folded density on its own grid, `F[i] = int_0^{i h}`,
    /// with `len + 1` entries.
    pub fn folded_cdf(&self) -> Result<Vec<f64>> {
        if !self.is_folded() || self.first != 0 {
            return Err(invalid("pdf", "folded density expected"));
        }
        let n = self.density.len();
        let mut out = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for k in 0..n {
            acc += 0.5 * (self.density[k] + self.density[(k + 1) % n]) * self.step;
            out.push(acc);
        }
        Ok(out)
    }

    /// Probability mass in consecutive bins of width `bin_width` covering one period.
    pub fn bin_probabilities(&self, bin_width: f64) -> Result<Vec<f64>> {
        let period = self.period.ok_or_else(|| invalid("pdf", "must be folded"))?;
        let n_bins = (period / bin_width).round() as usize;
        if ((n_bins as f64) * bin_width - period).abs() > 1e-9 * period {
            return Err(invalid("bin_width", "period must be an integer number of bins"));
        }
        Ok((0..n_bins)
            .map(|i| self.integrate(i as f64 * bin_width, (i + 1) as f64 * bin_width))
            .collect())
    }

    /// The same density translated by `dt`, which must be a whole number of grid steps.
    pub fn translated(&self, dt: f64) -> Result<ArrivalPdf> {
        let k = (dt / self.step).round();
        if (k * self.step - dt).abs() > 1e-6 * self.step {
            return Err(invalid("dt", "translation must be a multiple of the grid step"));
        }
        if self.is_folded() {
            let n = self.density.len() as i64;
            let k = k as i64;
            let density = (0..n)
                .map(|i| self.density[(i - k).rem_euclid(n) as usize])
                .collect();
            return Ok(ArrivalPdf { density, ..self.clone() });
        }
        Ok(ArrivalPdf {
            first: self.first + k as i64,
            ..self.clone()
        })
    }
}

fn trapezoid(y: &[f64], h: f64) -> f64 {
    match y.len() {
        0 | 1 => 0.0,
        n => h * (y.iter().sum::<f64>() - 0.5 * (y[0] + y[n - 1])),
    }
}

/// Kernel weights `h k(u)` on the grid, normalised to unit sum.
fn kernel_weights(spad: &SpadModel, step: f64) -> (i64, Vec<f64>) {
    let (lo, hi) = spad.support();
    let first = (lo / step).floor() as i64;
    let last = (hi / step).ceil() as i64;
    let mut w: Vec<f64> = (first..=last).map(|g| spad_kernel(spad, g as f64 * step) * step).collect();
    // trim the numerically empty left tail of strongly skewed kernels
    let peak = w.iter().cloned().fold(0.0, f64::max);
    let lead = w.iter().position(|&x| x > 1e-18 * peak).unwrap_or(0);
    let trail = w.iter().rposition(|&x| x > 1e-18 * peak).unwrap_or(w.len() - 1);
    let w: Vec<f64> = w.drain(lead..=trail).collect();
    let s: f64 = w.iter().sum();
    (first + lead as i64, w.into_iter().map(|x| x / s).collect())
}

/// Convolution with the zero-mean SPAD kernel.
pub fn convolve_spad(pdf: &ArrivalPdf, spad: &SpadModel) -> Result<ArrivalPdf> {
    if pdf.is_folded() {
        return Err(invalid("pdf", "convolution expects an unfolded density"));
    }
    spad.validate()?;
    let mut meta = pdf.meta;
    meta.spad = Some(*spad);
    if spad.jitter_std() < 0.05 * pdf.step {
        return Ok(ArrivalPdf { meta, ..pdf.clone() });
    }
    let (k_first, weights) = kernel_weights(spad, pdf.step);
    let n = pdf.density.len();
    let m = weights.len();
    let mut out = vec![0.0; n + m - 1];
    for (i, &p) in pdf.density.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (j, &w) in weights.iter().enumerate() {
            out[i + j] += p * w;
        }
    }
    Ok(ArrivalPdf {
        first: pdf.first + k_first,
        step: pdf.step,
        density: out,
        period: None,
        meta,
    })
}

/// Equal-weight mixture of the early and late densities.
pub fn total_pdf(early: &ArrivalPdf, late: &ArrivalPdf) -> Result<ArrivalPdf> {
    if early.step != late.step {
        return Err(Error::GridMismatch(format!("steps {} vs {}", early.step, late.step)));
    }
    if early.period != late.period {
        return Err(Error::GridMismatch("folded and unfolded densities mixed".into()));
    }
    if early.period.is_some() {
        let density = early
            .density
            .iter()
            .zip(&late.density)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        return Ok(ArrivalPdf { density, ..early.clone() });
    }
    let first = early.first.min(late.first);
    let end = (early.first + early.density.len() as i64).max(late.first + late.density.len() as i64);
    let mut density = vec![0.0; (end - first) as usize];
    for src in [early, late] {
        let off = (src.first - first) as usize;
        for (i, d) in src.density.iter().enumerate() {
            density[off + i] += 0.5 * d;
        }
    }
    Ok(ArrivalPdf {
        first,
        step: early.step,
        density,
        period: None,
        meta: early.meta,
    })
}

/// Folds `p(tau + m * period)` over the given range of `m`.
pub fn fold(pdf: &ArrivalPdf, period: f64, m_span: RangeInclusive<i64>) -> Result<ArrivalPdf> {
    if pdf.is_folded() {
        return Err(invalid("pdf", "already folded"));
    }
    let n = (period / pdf.step).round() as i64;
    if n <= 0 || ((n as f64) * pdf.step - period).abs() > 1e-6 * pdf.step {
        return Err(invalid("period", "must be a positive multiple of the grid step"));
    }
    let total = pdf.integral();
    let mut folded = vec![0.0; n as usize];
    let mut outside = 0.0;
    for (i, &d) in pdf.density.iter().enumerate() {
        let g = pdf.first + i as i64;
        let m = g.div_euclid(n);
        if m_span.contains(&m) {
            folded[g.rem_euclid(n) as usize] += d;
        } else {
            outside += d;
        }
    }
    let deficit = outside * pdf.step / total.max(f64::MIN_POSITIVE);
    if deficit > 1e-9 {
        return Err(Error::InsufficientFoldSpan {
            m_min: *m_span.start(),
            m_max: *m_span.end(),
            deficit,
        });
    }
    Ok(ArrivalPdf {
        first: 0,
        step: pdf.step,
        density: folded,
        period: Some(period),
        meta: pdf.meta,
    })
}

/// Folds over the smallest range of `m` that covers the whole support.
pub fn fold_auto(pdf: &ArrivalPdf, period: f64) -> Result<ArrivalPdf> {
    let t0 = pdf.time(0);
    let t1 = pdf.time(pdf.density.len().saturating_sub(1));
    let m_min = (t0 / period).floor() as i64;
    let m_max = (t1 / period).floor() as i64;
    fold(pdf, period, m_min..=m_max)
}

/// Mass of a folded density inside a filtering window.
pub fn leakage_probability(pdf: &ArrivalPdf, window: &FilterWindow) -> Result<f64> {
    if !pdf.is_folded() {
        return Err(invalid("pdf", "leakage needs a folded density"));
    }
    Ok(pdf.integrate(window.start(), window.end()))
}

/// Analytic drift-induced QBER for a given pulse width, detector and time-bin size.
///
/// Early photons are centred at `T_bin/2`, late ones at `3 T_bin/2`, folded over
/// `2 T_bin` with `t_0 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QberModel {
    pub sigma: f64,
    pub spad: SpadModel,
    pub t_bin: f64,
    pub step: f64,
}

impl QberModel {
    pub fn new(sigma: f64, spad: SpadModel, t_bin: f64) -> Self {
        QberModel {
            sigma,
            spad,
            t_bin,
            step: DEFAULT_STEP,
        }
    }

    pub fn early_center(&self) -> f64 {
        self.t_bin / 2.0
    }

    pub fn late_center(&self) -> f64 {
        1.5 * self.t_bin
    }

    /// Unfolded early-bin density including detector jitter, for a drift shift `shift`.
    pub fn early_pdf(&self, shift: f64) -> Result<ArrivalPdf> {
        let params = DriftParams {
            sigma: self.sigma,
            t_drift: shift,
            t_int: 1.0,
            t_0: 0.0,
            bin_center: self.early_center(),
        };
        convolve_spad(&ArrivalPdf::from_drift(&params, self.step)?, &self.spad)
    }

    /// Early-bin density folded over `2 T_bin`.
    pub fn folded_early(&self, shift: f64) -> Result<ArrivalPdf> {
        fold_auto(&self.early_pdf(shift)?, 2.0 * self.t_bin)
    }

    /// `(P_right, P_wrong)`: early-photon mass in the early and late windows.
    pub fn window_masses(&self, folded_early: &ArrivalPdf, width: f64) -> Result<(f64, f64)> {
        let right = leakage_probability(folded_early, &FilterWindow::new(self.early_center(), width))?;
        let wrong = leakage_probability(folded_early, &FilterWindow::new(self.late_center(), width))?;
        Ok((right, wrong))
    }

    /// Drift-induced QBER `P_wrong / (P_right + P_wrong)` at shift `shift` and window `width`.
    pub fn drift_qber(&self, shift: f64, width: f64) -> Result<f64> {
        if !(width > 0.0 && width <= self.t_bin) {
            return Err(invalid("window_width", "must be in (0, T_bin]"));
        }
        let folded = self.folded_early(shift)?;
        let (right, wrong) = self.window_masses(&folded, width)?;
        Ok(wrong / (right + wrong))
    }

    /// QBER for several window widths from a single density evaluation.
    pub fn drift_qber_widths(&self, shift: f64, widths: &[f64]) -> Result<Vec<f64>> {
        let folded = self.folded_early(shift)?;
        widths
            .iter()
            .map(|&w| {
                let (right, wrong) = self.window_masses(&folded, w)?;
                Ok(wrong / (right + wrong))
            })
            .collect()
    }

    /// Largest positive shift keeping the QBER at or below `threshold`, to 0.5 ps.
    pub fn invert_drift_for_threshold(&self, threshold: f64, width: f64) -> Result<f64> {
        if !(threshold > 0.0 && threshold < 0.5) {
            return Err(invalid("threshold", "must be in (0, 0.5)"));
        }
        let at_zero = self.drift_qber(0.0, width)?;
        if at_zero > threshold {
            return Err(Error::Unreachable {
                threshold,
                reason: format!("QBER is already {at_zero:.3e} without drift"),
            });
        }
        if self.drift_qber(self.t_bin, width)? <= threshold {
            return Ok(self.t_bin);
        }
        let (mut lo, mut hi) = (0.0, self.t_bin);
        while hi - lo > 0.5e-12 {
            let mid = 0.5 * (lo + hi);
            if self.drift_qber(mid, width)? <= threshold {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::PS;

    fn params(shift: f64) -> DriftParams {
        DriftParams {
            sigma: 50.0 * PS,
            t_drift: shift,
            t_int: 1.0,
            t_0: 0.0,
            bin_center: 0.5e-9,
        }
    }

    #[test]
    fn small_drift_matches_gaussian() {
        let s = 50.0 * PS;
        for &t in &[0.3e-9, 0.45e-9, 0.5e-9, 0.62e-9] {
            let c = 0.5e-9 + 0.5e-15;
            let g = std_normal_pdf((t - c) / s) / s;
            let d = drift_pdf(s, 1e-12, 1e-3, 0.0, 0.5e-9, t);
            assert!((d / g - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn negative_drift_mirrors_positive() {
        let s = 50.0 * PS;
        let shift = 300.0 * PS;
        for i in 0..20 {
            let t = i as f64 * 60.0 * PS;
            let pos = drift_pdf(s, shift, 1.0, 0.0, 0.0, t);
            let neg = drift_pdf(s, -shift, 1.0, 0.0, 0.0, t - shift);
            assert!((pos - neg).abs() <= 1e-9 * pos + 1e-300);
        }
    }

    #[test]
    fn sampled_density_is_normalised() {
        for &shift in &[0.0, 80.0 * PS, -400.0 * PS, 0.9e-9] {
            let p = ArrivalPdf::from_drift(&params(shift), DEFAULT_STEP).unwrap();
            assert!((p.integral() - 1.0).abs() < 1e-6);
            assert!(p.density().iter().all(|&d| d >= 0.0));
        }
    }

    #[test]
    fn fold_inside_period_is_identity() {
        let p = ArrivalPdf::from_drift(&params(0.0), DEFAULT_STEP).unwrap();
        let f = fold_auto(&p, 2e-9).unwrap();
        for &t in &[0.3e-9, 0.5e-9, 0.71e-9] {
            assert!((f.value_at(t) - p.value_at(t)).abs() < 1e-9 * p.value_at(0.5e-9));
        }
        assert!((f.integral() - p.integral()).abs() < 1e-9);
    }

    #[test]
    fn fold_rejects_short_span() {
        let p = ArrivalPdf::from_drift(&params(0.9e-9), DEFAULT_STEP).unwrap();
        let err = fold(&p, 1e-9, 0..=0).unwrap_err();
        assert!(matches!(err, Error::InsufficientFoldSpan { .. }));
    }

    #[test]
    fn total_pdf_requires_matching_steps() {
        let a = ArrivalPdf::from_drift(&params(0.0), 0.5 * PS).unwrap();
        let b = ArrivalPdf::from_drift(&params(0.0), 1.0 * PS).unwrap();
        assert!(matches!(total_pdf(&a, &b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn window_integration_wraps() {
        let p = ArrivalPdf::from_drift(&DriftParams { bin_center: 0.0, ..params(0.0) }, DEFAULT_STEP).unwrap();
        let f = fold_auto(&p, 1e-9).unwrap();
        let w = FilterWindow::new(0.0, 0.6e-9);
        let m = leakage_probability(&f, &w).unwrap();
        assert!((m - 1.0).abs() < 1e-6, "{m}");
    }

    #[test]
    fn narrow_kernel_is_identity() {
        let p = ArrivalPdf::from_drift(&params(100.0 * PS), DEFAULT_STEP).unwrap();
        let spad = SpadModel { skew_scale: 1e-16, ..SpadModel::default() };
        let q = convolve_spad(&p, &spad).unwrap();
        assert_eq!(q.density(), p.density());
    }

    #[test]
    fn well_separated_bins_do_not_leak() {
        let spad = SpadModel { skew_shape: 0.0, skew_scale: 20.0 * PS, ..SpadModel::default() };
        let m = QberModel::new(30.0 * PS, spad, 1e-9);
        assert!(m.drift_qber(0.0, 1e-9).unwrap() < 1e-12);
    }

    #[test]
    fn qber_rejects_oversized_window() {
        let m = QberModel::new(30.0 * PS, SpadModel::default(), 1e-9);
        assert!(m.drift_qber(0.0, 1.5e-9).is_err());
        assert!(m.invert_drift_for_threshold(0.6, 0.3e-9).is_err());
    }
}
