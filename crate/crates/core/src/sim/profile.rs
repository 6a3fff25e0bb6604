//! Cached folded detection profile for fast binned acquisitions.

use crate::error::{invalid, Result};
use crate::pdf::ArrivalPdf;

/// Folded density stored as its cumulative distribution, so that bin masses of the
/// profile shifted by an arbitrary offset cost two interpolations per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedProfile {
    cdf: Vec<f64>,
    step: f64,
    period: f64,
}

impl FoldedProfile {
    pub fn new(pdf: &ArrivalPdf) -> Result<Self> {
        let period = pdf.period().ok_or_else(|| invalid("pdf", "must be folded"))?;
        let mut cdf = pdf.folded_cdf()?;
        let total = *cdf.last().expect("non-empty");
        for c in cdf.iter_mut() {
            *c /= total;
        }
        Ok(FoldedProfile {
            cdf,
            step: pdf.step(),
            period,
        })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Unwrapped cumulative mass from 0 to `t` (grows by 1 per period).
    pub fn cumulative(&self, t: f64) -> f64 {
        let cycles = (t / self.period).floor();
        let r = t - cycles * self.period;
        let x = r / self.step;
        let n = self.cdf.len() - 1;
        let i = (x.floor() as usize).min(n - 1);
        let f = x - i as f64;
        cycles + self.cdf[i] * (1.0 - f) + self.cdf[i + 1] * f
    }

    /// Mass in `[a, b)` of the profile delayed by `shift`.
    pub fn mass(&self, a: f64, b: f64, shift: f64) -> f64 {
        self.cumulative(b - shift) - self.cumulative(a - shift)
    }

    /// Mass in `[a, b)` of the profile delayed by a shift spread uniformly over
    /// `[shift, shift + smear]`.
    pub fn smeared_mass(&self, a: f64, b: f64, shift: f64, smear: f64) -> f64 {
        let k = smear_points(smear);
        (0..k)
            .map(|j| self.mass(a, b, shift + smear * (j as f64 + 0.5) / k as f64))
            .sum::<f64>()
            / k as f64
    }

    /// Bin masses over `[0, period)` of the smeared, delayed profile.
    pub fn bin_probabilities(&self, bin_width: f64, shift: f64, smear: f64) -> Vec<f64> {
        let n_bins = (self.period / bin_width).round() as usize;
        (0..n_bins)
            .map(|i| self.smeared_mass(i as f64 * bin_width, (i + 1) as f64 * bin_width, shift, smear))
            .collect()
    }
}

fn smear_points(smear: f64) -> usize {
    ((smear.abs() / 2e-12).ceil() as usize).clamp(1, 64)
}
