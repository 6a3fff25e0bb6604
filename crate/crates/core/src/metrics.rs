//! Statistics of tracking traces: time deviation, summaries and moving averages.

use std::io::Write;

use crate::error::{invalid, Error, Result};

/// Quantity held by a [`TimeSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Center,
    Drift,
    Qber,
    QberFiltered,
}

impl SeriesKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SeriesKind::Center => "center",
            SeriesKind::Drift => "drift",
            SeriesKind::Qber => "qber",
            SeriesKind::QberFiltered => "qber_filtered",
        }
    }
}

/// Samples at strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    timestamps: Vec<f64>,
    values: Vec<f64>,
    pub kind: SeriesKind,
}

impl TimeSeries {
    pub fn new(timestamps: Vec<f64>, values: Vec<f64>, kind: SeriesKind) -> Result<Self> {
        if timestamps.len() != values.len() {
            return Err(invalid("series", "timestamps and values differ in length"));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("series", "timestamps must be strictly increasing"));
        }
        Ok(TimeSeries { timestamps, values, kind })
    }

    /// Samples every `spacing` seconds starting at 0.
    pub fn uniform(values: Vec<f64>, spacing: f64, kind: SeriesKind) -> Result<Self> {
        let t = (0..values.len()).map(|i| i as f64 * spacing).collect();
        Self::new(t, values, kind)
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sample spacing, if uniform to within 1e-6 relative.
    pub fn spacing(&self) -> Option<f64> {
        if self.timestamps.len() < 2 {
            return None;
        }
        let t = &self.timestamps;
        let tau0 = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        t.windows(2)
            .all(|w| ((w[1] - w[0]) - tau0).abs() <= 1e-6 * tau0)
            .then_some(tau0)
    }
}

/// Overlapping time deviation at `tau = n tau0` from phase samples `x`.
pub fn tdev_samples(x: &[f64], n: usize) -> Result<f64> {
    let big_n = x.len();
    if n == 0 || big_n < 3 * n + 1 {
        return Err(Error::InsufficientSamples {
            tau: n as f64,
            needed: 3 * n + 1,
            have: big_n,
        });
    }
    // second differences d_i = x_{i+2n} - 2 x_{i+n} + x_i and their prefix sums
    let m = big_n - 2 * n;
    let mut prefix = Vec::with_capacity(m + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for i in 0..m {
        acc += x[i + 2 * n] - 2.0 * x[i + n] + x[i];
        prefix.push(acc);
    }
    let terms = big_n - 3 * n + 1;
    let sum: f64 = (0..terms).map(|j| (prefix[j + n] - prefix[j]).powi(2)).sum();
    let nf = n as f64;
    Ok((sum / (6.0 * nf * nf * terms as f64)).sqrt())
}

/// TDEV of a uniformly sampled phase series at each requested averaging time.
///
/// Each `tau` is rounded to the nearest multiple of the sample spacing.
pub fn tdev(series: &TimeSeries, taus: &[f64]) -> Result<Vec<(f64, Result<f64>)>> {
    let tau0 = series
        .spacing()
        .ok_or_else(|| invalid("series", "TDEV needs at least two uniformly spaced samples"))?;
    Ok(taus
        .iter()
        .map(|&tau| {
            let n = (tau / tau0).round().max(1.0) as usize;
            let t = n as f64 * tau0;
            let r = tdev_samples(series.values(), n).map_err(|e| match e {
                Error::InsufficientSamples { needed, have, .. } => Error::InsufficientSamples { tau: t, needed, have },
                other => other,
            });
            (t, r)
        })
        .collect())
}

/// Averaging times `tau0 * n` for `n = 1, 2, 4, ...` up to a third of the series.
pub fn octave_taus(tau0: f64, len: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut n = 1usize;
    while 3 * n < len {
        out.push(n as f64 * tau0);
        n *= 2;
    }
    out
}

pub fn write_tdev_csv<W: Write>(points: &[(f64, Result<f64>)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "tau_s,tdev_ps")?;
    for (tau, r) in points {
        if let Ok(v) = r {
            writeln!(w, "{tau},{:.4}", v * 1e12)?;
        }
    }
    Ok(())
}

/// Sample mean and standard deviation (n - 1 denominator).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Zero when undefined (single sample).
    pub std: f64,
    pub std_defined: bool,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    let n = values.len();
    if n == 0 {
        return Err(invalid("series", "cannot summarize an empty series"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(Summary { n, mean, std: 0.0, std_defined: false });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(Summary { n, mean, std: var.sqrt(), std_defined: true })
}

/// Summaries of several series, keyed by kind.
pub fn summarize_all(series: &[&TimeSeries]) -> Result<Vec<(SeriesKind, Summary)>> {
    series.iter().map(|s| Ok((s.kind, summarize(s.values())?))).collect()
}

/// Flat `key=value` summary lines, values scaled by `scale` (e.g. 1e12 for ps).
pub fn write_summary<W: Write>(entries: &[(SeriesKind, Summary, f64, &str)], mut w: W) -> std::io::Result<()> {
    for (kind, s, scale, unit) in entries {
        let k = kind.as_str();
        writeln!(w, "{k}.n={}", s.n)?;
        writeln!(w, "{k}.mean_{unit}={:.6}", s.mean * scale)?;
        writeln!(w, "{k}.std_{unit}={:.6}", s.std * scale)?;
        if !s.std_defined {
            writeln!(w, "{k}.std_defined=false")?;
        }
    }
    Ok(())
}

/// Centred boxcar average over `[t - window/2, t + window/2]`, shrinking at the edges.
pub fn moving_average(series: &TimeSeries, window: f64) -> Result<TimeSeries> {
    if series.len() >= 2 {
        let min_dt = series
            .timestamps
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        if !(window > min_dt) {
            return Err(invalid("window", "must exceed the sample spacing"));
        }
    }
    let t = &series.timestamps;
    let v = &series.values;
    let mut prefix = vec![0.0; v.len() + 1];
    for (i, x) in v.iter().enumerate() {
        prefix[i + 1] = prefix[i] + x;
    }
    let (mut lo, mut hi) = (0usize, 0usize);
    let mut out = Vec::with_capacity(v.len());
    for &ti in t {
        while t[lo] < ti - window / 2.0 {
            lo += 1;
        }
        while hi < t.len() && t[hi] <= ti + window / 2.0 {
            hi += 1;
        }
        out.push((prefix[hi] - prefix[lo]) / (hi - lo) as f64);
    }
    TimeSeries::new(t.clone(), out, series.kind)
}
