//! Integration-time ramp, offset recovery and tracking loop.

use std::io::Write;

use super::link::SyncLink;
use super::{
    circular_mean, estimate_delay, estimate_drift_with_floor, pattern_template, recover_offset, CircularMean,
    OffsetLock,
};
use crate::error::{invalid, Error, Result};
use crate::physics::spad_phase_bias;
use crate::sim::QberMeasurement;

/// Controller phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Ramping,
    OffsetRecovery,
    Tracking,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Ramping => "ramping",
            Phase::OffsetRecovery => "offset_recovery",
            Phase::Tracking => "tracking",
        }
    }
}

/// Schedule and thresholds of the synchronization loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampConfig {
    pub t_int_start: f64,
    pub t_int_max: f64,
    /// Factor applied to `T_int` after each stage.
    pub growth: f64,
    pub iters_per_stage: usize,
    /// Mean photon number while ramping.
    pub n_bar_ramp: f64,
    /// Mean photon number from the first full-length acquisition on.
    pub n_bar_final: f64,
    pub window_width: f64,
    /// Estimates with `|t_hat| T_int` above this fraction of `T_bin / 2` trigger a rollback.
    pub guard: f64,
    pub max_flat_retries: usize,
    pub modulus_floor: f64,
    pub lock_threshold: f64,
    pub correct_phi_q: bool,
    pub recover_offset: bool,
    /// Skip the ramp and track at `t_int_max` from the first iteration.
    pub start_tracking: bool,
}

impl Default for RampConfig {
    fn default() -> Self {
        RampConfig {
            t_int_start: 155e-6,
            t_int_max: 0.5,
            growth: 4.0,
            iters_per_stage: 3,
            n_bar_ramp: 10.0,
            n_bar_final: 0.225,
            window_width: 300e-12,
            guard: 0.95,
            max_flat_retries: 3,
            modulus_floor: super::MODULUS_FLOOR,
            lock_threshold: super::LOCK_THRESHOLD,
            correct_phi_q: true,
            recover_offset: true,
            start_tracking: false,
        }
    }
}

impl RampConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_int_start > 0.0 && self.t_int_max >= self.t_int_start) {
            return Err(invalid("t_int", "need 0 < t_int_start <= t_int_max"));
        }
        if !(self.growth > 1.0) {
            return Err(invalid("growth", "must be > 1"));
        }
        if self.iters_per_stage == 0 {
            return Err(invalid("iters_per_stage", "must be >= 1"));
        }
        if !(self.n_bar_ramp > 0.0 && self.n_bar_final > 0.0) {
            return Err(invalid("n_bar", "must be > 0"));
        }
        if !(self.guard > 0.0 && self.guard <= 1.0) {
            return Err(invalid("guard", "must be in (0, 1]"));
        }
        Ok(())
    }

    /// Acquisition lengths of the ramp up to and including the first `t_int_max` stage.
    pub fn schedule(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut t = self.t_int_start;
        loop {
            out.push(t);
            if t >= self.t_int_max {
                return out;
            }
            t = (t * self.growth).min(self.t_int_max);
        }
    }
}

/// What happened in one controller iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Acquisition time accumulated before this iteration (s).
    pub t_cumulative: f64,
    pub t_int: f64,
    pub n_bar: f64,
    pub phase: Phase,
    /// `NaN` when the histograms were flat.
    pub drift_est: f64,
    /// Total TDC delay change requested this iteration (s).
    pub delay_applied: f64,
    /// Corrected early-bin centre of the second histogram, in `[0, T_bin)` (s).
    pub mean_center: f64,
    pub qber: QberMeasurement,
    pub true_drift: f64,
    pub lock: Option<OffsetLock>,
    pub rolled_back: bool,
    pub counts: (u64, u64),
}

/// Mutable controller state.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncState {
    pub phase: Phase,
    pub t_int_current: f64,
    pub n_bar_current: f64,
    pub iteration: usize,
    pub last_mean: Option<CircularMean>,
    pub phi_q: f64,
    pub history: Vec<IterationRecord>,
}

/// Closed-loop synchronizer: acquire, estimate, compensate.
#[derive(Debug, Clone)]
pub struct SyncController {
    cfg: RampConfig,
    state: SyncState,
    stage_iter: usize,
    flat_retries: usize,
    carry: f64,
    t_cumulative: f64,
    template: Option<Vec<f64>>,
}

impl SyncController {
    pub fn new<L: SyncLink>(cfg: RampConfig, link: &L) -> Result<Self> {
        cfg.validate()?;
        let model = link.qber_model();
        let phi_q = spad_phase_bias(&model.spad, model.t_bin);
        let template = match link.pattern() {
            Some(p) if cfg.recover_offset && !cfg.start_tracking => {
                let profile = model.folded_early(0.0)?.bin_probabilities(100e-12)?;
                Some(pattern_template(p, &profile)?)
            }
            _ => None,
        };
        let (phase, t_int, n_bar) = if cfg.start_tracking {
            (Phase::Tracking, cfg.t_int_max, cfg.n_bar_final)
        } else {
            (Phase::Ramping, cfg.t_int_start, cfg.n_bar_ramp)
        };
        Ok(SyncController {
            cfg,
            state: SyncState {
                phase,
                t_int_current: t_int,
                n_bar_current: n_bar,
                iteration: 0,
                last_mean: None,
                phi_q,
                history: Vec::new(),
            },
            stage_iter: 0,
            flat_retries: 0,
            carry: 0.0,
            t_cumulative: 0.0,
            template,
        })
    }

    pub fn config(&self) -> &RampConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SyncState {
        &self.state
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.state.history
    }

    /// Whether the current iteration is the last one before the first full-length stage.
    fn recovery_due(&self) -> bool {
        self.cfg.recover_offset
            && self.state.phase == Phase::Ramping
            && self.stage_iter + 1 == self.cfg.iters_per_stage
            && self.state.t_int_current < self.cfg.t_int_max
            && self.state.t_int_current * self.cfg.growth >= self.cfg.t_int_max
    }

    /// Runs one iteration.
    pub fn step<L: SyncLink>(&mut self, link: &mut L) -> Result<&IterationRecord> {
        let t_bin = link.t_bin();
        let t_int = self.state.t_int_current;
        let n_bar = self.state.n_bar_current;
        let recovery = self.recovery_due() && self.template.is_some();
        let acq = link.acquire_pair(t_int, n_bar, self.cfg.window_width, recovery)?;
        let t_start = self.t_cumulative;
        self.t_cumulative += 2.0 * t_int;

        let mut record = IterationRecord {
            iter: self.state.iteration,
            t_cumulative: t_start,
            t_int,
            n_bar,
            phase: if recovery { Phase::OffsetRecovery } else { self.state.phase },
            drift_est: f64::NAN,
            delay_applied: 0.0,
            mean_center: f64::NAN,
            qber: acq.qber,
            true_drift: link.true_drift(),
            lock: None,
            rolled_back: false,
            counts: (acq.h1.total(), acq.h2.total()),
        };
        self.state.iteration += 1;

        let means = circular_mean(&acq.h1, t_bin).and_then(|m1| {
            let m2 = circular_mean(&acq.h2, t_bin)?;
            let d = estimate_drift_with_floor(&m1, &m2, t_int, t_bin, self.cfg.modulus_floor)?;
            Ok((m1, m2, d))
        });
        let (m1, m2, drift) = match means {
            Ok(v) => v,
            Err(err @ (Error::FlatHistogram { .. } | Error::NoCounts)) => {
                self.flat_retries += 1;
                if self.flat_retries > self.cfg.max_flat_retries {
                    return Err(err);
                }
                self.state.history.push(record);
                return Ok(self.state.history.last().expect("just pushed"));
            }
            Err(e) => return Err(e),
        };
        self.flat_retries = 0;
        self.state.last_mean = Some(m2);
        record.drift_est = drift;

        let phi = if self.cfg.correct_phi_q { self.state.phi_q } else { 0.0 };
        record.mean_center = m2.center(t_bin, phi);

        if self.state.phase != Phase::Tracking
            && t_int > self.cfg.t_int_start
            && drift.abs() * t_int > self.cfg.guard * t_bin / 2.0
        {
            self.state.t_int_current = (t_int / 2.0).max(self.cfg.t_int_start);
            self.stage_iter = 0;
            record.rolled_back = true;
            self.state.history.push(record);
            return Ok(self.state.history.last().expect("just pushed"));
        }

        let mu_e = 0.5 * t_bin;
        let delay = estimate_delay(&m1, drift, t_int, t_bin, mu_e, phi);
        link.apply_frequency_update(drift)?;
        link.tdc_mut().adjust_delay(delay, &mut self.carry);
        record.delay_applied = delay;

        if recovery {
            let hist = acq
                .pattern_hist
                .as_ref()
                .ok_or_else(|| invalid("link", "no pattern histogram for offset recovery"))?;
            let template = self.template.as_ref().expect("checked above");
            let lock = recover_offset(hist, template, self.cfg.lock_threshold)?;
            let period = hist.period();
            let s = if lock.shift > period / 2.0 { lock.shift - period } else { lock.shift };
            let k = ((s + 0.5 * drift * t_int + delay) / t_bin).round();
            link.tdc_mut().adjust_delay(-k * t_bin, &mut self.carry);
            record.delay_applied -= k * t_bin;
            record.lock = Some(lock);
        }

        self.stage_iter += 1;
        if self.state.phase != Phase::Tracking && self.stage_iter >= self.cfg.iters_per_stage {
            self.stage_iter = 0;
            let next = (t_int * self.cfg.growth).min(self.cfg.t_int_max);
            self.state.t_int_current = next;
            if next >= self.cfg.t_int_max {
                self.state.phase = Phase::Tracking;
                self.state.n_bar_current = self.cfg.n_bar_final;
            }
        }
        self.state.history.push(record);
        Ok(self.state.history.last().expect("just pushed"))
    }

    /// Iterates until the tracking phase is reached.
    pub fn run_until_tracking<L: SyncLink>(&mut self, link: &mut L, max_iters: usize) -> Result<()> {
        for _ in 0..max_iters {
            if self.state.phase == Phase::Tracking {
                return Ok(());
            }
            self.step(link)?;
        }
        if self.state.phase == Phase::Tracking {
            Ok(())
        } else {
            Err(Error::Convergence(format!("not tracking after {max_iters} iterations")))
        }
    }

    /// Runs `n` further iterations.
    pub fn run_iterations<L: SyncLink>(&mut self, link: &mut L, n: usize) -> Result<()> {
        for _ in 0..n {
            self.step(link)?;
        }
        Ok(())
    }

    /// Acquisition time after which every recorded unfiltered QBER stays at or below
    /// `threshold`; `None` if the last iteration is above it.
    pub fn convergence_time(&self, threshold: f64) -> Option<f64> {
        converged_after(&self.state.history, threshold)
    }
}

/// Acquisition time after which every unfiltered QBER in `history` stays at or below
/// `threshold`.
pub fn converged_after(history: &[IterationRecord], threshold: f64) -> Option<f64> {
    let last_bad = history.iter().rposition(|r| !(r.qber.unfiltered <= threshold));
    match last_bad {
        None => history.first().map(|r| r.t_cumulative),
        Some(i) if i + 1 < history.len() => Some(history[i + 1].t_cumulative),
        Some(_) => None,
    }
}

pub const TRACE_HEADER: &str =
    "iter,t_cumulative_s,t_int_s,n_bar,drift_est_per_s,delay_applied_ps,mean_center_ps,qber,qber_filtered";

/// Writes the controller trace as CSV.
pub fn write_trace_csv<W: Write>(records: &[IterationRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{:.9},{:.9},{},{:.6e},{:.3},{:.3},{:.6},{:.6}",
            r.iter,
            r.t_cumulative,
            r.t_int,
            r.n_bar,
            r.drift_est,
            r.delay_applied * 1e12,
            r.mean_center * 1e12,
            r.qber.unfiltered,
            r.qber.filtered
        )?;
    }
    Ok(())
}
