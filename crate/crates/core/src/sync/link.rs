//! Acquisition back-ends driven by the synchronization controller.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};

use crate::clock::ClockPair;
use crate::error::{invalid, Result};
use crate::pdf::{fold_auto, QberModel};
use crate::physics::{channel_transmittance, effective_rates, pulse_sigma_at_distance, OpticalLink, SpadModel};
use crate::sim::{
    build_histogram, measure_qber, poisson_from_probabilities, standard_windows, AssignmentRule,
    FoldedProfile, Histogram, OscillatorNoise, Pattern, QberMeasurement, QubitSource, Simulator, TdcModel,
};

/// Two back-to-back acquisitions and what was measured on them.
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    /// Histograms folded over `T_bin`.
    pub h1: Histogram,
    pub h2: Histogram,
    pub qber: QberMeasurement,
    /// Second acquisition folded over the pattern period, when requested.
    pub pattern_hist: Option<Histogram>,
}

/// Anything the controller can acquire histograms from and apply corrections to.
pub trait SyncLink {
    fn t_bin(&self) -> f64;
    /// Analytic model of the detected pulse shape, used for templates and baselines.
    fn qber_model(&self) -> QberModel;
    fn pattern(&self) -> Option<&Pattern>;
    fn acquire_pair(&mut self, t_int: f64, n_bar: f64, window_width: f64, want_pattern: bool) -> Result<Acquisition>;
    fn apply_frequency_update(&mut self, drift_estimate: f64) -> Result<()>;
    fn tdc_mut(&mut self) -> &mut TdcModel;
    /// Drift the link actually has now (diagnostics only).
    fn true_drift(&self) -> f64;
}

impl SyncLink for Simulator {
    fn t_bin(&self) -> f64 {
        self.scenario().t_bin
    }

    fn qber_model(&self) -> QberModel {
        QberModel::new(self.pulse_sigma(), self.scenario().spad, self.t_bin())
    }

    fn pattern(&self) -> Option<&Pattern> {
        match &self.scenario().source {
            QubitSource::Pattern(p) => Some(p),
            QubitSource::CoinFlip => None,
        }
    }

    fn acquire_pair(&mut self, t_int: f64, n_bar: f64, window_width: f64, want_pattern: bool) -> Result<Acquisition> {
        self.set_mean_photon(n_bar);
        let t_bin = self.t_bin();
        let start = self.now();
        let e1 = self.acquire(t_int)?;
        let e2 = self.acquire(t_int)?;
        let tdc = *self.tdc();
        let all = (f64::NEG_INFINITY, f64::INFINITY);
        let mut h1 = build_histogram(&e1, &tdc, all, t_bin)?;
        let mut h2 = build_histogram(&e2, &tdc, all, t_bin)?;
        h1.acq_start = start;
        h1.acq_duration = t_int;
        h2.acq_start = start + t_int;
        h2.acq_duration = t_int;
        let pattern = self.pattern().cloned();
        let pattern_hist = match (&pattern, want_pattern) {
            (Some(p), true) => {
                let mut h = build_histogram(&e2, &tdc, all, p.len() as f64 * e2.slot_period)?;
                h.acq_start = start + t_int;
                h.acq_duration = t_int;
                Some(h)
            }
            _ => None,
        };
        let mut merged = e1;
        merged.events.extend(e2.events);
        let rule = match &pattern {
            Some(p) => AssignmentRule::Pattern(p),
            None => AssignmentRule::TruthLabel,
        };
        let intrinsic = self.scenario().intrinsic_error;
        let windows = standard_windows(t_bin, window_width);
        let qber = measure_qber(&merged, &tdc, t_bin, windows, rule, intrinsic, self.rng_mut())?;
        Ok(Acquisition { h1, h2, qber, pattern_hist })
    }

    fn apply_frequency_update(&mut self, drift_estimate: f64) -> Result<()> {
        Simulator::apply_frequency_update(self, drift_estimate)
    }

    fn tdc_mut(&mut self) -> &mut TdcModel {
        Simulator::tdc_mut(self)
    }

    fn true_drift(&self) -> f64 {
        self.drift()
    }
}

/// Signal-photon probabilities over one qubit slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotMasses {
    /// Probability of a detection in the wrong bin.
    pub wrong: f64,
    /// Probability of a detection inside the right-bin window.
    pub kept_right: f64,
    /// Probability of a detection inside the wrong-bin window.
    pub kept_wrong: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedQber {
    pub unfiltered: f64,
    pub filtered: f64,
    /// Fraction of all detections inside the windows.
    pub kept_fraction: f64,
}

/// QBER of signal photons mixed with a fraction `f_dark` of uniform dark counts,
/// with intrinsic bit flips at rate `intrinsic` on the signal.
pub fn expected_qber(m: SlotMasses, f_dark: f64, dark_keep: f64, intrinsic: f64) -> ExpectedQber {
    let e = intrinsic;
    let flip = |p_wrong: f64, p_right: f64| p_wrong * (1.0 - e) + p_right * e;
    let unfiltered = 0.5 * f_dark + (1.0 - f_dark) * flip(m.wrong, 1.0 - m.wrong);
    let keep = f_dark * dark_keep + (1.0 - f_dark) * (m.kept_right + m.kept_wrong);
    let filtered = if keep > 0.0 {
        (0.5 * f_dark * dark_keep + (1.0 - f_dark) * flip(m.kept_wrong, m.kept_right)) / keep
    } else {
        0.0
    };
    ExpectedQber { unfiltered, filtered, kept_fraction: keep }
}

/// Expected QBER of a perfectly synchronized link.
pub fn baseline_qber(
    model: &QberModel,
    f_alice: f64,
    n_bar: f64,
    eta_ch: f64,
    window_width: f64,
    intrinsic: f64,
) -> Result<ExpectedQber> {
    let folded = model.folded_early(0.0)?;
    let (right_all, wrong) = model.window_masses(&folded, model.t_bin)?;
    let (kept_right, kept_wrong) = model.window_masses(&folded, window_width)?;
    let rates = effective_rates(&model.spad, f_alice, n_bar, eta_ch);
    let f_dark = if rates.total() > 0.0 { rates.dark / rates.total() } else { 0.0 };
    let norm = right_all + wrong;
    let masses = SlotMasses { wrong: wrong / norm, kept_right, kept_wrong };
    Ok(expected_qber(masses, f_dark, window_width / model.t_bin, intrinsic))
}

/// Accelerated link: histograms are drawn bin by bin from the analytic detection
/// profile, and QBER counts from the corresponding error probabilities.
///
/// Suited to long tracking runs; there is no pattern, so offset recovery is unavailable.
#[derive(Debug, Clone)]
pub struct BinnedLink {
    model: QberModel,
    /// Early-photon profile folded over `T_bin`.
    bin_profile: FoldedProfile,
    /// Early-photon profile folded over the qubit slot `2 T_bin`.
    slot_profile: FoldedProfile,
    spad: SpadModel,
    f_alice: f64,
    eta_ch: f64,
    intrinsic_error: f64,
    noise: OscillatorNoise,
    tdc: TdcModel,
    pair: ClockPair,
    t_ref: f64,
    now: f64,
    rng: ChaCha8Rng,
}

impl BinnedLink {
    pub fn new(
        clocks: ClockPair,
        link: &OpticalLink,
        spad: SpadModel,
        t_bin: f64,
        intrinsic_error: f64,
        noise: OscillatorNoise,
        seed: u64,
    ) -> Result<Self> {
        clocks.validate()?;
        link.validate()?;
        spad.validate()?;
        if !(0.0..=0.5).contains(&intrinsic_error) {
            return Err(invalid("intrinsic_error", "must be in [0, 0.5]"));
        }
        let model = QberModel::new(pulse_sigma_at_distance(link), spad, t_bin);
        let early = model.early_pdf(0.0)?;
        Ok(BinnedLink {
            bin_profile: FoldedProfile::new(&fold_auto(&early, t_bin)?)?,
            slot_profile: FoldedProfile::new(&fold_auto(&early, 2.0 * t_bin)?)?,
            model,
            spad,
            f_alice: clocks.f_alice,
            eta_ch: channel_transmittance(link),
            intrinsic_error,
            noise,
            tdc: TdcModel::standard(t_bin)?,
            pair: clocks,
            t_ref: 0.0,
            now: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    fn rebase(&mut self) {
        self.pair = self.pair.advanced(self.now - self.t_ref);
        self.t_ref = self.now;
    }

    fn shift_at(&self, t: f64) -> f64 {
        self.pair.time_shift(t - self.t_ref)
    }

    /// One acquisition: histogram plus the displacement and smear it was drawn with.
    fn acquire_one(&mut self, t_int: f64, rates: (f64, f64)) -> Result<(Histogram, f64, f64)> {
        if self.noise.random_walk_fm > 0.0 {
            self.rebase();
            let kick = Normal::new(0.0, self.noise.random_walk_fm * t_int.sqrt())
                .map_err(|e| invalid("random_walk_fm", e.to_string()))?
                .sample(&mut self.rng);
            self.pair.f_bob = self.pair.f_alice * (1.0 + self.pair.drift() + kick);
        }
        let common = if self.noise.white_phase > 0.0 {
            Normal::new(0.0, self.noise.white_phase)
                .map_err(|e| invalid("white_phase", e.to_string()))?
                .sample(&mut self.rng)
        } else {
            0.0
        };
        let s0 = self.shift_at(self.now);
        let smear = self.shift_at(self.now + t_int) - s0;
        let shift = s0 + self.tdc.delay_register() + common;
        let probs = self.bin_profile.bin_probabilities(self.tdc.bin_width, shift, smear);
        let mut h = poisson_from_probabilities(&probs, rates, t_int, self.tdc.bin_width, &mut self.rng)?;
        h.acq_start = self.now;
        self.now += t_int;
        Ok((h, shift, smear))
    }
}

impl SyncLink for BinnedLink {
    fn t_bin(&self) -> f64 {
        self.model.t_bin
    }

    fn qber_model(&self) -> QberModel {
        self.model
    }

    fn pattern(&self) -> Option<&Pattern> {
        None
    }

    fn acquire_pair(&mut self, t_int: f64, n_bar: f64, window_width: f64, _want_pattern: bool) -> Result<Acquisition> {
        let rates = effective_rates(&self.spad, self.f_alice, n_bar, self.eta_ch);
        let (h1, s1, d1) = self.acquire_one(t_int, (rates.alice, rates.dark))?;
        let (h2, s2, d2) = self.acquire_one(t_int, (rates.alice, rates.dark))?;

        let t_bin = self.model.t_bin;
        let (e_win, l_win) = standard_windows(t_bin, window_width);
        let mut wrong = 0.0;
        let mut kept_right = 0.0;
        let mut kept_wrong = 0.0;
        for (s, d) in [(s1, d1), (s2, d2)] {
            let p = &self.slot_profile;
            wrong += 0.5 * p.smeared_mass(t_bin, 2.0 * t_bin, s, d);
            kept_right += 0.5 * p.smeared_mass(e_win.start(), e_win.end(), s, d);
            kept_wrong += 0.5 * p.smeared_mass(l_win.start(), l_win.end(), s, d);
        }
        let f_dark = if rates.total() > 0.0 { rates.dark / rates.total() } else { 0.0 };
        let masses = SlotMasses { wrong, kept_right, kept_wrong };
        let q = expected_qber(masses, f_dark, window_width / t_bin, self.intrinsic_error);
        let (q_all, keep, q_kept) = (q.unfiltered, q.kept_fraction, q.filtered);
        let n = h1.total() + h2.total();
        let draw = |n: u64, p: f64, rng: &mut ChaCha8Rng| -> Result<u64> {
            Ok(Binomial::new(n, p.clamp(0.0, 1.0))
                .map_err(|e| invalid("binomial", e.to_string()))?
                .sample(rng))
        };
        let err_all = draw(n, q_all, &mut self.rng)?;
        let n_kept = draw(n, keep, &mut self.rng)?;
        let err_kept = draw(n_kept, q_kept, &mut self.rng)?;
        Ok(Acquisition {
            h1,
            h2,
            qber: QberMeasurement::from_counts(n, err_all, n_kept, err_kept),
            pattern_hist: None,
        })
    }

    fn apply_frequency_update(&mut self, drift_estimate: f64) -> Result<()> {
        self.rebase();
        self.pair = self.pair.apply_frequency_update(drift_estimate)?;
        Ok(())
    }

    fn tdc_mut(&mut self) -> &mut TdcModel {
        &mut self.tdc
    }

    fn true_drift(&self) -> f64 {
        self.pair.advanced(self.now - self.t_ref).drift()
    }
}
