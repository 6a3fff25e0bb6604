//! Event-level detection simulator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric, Normal, SkewNormal};

use super::{Event, EventStream, Label, TdcModel};
use crate::clock::ClockPair;
use crate::error::{invalid, Result};
use crate::physics::{channel_transmittance, pulse_sigma_at_distance, OpticalLink, SpadModel};

/// Qubit slots in Alice's repeating sequence (1 µs at 500 MHz).
pub const PATTERN_SLOTS: usize = 500;

/// Alice's repeating early/late sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    late: Vec<bool>,
}

impl Pattern {
    pub fn from_bits(late: Vec<bool>) -> Result<Self> {
        if late.is_empty() {
            return Err(invalid("pattern", "must not be empty"));
        }
        Ok(Pattern { late })
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Pattern {
            late: (0..len.max(1)).map(|_| rng.random()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.late.len()
    }

    pub fn is_empty(&self) -> bool {
        self.late.is_empty()
    }

    pub fn is_late(&self, slot: u64) -> bool {
        self.late[(slot % self.late.len() as u64) as usize]
    }

    pub fn bits(&self) -> &[bool] {
        &self.late
    }
}

/// How the early/late choice of each qubit is made.
#[derive(Debug, Clone, PartialEq)]
pub enum QubitSource {
    CoinFlip,
    Pattern(Pattern),
}

/// Per-pulse detection probability model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DetectionModel {
    /// `1 - exp(-n eta)`: Poissonian source, at most one click per pulse.
    #[default]
    Poissonian,
    /// `n eta` clamped to 1, the mean-field approximation.
    MeanField,
}

/// Oscillator and path noise applied per acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OscillatorNoise {
    /// Standard deviation of the timing offset common to one acquisition (s).
    pub white_phase: f64,
    /// Random-walk frequency noise: drift diffuses by `random_walk_fm * sqrt(dt)` (1/sqrt(s)).
    pub random_walk_fm: f64,
}

impl OscillatorNoise {
    pub fn is_zero(&self) -> bool {
        self.white_phase == 0.0 && self.random_walk_fm == 0.0
    }
}

/// Complete description of a simulated link.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub clocks: ClockPair,
    pub link: OpticalLink,
    pub spad: SpadModel,
    pub tdc: TdcModel,
    pub t_bin: f64,
    pub mean_photon: f64,
    pub source: QubitSource,
    pub rng_seed: u64,
    pub intrinsic_error: f64,
    pub detection: DetectionModel,
    pub noise: OscillatorNoise,
}

impl SimScenario {
    /// 500 MHz qubit clock, 1 ns bins, default detector, standard TDC folding over `T_bin`.
    pub fn new(clocks: ClockPair, link: OpticalLink, mean_photon: f64, seed: u64) -> Result<Self> {
        let t_bin = 1e-9;
        let s = SimScenario {
            clocks,
            link,
            spad: SpadModel::default(),
            tdc: TdcModel::standard(t_bin)?,
            t_bin,
            mean_photon,
            source: QubitSource::CoinFlip,
            rng_seed: seed,
            intrinsic_error: 0.0,
            detection: DetectionModel::default(),
            noise: OscillatorNoise::default(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn slot_period(&self) -> f64 {
        2.0 * self.t_bin
    }

    pub fn validate(&self) -> Result<()> {
        self.clocks.validate()?;
        self.link.validate()?;
        self.spad.validate()?;
        if !(self.t_bin > 0.0) {
            return Err(invalid("t_bin", "must be > 0"));
        }
        if !(self.mean_photon >= 0.0) {
            return Err(invalid("mean_photon", "must be >= 0"));
        }
        if !(0.0..=0.5).contains(&self.intrinsic_error) {
            return Err(invalid("intrinsic_error", "must be in [0, 0.5]"));
        }
        if !(self.noise.white_phase >= 0.0 && self.noise.random_walk_fm >= 0.0) {
            return Err(invalid("noise", "standard deviations must be >= 0"));
        }
        Ok(())
    }
}

/// Stateful simulator: the clocks keep running between acquisitions and Bob's
/// corrections (frequency, TDC delay) act on later detections.
#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: SimScenario,
    rng: ChaCha8Rng,
    /// Clock pair referenced to Alice time `t_ref`.
    pair: ClockPair,
    t_ref: f64,
    cursor: u64,
    last_detection: Option<(u64, f64)>,
    mean_photon: f64,
    sigma: f64,
    eta_ch: f64,
}

impl Simulator {
    pub fn new(scenario: SimScenario) -> Result<Self> {
        scenario.validate()?;
        Ok(Simulator {
            rng: ChaCha8Rng::seed_from_u64(scenario.rng_seed),
            pair: scenario.clocks,
            t_ref: 0.0,
            cursor: 0,
            last_detection: None,
            mean_photon: scenario.mean_photon,
            sigma: pulse_sigma_at_distance(&scenario.link),
            eta_ch: channel_transmittance(&scenario.link),
            scenario,
        })
    }

    pub fn scenario(&self) -> &SimScenario {
        &self.scenario
    }

    /// Current Alice time (s).
    pub fn now(&self) -> f64 {
        self.cursor as f64 * self.scenario.slot_period()
    }

    pub fn mean_photon(&self) -> f64 {
        self.mean_photon
    }

    pub fn set_mean_photon(&mut self, n: f64) {
        self.mean_photon = n;
    }

    pub fn tdc(&self) -> &TdcModel {
        &self.scenario.tdc
    }

    pub fn tdc_mut(&mut self) -> &mut TdcModel {
        &mut self.scenario.tdc
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn pulse_sigma(&self) -> f64 {
        self.sigma
    }

    pub fn channel_transmittance(&self) -> f64 {
        self.eta_ch
    }

    /// The clock pair as it stands now.
    pub fn clocks(&self) -> ClockPair {
        self.pair.advanced(self.now() - self.t_ref)
    }

    /// Current relative drift.
    pub fn drift(&self) -> f64 {
        self.clocks().drift()
    }

    /// Accumulated clock shift at Alice time `t >= t_ref`.
    pub fn shift_at(&self, t: f64) -> f64 {
        self.pair.time_shift(t - self.t_ref)
    }

    /// Bob retunes his oscillator by `f_B / (1 + estimate)`.
    pub fn apply_frequency_update(&mut self, drift_estimate: f64) -> Result<()> {
        self.rebase();
        self.pair = self.pair.apply_frequency_update(drift_estimate)?;
        Ok(())
    }

    fn rebase(&mut self) {
        let now = self.now();
        self.pair = self.pair.advanced(now - self.t_ref);
        self.t_ref = now;
    }

    /// Lets time pass without recording detections.
    pub fn idle(&mut self, duration: f64) {
        let n = (duration / self.scenario.slot_period()).round().max(0.0) as u64;
        self.cursor += n;
    }

    pub fn detection_probability(&self) -> f64 {
        let x = self.mean_photon * self.scenario.spad.efficiency * self.eta_ch;
        match self.scenario.detection {
            DetectionModel::Poissonian => -(-x).exp_m1(),
            DetectionModel::MeanField => x.min(1.0),
        }
    }

    /// Simulates the detector for `duration` and returns the registered detections.
    pub fn acquire(&mut self, duration: f64) -> Result<EventStream> {
        if !(duration > 0.0) {
            return Err(invalid("duration", "must be > 0"));
        }
        let noise = self.scenario.noise;
        if noise.random_walk_fm > 0.0 {
            self.rebase();
            let kick = Normal::new(0.0, noise.random_walk_fm * duration.sqrt())
                .map_err(|e| invalid("random_walk_fm", e.to_string()))?
                .sample(&mut self.rng);
            self.pair.f_bob = self.pair.f_alice * (1.0 + self.pair.drift() + kick);
        }
        let common = if noise.white_phase > 0.0 {
            Normal::new(0.0, noise.white_phase)
                .map_err(|e| invalid("white_phase", e.to_string()))?
                .sample(&mut self.rng)
        } else {
            0.0
        };

        let s_slot = self.scenario.slot_period();
        let t_bin = self.scenario.t_bin;
        let spad = self.scenario.spad;
        let dead = spad.dead_time;
        let start = self.cursor;
        let end = start + (duration / s_slot).round().max(1.0) as u64;
        let t_end = end as f64 * s_slot;

        let p = self.detection_probability();
        let geom = if p > 0.0 {
            Some(Geometric::new(p).map_err(|e| invalid("detection probability", e.to_string()))?)
        } else {
            None
        };
        let dark = if spad.dark_count_rate > 0.0 {
            Some(Exp::new(spad.dark_count_rate).map_err(|e| invalid("dark_count_rate", e.to_string()))?)
        } else {
            None
        };
        let jitter: SkewNormal<f64> = spad.jitter_distribution();
        let pulse = Normal::new(0.0, self.sigma).map_err(|e| invalid("sigma", e.to_string()))?;
        // photons arrive no earlier than this before their slot's nominal start plus shift
        let margin = 4.0 * s_slot + 10.0 * self.sigma + (spad.location() - spad.support().0).abs();

        let mut events = Vec::new();
        let mut alice_pos = start;
        let mut pending_alice: Option<Event> = None;
        let mut dark_pos = start as f64 * s_slot;
        let mut pending_dark: Option<f64> = None;

        loop {
            let live = match self.last_detection {
                Some((slot, delay)) => slot as f64 * s_slot + delay + dead,
                None => f64::NEG_INFINITY,
            };
            if let Some(e) = pending_alice {
                if (e.slot as f64 * s_slot + e.delay) < live {
                    pending_alice = None;
                }
            }
            while pending_alice.is_none() {
                let Some(g) = geom.as_ref() else { break };
                if live.is_finite() {
                    let floor = ((live - self.shift_at(live) - margin) / s_slot).floor();
                    if floor > alice_pos as f64 {
                        alice_pos = floor as u64;
                    }
                }
                let n = alice_pos.saturating_add(g.sample(&mut self.rng));
                if n >= end {
                    alice_pos = end;
                    break;
                }
                alice_pos = n + 1;
                let late = match &self.scenario.source {
                    QubitSource::CoinFlip => self.rng.random::<bool>(),
                    QubitSource::Pattern(pat) => pat.is_late(n),
                };
                let center = if late { 1.5 * t_bin } else { 0.5 * t_bin };
                let t_emit = n as f64 * s_slot;
                let delay = center
                    + pulse.sample(&mut self.rng)
                    + jitter.sample(&mut self.rng)
                    + self.shift_at(t_emit)
                    + common;
                if t_emit + delay >= live {
                    pending_alice = Some(Event {
                        slot: n,
                        delay,
                        label: if late { Label::Late } else { Label::Early },
                    });
                }
            }
            if let Some(t) = pending_dark {
                if t < live {
                    pending_dark = None;
                }
            }
            if pending_dark.is_none() {
                if let Some(d) = dark.as_ref() {
                    let from = dark_pos.max(live);
                    let t = from + d.sample(&mut self.rng);
                    if t < t_end {
                        pending_dark = Some(t);
                    }
                    dark_pos = t.min(t_end);
                }
            }
            let t_alice = pending_alice.map(|e| e.slot as f64 * s_slot + e.delay);
            let chosen = match (t_alice, pending_dark) {
                (None, None) => break,
                (Some(_), None) => pending_alice.take(),
                (None, Some(_)) => take_dark(&mut pending_dark, s_slot),
                (Some(a), Some(d)) => {
                    if a <= d {
                        pending_alice.take()
                    } else {
                        take_dark(&mut pending_dark, s_slot)
                    }
                }
            };
            let e = chosen.expect("a pending detection was selected");
            self.last_detection = Some((e.slot, e.delay));
            events.push(e);
        }
        self.cursor = end;
        Ok(EventStream {
            slot_period: s_slot,
            events,
        })
    }
}

fn take_dark(pending: &mut Option<f64>, s_slot: f64) -> Option<Event> {
    pending.take().map(|t| {
        let slot = (t / s_slot).floor().max(0.0) as u64;
        Event {
            slot,
            delay: t - slot as f64 * s_slot,
            label: Label::Dark,
        }
    })
}

/// One-shot event stream of the given duration from a fresh simulator.
pub fn sample_event_stream(scenario: &SimScenario, duration: f64) -> Result<EventStream> {
    Simulator::new(scenario.clone())?.acquire(duration)
}
