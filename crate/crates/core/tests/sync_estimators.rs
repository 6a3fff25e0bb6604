use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use qkd_clocksync::cli::{point_rng, sync_once, Command, RunConfig};
use qkd_clocksync::clock::ClockPair;
use qkd_clocksync::pdf::{fold_auto, QberModel};
use qkd_clocksync::physics::{pulse_sigma_at_distance, spad_phase_bias, OpticalLink, SpadModel};
use qkd_clocksync::sim::{build_histogram, FoldedProfile, Histogram, Pattern, QubitSource, SimScenario, Simulator};
use qkd_clocksync::sync::{
    circular_mean, circular_mean_weights, estimate_delay, estimate_delay_late, estimate_drift, pattern_template,
    recover_offset, wrap_delay, CircularMean, LOCK_THRESHOLD,
};
use qkd_clocksync::{Error, PS};

const T_BIN: f64 = 1e-9;
const BW: f64 = 100e-12;

fn model_at(km: f64) -> QberModel {
    QberModel::new(pulse_sigma_at_distance(&OpticalLink::default().with_fiber_km(km)), SpadModel::default(), T_BIN)
}

fn bin_profile(km: f64) -> FoldedProfile {
    FoldedProfile::new(&fold_auto(&model_at(km).early_pdf(0.0).unwrap(), T_BIN).unwrap()).unwrap()
}

/// Expected-count circular means of two back-to-back acquisitions starting at `offset`.
fn noiseless_pair(profile: &FoldedProfile, offset: f64, drift: f64, t_int: f64) -> (CircularMean, CircularMean) {
    let d = drift * t_int;
    let m1 = circular_mean_weights(&profile.bin_probabilities(BW, offset, d), BW, T_BIN).unwrap();
    let m2 = circular_mean_weights(&profile.bin_probabilities(BW, offset + d, d), BW, T_BIN).unwrap();
    (m1, m2)
}

fn poisson_hist(probs: &[f64], expected: f64, dark: f64, rng: &mut ChaCha8Rng) -> Histogram {
    use rand_distr::{Distribution, Poisson};
    let mut h = Histogram::zeros(probs.len(), BW, 0.0, 0.0);
    for (c, p) in h.counts.iter_mut().zip(probs) {
        let lambda = expected * p + dark / probs.len() as f64;
        *c = Poisson::new(lambda).unwrap().sample(rng) as u64;
    }
    h
}

#[test]
fn noiseless_estimates_over_grid() {
    let profile = bin_profile(0.0);
    let drifts: [f64; 9] = [-3e-6, -1e-6, -2e-7, -3e-8, 2e-8, 1e-7, 4e-7, 1.5e-6, 3e-6];
    let t_ints = [155e-6, 620e-6, 2.48e-3, 9.92e-3];
    let mut checked = 0;
    for &td in &drifts {
        for &ti in &t_ints {
            if (td * ti).abs() >= 0.5 * T_BIN {
                continue;
            }
            let (m1, m2) = noiseless_pair(&profile, 0.0, td, ti);
            let est = estimate_drift(&m1, &m2, ti, T_BIN).unwrap();
            assert!((est / td - 1.0).abs() < 1e-3, "{td:e} {ti:e}: {est:e}");
            checked += 1;
        }
    }
    assert!(checked >= 15);
}

#[test]
fn flat_histograms_are_rejected() {
    let flat = vec![1.0; 10];
    let m = circular_mean_weights(&flat, BW, T_BIN).unwrap();
    assert!(m.modulus() < 1e-12);
    assert!(matches!(estimate_drift(&m, &m, 1e-3, T_BIN), Err(Error::FlatHistogram { .. })));
    assert!(matches!(circular_mean_weights(&[0.0; 10], BW, T_BIN), Err(Error::NoCounts)));
}

proptest! {
    #[test]
    fn drift_estimate_is_periodic_in_the_bin(
        base in -PI..PI,
        frac in -0.49f64..0.49,
        k in -5i32..5,
        t_int in 1e-4f64..1.0,
    ) {
        let m = |phase: f64| CircularMean { value: Complex64::from_polar(0.8, phase), count: 100.0 };
        let m1 = m(base);
        let shift = frac * T_BIN;
        let a = estimate_drift(&m1, &m(base + 2.0 * PI * frac), t_int, T_BIN).unwrap();
        let b = estimate_drift(&m1, &m(base + 2.0 * PI * (frac + k as f64)), t_int, T_BIN).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12 / t_int));
        prop_assert!((a - shift / t_int).abs() <= 1e-9 * (T_BIN / t_int));
    }

    #[test]
    fn wrapped_delay_stays_in_half_bin(d in -10e-9f64..10e-9) {
        let w = wrap_delay(d, T_BIN);
        prop_assert!(w > -0.5 * T_BIN - 1e-21 && w <= 0.5 * T_BIN + 1e-21);
        let k = ((d - w) / T_BIN).round();
        prop_assert!((d - w - k * T_BIN).abs() < 1e-18);
    }
}

#[test]
fn pattern_shift_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pattern = Pattern::random(500, &mut rng);
    let slot = model_at(0.0).folded_early(0.0).unwrap().bin_probabilities(BW).unwrap();
    let template = pattern_template(&pattern, &slot).unwrap();
    let n = template.len();
    let shift = 137;
    let mut h = Histogram::zeros(n, BW, 0.0, 0.0);
    for i in 0..n {
        h.counts[(i + shift) % n] = (template[i] * 1e4).round() as u64;
    }
    let lock = recover_offset(&h, &template, LOCK_THRESHOLD).unwrap();
    assert_eq!(lock.shift_bins, shift);
    assert!((lock.shift - 137.0 * BW).abs() < 1e-18);
    assert!(lock.peak > 0.99);

    let flat = Histogram { counts: vec![3; n], ..h.clone() };
    assert!(matches!(recover_offset(&flat, &template, LOCK_THRESHOLD), Err(Error::NoLock { .. })));
}

#[test]
fn uncorrected_phase_bias_shifts_the_center() {
    let spad = SpadModel::default();
    let phi_q = spad_phase_bias(&spad, T_BIN);
    let profile = bin_profile(0.0);
    let m = circular_mean_weights(&profile.bin_probabilities(BW, 0.0, 0.0), BW, T_BIN).unwrap();
    let raw = m.center(T_BIN, 0.0) - 0.5 * T_BIN;
    let corrected = m.center(T_BIN, phi_q) - 0.5 * T_BIN;
    assert!((raw / PS + 4.2).abs() < 0.25, "{}", raw / PS);
    assert!(corrected.abs() < 0.2 * PS, "{}", corrected / PS);
}

#[test]
fn both_delay_forms_agree_within_noise() {
    let profile = bin_profile(20.0);
    let phi_q = spad_phase_bias(&SpadModel::default(), T_BIN);
    let (drift, t_int, offset) = (2e-7, 1e-3, 180.0 * PS);
    let d = drift * t_int;
    let p1 = profile.bin_probabilities(BW, offset, d);
    let p2 = profile.bin_probabilities(BW, offset + d, d);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for _ in 0..100 {
        let h1 = poisson_hist(&p1, 1000.0, 50.0, &mut rng);
        let h2 = poisson_hist(&p2, 1000.0, 50.0, &mut rng);
        let m1 = circular_mean(&h1, T_BIN).unwrap();
        let m2 = circular_mean(&h2, T_BIN).unwrap();
        let est = estimate_drift(&m1, &m2, t_int, T_BIN).unwrap();
        a.push(wrap_delay(estimate_delay(&m1, est, t_int, T_BIN, 0.5 * T_BIN, phi_q), T_BIN));
        b.push(wrap_delay(estimate_delay_late(&m2, est, t_int, T_BIN, 0.5 * T_BIN, phi_q), T_BIN));
    }
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64)
    };
    let ((ma, va), (mb, vb)) = (stats(&a), stats(&b));
    let se = ((va + vb) / 100.0).sqrt();
    assert!((ma - mb).abs() < 2.0 * se, "{} vs {} ps (se {})", ma / PS, mb / PS, se / PS);
    // both point 1.5 T_int past the first centre: -(offset + 2 d)
    let truth = wrap_delay(-(offset + 2.0 * d), T_BIN);
    assert!((ma - truth).abs() < 4.0 * (va / 100.0).sqrt() + 1.0 * PS, "{} vs {}", ma / PS, truth / PS);
}

#[test]
fn noiseless_loop_contracts() {
    let profile = bin_profile(0.0);
    let t_int = 155e-6;
    let mut pair = ClockPair::with_drift(500e6, 2.3e-6).unwrap();
    let mut residuals = vec![pair.drift().abs()];
    for _ in 0..3 {
        let (m1, m2) = noiseless_pair(&profile, 0.0, pair.drift(), t_int);
        let est = estimate_drift(&m1, &m2, t_int, T_BIN).unwrap();
        pair = pair.apply_frequency_update(est).unwrap();
        residuals.push(pair.drift().abs());
    }
    assert!(residuals.windows(2).all(|w| w[1] < w[0]), "{residuals:?}");
    assert!(pair.drift().abs() < 1e-9, "{}", pair.drift());
}

fn sync_cfg(pairs: &[(&str, &str)]) -> RunConfig {
    let owned: Vec<(String, String)> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    RunConfig::resolve(Command::SyncRun, &owned).unwrap()
}

#[test]
fn zero_initial_drift_stays_locked() {
    let cfg = sync_cfg(&[("initial_drift", "0us/s"), ("duration", "5s")]);
    let out = sync_once(&cfg, 20.0, &mut point_rng(cfg.seed, 0)).unwrap();
    assert!(out.convergence_time.is_some());
    let tracking: Vec<_> = out.tracking().collect();
    assert!(tracking.len() >= 5);
    for r in &tracking {
        assert!(r.true_drift.abs() < 1e-9, "{}", r.true_drift);
        assert!(r.qber.unfiltered <= 2.0 * out.baseline, "{}", r.qber.unfiltered);
    }
}

#[test]
fn offset_lock_at_high_loss() {
    let link = OpticalLink::default().with_extra_loss_db(30.0);
    let model = QberModel::new(pulse_sigma_at_distance(&link), SpadModel::default(), T_BIN);
    let slot = model.folded_early(0.0).unwrap().bin_probabilities(BW).unwrap();
    let period = 500.0 * 2.0 * T_BIN;
    let correct = (0..100u64)
        .into_par_iter()
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let t0 = rng.random_range(0.0..period);
            let pattern = Pattern::random(500, &mut rng);
            let clocks = ClockPair::new(500e6, 500e6).unwrap().offset(t0);
            let mut s = SimScenario::new(clocks, link, 0.225, seed).unwrap();
            s.source = QubitSource::Pattern(pattern.clone());
            let mut sim = Simulator::new(s).unwrap();
            let stream = sim.acquire(0.5).unwrap();
            let h = build_histogram(&stream, sim.tdc(), (0.0, f64::INFINITY), period).unwrap();
            let template = pattern_template(&pattern, &slot).unwrap();
            match recover_offset(&h, &template, LOCK_THRESHOLD) {
                Ok(lock) => {
                    let err = (lock.shift - t0).rem_euclid(period);
                    err.min(period - err) < 0.5 * T_BIN
                }
                Err(_) => false,
            }
        })
        .count();
    assert!(correct >= 99, "{correct}/100");
}
