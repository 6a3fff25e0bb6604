use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use qkd_clocksync::clock::ClockPair;
use qkd_clocksync::pdf::{fold_auto, QberModel};
use qkd_clocksync::physics::{effective_rates, OpticalLink, SpadModel};
use qkd_clocksync::sim::{
    build_histogram, measure_qber, poisson_histogram, sample_event_stream, standard_windows, AssignmentRule,
    EventStream, FoldedProfile, Histogram, Label, SimScenario, TdcModel,
};
use qkd_clocksync::{NS, PS};

const T_BIN: f64 = 1e-9;

fn scenario(loss_db: f64, n_bar: f64, drift: f64, seed: u64) -> SimScenario {
    let clocks = ClockPair::with_drift(500e6, drift).unwrap();
    SimScenario::new(clocks, OpticalLink::default().with_extra_loss_db(loss_db), n_bar, seed).unwrap()
}

fn ideal(mut s: SimScenario) -> SimScenario {
    s.spad.dead_time = 0.0;
    s.spad.dark_count_rate = 0.0;
    s
}

fn whole(_: &EventStream) -> (f64, f64) {
    (0.0, f64::INFINITY)
}

/// Pearson statistic of observed counts against expected counts, and its p-value.
fn chi_square(observed: &[u64], expected: &[f64]) -> (f64, f64) {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).unwrap();
    (stat, 1.0 - dist.cdf(stat))
}

#[test]
fn detection_rate_matches_dead_time_model() {
    let eta: f64 = 2e-3;
    let s = scenario(-10.0 * eta.log10(), 0.2, 0.0, 21);
    let rates = effective_rates(&s.spad, 500e6, 0.2, eta);
    let duration = 60.0;
    let stream = sample_event_stream(&s, duration).unwrap();
    let alice = stream.events.iter().filter(|e| e.label != Label::Dark).count() as f64;
    let dark = stream.events.iter().filter(|e| e.label == Label::Dark).count() as f64;
    let expect = rates.alice * duration;
    assert!((alice - expect).abs() < 3.0 * expect.sqrt(), "{alice} vs {expect}");
    let expect_dark = rates.dark * duration;
    assert!((dark - expect_dark).abs() < 3.0 * expect_dark.sqrt(), "{dark} vs {expect_dark}");
}

#[test]
fn dead_time_is_respected() {
    let s = scenario(0.0, 0.5, 0.0, 4);
    let stream = sample_event_stream(&s, 0.05).unwrap();
    let times: Vec<f64> = stream.events.iter().map(|e| stream.time(e)).collect();
    assert!(times.len() > 1000);
    assert!(times.windows(2).all(|w| w[1] - w[0] >= s.spad.dead_time * (1.0 - 1e-9)));
}

#[test]
fn slot_spacing_is_geometric() {
    let s = ideal(scenario(20.0, 0.2, 0.0, 8));
    let p: f64 = 0.2 * 0.25 * 1e-2;
    let p = -(-p).exp_m1();
    let stream = sample_event_stream(&s, 1.0).unwrap();
    let gaps: Vec<f64> = stream.events.windows(2).map(|w| (w[1].slot - w[0].slot) as f64).collect();
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = ((1.0 - p) / (p * p) / n).sqrt();
    assert!((mean - 1.0 / p).abs() < 3.0 * se, "{mean} vs {}", 1.0 / p);
    assert!((var / ((1.0 - p) / (p * p)) - 1.0).abs() < 0.02);
}

#[test]
fn histogram_matches_analytic_profile() {
    let drift = 5e-8;
    let s = ideal(scenario(20.0, 0.2, drift, 31));
    let duration = 4.0;
    let stream = sample_event_stream(&s, duration).unwrap();
    let h = build_histogram(&stream, &s.tdc, whole(&stream), T_BIN).unwrap();
    assert!(h.total() > 900_000);

    let model = QberModel::new(qkd_clocksync::physics::pulse_sigma_at_distance(&s.link), s.spad, T_BIN);
    let profile = FoldedProfile::new(&fold_auto(&model.early_pdf(0.0).unwrap(), T_BIN).unwrap()).unwrap();
    let probs = profile.bin_probabilities(h.bin_width, 0.0, drift * duration);
    let expected: Vec<f64> = probs.iter().map(|p| p * h.total() as f64).collect();
    let (stat, p) = chi_square(&h.counts, &expected);
    assert!(p > 1e-3, "chi2 {stat} (p = {p})");
}

#[test]
fn dark_counts_alone_are_uniform_and_random() {
    let mut s = scenario(0.0, 0.0, 0.0, 2);
    s.spad.dead_time = 0.0;
    s.spad.dark_count_rate = 1e5;
    let stream = sample_event_stream(&s, 2.0).unwrap();
    assert!(stream.events.iter().all(|e| e.label == Label::Dark));
    let h = build_histogram(&stream, &s.tdc, whole(&stream), T_BIN).unwrap();
    let expected = vec![h.total() as f64 / h.counts.len() as f64; h.counts.len()];
    let (stat, p) = chi_square(&h.counts, &expected);
    assert!(p > 1e-3, "chi2 {stat}");

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let q = measure_qber(
        &stream,
        &s.tdc,
        T_BIN,
        standard_windows(T_BIN, 300.0 * PS),
        AssignmentRule::TruthLabel,
        0.0,
        &mut rng,
    )
    .unwrap();
    let se = (0.25 / q.n_unfiltered as f64).sqrt();
    assert!((q.unfiltered - 0.5).abs() < 3.0 * se, "{}", q.unfiltered);
    assert!((q.kept_fraction - 0.3).abs() < 0.01);
}

#[test]
fn no_drift_narrow_pulses_have_no_errors() {
    let mut s = ideal(scenario(10.0, 0.2, 0.0, 5));
    s.spad.skew_shape = 0.0;
    s.spad.skew_scale = 10.0 * PS;
    let stream = sample_event_stream(&s, 0.05).unwrap();
    assert!(stream.len() > 100_000);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = measure_qber(
        &stream,
        &s.tdc,
        T_BIN,
        standard_windows(T_BIN, 300.0 * PS),
        AssignmentRule::TruthLabel,
        0.0,
        &mut rng,
    )
    .unwrap();
    assert!(q.unfiltered < 1e-5 && q.filtered < 1e-5, "{q:?}");
}

#[test]
fn event_qber_matches_drift_model() {
    let shift = 0.5 * NS;
    let duration = 0.04;
    let mut s = ideal(scenario(0.0, 0.2, shift / duration, 12));
    s.link = s.link.with_fiber_km(60.0);
    let stream = sample_event_stream(&s, duration).unwrap();
    let model = QberModel::new(qkd_clocksync::physics::pulse_sigma_at_distance(&s.link), s.spad, T_BIN);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = 300.0 * PS;
    let q = measure_qber(&stream, &s.tdc, T_BIN, standard_windows(T_BIN, w), AssignmentRule::TruthLabel, 0.0, &mut rng)
        .unwrap();
    for (measured, n, analytic) in [
        (q.unfiltered, q.n_unfiltered, model.drift_qber(shift, T_BIN).unwrap()),
        (q.filtered, q.n_filtered, model.drift_qber(shift, w).unwrap()),
    ] {
        let se = (analytic * (1.0 - analytic) / n as f64).sqrt();
        assert!((measured - analytic).abs() < 3.0 * se, "{measured} vs {analytic} (n = {n})");
    }
}

#[test]
fn intrinsic_error_adds_flips() {
    let mut s = ideal(scenario(10.0, 0.2, 0.0, 6));
    s.spad.skew_shape = 0.0;
    s.spad.skew_scale = 10.0 * PS;
    let stream = sample_event_stream(&s, 0.05).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = measure_qber(
        &stream,
        &s.tdc,
        T_BIN,
        standard_windows(T_BIN, 300.0 * PS),
        AssignmentRule::TruthLabel,
        0.02,
        &mut rng,
    )
    .unwrap();
    let se = (0.02 * 0.98 / q.n_unfiltered as f64).sqrt();
    assert!((q.unfiltered - 0.02).abs() < 3.0 * se, "{}", q.unfiltered);
}

#[test]
fn poisson_histogram_totals() {
    let model = QberModel::new(50.0 * PS, SpadModel::default(), T_BIN);
    let folded = fold_auto(&model.early_pdf(0.0).unwrap(), T_BIN).unwrap();
    let tdc = TdcModel::standard(T_BIN).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (alice, dark, t_int) = (30_000.0, 2_000.0, 0.01);
    let lambda = (alice + dark) * t_int;
    let draws = 2000;
    let totals: Vec<f64> = (0..draws)
        .map(|_| poisson_histogram(&folded, (alice, dark), t_int, &tdc, &mut rng).unwrap().total() as f64)
        .collect();
    let mean = totals.iter().sum::<f64>() / draws as f64;
    let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    assert!((mean - lambda).abs() < 3.0 * (lambda / draws as f64).sqrt(), "{mean} vs {lambda}");
    assert!((var / lambda - 1.0).abs() < 0.1);
}

#[test]
fn event_and_binned_samplers_agree_at_low_rate() {
    let drift = 0.0;
    let mut s = scenario(35.0, 0.2, drift, 40);
    s.spad.dark_count_rate = 0.0;
    let duration = 200.0;
    let stream = sample_event_stream(&s, duration).unwrap();
    let h_event = build_histogram(&stream, &s.tdc, whole(&stream), T_BIN).unwrap();
    let model = QberModel::new(qkd_clocksync::physics::pulse_sigma_at_distance(&s.link), s.spad, T_BIN);
    let folded = fold_auto(&model.early_pdf(0.0).unwrap(), T_BIN).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let rate = h_event.total() as f64 / duration;
    let h_bin = poisson_histogram(&folded, (rate, 0.0), duration, &s.tdc, &mut rng).unwrap();
    // two-sample chi-square over bins with enough counts in both
    let (n1, n2) = (h_event.total() as f64, h_bin.total() as f64);
    let (k1, k2) = ((n2 / n1).sqrt(), (n1 / n2).sqrt());
    let mut stat = 0.0;
    let mut dof = 0usize;
    for (&a, &b) in h_event.counts.iter().zip(&h_bin.counts) {
        if a + b < 20 {
            continue;
        }
        let (a, b) = (a as f64, b as f64);
        stat += (k1 * a - k2 * b).powi(2) / (a + b);
        dof += 1;
    }
    let p = 1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(stat);
    assert!(p > 1e-3, "chi2 {stat} over {dof} bins");
}

#[test]
fn register_quantization_bounds_bins() {
    let mut s = scenario(10.0, 0.2, 0.0, 13);
    let residue = s.tdc.set_delay(123.4 * PS);
    assert!((s.tdc.delay_register() - 121.0 * PS).abs() < 1e-18);
    assert!((residue - 2.4 * PS).abs() < 1e-16);
    let stream = sample_event_stream(&s, 0.01).unwrap();
    let h = build_histogram(&stream, &s.tdc, whole(&stream), T_BIN).unwrap();
    let mut manual = Histogram::zeros(10, 100.0 * PS, h.acq_start, h.acq_duration);
    for e in &stream.events {
        let tau = (e.delay + 121.0 * PS).rem_euclid(T_BIN);
        let idx = (tau / (100.0 * PS)) as usize;
        assert!(idx as f64 * 100.0 * PS <= tau + 1e-15);
        manual.counts[idx.min(9)] += 1;
    }
    let diff: u64 = manual.counts.iter().zip(&h.counts).map(|(a, b)| a.abs_diff(*b)).sum();
    // float rounding at bin edges only
    assert!(diff <= 2, "{:?} vs {:?}", manual.counts, h.counts);
}

#[test]
fn seeded_streams_are_reproducible() {
    let s = scenario(20.0, 0.2, 1e-6, 77);
    let a = sample_event_stream(&s, 0.02).unwrap();
    let b = sample_event_stream(&s, 0.02).unwrap();
    assert_eq!(a, b);
    let c = sample_event_stream(&scenario(20.0, 0.2, 1e-6, 78), 0.02).unwrap();
    assert_ne!(a, c);
}

#[test]
fn whole_pattern_slot_shift_leaves_histograms_unchanged() {
    let s = scenario(20.0, 0.2, 1e-6, 3);
    let a = sample_event_stream(&s, 0.01).unwrap();
    let mut b = a.clone();
    for e in &mut b.events {
        e.slot += 500;
    }
    for period in [T_BIN, 1e-6] {
        let ha = build_histogram(&a, &s.tdc, whole(&a), period).unwrap();
        let hb = build_histogram(&b, &s.tdc, whole(&b), period).unwrap();
        assert_eq!(ha.counts, hb.counts);
    }
}
