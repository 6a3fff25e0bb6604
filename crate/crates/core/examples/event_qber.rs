//! Timestamps from the event simulator against the analytic drift QBER.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qkd_clocksync::clock::ClockPair;
use qkd_clocksync::pdf::QberModel;
use qkd_clocksync::physics::{pulse_sigma_at_distance, OpticalLink};
use qkd_clocksync::sim::{measure_qber, sample_event_stream, standard_windows, AssignmentRule, SimScenario};
use qkd_clocksync::{NS, PS};

fn main() -> qkd_clocksync::Result<()> {
    let duration = 2.0;
    let w = 300.0 * PS;
    let link = OpticalLink::default().with_fiber_km(120.0);
    println!("{:>8} {:>10} {:>10} {:>10} {:>10}", "dt_ps", "sim_1ns", "model_1ns", "sim_w", "model_w");
    for (i, dt) in [0.0, 0.2 * NS, 0.5 * NS, 0.8 * NS].into_iter().enumerate() {
        let clocks = ClockPair::with_drift(500e6, dt / duration)?;
        let mut s = SimScenario::new(clocks, link, 0.2, i as u64)?;
        s.spad.dead_time = 0.0;
        s.spad.dark_count_rate = 0.0;
        let stream = sample_event_stream(&s, duration)?;
        let model = QberModel::new(pulse_sigma_at_distance(&link), s.spad, 1.0 * NS);
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let q = measure_qber(&stream, &s.tdc, 1.0 * NS, standard_windows(1.0 * NS, w), AssignmentRule::TruthLabel, 0.0, &mut rng)?;
        println!(
            "{:>8.0} {:>9.3}% {:>9.3}% {:>9.3}% {:>9.3}%",
            dt / PS,
            100.0 * q.unfiltered,
            100.0 * model.drift_qber(dt, 1.0 * NS)?,
            100.0 * q.filtered,
            100.0 * model.drift_qber(dt, w)?
        );
    }
    Ok(())
}
