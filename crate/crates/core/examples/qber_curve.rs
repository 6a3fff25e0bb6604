//! Drift-induced QBER versus accumulated drift for a 120 km link.

use qkd_clocksync::pdf::QberModel;
use qkd_clocksync::physics::{pulse_sigma_at_distance, OpticalLink, SpadModel};
use qkd_clocksync::{NS, PS};

fn main() -> qkd_clocksync::Result<()> {
    let link = OpticalLink::default().with_fiber_km(120.0);
    let sigma = pulse_sigma_at_distance(&link);
    let model = QberModel::new(sigma, SpadModel::default(), 1.0 * NS);
    println!("sigma(120 km) = {:.2} ps", sigma / PS);
    println!("{:>10} {:>12} {:>12}", "dt_ps", "w=1000ps", "w=300ps");
    for k in 0..=20 {
        let dt = k as f64 * 50.0 * PS;
        let q = model.drift_qber_widths(dt, &[1000.0 * PS, 300.0 * PS])?;
        println!("{:>10.0} {:>11.4}% {:>11.4}%", dt / PS, 100.0 * q[0], 100.0 * q[1]);
    }
    for &w in &[1000.0, 300.0] {
        let dt = model.invert_drift_for_threshold(1e-3, w * PS)?;
        println!("max drift for 0.1% QBER at w={w} ps: {:.1} ps", dt / PS);
    }
    Ok(())
}
