//! Pulse width after fiber propagation, and the SPAD jitter it is combined with.

use qkd_clocksync::physics::{pulse_sigma_at_distance, spad_phase_bias, OpticalLink, SpadModel};
use qkd_clocksync::{NS, PS};

fn main() {
    let spad = SpadModel::default();
    println!("{:>6} {:>10} {:>12}", "km", "pulse_ps", "combined_ps");
    for km in (0..=200).step_by(20) {
        let s = pulse_sigma_at_distance(&OpticalLink::default().with_fiber_km(km as f64));
        let total = s.hypot(spad.jitter_std());
        println!("{km:>6} {:>10.2} {:>12.2}", s / PS, total / PS);
    }
    println!("SPAD jitter std {:.1} ps", spad.jitter_std() / PS);
    println!("phase bias at 1 ns bins {:.4} rad", spad_phase_bias(&spad, 1.0 * NS));
}
