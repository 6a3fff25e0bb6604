//! Drift and delay from the circular means of two consecutive histograms.

use qkd_clocksync::clock::ClockPair;
use qkd_clocksync::physics::{spad_phase_bias, OpticalLink, SpadModel};
use qkd_clocksync::sim::{build_histogram, SimScenario, Simulator};
use qkd_clocksync::sync::{circular_mean, estimate_delay, estimate_drift, wrap_delay};
use qkd_clocksync::PS;

fn main() -> qkd_clocksync::Result<()> {
    let t_bin = 1e-9;
    let t_int = 2e-3;
    let truth = 1.7e-7;
    let clocks = ClockPair::with_drift(500e6, truth)?.offset(230.0 * PS);
    let scenario = SimScenario::new(clocks, OpticalLink::default().with_extra_loss_db(10.0), 0.2, 7)?;
    let mut sim = Simulator::new(scenario)?;
    let phi_q = spad_phase_bias(&SpadModel::default(), t_bin);

    let a = sim.acquire(t_int)?;
    let b = sim.acquire(t_int)?;
    let h1 = build_histogram(&a, sim.tdc(), (0.0, t_int), t_bin)?;
    let h2 = build_histogram(&b, sim.tdc(), (t_int, 2.0 * t_int), t_bin)?;
    let (m1, m2) = (circular_mean(&h1, t_bin)?, circular_mean(&h2, t_bin)?);
    let drift = estimate_drift(&m1, &m2, t_int, t_bin)?;
    let delay = wrap_delay(estimate_delay(&m1, drift, t_int, t_bin, 0.5 * t_bin, phi_q), t_bin);
    println!("counts {} + {}", h1.total(), h2.total());
    println!("drift  {:+.4e} (true {:+.4e})", drift, truth);
    println!("delay  {:+.1} ps, |R| = {:.3}", delay / PS, m2.modulus());
    Ok(())
}
