//! Clock requirements for a 120 km link: drift ceiling, calibration interval and
//! short-term stability.

use qkd_clocksync::cli::{constraints, Command, RunConfig};

fn main() -> qkd_clocksync::Result<()> {
    let overrides: Vec<(String, String)> = std::env::args()
        .skip(1)
        .map(|a| qkd_clocksync::cli::parse_override(&a))
        .collect::<Result<_, _>>()?;
    let cfg = RunConfig::resolve(Command::Constraints, &overrides)?;
    let c = constraints(&cfg)?;
    println!("max unambiguous drift      {:>10.3} us/s", c.max_unambiguous_drift * 1e6);
    println!("practical drift limit      {:>10.3} us/s", c.practical_limit * 1e6);
    println!("tolerable shift per pair   {:>10.2} ps", c.drift_limit * 1e12);
    println!("short-term stability bound {:>10.2} ps/s^2", c.short_term_bound * 1e12);
    let year = 365.25 * 86400.0;
    println!("calibration interval       {:>10.3} y (theoretical)", c.calibration_theoretical / year);
    println!("                           {:>10.3} y (practical)", c.calibration_practical / year);
    Ok(())
}
