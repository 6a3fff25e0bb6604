//! One hour of tracking at full integration time, with the time deviation of the
//! centre estimates.

use qkd_clocksync::cli::{field_run, Command, RunConfig};
use qkd_clocksync::metrics::summarize;

fn main() -> qkd_clocksync::Result<()> {
    let overrides = vec![("duration".to_string(), "1h".to_string())];
    let cfg = RunConfig::resolve(Command::FieldSim, &overrides)?;
    let f = field_run(&cfg)?;
    let c = summarize(f.center.values())?;
    let d = summarize(f.drift.values())?;
    let q = summarize(f.qber.values())?;
    let qf = summarize(f.qber_filtered.values())?;
    println!("{} iterations", f.history.len());
    println!("centre std  {:.1} ps", c.std * 1e12);
    println!("drift std   {:.1} ps/s", d.std * 1e12);
    println!("QBER        {:.2}% (filtered {:.2}%)", 100.0 * q.mean, 100.0 * qf.mean);
    println!("{:>10} {:>10}", "tau_s", "tdev_ps");
    for (tau, v) in &f.tdev {
        if let Ok(v) = v {
            println!("{tau:>10.1} {:>10.2}", v * 1e12);
        }
    }
    Ok(())
}
