//! Signal-optimal and complexity-optimal mask-rate schedules with the sample
//! bound each one implies.

use mdlab::masking::{signal_probability, Schedule};
use mdlab::schedule::{complexity_optimal_schedule, sample_complexity_bound, signal_optimal_rate};

fn main() -> mdlab::Result<()> {
    let n = 20;
    println!(
        "{:>3} {:>10} {:>8} {:>8} {:>10} {:>8}",
        "k", "t*", "P_S", "U[0,t1]", "N(point)", "N(unif)"
    );
    for k in 1..=8 {
        let sig = signal_optimal_rate(k);
        let cx = complexity_optimal_schedule(k)?;
        println!(
            "{k:>3} {:>10.6} {:>8.5} {:>8.5} {:>10} {:>8}",
            sig.t0,
            sig.objective_value,
            cx.t1,
            sample_complexity_bound(n, k, 0.05, &sig.schedule())?,
            sample_complexity_bound(n, k, 0.05, &cx.schedule())?
        );
    }
    let s = Schedule::new(0.0, 0.246)?;
    println!(
        "P_S under U[0, 0.246] for k = 6: {:.5}",
        signal_probability(&s, 6).signal
    );
    Ok(())
}
