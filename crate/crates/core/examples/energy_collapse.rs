//! The lazy-readout energy over random first layers: flat on pure-Signal
//! data, varying once Noise configurations are mixed in.

use mdlab::landscape::{collapse_check, enumerate_configs, pure_signal_configs};
use mdlab::masking::Schedule;
use mdlab::parity::{Dataset, TaskSpec};

fn main() -> mdlab::Result<()> {
    let data = Dataset::complete(&TaskSpec::new(5, vec![1, 2, 3, 4])?)?;
    let pure = collapse_check(&pure_signal_configs(&data, 0.3)?, 512, 5, 1)?;
    let mixed = collapse_check(
        &enumerate_configs(&data, &Schedule::point(0.3)?)?,
        512,
        5,
        1,
    )?;
    for (name, r) in [("pure signal", &pure), ("mixed", &mixed)] {
        println!(
            "{name}: {} distinct inputs, spans {}",
            r.distinct_inputs, r.spans
        );
        for d in &r.draws {
            println!(
                "  draw {}  E(W) = {:.12}  rank {}",
                d.draw_index, d.energy, d.rank
            );
        }
        println!(
            "  relative spread {:.3e}, constant {:.12}",
            r.relative_spread, r.theoretical_constant
        );
    }
    Ok(())
}
