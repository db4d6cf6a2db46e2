//! Interval-restricted masked-diffusion training on the bundled text: one
//! model per masking-rate bin of width 0.1 plus a U[0,1] baseline, each
//! scored on the same held-out full-range test draws.
//!
//! Usage: `cargo run --release --example interval_sweep [steps] [corpus.txt]`

use mdlab::textlab::{interval_sweep, Corpus, TextConfig};

fn main() -> mdlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = TextConfig {
        steps: args
            .next()
            .map_or(Ok(2000), |s| s.parse())
            .expect("steps must be an integer"),
        ..TextConfig::default()
    };
    let corpus = match args.next() {
        Some(path) => Corpus::from_file(path.as_ref(), config.block_size)?,
        None => Corpus::bundled(config.block_size)?,
    };
    println!(
        "{} symbols, vocabulary {}",
        corpus.len(),
        corpus.num_symbols()
    );
    let start = std::time::Instant::now();
    let report = interval_sweep(
        &corpus,
        &config,
        std::thread::available_parallelism().map_or(1, |n| n.get()),
    )?;
    for r in &report.rows {
        println!(
            "[{:.1}, {:.1}]  {:.4} +- {:.4}",
            r.t_lo, r.t_hi, r.final_test_loss, r.std_error
        );
    }
    let u = report.u_shape();
    println!(
        "best mid [{:.1}, {:.1}] beats [0,0.1] by {:.1}% and [0.9,1] by {:.1}%; baseline {:.4} ({:.1?})",
        u.best_mid_t_lo,
        u.best_mid_t_hi,
        100.0 * u.left_margin,
        100.0 * u.right_margin,
        u.baseline_loss,
        start.elapsed()
    );
    Ok(())
}
