//! Grokking gaps across uniform mask-rate ranges on a small task.

use mdlab::trainer::{sweep_schedules, write_sweep_csv, TrainConfig};

fn main() -> mdlab::Result<()> {
    let base = TrainConfig {
        n: 10,
        k: 3,
        n_train: 600,
        n_val: 200,
        width: 256,
        steps: 6000,
        eval_every: 100,
        ..TrainConfig::preset("desk")?
    };
    let ranges = [(0.0, 0.1), (0.0, 0.25), (0.0, 0.5), (0.25, 0.75)];
    let rows = sweep_schedules(&base, &ranges, 1, 0.9, 1)?;
    write_sweep_csv(&rows, std::io::stdout())?;
    Ok(())
}
