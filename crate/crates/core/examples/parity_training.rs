//! A short MD run on a small parity task, logging accuracy as it trains.

use mdlab::trainer::{grokking_gap, train_observed, Objective, TrainConfig};

fn main() -> mdlab::Result<()> {
    let config = TrainConfig {
        n: 10,
        k: 3,
        n_train: 600,
        n_val: 200,
        width: 256,
        steps: 6000,
        eval_every: 100,
        ..TrainConfig::preset("desk")?
    };
    let run = train_observed(&config, Objective::Md, &mut |r| {
        if r.step.is_multiple_of(500) {
            println!(
                "step {:>5}  loss {:.4}  train_acc {:.3}  val_acc {:.3}",
                r.step, r.train_loss, r.train_acc, r.val_acc
            );
        }
    })?;
    println!("secret {:?}", run.spec.secret());
    println!("{:?}", grokking_gap(&run.metrics, 0.9)?);
    Ok(())
}
