//! Masked-diffusion training against the supervised baseline on the desk
//! preset: the supervised run memorizes long before it generalizes, the MD
//! run generalizes almost as soon as it fits.

use mdlab::trainer::{
    memorization_window, train_convergence_step, train_observed, GapComparison, Objective,
    TrainConfig, CHANCE_BAND,
};

fn main() -> mdlab::Result<()> {
    let md_config = TrainConfig::preset("desk")?;
    let sup_config = TrainConfig::preset("desk-supervised")?;
    let start = std::time::Instant::now();
    let log = |tag: &'static str| {
        move |r: &mdlab::trainer::MetricsRow| {
            if r.step.is_multiple_of(1000) {
                println!(
                    "{tag:>10} step {:>6}  train_acc {:.3}  val_acc {:.3}",
                    r.step, r.train_acc, r.val_acc
                );
            }
        }
    };
    let md = train_observed(&md_config, Objective::Md, &mut log("md"))?;
    println!("md done in {:.1?}", start.elapsed());
    let sup = train_observed(&sup_config, Objective::Supervised, &mut log("supervised"))?;
    println!("supervised done in {:.1?}", start.elapsed());

    let cmp = GapComparison::new(&md.metrics, &sup.metrics, 0.9)?;
    println!(
        "md gap {:?}, supervised gap {:?}, ratio {:.1}",
        cmp.md, cmp.supervised, cmp.ratio
    );
    println!(
        "supervised: train converged at {:?}, memorization window {:?}",
        train_convergence_step(&sup.metrics),
        memorization_window(&sup.metrics, CHANCE_BAND)
    );
    Ok(())
}
