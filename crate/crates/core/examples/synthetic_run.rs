//! Trains and evaluates model variants on generated data and prints test
//! metrics next to the Average baseline.
//!
//! Usage: `synthetic_run [seed] [variant ...]`

use std::time::Instant;

use vecest::evaluation::{baseline_report, run_variant, Dataset, ExperimentConfig};
use vecest::model::Variant;
use vecest::synthetic::{generate, SyntheticConfig};

fn main() -> vecest::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed must be an integer")).unwrap_or(0);
    let variants: Vec<Variant> = args.map(|a| a.parse()).collect::<vecest::Result<_>>()?;
    let variants = if variants.is_empty() { vec![Variant::Full] } else { variants };

    let data = generate(&SyntheticConfig { seed, ..SyntheticConfig::default() })?;
    let dataset = Dataset::from_trips(data.network.clone(), data.trips()?, seed, 0);
    let mut config = ExperimentConfig::default();
    config.meta.seed = seed;
    if let Ok(e) = std::env::var("EPOCHS") {
        config.meta.epochs = e.parse().expect("EPOCHS must be an integer");
    }

    if std::env::var("FINE_TUNE").is_ok_and(|v| v == "0") {
        config.fine_tune = false;
    }

    let base = baseline_report(&dataset, config.long_tail_threshold)?;
    println!("average: test {:?} long_tail {:?}", base.test.map(|m| m.raw), base.long_tail.map(|m| m.raw));
    for v in variants {
        let start = Instant::now();
        let run = run_variant(v, &dataset, &config)?;
        println!(
            "{v}: {:.1}s best_epoch {} test {:?} long_tail {:?}",
            start.elapsed().as_secs_f64(),
            run.training.best_epoch,
            run.report.test.map(|m| m.raw),
            run.report.long_tail.map(|m| m.raw)
        );
        for e in &run.training.log {
            println!("  epoch {} train {:.4} val {:?}", e.epoch, e.train_loss, e.val_loss);
        }
    }
    Ok(())
}
