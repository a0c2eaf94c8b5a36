//! Runs the full method comparison at a small scale and prints the
//! agreement matrix and the log-rank summary.
//!
//! `cargo run --release --example reproduce_table2 -- 0.02 2` runs 2% of the
//! full cohort with two repeats.

use survclust::experiment::{run_experiment, ExperimentSettings};

fn main() -> survclust::Result<()> {
    let mut args = std::env::args().skip(1);
    let scale: f64 = args
        .next()
        .map_or(Ok(0.02), |s| s.parse())
        .map_err(|_| survclust::Error::config("scale", "not a number"))?;
    let repeats: usize = args
        .next()
        .map_or(Ok(1), |s| s.parse())
        .map_err(|_| survclust::Error::config("repeats", "not an integer"))?;

    let mut settings = ExperimentSettings::desk(scale)?;
    settings.finetune.n_repeats = repeats;
    settings.pretrain.n_repeats = repeats;
    let result = run_experiment(&settings)?;
    print!("{}", result.table_csv(&settings.table_ks));
    print!("{}", result.logrank_csv(&settings.logrank_ks));
    Ok(())
}
