//! Generates a small synthetic cohort and checks its three nested partitions.
//!
//! Run with `cargo run --example gen_data -- [out_dir]`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use survclust::synthetic::{generate_dataset, SyntheticConfig};

fn main() -> survclust::Result<()> {
    let config = SyntheticConfig::with_patients(1200, 11);
    let ds = generate_dataset(&config)?;

    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in &ds.combined_labels {
        *sizes.entry(c).or_default() += 1;
    }
    println!(
        "{} patients, {} features",
        ds.n_patients(),
        ds.features.ncols()
    );
    println!("combined cluster sizes: {sizes:?}");

    // every combined cluster refines exactly one outcome cluster
    let nested = ds
        .combined_labels
        .iter()
        .zip(&ds.outcome_labels)
        .all(|(&c, &o)| c / 2 == o);
    println!("combined labels nest in outcome labels: {nested}");

    let censored = ds.outcomes.iter().filter(|o| !o.event).count();
    let at_cap = ds
        .outcomes
        .iter()
        .filter(|o| o.time >= config.tte_cap)
        .count();
    println!("censored: {censored}, administratively censored at cap: {at_cap}");

    if let Some(out) = std::env::args().nth(1).map(PathBuf::from) {
        ds.write_csv(&out)?;
        println!("wrote features.csv and labels.csv to {}", out.display());
    }
    Ok(())
}
