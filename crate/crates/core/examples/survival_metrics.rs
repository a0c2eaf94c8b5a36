//! Kaplan-Meier curves, the k-group log-rank test and partition agreement
//! on a small hand-built cohort.

use survclust::metrics::{
    adjusted_rand_index, kaplan_meier, logrank_by_labels, normalized_mutual_information,
};
use survclust::SurvivalOutcome;

fn main() -> survclust::Result<()> {
    let short: Vec<SurvivalOutcome> = [
        (2.0, true),
        (3.0, true),
        (3.0, false),
        (5.0, true),
        (6.0, true),
    ]
    .into_iter()
    .map(|(t, e)| SurvivalOutcome::new(t, e))
    .collect();
    let long: Vec<SurvivalOutcome> = [
        (8.0, true),
        (11.0, false),
        (14.0, true),
        (20.0, false),
        (25.0, true),
    ]
    .into_iter()
    .map(|(t, e)| SurvivalOutcome::new(t, e))
    .collect();

    for (name, group) in [("short", &short), ("long", &long)] {
        let curve = kaplan_meier(group)?;
        let steps: Vec<String> = curve
            .times
            .iter()
            .zip(&curve.survival)
            .map(|(t, s)| format!("S({t})={s:.3}"))
            .collect();
        println!("{name}: {}", steps.join(" "));
    }

    let outcomes: Vec<SurvivalOutcome> = short.iter().chain(&long).copied().collect();
    let labels: Vec<usize> = (0..outcomes.len())
        .map(|i| usize::from(i >= short.len()))
        .collect();
    let lr = logrank_by_labels(&outcomes, &labels)?;
    println!(
        "log-rank chi2 {:.3} on {} df, p = {:.4}",
        lr.statistic, lr.df, lr.p_value
    );

    let predicted = [0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
    println!(
        "ARI {:.3}, NMI {:.3}",
        adjusted_rand_index(&predicted, &labels)?,
        normalized_mutual_information(&predicted, &labels)?
    );
    Ok(())
}
