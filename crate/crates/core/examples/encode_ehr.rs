//! Turns raw coded events and lab readings into fixed-width window tensors,
//! aligns them at the index window and embeds them with an untrained
//! recurrent encoder.

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use survclust::ehr::{align_at_index, build_feature_spec, encode_windows, Channel, RawEvent};
use survclust::network::{Cohort, Model, ModelConfig};

fn day(m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, m, d).expect("valid date")
}

fn main() -> survclust::Result<()> {
    let events = vec![
        RawEvent::coded("p1", day(1, 3), Channel::PrimaryDx, "I50"),
        RawEvent::coded("p1", day(2, 10), Channel::Medication, "C03CA01"),
        RawEvent::lab("p1", day(2, 11), "creatinine", 1.4),
        RawEvent::lab("p1", day(2, 20), "creatinine", 1.9),
        RawEvent::coded("p2", day(1, 15), Channel::PrimaryDx, "I50"),
        RawEvent::coded("p2", day(1, 15), Channel::Procedure, "ECHO"),
        RawEvent::lab("p2", day(3, 1), "creatinine", 0.9),
        RawEvent::coded("p3", day(2, 2), Channel::SecondaryDx, "E11"),
        RawEvent::lab("p3", day(2, 2), "creatinine", 1.1),
    ];
    let window_days = 30;
    let spec = build_feature_spec(&events, 0.3, window_days)?;
    let layout = spec.layout();
    println!("retained columns: {:?}", layout.names);

    let span = (day(1, 1), day(3, 31));
    let mut trajectories = Vec::new();
    for id in ["p1", "p2", "p3"] {
        let own: Vec<RawEvent> = events
            .iter()
            .filter(|e| e.patient_id == id)
            .cloned()
            .collect();
        let mut t = encode_windows(id, &own, &spec, span)?;
        // index at the last observed window
        t.index_window = t.mask.iter().rposition(|&m| m);
        println!("{id}: windows present {:?}", t.mask);
        trajectories.push(t);
    }
    let aligned = align_at_index(&trajectories, &layout)?;
    println!("aligned length: {} windows", aligned[0].n_windows());

    let cohort = Cohort::from_trajectories(&aligned, &layout)?;
    let config = ModelConfig::recurrent(&layout, cohort.n_windows(), 16, 4, 2);
    let model = Model::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let z = model.embed(&cohort, 8)?;
    for (id, row) in ["p1", "p2", "p3"].iter().zip(z.outer_iter()) {
        println!("{id}: z = {:.3}", row);
    }
    Ok(())
}
