//! Checks reverse-mode gradients of the full training objective against
//! central differences, for both encoder kinds.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survclust::autodiff::{grad_check, Graph, Mode, ParamSet};
use survclust::ehr::{ColumnKind, FeatureLayout};
use survclust::losses::{ClusterLoss, CoxLoss, KlLoss, ReconLoss};
use survclust::network::{target_distribution, Cohort, Model, ModelConfig};
use survclust::SurvivalOutcome;

fn main() -> survclust::Result<()> {
    let layout = FeatureLayout {
        names: (0..4).map(|j| format!("f{j}")).collect(),
        kinds: vec![
            ColumnKind::Binary,
            ColumnKind::Binary,
            ColumnKind::Continuous,
            ColumnKind::Continuous,
        ],
    };
    let outcomes = vec![
        SurvivalOutcome::new(1.0, true),
        SurvivalOutcome::new(2.0, false),
        SurvivalOutcome::new(2.0, true),
        SurvivalOutcome::new(5.0, true),
    ];
    for config in [
        ModelConfig::feedforward(&layout, 5, 3, 2),
        ModelConfig::recurrent(&layout, 3, 4, 3, 2),
    ] {
        let kind = config.encoder_kind;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = Model::new(config, &mut rng)?;
        let windows = (0..model.config.n_windows)
            .map(|_| {
                Array2::from_shape_fn((4, 4), |(_, j)| {
                    if j < 2 {
                        f64::from(rng.random_range(0..2u8))
                    } else {
                        rng.random()
                    }
                })
            })
            .collect::<Vec<_>>();
        let valid = vec![Array2::from_elem((4, 4), true); windows.len()];
        let cohort = Cohort { windows, valid };
        let emb = model.embed(&cohort, 4)?;
        model.init_centroids(&emb, &mut rng)?;
        let target = target_distribution(&model.assignments(&emb))?;
        let (x, mask) = cohort.stacked();

        let objective = |g: &mut Graph, ps: &ParamSet| {
            let mut m = model.clone();
            m.params = ps.clone();
            // same dropout masks on every evaluation
            let mut noise = ChaCha8Rng::seed_from_u64(9);
            let lat = m.encode(g, &cohort, &mut Mode::Train(&mut noise))?;
            let y = m.decode(g, lat.z, &cohort)?;
            let recon = g.apply(
                Box::new(ReconLoss {
                    target: x.clone(),
                    valid: mask.clone(),
                    binary: m.config.binary_columns.clone(),
                    w_b: 1.0,
                }),
                &[y],
            )?;
            let kl = g.apply(Box::new(KlLoss), &[lat.mu, lat.logvar])?;
            let risk = m.predict_risk(g, lat.z)?;
            let cox = g.apply(
                Box::new(CoxLoss {
                    outcomes: outcomes.clone(),
                }),
                &[risk],
            )?;
            let q = m.soft_assign(g, lat.z)?;
            let cl = g.apply(
                Box::new(ClusterLoss {
                    target: target.clone(),
                }),
                &[q],
            )?;
            g.weighted_sum(&[(recon, 0.05), (kl, 1e-5), (cox, 1.0), (cl, 0.25)])
        };
        let report = grad_check(objective, &model.params, 1e-5)?;
        println!(
            "{kind:?}: {} entries checked, {} excluded at ReLU kinks, max relative error {:.2e} ({})",
            report.n_checked,
            report.n_excluded,
            report.max_rel_error,
            if report.max_rel_error < 1e-4 { "ok" } else { "FAILED" },
        );
    }
    Ok(())
}
