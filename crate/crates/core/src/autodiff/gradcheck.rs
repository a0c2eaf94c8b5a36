use super::{Graph, ParamSet, Var};
use crate::error::{Error, Result};

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub n_checked: usize,
    /// Entries whose perturbation flipped a ReLU across its kink.
    pub n_excluded: usize,
}

/// Denominator floor; below it the error is effectively absolute.
const REL_FLOOR: f64 = 1e-6;

fn evaluate<F>(f: &F, params: &ParamSet) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, params)?;
    let loss = g.scalar(out);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "loss".into(),
        });
    }
    Ok((loss, g.relu_pattern().to_vec()))
}

/// Compares analytic gradients of every trainable entry against central
/// differences with step `h`.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`. An entry whose
/// perturbation changes the activation pattern of any ReLU is excluded,
/// since the loss is not differentiable across that kink.
pub fn grad_check<F>(f: F, params: &ParamSet, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, params)?;
    if !g.scalar(out).is_finite() {
        return Err(Error::NonFinite {
            what: "loss".into(),
        });
    }
    let base_pattern = g.relu_pattern().to_vec();
    let grads = g.backward(out)?;
    let analytic = g.param_grads(&grads, params);
    drop(g);

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        n_checked: 0,
        n_excluded: 0,
    };
    for id in params.ids().filter(|&id| params.is_trainable(id)) {
        for i in 0..params.value(id).len() {
            let original = params
                .value(id)
                .as_slice_memory_order()
                .expect("standard layout")[i];
            let probe = |delta: f64, work: &mut ParamSet| -> Result<(f64, Vec<bool>)> {
                work.value_mut(id)
                    .as_slice_memory_order_mut()
                    .expect("standard layout")[i] = original + delta;
                evaluate(&f, work)
            };
            let (plus, pat_plus) = probe(h, &mut work)?;
            let (minus, pat_minus) = probe(-h, &mut work)?;
            work.value_mut(id)
                .as_slice_memory_order_mut()
                .expect("standard layout")[i] = original;
            if pat_plus != base_pattern || pat_minus != base_pattern {
                report.n_excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic
                .get(id)
                .as_slice_memory_order()
                .expect("standard layout")[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.n_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((params.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn quadratic_is_near_exact() {
        let mut p = ParamSet::new();
        let id = p
            .add("p", array![[1.5, -2.0], [0.25, 3.0]], true, false)
            .unwrap();
        let report = grad_check(
            |g: &mut Graph, p: &ParamSet| {
                let v = g.param(p, id);
                let sq = g.mul(v, v)?;
                Ok(g.sum(sq))
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert_eq!(report.n_checked, 4);
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn relu_kink_is_excluded() {
        let mut p = ParamSet::new();
        let id = p.add("p", array![[0.0, 1.0]], true, false).unwrap();
        let report = grad_check(
            |g: &mut Graph, p: &ParamSet| {
                let v = g.param(p, id);
                let r = g.relu(v);
                Ok(g.sum(r))
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert_eq!(report.n_excluded, 1);
        assert_eq!(report.n_checked, 1);
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn frozen_entries_are_skipped() {
        let mut p = ParamSet::new();
        let id = p.add("p", Array2::ones((2, 2)), false, false).unwrap();
        let report = grad_check(
            |g: &mut Graph, p: &ParamSet| {
                let v = g.param(p, id);
                Ok(g.sum(v))
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert_eq!(report.n_checked, 0);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut p = ParamSet::new();
        let id = p.add("p", array![[1000.0]], true, false).unwrap();
        let result = grad_check(
            |g: &mut Graph, p: &ParamSet| {
                let v = g.param(p, id);
                let e = g.exp(v);
                Ok(g.sum(e))
            },
            &p,
            1e-5,
        );
        assert!(matches!(result, Err(Error::NonFinite { .. })));
    }
}
