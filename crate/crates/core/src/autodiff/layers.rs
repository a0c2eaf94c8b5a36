use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::{Graph, ParamId, ParamSet, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

/// Evaluation is deterministic; training draws dropout masks from the RNG.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// `act(x W + b)` with `b` a `1 x n` row.
pub fn dense(g: &mut Graph, x: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    let y = g.add_bias(xw, b)?;
    Ok(match act {
        Activation::Identity => y,
        Activation::Relu => g.relu(y),
        Activation::Sigmoid => g.sigmoid(y),
        Activation::Tanh => g.tanh(y),
    })
}

/// Inverted dropout: kept units are scaled by `1 / (1 - p)`.
pub fn dropout(g: &mut Graph, x: Var, p: f64, mode: &mut Mode<'_>) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(
            "dropout",
            format!("probability {p} outside [0, 1)"),
        ));
    }
    match mode {
        Mode::Train(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let mask = Array2::from_shape_simple_fn(g.value(x).raw_dim(), || {
                if rng.random::<f64>() < p {
                    0.0
                } else {
                    keep
                }
            });
            g.mul_const(x, Rc::new(mask))
        }
        _ => Ok(x),
    }
}

/// `mu + exp(logvar / 2) * noise`; `noise` is a constant.
pub fn reparameterize(g: &mut Graph, mu: Var, logvar: Var, noise: Array2<f64>) -> Result<Var> {
    if g.shape(mu) != g.shape(logvar) {
        return Err(Error::Shape {
            op: "reparameterize",
            left: g.shape(mu),
            right: g.shape(logvar),
        });
    }
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let eps = g.mul_const(std, Rc::new(noise))?;
    g.add(mu, eps)
}

/// Gate weights of one GRU cell.
///
/// `w` maps the input to the update, reset and candidate pre-activations
/// side by side; `u_zr` and `u_h` are the recurrent weights.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w: ParamId,
    pub u_zr: ParamId,
    pub u_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// [`GruParams`] loaded into a graph.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    w: Var,
    u_zr: Var,
    u_h: Var,
    b: Var,
    hidden: usize,
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

impl GruParams {
    /// Registers `{prefix}.w`, `{prefix}.u_zr`, `{prefix}.u_h`, `{prefix}.b`,
    /// initialised uniformly in `±1/sqrt(hidden)`.
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if hidden == 0 || input == 0 {
            return Err(Error::config(
                "gru",
                format!("input {input} and hidden {hidden} must be positive"),
            ));
        }
        let k = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            w: params.add(
                &format!("{prefix}.w"),
                uniform(input, 3 * hidden, k, rng),
                true,
                true,
            )?,
            u_zr: params.add(
                &format!("{prefix}.u_zr"),
                uniform(hidden, 2 * hidden, k, rng),
                true,
                true,
            )?,
            u_h: params.add(
                &format!("{prefix}.u_h"),
                uniform(hidden, hidden, k, rng),
                true,
                true,
            )?,
            b: params.add(
                &format!("{prefix}.b"),
                uniform(1, 3 * hidden, k, rng),
                true,
                false,
            )?,
            input,
            hidden,
        })
    }

    pub fn bind(&self, g: &mut Graph, params: &ParamSet) -> GruVars {
        GruVars {
            w: g.param(params, self.w),
            u_zr: g.param(params, self.u_zr),
            u_h: g.param(params, self.u_h),
            b: g.param(params, self.b),
            hidden: self.hidden,
        }
    }
}

/// One GRU step.
///
/// `z = σ(x W_z + h U_z + b_z)`, `r = σ(x W_r + h U_r + b_r)`,
/// `ĥ = tanh(x W_h + (r ⊙ h) U_h + b_h)`, `h' = (1 - z) ⊙ h + z ⊙ ĥ`.
pub fn gru_cell(g: &mut Graph, x: Var, h: Var, p: &GruVars) -> Result<Var> {
    let hd = p.hidden;
    if hd == 0 || g.shape(h).1 != hd || g.shape(h).0 != g.shape(x).0 {
        return Err(Error::Shape {
            op: "gru_cell",
            left: g.shape(x),
            right: g.shape(h),
        });
    }
    let xw = g.matmul(x, p.w)?;
    let xw = g.add_bias(xw, p.b)?;
    let x_zr = g.slice_cols(xw, 0, 2 * hd)?;
    let x_h = g.slice_cols(xw, 2 * hd, 3 * hd)?;
    let h_zr = g.matmul(h, p.u_zr)?;
    let pre_zr = g.add(x_zr, h_zr)?;
    let zr = g.sigmoid(pre_zr);
    let z = g.slice_cols(zr, 0, hd)?;
    let r = g.slice_cols(zr, hd, 2 * hd)?;
    let rh = g.mul(r, h)?;
    let rh_u = g.matmul(rh, p.u_h)?;
    let pre_h = g.add(x_h, rh_u)?;
    let cand = g.tanh(pre_h);
    let delta = g.sub(cand, h)?;
    let step = g.mul(z, delta)?;
    g.add(h, step)
}

/// Final hidden states of a stacked bidirectional GRU.
#[derive(Debug, Clone)]
pub struct BiGruOutput {
    /// `[layer 0 forward, layer 0 backward, layer 1 forward, ...]`
    pub finals: Vec<Var>,
}

/// Runs `layers[l] = [forward, backward]` cells over `sequence`.
///
/// Layer `l > 0` reads the concatenated per-step outputs of layer `l - 1`
/// after dropout. Initial states are zero.
pub fn bidirectional_gru(
    g: &mut Graph,
    sequence: &[Var],
    layers: &[[GruVars; 2]],
    dropout_p: f64,
    mode: &mut Mode<'_>,
) -> Result<BiGruOutput> {
    let Some(&first) = sequence.first() else {
        return Err(Error::input("bidirectional GRU over an empty sequence"));
    };
    let batch = g.shape(first).0;
    let mut inputs = sequence.to_vec();
    let mut finals = Vec::with_capacity(2 * layers.len());
    for (l, [fwd, bwd]) in layers.iter().enumerate() {
        if l > 0 {
            for v in &mut inputs {
                *v = dropout(g, *v, dropout_p, mode)?;
            }
        }
        let t_len = inputs.len();
        let mut fwd_out = Vec::with_capacity(t_len);
        let mut h = g.input(Array2::zeros((batch, fwd.hidden)));
        for &x in &inputs {
            h = gru_cell(g, x, h, fwd)?;
            fwd_out.push(h);
        }
        finals.push(h);
        let mut bwd_out = vec![h; t_len];
        let mut h = g.input(Array2::zeros((batch, bwd.hidden)));
        for t in (0..t_len).rev() {
            h = gru_cell(g, inputs[t], h, bwd)?;
            bwd_out[t] = h;
        }
        finals.push(h);
        if l + 1 < layers.len() {
            inputs = fwd_out
                .into_iter()
                .zip(bwd_out)
                .map(|(a, b)| g.concat_cols(&[a, b]))
                .collect::<Result<_>>()?;
        }
    }
    Ok(BiGruOutput { finals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_distr::StandardNormal;

    fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn dense_identity_relu() {
        let mut g = Graph::new();
        let x = g.input(array![[1.0, 0.0]]);
        let w = g.input(Array2::eye(2));
        let b = g.input(Array2::zeros((1, 2)));
        let y = dense(&mut g, x, w, b, Activation::Relu).unwrap();
        assert_eq!(g.value(y), &array![[1.0, 0.0]]);
        let s = dense(&mut g, b, w, b, Activation::Sigmoid).unwrap();
        assert_eq!(g.value(s), &array![[0.5, 0.5]]);
    }

    #[test]
    fn dense_shape_error() {
        let mut g = Graph::new();
        let x = g.input(Array2::zeros((1, 3)));
        let w = g.input(Array2::zeros((2, 2)));
        let b = g.input(Array2::zeros((1, 2)));
        assert!(dense(&mut g, x, w, b, Activation::Identity).is_err());
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for act in [
            Activation::Identity,
            Activation::Relu,
            Activation::Sigmoid,
            Activation::Tanh,
        ] {
            let mut p = ParamSet::new();
            let xi = p.add("x", randn(4, 3, &mut rng), true, false).unwrap();
            let wi = p.add("w", randn(3, 5, &mut rng), true, true).unwrap();
            let bi = p.add("b", randn(1, 5, &mut rng), true, false).unwrap();
            let target = randn(4, 5, &mut rng);
            let report = grad_check(
                |g: &mut Graph, p: &ParamSet| {
                    let (x, w, b) = (g.param(p, xi), g.param(p, wi), g.param(p, bi));
                    let y = dense(g, x, w, b, act)?;
                    let t = g.input(target.clone());
                    let d = g.sub(y, t)?;
                    let sq = g.mul(d, d)?;
                    Ok(g.sum(sq))
                },
                &p,
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{act:?}: {report:?}");
        }
    }

    #[test]
    fn zero_gru_halves_state() {
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = GruParams::new(&mut p, "gru", 2, 3, &mut rng).unwrap();
        for id in [cell.w, cell.u_zr, cell.u_h, cell.b] {
            p.value_mut(id).fill(0.0);
        }
        let mut g = Graph::new();
        let vars = cell.bind(&mut g, &p);
        let x = g.input(array![[0.3, -0.7]]);
        let h = g.input(array![[1.0, -2.0, 4.0]]);
        let h1 = gru_cell(&mut g, x, h, &vars).unwrap();
        assert_eq!(g.value(h1), &array![[0.5, -1.0, 2.0]]);
    }

    #[test]
    fn gru_rejects_empty_hidden_and_mismatch() {
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(GruParams::new(&mut p, "empty", 2, 0, &mut rng).is_err());
        let cell = GruParams::new(&mut p, "gru", 2, 3, &mut rng).unwrap();
        let mut g = Graph::new();
        let vars = cell.bind(&mut g, &p);
        let x = g.input(Array2::zeros((1, 2)));
        let h = g.input(Array2::zeros((1, 4)));
        assert!(gru_cell(&mut g, x, h, &vars).is_err());
    }

    #[test]
    fn three_chained_cells_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamSet::new();
        let cell = GruParams::new(&mut p, "gru", 3, 4, &mut rng).unwrap();
        let xs: Vec<Array2<f64>> = (0..3).map(|_| randn(2, 3, &mut rng)).collect();
        let h0 = randn(2, 4, &mut rng);
        let report = grad_check(
            |g: &mut Graph, p: &ParamSet| {
                let vars = cell.bind(g, p);
                let mut h = g.input(h0.clone());
                for x in &xs {
                    let xv = g.input(x.clone());
                    h = gru_cell(g, xv, h, &vars)?;
                }
                let sq = g.mul(h, h)?;
                Ok(g.sum(sq))
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    fn bigru_setup(rng: &mut ChaCha8Rng, shared: bool) -> (ParamSet, Vec<[GruParams; 2]>) {
        let mut p = ParamSet::new();
        let mut layers = Vec::new();
        for l in 0..2 {
            let input = if l == 0 { 3 } else { 8 };
            let f = GruParams::new(&mut p, &format!("l{l}.f"), input, 4, rng).unwrap();
            let b = if shared {
                f
            } else {
                GruParams::new(&mut p, &format!("l{l}.b"), input, 4, rng).unwrap()
            };
            layers.push([f, b]);
        }
        (p, layers)
    }

    fn run_bigru(
        p: &ParamSet,
        layers: &[[GruParams; 2]],
        seq: &[Array2<f64>],
        mode: &mut Mode<'_>,
    ) -> Vec<Array2<f64>> {
        let mut g = Graph::new();
        let vars: Vec<[GruVars; 2]> = layers
            .iter()
            .map(|[f, b]| [f.bind(&mut g, p), b.bind(&mut g, p)])
            .collect();
        let xs: Vec<Var> = seq.iter().map(|x| g.input(x.clone())).collect();
        let out = bidirectional_gru(&mut g, &xs, &vars, 0.1, mode).unwrap();
        out.finals.iter().map(|&v| g.value(v).clone()).collect()
    }

    #[test]
    fn bigru_length_one_reads_same_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, layers) = bigru_setup(&mut rng, true);
        let seq = vec![randn(2, 3, &mut rng)];
        let finals = run_bigru(&p, &layers, &seq, &mut Mode::Eval);
        assert_eq!(finals.len(), 4);
        assert_eq!(finals[0], finals[1]);
    }

    #[test]
    fn bigru_palindrome_with_shared_weights_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (p, layers) = bigru_setup(&mut rng, true);
        let a = randn(2, 3, &mut rng);
        let b = randn(2, 3, &mut rng);
        let seq = vec![a.clone(), b, a];
        let finals = run_bigru(&p, &layers, &seq, &mut Mode::Eval);
        for (x, y) in finals[0].iter().zip(finals[1].iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn bigru_eval_is_deterministic_and_train_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, layers) = bigru_setup(&mut rng, false);
        let seq: Vec<_> = (0..4).map(|_| randn(3, 3, &mut rng)).collect();
        let e1 = run_bigru(&p, &layers, &seq, &mut Mode::Eval);
        let e2 = run_bigru(&p, &layers, &seq, &mut Mode::Eval);
        assert_eq!(e1, e2);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let t1 = run_bigru(&p, &layers, &seq, &mut Mode::Train(&mut r1));
        let t2 = run_bigru(&p, &layers, &seq, &mut Mode::Train(&mut r2));
        assert_eq!(t1, t2);
        // first layer sees no dropout
        assert_eq!(t1[0], e1[0]);
    }

    #[test]
    fn bigru_rejects_empty_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (p, layers) = bigru_setup(&mut rng, false);
        let mut g = Graph::new();
        let vars: Vec<[GruVars; 2]> = layers
            .iter()
            .map(|[f, b]| [f.bind(&mut g, &p), b.bind(&mut g, &p)])
            .collect();
        assert!(bidirectional_gru(&mut g, &[], &vars, 0.1, &mut Mode::Eval).is_err());
    }

    #[test]
    fn dropout_keeps_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g = Graph::new();
        let x = g.input(Array2::ones((200, 50)));
        let y = dropout(&mut g, x, 0.1, &mut Mode::Train(&mut rng)).unwrap();
        let mean = g.value(y).mean().unwrap();
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        let e = dropout(&mut g, x, 0.1, &mut Mode::Eval).unwrap();
        assert_eq!(e, x);
    }

    #[test]
    fn reparameterize_cases() {
        let mut g = Graph::new();
        let mu = g.input(array![[1.0, -2.0]]);
        let lv = g.input(array![[0.0, 0.0]]);
        let z0 = reparameterize(&mut g, mu, lv, Array2::zeros((1, 2))).unwrap();
        assert_eq!(g.value(z0), &array![[1.0, -2.0]]);
        let z1 = reparameterize(&mut g, mu, lv, array![[0.5, 0.25]]).unwrap();
        assert_eq!(g.value(z1), &array![[1.5, -1.75]]);
    }

    #[test]
    fn reparameterize_logvar_gradient_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = ParamSet::new();
        let mi = p.add("mu", randn(3, 2, &mut rng), true, false).unwrap();
        let li = p.add("logvar", randn(3, 2, &mut rng), true, false).unwrap();
        let noise = randn(3, 2, &mut rng);
        let f = |g: &mut Graph, p: &ParamSet| {
            let (mu, lv) = (g.param(p, mi), g.param(p, li));
            let z = reparameterize(g, mu, lv, noise.clone())?;
            Ok(g.sum(z))
        };
        let mut g = Graph::new();
        let out = f(&mut g, &p).unwrap();
        let grads = g.backward(out).unwrap();
        let pg = g.param_grads(&grads, &p);
        let expected = p.value(li).mapv(|l| 0.5 * (0.5 * l).exp()) * &noise;
        for (a, b) in pg.get(li).iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(pg.get(mi).iter().all(|&v| v == 1.0));
        assert!(grad_check(f, &p, 1e-5).unwrap().max_rel_error < 1e-4);
    }
}
