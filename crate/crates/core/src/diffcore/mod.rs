//! Dense-matrix reverse-mode differentiation, parameter storage and the
//! adaptive-moment optimizer.
//!
//! Every learnable component in the crate is an [`Mlp`] (or a handful of
//! them) whose parameters live in a [`ParamStore`]. Losses are recorded on a
//! [`Tape`] and differentiated with [`Tape::backward`].

mod mlp;
mod params;
mod tape;
mod tensor;

pub use mlp::{forward, Activation, Mlp};
pub use params::{AdamConfig, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::{softmax, softmax_in_place, Tensor2};

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_linear_layer() {
        let mlp = Mlp::new("id", &[2, 2], Activation::Tanh, Activation::Identity);
        let mut store = ParamStore::new();
        store.insert("id.l0.w", Tensor2::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        store.insert("id.l0.b", Tensor2::zeros(1, 2)).unwrap();
        let x = Tensor2::row_vector(&[1.0, 2.0]);
        let (out, tape) = forward(&mlp, &x, &store).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0]);
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let mlp = Mlp::new("t", &[3, 3], Activation::Identity, Activation::Tanh);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        mlp.init(&mut store, &mut rng).unwrap();
        store.insert("t.l0.b", Tensor2::zeros(1, 3)).unwrap();
        let (out, tape) = forward(&mlp, &Tensor2::zeros(1, 3), &store).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_layer_matches_straight_line_evaluation() {
        let mlp = Mlp::new("n", &[3, 4, 2], Activation::Tanh, Activation::Identity);
        let mut store = ParamStore::new();
        mlp.init(&mut store, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let x = [0.3, -1.2, 0.7];

        let w0 = store.value("n.l0.w").unwrap();
        let b0 = store.value("n.l0.b").unwrap();
        let w1 = store.value("n.l1.w").unwrap();
        let b1 = store.value("n.l1.b").unwrap();
        let mut hidden = [0.0; 4];
        for (j, h) in hidden.iter_mut().enumerate() {
            let mut s = b0.get(0, j);
            for (i, xi) in x.iter().enumerate() {
                s += xi * w0.get(i, j);
            }
            *h = s.tanh();
        }
        let mut expected = [0.0; 2];
        for (k, e) in expected.iter_mut().enumerate() {
            *e = b1.get(0, k) + hidden.iter().enumerate().map(|(j, h)| h * w1.get(j, k)).sum::<f64>();
        }

        let (out, tape) = forward(&mlp, &Tensor2::row_vector(&x), &store).unwrap();
        let eval = mlp.eval(&store, &Tensor2::row_vector(&x)).unwrap();
        for k in 0..2 {
            assert!((tape.value(out).get(0, k) - expected[k]).abs() < 1e-14);
            assert!((eval.get(0, k) - expected[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn forward_is_pure() {
        let mlp = Mlp::new("p", &[5, 8, 8, 3], Activation::Tanh, Activation::Identity);
        let mut store = ParamStore::new();
        mlp.init(&mut store, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let x = Tensor2::new(2, 5, (0..10).map(|v| v as f64 * 0.1).collect()).unwrap();
        let (a, ta) = forward(&mlp, &x, &store).unwrap();
        let (b, tb) = forward(&mlp, &x, &store).unwrap();
        let bits = |t: &Tensor2| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(ta.value(a)), bits(tb.value(b)));
    }

    #[test]
    fn input_shape_mismatch_is_an_error() {
        let mlp = Mlp::new("s", &[3, 2], Activation::Tanh, Activation::Identity);
        let mut store = ParamStore::new();
        mlp.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(forward(&mlp, &Tensor2::zeros(1, 4), &store).is_err());
    }

    /// Central finite-difference check of every primitive on random inputs.
    #[test]
    fn primitives_match_finite_differences() {
        type Build = fn(&mut Tape, Var) -> Var;
        let prims: Vec<(&str, Build)> = vec![
            ("tanh", |t, x| t.tanh(x).unwrap()),
            ("relu", |t, x| t.relu(x).unwrap()),
            ("sigmoid", |t, x| t.sigmoid(x).unwrap()),
            ("abs", |t, x| t.abs(x).unwrap()),
            ("square", |t, x| t.square(x).unwrap()),
            ("scale", |t, x| t.scale(x, -1.7).unwrap()),
            ("softmax", |t, x| t.softmax(x).unwrap()),
            ("log_softmax", |t, x| t.log_softmax(x).unwrap()),
            ("row_sum", |t, x| t.row_sum(x).unwrap()),
            ("gather", |t, x| t.gather(x, &[2, 0]).unwrap()),
            ("column", |t, x| t.column(x, 1).unwrap()),
            ("mean", |t, x| t.mean(x).unwrap()),
            ("self_mul", |t, x| t.mul(x, x).unwrap()),
            ("self_sub", |t, x| {
                let y = t.tanh(x).unwrap();
                t.sub(x, y).unwrap()
            }),
            ("log_sqrt", |t, x| {
                let s = t.square(x).unwrap();
                let c = t.clamp(s, 1e-3, 1e9).unwrap();
                let r = t.sqrt(c).unwrap();
                t.log(r).unwrap()
            }),
            ("matmul_self_t", |t, x| {
                let sq = t.square(x).unwrap();
                let rs = t.row_sum(sq).unwrap(); // 2x1
                let w = t.constant(Tensor2::row_vector(&[0.5, -1.5, 2.0])).unwrap();
                let m = t.matmul(rs, w).unwrap(); // 2x3
                t.add(m, x).unwrap()
            }),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for (name, build) in prims {
            for _ in 0..100 {
                let data: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
                let proj: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                let eval = |vals: &[f64]| -> (f64, Option<Gradients>) {
                    let mut store = ParamStore::new();
                    store.insert("x", Tensor2::new(2, 3, vals.to_vec()).unwrap()).unwrap();
                    let mut tape = Tape::new();
                    let x = tape.param(&store, "x").unwrap();
                    let y = build(&mut tape, x);
                    // Project onto a random direction so every output entry matters.
                    let (r, c) = tape.value(y).shape();
                    let p = tape.constant(Tensor2::new(r, c, proj[..r * c].to_vec()).unwrap()).unwrap();
                    let py = tape.mul(y, p).unwrap();
                    let loss = tape.sum(py).unwrap();
                    let v = tape.value(loss).item().unwrap();
                    (v, tape.backward(loss, 1.0).ok())
                };
                let (_, grads) = eval(&data);
                let grads = grads.unwrap();
                let g = grads.get("x").unwrap();
                let h = 1e-5;
                for k in 0..6 {
                    // Skip probes straddling a kink.
                    if matches!(name, "relu" | "abs") && data[k].abs() < 10.0 * h {
                        continue;
                    }
                    let mut plus = data.clone();
                    plus[k] += h;
                    let mut minus = data.clone();
                    minus[k] -= h;
                    let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                    let an = g.data()[k];
                    let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                    assert!(rel < 1e-4, "{name}: analytic {an} vs fd {fd} (rel {rel})");
                }
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let t = Tensor2::new(3, 4, (0..12).map(|_| rng.random_range(-30.0..30.0)).collect()).unwrap();
            let s = t.softmax_rows();
            for r in 0..3 {
                assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                assert!(s.row(r).iter().all(|&p| p > 0.0));
            }
        }
    }
}
