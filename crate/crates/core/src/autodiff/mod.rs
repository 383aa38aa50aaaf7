//! Minimal dense reverse-mode automatic differentiation.

mod gradcheck;
mod param;
mod tape;

pub use gradcheck::{grad_check, grad_check_with, GradCheckReport, ParamCheck, FD_STEP};
pub use param::{NamedArray, ParamId, ParamStore, Parameter};
pub use tape::{sigmoid, Gradients, OpKind, Tape, Var, BCE_EPS};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::tensor::Tensor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identity_matmul() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let i = t.constant(Tensor::identity(2));
        let x = t.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let y = t.matmul(i, x).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn activation_midpoints() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let z = t.constant(Tensor::scalar(0.0));
        let th = t.tanh(z);
        let sg = t.sigmoid(z);
        assert_eq!(t.value(th).item(), 0.0);
        assert_eq!(t.value(sg).item(), 0.5);
    }

    #[test]
    fn softmax_examples() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let a = t.constant(Tensor::row(vec![0.0, 0.0]));
        let s = t.softmax(a).unwrap();
        assert_eq!(t.value(s).data(), &[0.5, 0.5]);
        let b = t.constant(Tensor::row(vec![0.0, 3f64.ln()]));
        let s = t.softmax(b).unwrap();
        assert!(close(t.value(s).data()[0], 0.25, 1e-15));
        assert!(close(t.value(s).data()[1], 0.75, 1e-15));
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let a = t.constant(Tensor::row(vec![5.0, 1.0, 1.0]));
        let s = t.softmax_masked(a, Some(&[false, true, true])).unwrap();
        assert_eq!(t.value(s).data(), &[0.0, 0.5, 0.5]);
        assert!(t.softmax_masked(a, Some(&[false, false, false])).is_err());
    }

    #[test]
    fn derivative_midpoints() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let x = t.leaf(Tensor::scalar(0.0));
        let y = t.tanh(x);
        assert_eq!(t.backward(y).unwrap().wrt(x).unwrap().item(), 1.0);

        let mut t = Tape::new(&store);
        let x = t.leaf(Tensor::scalar(0.0));
        let y = t.sigmoid(x);
        assert_eq!(t.backward(y).unwrap().wrt(x).unwrap().item(), 0.25);
    }

    #[test]
    fn linear_sum_gradient_is_column_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let at = Tensor::matrix(3, 4, a.clone()).unwrap();

        let f = |xs: &[f64]| -> f64 {
            let store = ParamStore::new();
            let mut t = Tape::new(&store);
            let av = t.constant(at.clone());
            let xv = t.constant(Tensor::matrix(4, 1, xs.to_vec()).unwrap());
            let y = t.matmul(av, xv).unwrap();
            let s = t.sum(y);
            t.value(s).item()
        };
        // finite-difference oracle on the forward alone
        let h = 1e-5;
        let numeric: Vec<f64> = (0..4)
            .map(|i| {
                let mut p = x.clone();
                let mut m = x.clone();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect();

        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let av = t.constant(at.clone());
        let xv = t.leaf(Tensor::matrix(4, 1, x.clone()).unwrap());
        let y = t.matmul(av, xv).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        let analytic = g.wrt(xv).unwrap().data().to_vec();
        for j in 0..4 {
            let colsum: f64 = (0..3).map(|i| a[i * 4 + j]).sum();
            assert!(close(analytic[j], colsum, 1e-12));
            assert!(close(analytic[j], numeric[j], 1e-8));
        }
    }

    #[test]
    fn shape_mismatch_names_op() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        assert!(err.to_string().contains("[2, 3]"), "{err}");
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let a = t.leaf(Tensor::zeros(&[1, 2]));
        assert!(matches!(t.backward(a), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn unreachable_params_get_zero() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::scalar(2.0)).unwrap();
        let unused = store.add("unused", Tensor::row(vec![1.0, 2.0])).unwrap();
        let mut t = Tape::new(&store);
        let u = t.param(used);
        let y = t.tanh(u);
        let g = t.backward(y).unwrap();
        assert!(g.param(unused).is_none());
        assert_eq!(g.param_or_zero(&store, unused).data(), &[0.0, 0.0]);
        let named = g.named(&store);
        assert_eq!(named.len(), 2);
        assert_eq!(named[1].1.shape(), &[1, 2]);
    }

    #[test]
    fn constants_never_receive_gradient() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let c = t.constant(Tensor::scalar(1.5));
        let x = t.leaf(Tensor::scalar(0.5));
        let y = t.mul(c, x).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.wrt(c).is_none());
        assert_eq!(g.wrt(x).unwrap().item(), 1.5);
    }

    #[test]
    fn paths_accumulate_by_sum() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let z = t.add(y, x).unwrap();
        assert_eq!(t.backward(z).unwrap().wrt(x).unwrap().item(), 7.0);
    }

    #[test]
    fn bce_values_and_gradient() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let p = t.leaf(Tensor::scalar(0.5));
        let l = t.bce(p, &[1.0]).unwrap();
        assert!(close(t.value(l).item(), std::f64::consts::LN_2, 1e-12));
        assert!(close(t.backward(l).unwrap().wrt(p).unwrap().item(), -2.0, 1e-12));

        let q = t.constant(Tensor::scalar(BCE_EPS));
        let l = t.bce(q, &[0.0]).unwrap();
        assert!(t.value(l).item() < 1e-6);
        assert!(matches!(t.bce(q, &[0.5]), Err(Error::BadLabel(_))));
    }

    #[test]
    fn dropout_is_inverted_and_marks_tape() {
        let store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new(&store);
        let x = t.leaf(Tensor::filled(&[1, 1000], 1.0));
        let same = t.dropout(x, 0.0, &mut rng);
        assert_eq!(same, x);
        assert!(!t.is_stochastic());
        let d = t.dropout(x, 0.5, &mut rng);
        assert!(t.is_stochastic());
        assert!(t.value(d).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn dropout_refuses_grad_check() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row(vec![0.3, -0.2])).unwrap();
        let err = grad_check(
            &mut store,
            |t| {
                let mut rng = ChaCha8Rng::seed_from_u64(3);
                let v = t.param(w);
                let d = t.dropout(v, 0.5, &mut rng);
                Ok(t.sum(d))
            },
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, Error::StochasticGradCheck(_)));
        assert!(err.to_string().contains("dropout"));
    }

    #[test]
    fn linear_tanh_layer_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let w = store.add_gaussian("w", &[4, 3], 0.5, &mut rng).unwrap();
        let b = store.add_gaussian("b", &[1, 3], 0.5, &mut rng).unwrap();
        let x = Tensor::matrix(2, 4, (0..8).map(|i| (i as f64 - 3.5) / 3.0).collect()).unwrap();
        let report = grad_check(
            &mut store,
            |t| {
                let xv = t.constant(x.clone());
                let h = t.linear(xv, w, Some(b))?;
                let h = t.tanh(h);
                Ok(t.sum(h))
            },
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.worst());
    }

    fn random_backward(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w = store.add_gaussian("w", &[5, 5], 1.0, &mut rng).unwrap();
        let mut t = Tape::new(&store);
        let x = t.constant(Tensor::filled(&[3, 5], 0.3));
        let wv = t.param(w);
        let mut h = x;
        for _ in 0..4 {
            let z = t.matmul(h, wv).unwrap();
            h = t.tanh(z);
        }
        let s = t.softmax(h).unwrap();
        let l = t.mean(s);
        let sq = t.mul(l, l).unwrap();
        t.backward(sq).unwrap().param(w).unwrap().data().to_vec()
    }

    #[test]
    fn backward_is_bitwise_deterministic() {
        let a = random_backward(5);
        let b = random_backward(5);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    proptest! {
        #[test]
        fn softmax_rows_are_stochastic(rows in 1usize..5, cols in 1usize..8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let store = ParamStore::new();
            let mut t = Tape::new(&store);
            let a = t.constant(Tensor::matrix(rows, cols, data).unwrap());
            let s = t.softmax(a).unwrap();
            for r in 0..rows {
                let row = t.value(s).row_slice(r);
                prop_assert!(row.iter().all(|&p| p >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }

        #[test]
        fn concat_then_slice_recovers(r in 1usize..4, c1 in 1usize..5, c2 in 1usize..5, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut mk = |c: usize| Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let (a, b) = (mk(c1), mk(c2));
            let store = ParamStore::new();
            let mut t = Tape::new(&store);
            let av = t.constant(a.clone());
            let bv = t.constant(b.clone());
            let cat = t.concat_cols(&[av, bv]).unwrap();
            let a2 = t.slice_cols(cat, 0, c1).unwrap();
            let b2 = t.slice_cols(cat, c1, c1 + c2).unwrap();
            prop_assert_eq!(t.value(a2), &a);
            prop_assert_eq!(t.value(b2), &b);

            let rows = t.concat_rows(&[av, av]).unwrap();
            let top = t.slice_rows(rows, r, 2 * r).unwrap();
            prop_assert_eq!(t.value(top), &a);
        }
    }
}
