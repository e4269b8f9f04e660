//! Minimal reverse-mode automatic differentiation over `f64` tensors.

mod adam;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{AttentionParams, AttentionShape, Tape, Var};
pub use tensor::{argmax, matmul, softmax, Tensor};

pub(crate) use tape::{dot, linear_rows, project};
pub(crate) use tensor::softmax_in_place;

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite differences for checking tape gradients.

    use super::*;

    /// Builds a scalar loss from `inputs` on a fresh tape.
    pub type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

    /// Largest relative error between analytic and numeric gradients over
    /// every entry of every input.
    pub fn max_rel_error(inputs: &[Tensor], build: &Build) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
        let loss = build(&mut tape, &vars);
        tape.backward(loss).unwrap();
        let analytic: Vec<Vec<f64>> = vars.iter().map(|v| tape.grad(*v).to_vec()).collect();

        let eval = |ins: &[Tensor]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t)).collect();
            let loss = build(&mut tape, &vars);
            tape.value(loss)[0]
        };

        let step = 1e-5;
        let mut worst: f64 = 0.0;
        for (k, t) in inputs.iter().enumerate() {
            for i in 0..t.len() {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[i] += step;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[i] -= step;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
                let a = analytic[k][i];
                let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::gradcheck::max_rel_error;
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut r = rng();
        let a = Tensor::uniform(&[4, 5], 1.0, &mut r);
        let b = Tensor::uniform(&[5, 2], 1.0, &mut r);
        let w = Tensor::uniform(&[4, 2], 1.0, &mut r);
        let err = max_rel_error(&[a, b, w], &|t, v| {
            let c = t.matmul(v[0], v[1]).unwrap();
            let weighted = t.mul(c, v[2]).unwrap();
            t.sum(weighted)
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut r = rng();
        let x = Tensor::uniform(&[3, 4], 1.0, &mut r);
        let w = Tensor::uniform(&[2, 4], 1.0, &mut r);
        let b = Tensor::uniform(&[2], 1.0, &mut r);
        let err = max_rel_error(&[x, w, b], &|t, v| {
            let y = t.linear(v[0], v[1], v[2]).unwrap();
            t.cross_entropy(y, &[0, 1, 1]).unwrap()
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn leaky_relu_forward_and_gradient() {
        let mut t = Tape::new();
        let x = t.input(&[2], vec![-1.0, 2.0]).unwrap();
        let y = t.leaky_relu(x, 0.01);
        assert_eq!(t.value(y), &[-0.01, 2.0]);
        let z = t.input(&[1], vec![0.0]).unwrap();
        let y0 = t.leaky_relu(z, 0.01);
        assert_eq!(t.value(y0), &[0.0]);

        let mut r = rng();
        let mut x = Tensor::uniform(&[10], 2.0, &mut r);
        // keep entries away from the kink
        x.data_mut().iter_mut().for_each(|v| {
            if v.abs() < 0.1 {
                *v += 0.3
            }
        });
        let w = Tensor::uniform(&[10], 1.0, &mut r);
        let err = max_rel_error(&[x.clone(), w], &|t, v| {
            let y = t.leaky_relu(v[0], 0.01);
            let p = t.mul(y, v[1]).unwrap();
            t.sum(p)
        });
        assert!(err < 1e-4, "{err}");

        let mut t = Tape::new();
        let xv = t.leaf(&x);
        let y = t.leaky_relu(xv, 0.01);
        let s = t.sum(y);
        t.backward(s).unwrap();
        for (g, v) in t.grad(xv).iter().zip(x.data()) {
            assert_eq!(*g, if *v > 0.0 { 1.0 } else { 0.01 });
        }
    }

    #[test]
    fn cross_entropy_values() {
        let mut t = Tape::new();
        let z = t.input(&[1, 4], vec![0.0; 4]).unwrap();
        let l = t.cross_entropy(z, &[2]).unwrap();
        assert!((t.value(l)[0] - 4f64.ln()).abs() < 1e-12);

        let z = t.input(&[1, 3], vec![0.0, 100.0, 0.0]).unwrap();
        let l = t.cross_entropy(z, &[1]).unwrap();
        assert!(t.value(l)[0] < 1e-40);

        let z = t.input(&[1, 3], vec![0.0; 3]).unwrap();
        assert!(matches!(
            t.cross_entropy(z, &[3]),
            Err(crate::Error::Index { .. })
        ));
    }

    #[test]
    fn cross_entropy_matches_brute_force() {
        let mut r = rng();
        let logits = Tensor::uniform(&[3, 4], 3.0, &mut r);
        let labels = [3, 0, 2];
        let mut expected = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let row = logits.row(i);
            let p = row[l].exp() / row.iter().map(|v| v.exp()).sum::<f64>();
            expected -= p.ln();
        }
        expected /= 3.0;
        let mut t = Tape::new();
        let z = t.leaf(&logits);
        let l = t.cross_entropy(z, &labels).unwrap();
        assert!((t.value(l)[0] - expected).abs() < 1e-10);

        let err = max_rel_error(&[logits], &|t, v| t.cross_entropy(v[0], &labels).unwrap());
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn backward_of_sum_and_zero_scale() {
        let w = Tensor::new(&[5], vec![0.3, -1.0, 2.0, 0.0, 4.0]).unwrap();
        let mut t = Tape::new();
        let v = t.leaf(&w);
        let s = t.sum(v);
        t.backward(s).unwrap();
        assert_eq!(t.grad(v), &[1.0; 5]);
        // repeated calls accumulate into leaves
        t.backward(s).unwrap();
        assert_eq!(t.grad(v), &[2.0; 5]);

        let mut t = Tape::new();
        let v = t.leaf(&w);
        let z = t.scale(v, 0.0);
        let s = t.sum(z);
        t.backward(s).unwrap();
        assert_eq!(t.grad(v), &[0.0; 5]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let v = t.input(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = t.scale(v, 2.0);
        assert!(matches!(t.backward(y), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn dropout_is_inverted_and_differentiable() {
        let mut r = rng();
        let x = Tensor::uniform(&[200], 1.0, &mut r);
        let mut t = Tape::new();
        let v = t.leaf(&x);
        let d = t.dropout(v, 0.5, &mut r);
        let out = t.value(d).to_vec();
        for (o, i) in out.iter().zip(x.data()) {
            assert!(*o == 0.0 || (o - 2.0 * i).abs() < 1e-15);
        }
        let s = t.sum(d);
        t.backward(s).unwrap();
        for (g, o) in t.grad(v).iter().zip(&out) {
            assert_eq!(*g, if *o == 0.0 { 0.0 } else { 2.0 });
        }
    }
}
