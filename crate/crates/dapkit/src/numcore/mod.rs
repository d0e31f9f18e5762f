//! Dense f64 tensors with reverse-mode differentiation, plus a
//! finite-difference gradient checker. Every primitive is a pure
//! deterministic function; a [`DiffContext`] records one forward pass
//! and replays it in reverse.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, ScalarFn};
pub use tape::{DiffContext, Grads, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(rng: &mut StdRng, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    /// Naive triple-loop oracle for matmul.
    fn matmul_oracle(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        Tensor::new(vec![m, n], out).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut ctx = DiffContext::new();
        let eye = ctx.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let x = ctx.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = ctx.matmul(eye, x).unwrap();
        assert_eq!(ctx.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_checked() {
        let mut ctx = DiffContext::new();
        let a = ctx.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let b = ctx.leaf(Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap());
        let y = ctx.matmul(a, b).unwrap();
        assert_eq!(ctx.value(y).data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = StdRng::seed_from_u64(11);
        let a = rand_tensor(&mut rng, vec![5, 4]);
        let b = rand_tensor(&mut rng, vec![4, 3]);
        let mut ctx = DiffContext::new();
        let (va, vb) = (ctx.leaf(a.clone()), ctx.leaf(b.clone()));
        let y = ctx.matmul(va, vb).unwrap();
        let oracle = matmul_oracle(&a, &b);
        for (x, o) in ctx.value(y).data().iter().zip(oracle.data()) {
            assert!((x - o).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_all_small_shapes_match_oracle() {
        let mut rng = StdRng::seed_from_u64(3);
        for m in 1..=8 {
            for k in 1..=8 {
                for n in 1..=8 {
                    let a = rand_tensor(&mut rng, vec![m, k]);
                    let b = rand_tensor(&mut rng, vec![k, n]);
                    let mut ctx = DiffContext::new();
                    let (va, vb) = (ctx.leaf(a.clone()), ctx.leaf(b.clone()));
                    let y = ctx.matmul(va, vb).unwrap();
                    let oracle = matmul_oracle(&a, &b);
                    for (x, o) in ctx.value(y).data().iter().zip(oracle.data()) {
                        assert!((x - o).abs() <= 1e-12, "{m}x{k}x{n}");
                    }
                }
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut ctx = DiffContext::new();
        let a = ctx.leaf(Tensor::zeros(vec![2, 3]));
        let b = ctx.leaf(Tensor::zeros(vec![4, 2]));
        let err = ctx.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn softmax_uniform_and_forced() {
        let mut ctx = DiffContext::new();
        let x = ctx.leaf(Tensor::new(vec![1, 3], vec![0.0, 0.0, 0.0]).unwrap());
        let y = ctx.softmax_rows(x).unwrap();
        for v in ctx.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let x2 = ctx.leaf(Tensor::new(vec![1, 2], vec![0.0, 2.0f64.ln()]).unwrap());
        let y2 = ctx.softmax_rows(x2).unwrap();
        assert!((ctx.value(y2).data()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((ctx.value(y2).data()[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_large_inputs_stable() {
        let mut ctx = DiffContext::new();
        let x = ctx.leaf(Tensor::new(vec![1, 2], vec![1000.0, 1000.0]).unwrap());
        let y = ctx.softmax_rows(x).unwrap();
        assert_eq!(ctx.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut ctx = DiffContext::new();
        let x = ctx.leaf(Tensor::filled(vec![1, 4], 3.0));
        let g = ctx.leaf(Tensor::filled(vec![4], 1.0));
        let b = ctx.leaf(Tensor::zeros(vec![4]));
        let y = ctx.layer_norm(x, g, b, 1e-5).unwrap();
        for v in ctx.value(y).data() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn layer_norm_two_point_row() {
        let mut ctx = DiffContext::new();
        let x = ctx.leaf(Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap());
        let g = ctx.leaf(Tensor::filled(vec![2], 1.0));
        let b = ctx.leaf(Tensor::zeros(vec![2]));
        let y = ctx.layer_norm(x, g, b, 1e-12).unwrap();
        assert!((ctx.value(y).data()[0] + 1.0).abs() < 1e-6);
        assert!((ctx.value(y).data()[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_row_statistics() {
        let mut rng = StdRng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, vec![3, 8]);
        let mut ctx = DiffContext::new();
        let vx = ctx.leaf(x);
        let g = ctx.leaf(Tensor::filled(vec![8], 1.0));
        let b = ctx.leaf(Tensor::zeros(vec![8]));
        let eps = 1e-8;
        let y = ctx.layer_norm(vx, g, b, eps).unwrap();
        for i in 0..3 {
            let row = ctx.value(y).row(i);
            let mean: f64 = row.iter().sum::<f64>() / 8.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() <= 1e-10);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let mut ctx = DiffContext::new();
        let l = ctx.leaf(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
        let y = ctx.cross_entropy(l, &[0]).unwrap();
        assert!((ctx.value(y).item().unwrap() - 2.0f64.ln()).abs() < 1e-12);

        let l2 = ctx.leaf(Tensor::new(vec![1, 3], vec![30.0, 0.0, 0.0]).unwrap());
        let y2 = ctx.cross_entropy(l2, &[0]).unwrap();
        assert!(ctx.value(y2).item().unwrap() <= 1e-12);
    }

    #[test]
    fn cross_entropy_matches_lse_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        let logits = rand_tensor(&mut rng, vec![4, 7]);
        let targets = vec![3usize, 0, 6, 2];
        let mut ctx = DiffContext::new();
        let vl = ctx.leaf(logits.clone());
        let y = ctx.cross_entropy(vl, &targets).unwrap();
        // independent log-sum-exp oracle
        let mut expected = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = logits.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
            expected += (lse - row[t]) / 4.0;
        }
        assert!((ctx.value(y).item().unwrap() - expected).abs() <= 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_target() {
        let mut ctx = DiffContext::new();
        let l = ctx.leaf(Tensor::zeros(vec![1, 3]));
        assert!(ctx.cross_entropy(l, &[3]).is_err());
    }

    #[test]
    fn grad_check_linear_function() {
        let mut rng = StdRng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, vec![3, 4]);
        let err = grad_check(
            &|ctx: &mut DiffContext, vars: &[Var]| Ok(ctx.sum_all(vars[0])),
            &[x.clone()],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-8, "error {err}");
        // analytic gradient of sum is all ones
        let mut ctx = DiffContext::new();
        let v = ctx.leaf(x);
        let s = ctx.sum_all(v);
        let g = ctx.backward(s).unwrap();
        assert!(g.get(v).unwrap().data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn grad_check_constant_function() {
        let mut rng = StdRng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, vec![1, 5]);
        let err = grad_check(
            &|ctx: &mut DiffContext, vars: &[Var]| {
                let s = ctx.softmax_rows(vars[0])?;
                Ok(ctx.sum_all(s))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-3, "error {err}");
    }

    #[test]
    fn grad_check_every_primitive() {
        let mut rng = StdRng::seed_from_u64(42);
        let tol = 1e-3;
        // matmul chain
        let a = rand_tensor(&mut rng, vec![3, 4]);
        let b = rand_tensor(&mut rng, vec![4, 2]);
        let err = grad_check(
            &|ctx: &mut DiffContext, v: &[Var]| {
                let y = ctx.matmul(v[0], v[1])?;
                let s = ctx.softmax_rows(y)?;
                let g = ctx.gelu(s);
                Ok(ctx.sum_all(g))
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err <= tol, "matmul/softmax/gelu: {err}");

        // layer_norm + bias + mul + scale
        let x = rand_tensor(&mut rng, vec![2, 6]);
        let gn = rand_tensor(&mut rng, vec![6]);
        let bs = rand_tensor(&mut rng, vec![6]);
        let err = grad_check(
            &|ctx: &mut DiffContext, v: &[Var]| {
                let ln = ctx.layer_norm(v[0], v[1], v[2], 1e-5)?;
                let sb = ctx.add_bias(ln, v[2])?;
                let m = ctx.mul(sb, sb)?;
                let sc = ctx.scale(m, 0.7);
                Ok(ctx.sum_all(sc))
            },
            &[x, gn, bs],
            1e-5,
        )
        .unwrap();
        assert!(err <= tol, "layer_norm chain: {err}");

        // gather + concat + slice + transpose + bmm + cross_entropy
        let table = rand_tensor(&mut rng, vec![5, 4]);
        let q = rand_tensor(&mut rng, vec![2, 3, 4]);
        let err = grad_check(
            &|ctx: &mut DiffContext, v: &[Var]| {
                let rows = ctx.gather_rows(v[0], &[0, 2, 4, 1, 1, 3])?;
                let cat = ctx.concat_rows(&[rows])?;
                let r3 = ctx.reshape(cat, vec![2, 3, 4])?;
                let kt = ctx.transpose(r3)?;
                let scores = ctx.bmm(v[1], kt)?;
                let lhs = ctx.slice_cols(scores, 0, 2)?;
                let rhs = ctx.slice_cols(scores, 2, 1)?;
                let cc = ctx.concat_cols(&[lhs, rhs])?;
                let flat = ctx.reshape(cc, vec![6, 3])?;
                ctx.cross_entropy(flat, &[0, 1, 2, 0, 1, 2])
            },
            &[table, q],
            1e-5,
        )
        .unwrap();
        assert!(err <= tol, "gather/bmm chain: {err}");

        // broadcast adds + axis1 concat
        let x3 = rand_tensor(&mut rng, vec![2, 3, 4]);
        let y3 = rand_tensor(&mut rng, vec![2, 2, 4]);
        let p = rand_tensor(&mut rng, vec![5, 4]);
        let err = grad_check(
            &|ctx: &mut DiffContext, v: &[Var]| {
                let cat = ctx.concat_axis1(v[0], v[1])?;
                let withp = ctx.add_bcast0(cat, v[2])?;
                let flat = ctx.reshape(withp, vec![10, 4])?;
                let summed = ctx.add(flat, flat)?;
                Ok(ctx.sum_all(summed))
            },
            &[x3, y3, p],
            1e-5,
        )
        .unwrap();
        assert!(err <= tol, "broadcast chain: {err}");
    }

    #[test]
    fn grad_check_rejects_nonscalar_and_bad_eps() {
        let x = Tensor::zeros(vec![2, 2]);
        let id = |_: &mut DiffContext, v: &[Var]| Ok(v[0]);
        assert!(grad_check(&id, &[x.clone()], 1e-5).is_err());
        let sum = |ctx: &mut DiffContext, v: &[Var]| Ok(ctx.sum_all(v[0]));
        assert!(grad_check(&sum, &[x], 1e-2).is_err());
    }

    #[test]
    fn primitives_are_deterministic() {
        let mut rng = StdRng::seed_from_u64(9);
        let a = rand_tensor(&mut rng, vec![4, 4]);
        let b = rand_tensor(&mut rng, vec![4, 4]);
        let run = || {
            let mut ctx = DiffContext::new();
            let (va, vb) = (ctx.leaf(a.clone()), ctx.leaf(b.clone()));
            let mm = ctx.matmul(va, vb).unwrap();
            let sm = ctx.softmax_rows(mm).unwrap();
            ctx.value(sm).clone()
        };
        assert!(run().bit_eq(&run()));
    }
}
