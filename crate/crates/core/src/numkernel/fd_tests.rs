use super::*;
use crate::rng::{substream, uniform_tensor};

const H: f64 = 1e-5;

fn check<F>(f: F, leaves: &[Tensor], tol: f64)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, KernelError>,
{
    let report = grad_check(f, leaves, H, tol).unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn matmul_gradient_of_sum() {
    for seed in 0..10 {
        let mut rng = substream(seed, &[]);
        let a = uniform_tensor(&mut rng, &[5, 7], 1.0);
        let b = uniform_tensor(&mut rng, &[7, 3], 1.0);
        check(
            |t, v| {
                let c = t.matmul(v[0], v[1])?;
                t.sum(c)
            },
            &[a, b],
            1e-6,
        );
    }
}

// Weighted sums keep every output element's gradient distinct.
fn weighted_sum(t: &mut Tape, y: Var, seed: u64) -> Result<Var, KernelError> {
    let shape = t.shape(y).to_vec();
    let w = t.constant(uniform_tensor(&mut substream(seed, &[99]), &shape, 1.0));
    let p = t.mul(y, w)?;
    t.sum(p)
}

#[test]
fn elementwise_primitives() {
    for seed in 0..10 {
        let x = uniform_tensor(&mut substream(seed, &[]), &[4, 6], 2.0);
        check(|t, v| { let y = t.sigmoid(v[0])?; weighted_sum(t, y, seed) }, std::slice::from_ref(&x), 1e-4);
        check(|t, v| { let y = t.tanh(v[0])?; weighted_sum(t, y, seed) }, std::slice::from_ref(&x), 1e-4);
        check(|t, v| { let y = t.clip(v[0], 1.0)?; weighted_sum(t, y, seed) }, std::slice::from_ref(&x), 1e-4);
        let z = uniform_tensor(&mut substream(seed, &[1]), &[4, 6], 2.0);
        check(|t, v| { let y = t.mul(v[0], v[1])?; weighted_sum(t, y, seed) }, &[x.clone(), z.clone()], 1e-4);
        check(|t, v| { let y = t.add(v[0], v[1])?; weighted_sum(t, y, seed) }, &[x.clone(), z], 1e-4);
        let r = uniform_tensor(&mut substream(seed, &[2]), &[6], 1.0);
        check(|t, v| { let y = t.add_row(v[0], v[1])?; weighted_sum(t, y, seed) }, &[x, r], 1e-4);
    }
}

#[test]
fn sigmoid_and_tanh_derivatives_at_points() {
    let cases = [(1.0, true), (0.3, false)];
    for (x0, is_sigmoid) in cases {
        let x = Tensor::vector(vec![x0]);
        let report = grad_check(
            |t, v| {
                let y = if is_sigmoid { t.sigmoid(v[0])? } else { t.tanh(v[0])? };
                t.sum(y)
            },
            &[x],
            H,
            1e-8,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}

#[test]
fn structural_primitives() {
    for seed in 0..10 {
        let a = uniform_tensor(&mut substream(seed, &[]), &[3, 5], 1.0);
        let b = uniform_tensor(&mut substream(seed, &[1]), &[3, 2], 1.0);
        check(
            |t, v| {
                let s = t.slice_cols(v[0], 1, 3)?;
                let c = t.concat_cols(&[s, v[1], v[0]])?;
                weighted_sum(t, c, seed)
            },
            &[a.clone(), b],
            1e-4,
        );
        let c = uniform_tensor(&mut substream(seed, &[2]), &[2, 5], 1.0);
        check(
            |t, v| {
                let r = t.concat_rows(&[v[0], v[1]])?;
                let g = t.gather_rows(r, &[4, 0, 0, 2, 3])?;
                let s = t.scale(g, -0.7)?;
                weighted_sum(t, s, seed)
            },
            &[a, c],
            1e-4,
        );
    }
}

#[test]
fn layer_norm_all_gradients() {
    for seed in 0..10 {
        let mut rng = substream(seed, &[]);
        let x = uniform_tensor(&mut rng, &[3, 8], 2.0);
        let g = uniform_tensor(&mut rng, &[8], 1.5);
        let b = uniform_tensor(&mut rng, &[8], 1.0);
        check(
            |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)?;
                weighted_sum(t, y, seed)
            },
            &[x, g, b],
            1e-6,
        );
    }
}

#[test]
fn softmax_xent_gradient() {
    for seed in 0..10 {
        let logits = uniform_tensor(&mut substream(seed, &[]), &[4, 11], 3.0);
        let targets = [0, 10, 3, 3];
        check(|t, v| Ok(t.softmax_xent(v[0], &targets)?.0), &[logits], 1e-6);
    }
}

#[test]
fn composite_matmul_tanh_layer_norm() {
    for seed in 0..10 {
        let mut rng = substream(seed, &[]);
        let x = uniform_tensor(&mut rng, &[4, 5], 1.0);
        let w = uniform_tensor(&mut rng, &[5, 6], 1.0);
        let g = uniform_tensor(&mut rng, &[6], 1.0);
        let b = uniform_tensor(&mut rng, &[6], 1.0);
        let wo = uniform_tensor(&mut rng, &[6, 7], 1.0);
        check(
            |t, v| {
                let h = t.matmul(v[0], v[1])?;
                let h = t.tanh(h)?;
                let h = t.layer_norm(h, v[2], v[3], LAYER_NORM_EPS)?;
                let z = t.matmul(h, v[4])?;
                Ok(t.softmax_xent(z, &[1, 6, 0, 2])?.0)
            },
            &[x, w, g, b, wo],
            1e-5,
        );
    }
}

#[test]
fn linear_function_is_exact() {
    let a = Tensor::vector(vec![0.5, -2.0, 3.25, 1.0]);
    let x = Tensor::vector(vec![1.0, 2.0, -1.0, 0.0]);
    let report = grad_check(
        |t, v| {
            let c = t.constant(a.clone());
            let p = t.mul(v[0], c)?;
            t.sum(p)
        },
        &[x],
        H,
        1e-9,
    )
    .unwrap();
    assert!(report.max_rel_error() < 1e-9, "{report:?}");
}

#[test]
fn backward_is_linear_in_the_loss() {
    for seed in 0..10 {
        let mut rng = substream(seed, &[]);
        let x = uniform_tensor(&mut rng, &[3, 4], 1.0);
        let w = uniform_tensor(&mut rng, &[4, 5], 1.0);
        let (alpha, beta) = (0.7, -1.3);
        let build = |t: &mut Tape, which: u8| -> (Var, Var, Var) {
            let xv = t.param(x.clone());
            let wv = t.param(w.clone());
            let h = t.matmul(xv, wv).unwrap();
            let h = t.tanh(h).unwrap();
            let l1 = t.sum(h).unwrap();
            let (l2, _) = t.softmax_xent(h, &[0, 4, 2]).unwrap();
            let loss = match which {
                1 => l1,
                2 => l2,
                _ => {
                    let a = t.scale(l1, alpha).unwrap();
                    let b = t.scale(l2, beta).unwrap();
                    t.add(a, b).unwrap()
                }
            };
            (xv, wv, loss)
        };
        let grads = |which| {
            let mut t = Tape::new();
            let (xv, wv, loss) = build(&mut t, which);
            let g = t.backward(loss).unwrap();
            (g.get(xv).unwrap().clone(), g.get(wv).unwrap().clone())
        };
        let (x1, w1) = grads(1);
        let (x2, w2) = grads(2);
        let (xc, wc) = grads(0);
        for (c, (a, b)) in [(xc, (x1, x2)), (wc, (w1, w2))] {
            let mut expect = a.clone();
            expect.scale_in_place(alpha);
            expect.add_scaled(&b, beta);
            assert!(c.max_abs_diff(&expect) < 1e-10);
        }
    }
}

#[test]
fn layer_norm_output_moments() {
    let x = uniform_tensor(&mut substream(3, &[]), &[5, 16], 10.0);
    let mut t = Tape::new();
    let xv = t.constant(x);
    let g = t.constant(Tensor::full(&[16], 1.0));
    let b = t.constant(Tensor::zeros(&[16]));
    let y = t.layer_norm(xv, g, b, LAYER_NORM_EPS).unwrap();
    for i in 0..5 {
        let row = t.value(y).row(i);
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-6);
    }
}

#[test]
fn injected_fault_is_detected() {
    let x = uniform_tensor(&mut substream(1, &[]), &[3, 4], 1.0);
    let checker = GradCheck { step: H, tol: 1e-4, fault: Some(OpKind::Tanh) };
    let report = checker
        .run(|t, v| { let y = t.tanh(v[0])?; t.sum(y) }, &[x])
        .unwrap();
    assert!(!report.passed());
}

proptest::proptest! {
    #[test]
    fn matmul_matches_naive_product(m in 1usize..9, k in 1usize..9, n in 1usize..9, seed: u64) {
        let mut rng = substream(seed, &[]);
        let a = uniform_tensor(&mut rng, &[m, k], 2.0);
        let b = uniform_tensor(&mut rng, &[k, n], 2.0);
        let mut t = Tape::new();
        let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
        let c = t.matmul(va, vb).unwrap();
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a.at(i, p) * b.at(p, j)).sum();
                proptest::prop_assert!((t.value(c).at(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn xent_gradient_rows_sum_to_zero(rows in 1usize..6, classes in 2usize..12, seed: u64) {
        let mut rng = substream(seed, &[]);
        let logits = uniform_tensor(&mut rng, &[rows, classes], 5.0);
        let targets: Vec<usize> = (0..rows).map(|r| (r * 7 + seed as usize % 13) % classes).collect();
        let mut t = Tape::new();
        let x = t.param(logits);
        let (loss, _) = t.softmax_xent(x, &targets).unwrap();
        proptest::prop_assert!(t.value(loss).data()[0] > 0.0);
        let g = t.backward(loss).unwrap();
        let g = g.get(x).unwrap();
        for r in 0..rows {
            proptest::prop_assert!(g.row(r).iter().sum::<f64>().abs() < 1e-12);
            proptest::prop_assert!(g.at(r, targets[r]) < 0.0);
        }
    }
}
