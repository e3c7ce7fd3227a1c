//! Layer primitives against brute-force oracles and finite differences.

use crm::engine::{adam_step, grad_check, AdamState, Graph, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Independent quintuple loop over an HWC input and a k x k x Cin x Cout kernel.
fn conv_oracle(input: &Tensor, kernel: &Tensor, bias: &[f64]) -> Vec<f64> {
    let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (k, cout) = (kernel.shape()[0], kernel.shape()[3]);
    let pad = (k / 2) as i64;
    let mut out = vec![0.0; h * w * cout];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            for co in 0..cout {
                let mut acc = bias[co];
                for ky in 0..k as i64 {
                    for kx in 0..k as i64 {
                        let (iy, ix) = (y + ky - pad, x + kx - pad);
                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                            continue;
                        }
                        for ci in 0..cin {
                            let iv = input.data()[((iy as usize) * w + ix as usize) * cin + ci];
                            let kv = kernel.data()
                                [((ky as usize * k + kx as usize) * cin + ci) * cout + co];
                            acc += iv * kv;
                        }
                    }
                }
                out[((y as usize) * w + x as usize) * cout + co] = acc;
            }
        }
    }
    out
}

fn maxpool_oracle(input: &Tensor) -> Vec<f64> {
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::new();
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for x in 2 * ox..(2 * ox + 2).min(w) {
                        best = best.max(input.data()[(y * w + x) * c + ch]);
                    }
                }
                out.push(best);
            }
        }
    }
    out
}

/// Finite-difference check of `build` with respect to every input coordinate.
/// The scalar objective is the squared error against a fixed random target.
fn op_grad_error(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).clone()
    };
    let target = random(probe.shape(), &mut rng);
    let objective = |g: &mut Graph, vars: &[Var]| {
        let out = build(g, vars);
        let t = g.constant(target.clone());
        g.sum_squared_error(out, t).unwrap()
    };
    let mut worst: f64 = 0.0;
    for which in 0..inputs.len() {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let loss = objective(&mut g, &vars);
        g.backward(loss).unwrap();
        let analytic = g.grad_or_zeros(vars[which]);
        let mut flat = inputs[which].data().to_vec();
        let report = grad_check(
            |p| {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        if i == which {
                            g.constant(Tensor::new(t.shape().to_vec(), p.to_vec()).unwrap())
                        } else {
                            g.constant(t.clone())
                        }
                    })
                    .collect();
                let l = objective(&mut g, &vars);
                g.value(l).item()
            },
            &mut flat,
            &analytic,
            1e-6,
            None,
        );
        worst = worst.max(report.max_rel_error);
    }
    worst
}

#[test]
fn conv_identity_kernel() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 1, 1], vec![5.0]).unwrap());
    let k = g.constant(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
    let b = g.constant(Tensor::new(vec![1], vec![0.0]).unwrap());
    let y = g.conv2d(x, k, b).unwrap();
    assert_eq!(g.value(y).data(), &[5.0]);
}

#[test]
fn conv_zero_padding_counts() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[3, 3, 1], 1.0));
    let k = g.constant(Tensor::full(&[3, 3, 1, 1], 1.0));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv2d(x, k, b).unwrap();
    let d = g.value(y).data();
    assert_eq!(d[4], 9.0);
    for corner in [0, 2, 6, 8] {
        assert_eq!(d[corner], 4.0);
    }
    assert_eq!(d[1], 6.0);
}

#[test]
fn conv_matches_loop_oracle_6x6x3() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[6, 6, 3], &mut rng);
    let k = random(&[3, 3, 3, 4], &mut rng);
    let b = random(&[4], &mut rng);
    let mut g = Graph::new();
    let (vx, vk, vb) = (g.constant(x.clone()), g.constant(k.clone()), g.constant(b.clone()));
    let y = g.conv2d(vx, vk, vb).unwrap();
    let oracle = conv_oracle(&x, &k, b.data());
    let err = g.value(y).data().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-12, "{err}");
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[4, 4, 2]));
    let k = g.constant(Tensor::zeros(&[3, 3, 3, 1]));
    let b = g.constant(Tensor::zeros(&[1]));
    assert!(matches!(g.conv2d(x, k, b), Err(crm::Error::Shape(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn conv_matches_oracle_on_random_shapes(
        h in 1usize..=16, w in 1usize..=16, cin in 1usize..=8, cout in 1usize..=8,
        kidx in 0usize..3, seed in 0u64..1000,
    ) {
        let k = [1, 3, 7][kidx];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[h, w, cin], &mut rng);
        let kern = random(&[k, k, cin, cout], &mut rng);
        let b = random(&[cout], &mut rng);
        let mut g = Graph::new();
        let (vx, vk, vb) = (g.constant(x.clone()), g.constant(kern.clone()), g.constant(b.clone()));
        let y = g.conv2d(vx, vk, vb).unwrap();
        let oracle = conv_oracle(&x, &kern, b.data());
        let err = g.value(y).data().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12, "err {}", err);
    }

    #[test]
    fn concat_then_split_is_identity(h in 1usize..6, w in 1usize..6, ca in 0usize..4, cb in 0usize..4, seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[h, w, ca], &mut rng);
        let b = random(&[h, w, cb], &mut rng);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.concat_channels(va, vb).unwrap();
        let (a2, b2) = g.value(c).split_channels(ca).unwrap();
        prop_assert_eq!(a2, a);
        prop_assert_eq!(b2, b);
    }

    #[test]
    fn softmax_sums_to_one(xs in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = crm::engine::softmax(&xs);
        let s: f64 = p.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn softmax_is_bitwise_shift_invariant(xs in proptest::collection::vec(-64i32..64, 1..10), c in -1000i32..1000) {
        let base: Vec<f64> = xs.iter().map(|&v| v as f64 * 0.25).collect();
        let shifted: Vec<f64> = base.iter().map(|v| v + c as f64).collect();
        let (p, q) = (crm::engine::softmax(&base), crm::engine::softmax(&shifted));
        prop_assert_eq!(
            p.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            q.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn maxpool_single_window() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = g.maxpool2(x).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 1]);
    assert_eq!(g.value(y).data(), &[4.0]);
}

#[test]
fn maxpool_tie_sends_gradient_to_first_index() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::full(&[3, 3, 1], 2.0), true);
    let y = g.maxpool2(x).unwrap();
    assert_eq!(g.value(y).shape(), &[2, 2, 1]);
    assert!(g.value(y).data().iter().all(|&v| v == 2.0));
    let s = g.sum(y);
    g.backward(s).unwrap();
    let grad = g.grad(x).unwrap();
    let expected = [1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0];
    assert_eq!(grad, &expected);
}

#[test]
fn maxpool_matches_window_scan_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[7, 7, 2], &mut rng);
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = g.maxpool2(v).unwrap();
    assert_eq!(g.value(y).shape(), &[4, 4, 2]);
    assert_eq!(g.value(y).data(), maxpool_oracle(&x).as_slice());
}

#[test]
fn relu_forward_and_mask() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap(), true);
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0]);

    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[2, 2, 1], -3.0));
    let y = g.relu(x);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));

    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap(), true);
    let y = g.relu(x);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0]);
}

#[test]
fn concat_activity_map_shape_and_empty_channels() {
    let mut g = Graph::new();
    let f = g.constant(Tensor::zeros(&[43, 78, 5]));
    let a = g.constant(Tensor::zeros(&[43, 78, 17]));
    let c = g.concat_channels(f, a).unwrap();
    assert_eq!(g.value(c).shape(), &[43, 78, 22]);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[3, 4, 2], &mut rng);
    let vx = g.constant(x.clone());
    let e = g.constant(Tensor::zeros(&[3, 4, 0]));
    let c = g.concat_channels(vx, e).unwrap();
    assert_eq!(g.value(c), &x);

    let bad = g.constant(Tensor::zeros(&[3, 5, 1]));
    assert!(g.concat_channels(vx, bad).is_err());
}

#[test]
fn global_avg_pool_values() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[3, 4, 2], 7.0));
    let y = g.global_avg_pool(x).unwrap();
    assert_eq!(g.value(y).data(), &[7.0, 7.0]);

    let x = g.constant(Tensor::new(vec![2, 1, 1], vec![3.0, 5.0]).unwrap());
    let y = g.global_avg_pool(x).unwrap();
    assert_eq!(g.value(y).data(), &[4.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = random(&[5, 6, 3], &mut rng);
    let x = g.constant(t.clone());
    let y = g.global_avg_pool(x).unwrap();
    for c in 0..3 {
        let s: f64 = (0..30).map(|p| t.data()[p * 3 + c]).sum();
        assert!((g.value(y).data()[c] - s / 30.0).abs() < 1e-12);
    }
}

#[test]
fn softmax_examples() {
    let p = crm::engine::softmax(&[0.0, 0.0, 0.0]);
    for v in &p {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let p = crm::engine::softmax(&[1000.0, 0.0]);
    assert!(p.iter().all(|v| v.is_finite()));
    assert!((p[0] - 1.0).abs() < 1e-12 && p[1] < 1e-300);
}

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap(), true);
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);
}

#[test]
fn backward_of_self_mse_is_zero() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap(), true);
    let l = g.mse(x, x).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
    assert_eq!(g.grad(x).unwrap(), &[0.0; 3]);
}

#[test]
fn backward_rejects_non_scalar_and_accumulates() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true);
    let y = g.scale(x, 3.0);
    assert!(g.backward(y).is_err());
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[3.0, 3.0]);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[6.0, 6.0]);
    g.zero_grad();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[3.0, 3.0]);
}

#[test]
fn bilinear_identity_constant_and_hand_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t = random(&[3, 5, 2], &mut rng);
    let mut g = Graph::new();
    let x = g.constant(t.clone());
    let y = g.resize_bilinear(x, 3, 5).unwrap();
    assert_eq!(g.value(y), &t);

    let c = g.constant(Tensor::full(&[2, 3, 1], 0.75));
    let y = g.resize_bilinear(c, 7, 4).unwrap();
    assert!(g.value(y).data().iter().all(|&v| (v - 0.75).abs() < 1e-15));

    // Source sample positions for 2 -> 4 are 0, 0.25, 0.75, 1 (clamped at both
    // ends); the input x + y is bilinear so the output is their pairwise sum.
    let x = g.constant(Tensor::new(vec![2, 2, 1], vec![0.0, 1.0, 1.0, 2.0]).unwrap());
    let y = g.resize_bilinear(x, 4, 4).unwrap();
    let axis = [0.0, 0.25, 0.75, 1.0];
    for r in 0..4 {
        for c in 0..4 {
            assert!((g.value(y).data()[r * 4 + c] - (axis[r] + axis[c])).abs() < 1e-15);
        }
    }
}

#[test]
fn every_op_passes_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tol = 1e-4;
    let x = random(&[5, 6, 3], &mut rng);
    for k in [1, 3, 5] {
        let kern = random(&[k, k, 3, 2], &mut rng);
        let b = random(&[2], &mut rng);
        let e = op_grad_error(&[x.clone(), kern, b], |g, v| g.conv2d(v[0], v[1], v[2]).unwrap());
        assert!(e < tol, "conv{k}: {e}");
    }
    let e = op_grad_error(&[random(&[5, 7, 2], &mut rng)], |g, v| g.maxpool2(v[0]).unwrap());
    assert!(e < tol, "maxpool: {e}");
    let e = op_grad_error(&[random(&[4, 4, 2], &mut rng)], |g, v| g.relu(v[0]));
    assert!(e < tol, "relu: {e}");
    let e = op_grad_error(&[random(&[3, 4, 2], &mut rng), random(&[3, 4, 3], &mut rng)], |g, v| {
        g.concat_channels(v[0], v[1]).unwrap()
    });
    assert!(e < tol, "concat: {e}");
    let e = op_grad_error(&[random(&[3, 4, 2], &mut rng)], |g, v| g.global_avg_pool(v[0]).unwrap());
    assert!(e < tol, "gap: {e}");
    let e = op_grad_error(&[random(&[5], &mut rng)], |g, v| g.softmax(v[0]).unwrap());
    assert!(e < tol, "softmax: {e}");
    let e = op_grad_error(&[random(&[3, 5, 2], &mut rng)], |g, v| g.resize_bilinear(v[0], 7, 4).unwrap());
    assert!(e < tol, "resize: {e}");
    let e = op_grad_error(&[random(&[2, 3, 2], &mut rng), random(&[2, 3, 2], &mut rng)], |g, v| {
        g.mean(v).unwrap()
    });
    assert!(e < tol, "mean: {e}");
    let e = op_grad_error(&[random(&[4], &mut rng)], |g, v| {
        let p = g.softmax(v[0]).unwrap();
        g.neg_log(p, 2, 0.25).unwrap()
    });
    assert!(e < tol, "neg_log: {e}");
}

#[test]
fn conv_relu_gap_stack_passes_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = [random(&[6, 5, 2], &mut rng), random(&[3, 3, 2, 4], &mut rng), random(&[4], &mut rng)];
    let e = op_grad_error(&inputs, |g, v| {
        let c = g.conv2d(v[0], v[1], v[2]).unwrap();
        let r = g.relu(c);
        g.global_avg_pool(r).unwrap()
    });
    assert!(e < 1e-4, "{e}");
}

#[test]
fn repeated_backward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = Graph::new();
    let x = g.leaf(random(&[6, 6, 2], &mut rng), true);
    let k = g.leaf(random(&[3, 3, 2, 3], &mut rng), true);
    let b = g.leaf(random(&[3], &mut rng), true);
    let c = g.conv2d(x, k, b).unwrap();
    let r = g.relu(c);
    let p = g.maxpool2(r).unwrap();
    let s = g.sum(p);
    g.backward(s).unwrap();
    let first: Vec<Vec<f64>> = [x, k, b].iter().map(|v| g.grad(*v).unwrap().to_vec()).collect();
    g.zero_grad();
    g.backward(s).unwrap();
    let second: Vec<Vec<f64>> = [x, k, b].iter().map(|v| g.grad(*v).unwrap().to_vec()).collect();
    assert_eq!(first, second);
}

#[test]
fn adam_minimizes_quadratic() {
    let mut p = vec![0.0];
    let mut s = AdamState::new(1, 0.3);
    for _ in 0..100 {
        let g = 2.0 * (p[0] - 3.0);
        adam_step(&mut p, &[g], &mut s).unwrap();
    }
    assert!((p[0] - 3.0).abs() < 1e-2);
    // Value from an independent re-run of the update rule in Python.
    assert!((p[0] - 2.99118997160107).abs() < 1e-9, "{}", p[0]);
}
