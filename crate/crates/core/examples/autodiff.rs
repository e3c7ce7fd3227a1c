//! The tensor engine on its own: a two-layer convolutional classifier built
//! on a graph, trained with Adam on a toy problem (is the square brighter or
//! darker than the background?), with its gradient checked by finite differences.
//!
//! cargo run --release --example autodiff

use crm::engine::{adam_step, grad_check, AdamState, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: usize = 8;
const W: usize = 8;
const HIDDEN: usize = 4;

fn sample(rng: &mut ChaCha8Rng) -> (Tensor, usize) {
    let class = rng.random_range(0..2);
    let mut data: Vec<f64> = (0..H * W).map(|_| rng.random_range(-0.1..0.1)).collect();
    let x0 = rng.random_range(0..W - 2);
    let y0 = rng.random_range(0..H - 2);
    for y in y0..y0 + 2 {
        for x in x0..x0 + 2 {
            data[y * W + x] += if class == 1 { 1.0 } else { -1.0 };
        }
    }
    (Tensor::new(vec![H, W, 1], data).unwrap(), class)
}

/// Shapes of the four parameter tensors, flattened one after another.
fn layout() -> Vec<Vec<usize>> {
    vec![vec![3, 3, 1, HIDDEN], vec![HIDDEN], vec![3, 3, HIDDEN, 2], vec![2]]
}

fn loss(params: &[f64], x: &Tensor, class: usize, grads: Option<&mut Vec<f64>>) -> f64 {
    let mut g = Graph::new();
    let mut offset = 0;
    let vars: Vec<_> = layout()
        .into_iter()
        .map(|shape| {
            let n: usize = shape.iter().product();
            let t = Tensor::new(shape, params[offset..offset + n].to_vec()).unwrap();
            offset += n;
            g.leaf(t, true)
        })
        .collect();
    let input = g.constant(x.clone());
    let h = g.conv2d(input, vars[0], vars[1]).unwrap();
    let h = g.relu(h);
    let h = g.maxpool2(h).unwrap();
    let logits = g.conv2d(h, vars[2], vars[3]).unwrap();
    let pooled = g.global_avg_pool(logits).unwrap();
    let probs = g.softmax(pooled).unwrap();
    let l = g.neg_log(probs, class, 1.0).unwrap();
    let value = g.value(l).item();
    if let Some(out) = grads {
        g.backward(l).unwrap();
        out.clear();
        for v in vars {
            out.extend(g.grad_or_zeros(v));
        }
    }
    value
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n: usize = layout().iter().map(|s| s.iter().product::<usize>()).sum();
    let mut params: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();

    let (x, class) = sample(&mut rng);
    let mut grads = Vec::new();
    loss(&params, &x, class, Some(&mut grads));
    let mut probe = params.clone();
    let report = grad_check(|p| loss(p, &x, class, None), &mut probe, &grads, 1e-6, None);
    println!("gradient check over {n} parameters: max relative error {:.2e}", report.max_rel_error);

    let mut adam = AdamState::new(n, 0.02);
    let data: Vec<_> = (0..64).map(|_| sample(&mut rng)).collect();
    for epoch in 0..10 {
        let mut total = 0.0;
        for (x, c) in &data {
            total += loss(&params, x, *c, Some(&mut grads));
            adam_step(&mut params, &grads, &mut adam).unwrap();
        }
        if epoch % 2 == 1 {
            println!("epoch {:>2}: mean loss {:.4}", epoch + 1, total / data.len() as f64);
        }
    }
}
