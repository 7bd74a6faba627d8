//! Central-difference checks for the scorer's fused sigmoid + BCE path and
//! for the joint classifier/decoder loss at a single seed.

use ndarray::Array2;
use ood_baseline::nn::{Activation, LayerStack};
use ood_baseline::rng;
use rand::Rng;

const H: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn bce(stack: &LayerStack, x: &Array2<f64>, y: &[f64]) -> f64 {
    let out = stack.predict(x.view()).unwrap();
    out.column(0)
        .iter()
        .zip(y)
        .map(|(&p, &t)| -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()))
        .sum::<f64>()
        / y.len() as f64
}

#[test]
fn scorer_bce_gradient_matches_central_differences() {
    let mut r = rng::stream(11, 1);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let dim = r.random_range(2..10);
        let hidden = r.random_range(2..12);
        let mut stack = LayerStack::new(
            &[dim, hidden, 1],
            &[Activation::Gelu, Activation::Sigmoid],
            &mut rng::stream(case, 2),
        )
        .unwrap();
        let batch = r.random_range(1..8);
        let x = Array2::from_shape_fn((batch, dim), |_| r.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..batch).map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 }).collect();

        let cache = stack.forward(x.view()).unwrap();
        let d_pre = Array2::from_shape_fn((batch, 1), |(i, _)| {
            (cache.output[[i, 0]] - y[i]) / batch as f64
        });
        let (grads, _) = stack.backward_pre_activation(&cache, d_pre).unwrap();

        for li in 0..stack.layers.len() {
            let nw = stack.layers[li].weights.len();
            for k in 0..nw {
                let analytic = grads[li].weights.as_slice().unwrap()[k];
                stack.layers[li].weights.as_slice_mut().unwrap()[k] += H;
                let up = bce(&stack, &x, &y);
                stack.layers[li].weights.as_slice_mut().unwrap()[k] -= 2.0 * H;
                let down = bce(&stack, &x, &y);
                stack.layers[li].weights.as_slice_mut().unwrap()[k] += H;
                worst = worst.max(rel_err(analytic, (up - down) / (2.0 * H)));
            }
            for k in 0..stack.layers[li].bias.len() {
                let analytic = grads[li].bias[k];
                stack.layers[li].bias[k] += H;
                let up = bce(&stack, &x, &y);
                stack.layers[li].bias[k] -= 2.0 * H;
                let down = bce(&stack, &x, &y);
                stack.layers[li].bias[k] += H;
                worst = worst.max(rel_err(analytic, (up - down) / (2.0 * H)));
            }
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn stack_backward_matches_central_differences_for_sum_of_outputs() {
    let mut stack = LayerStack::new(
        &[5, 7, 6, 3],
        &[Activation::Gelu, Activation::Gelu, Activation::Identity],
        &mut rng::stream(3, 2),
    )
    .unwrap();
    let mut r = rng::stream(4, 1);
    let x = Array2::from_shape_fn((4, 5), |_| r.random_range(-1.0..1.0));
    let loss = |s: &LayerStack| s.predict(x.view()).unwrap().sum();
    let cache = stack.forward(x.view()).unwrap();
    let ones = Array2::ones(cache.output.raw_dim());
    let (grads, _) = stack.backward(&cache, ones).unwrap();
    for li in 0..stack.layers.len() {
        for k in 0..stack.layers[li].weights.len() {
            let analytic = grads[li].weights.as_slice().unwrap()[k];
            stack.layers[li].weights.as_slice_mut().unwrap()[k] += H;
            let up = loss(&stack);
            stack.layers[li].weights.as_slice_mut().unwrap()[k] -= 2.0 * H;
            let down = loss(&stack);
            stack.layers[li].weights.as_slice_mut().unwrap()[k] += H;
            let e = rel_err(analytic, (up - down) / (2.0 * H));
            assert!(e < 1e-4, "layer {li} weight {k}: {e:e}");
        }
    }
}
