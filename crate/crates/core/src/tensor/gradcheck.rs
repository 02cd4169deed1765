//! Central finite-difference gradient checking. Used by the test suites of
//! every module that builds graphs; kept independent of the backward pass it
//! verifies (it only re-runs forwards).

use super::{Graph, TensorId};

/// Relative error with a small-denominator guard.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Checks the gradient of a scalar loss w.r.t. every element of every leaf.
///
/// `build` receives a fresh graph plus leaves created from `init`/`shapes`
/// (in order, `requires_grad = true`) and returns the loss tensor. Returns
/// the maximum relative error between analytic and central finite-difference
/// gradients over all leaf elements.
pub fn check(
    shapes: &[Vec<usize>],
    init: &[Vec<f64>],
    step: f64,
    build: impl Fn(&mut Graph<f64>, &[TensorId]) -> TensorId,
) -> f64 {
    assert_eq!(shapes.len(), init.len());
    let run = |data: &[Vec<f64>], want_grad: bool| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::<f64>::new();
        let ids: Vec<TensorId> = data
            .iter()
            .zip(shapes)
            .map(|(d, s)| g.leaf(d.clone(), s.clone(), true))
            .collect();
        let loss = build(&mut g, &ids);
        let value = g.value(loss);
        let mut grads = Vec::new();
        if want_grad {
            g.backward(loss);
            for id in &ids {
                grads.push(g.grad(*id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.numel(*id)]));
            }
        }
        (value, grads)
    };

    let (_, analytic) = run(init, true);
    let mut worst = 0.0f64;
    let mut data: Vec<Vec<f64>> = init.to_vec();
    for li in 0..init.len() {
        for ei in 0..init[li].len() {
            let orig = data[li][ei];
            data[li][ei] = orig + step;
            let (lp, _) = run(&data, false);
            data[li][ei] = orig - step;
            let (lm, _) = run(&data, false);
            data[li][ei] = orig;
            let numeric = (lp - lm) / (2.0 * step);
            worst = worst.max(rel_err(analytic[li][ei], numeric));
        }
    }
    worst
}
