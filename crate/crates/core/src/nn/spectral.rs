//! Spectral normalization by power iteration: weights are divided by an
//! estimate of their largest singular value so every layer is (approximately)
//! 1-Lipschitz, scaled by an optional constant.

use crate::tensor::{Graph, Scalar, TensorId};

/// Power-iteration state for one weight matrix, viewed as
/// `[out_features, everything_else]`.
#[derive(Clone, Debug)]
pub struct SpectralNormState {
    /// Left singular-vector estimate, unit norm, length = out features.
    pub u: Vec<f64>,
    /// Right singular-vector estimate, unit norm.
    pub v: Vec<f64>,
    pub n_power_iterations: usize,
    pub lipschitz_k: f64,
    /// Set when the weight matrix was identically zero and normalization was
    /// skipped.
    pub degenerate: bool,
}

impl SpectralNormState {
    pub fn new(rows: usize, cols: usize, n_power_iterations: usize) -> Self {
        let mut u = vec![0.0; rows];
        u[0] = 1.0;
        let mut v = vec![0.0; cols];
        v[0] = 1.0;
        SpectralNormState { u, v, n_power_iterations, lipschitz_k: 1.0, degenerate: false }
    }
}

/// One or more rounds of `v <- normalize(W^T u); u <- normalize(W v)` on raw
/// row-major data. Vectors keep unit norm; a zero matrix leaves them alone.
pub fn power_iterate<T: Scalar>(w: &[T], rows: usize, cols: usize, u: &mut [T], v: &mut [T], iters: usize) {
    debug_assert_eq!(w.len(), rows * cols);
    let eps = T::from_f64(1e-12);
    for _ in 0..iters {
        // v = W^T u
        for c in 0..cols {
            v[c] = T::zero();
        }
        for r in 0..rows {
            let ur = u[r];
            let row = &w[r * cols..(r + 1) * cols];
            for (vc, &wv) in v.iter_mut().zip(row) {
                *vc += wv * ur;
            }
        }
        let nv = norm(v);
        if nv <= eps {
            return; // zero matrix: leave the state untouched
        }
        for vc in v.iter_mut() {
            *vc /= nv;
        }
        // u = W v
        for r in 0..rows {
            let row = &w[r * cols..(r + 1) * cols];
            let mut acc = T::zero();
            for (&wv, &vc) in row.iter().zip(v.iter()) {
                acc += wv * vc;
            }
            u[r] = acc;
        }
        let nu = norm(u);
        if nu <= eps {
            return;
        }
        for ur in u.iter_mut() {
            *ur /= nu;
        }
    }
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

/// Estimate sigma = u^T W v on raw data.
pub fn sigma_estimate<T: Scalar>(w: &[T], rows: usize, cols: usize, u: &[T], v: &[T]) -> T {
    let mut acc = T::zero();
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut wv = T::zero();
        for (&we, &ve) in row.iter().zip(v) {
            wv += we * ve;
        }
        acc += u[r] * wv;
    }
    acc
}

/// Normalize a weight with freshly converged power iteration, outside any
/// graph. Returns the normalized copy and updates the state; a zero matrix is
/// returned unchanged with `degenerate` set.
pub fn spectral_norm_apply<T: Scalar>(w: &[T], rows: usize, cols: usize, state: &mut SpectralNormState) -> Vec<T> {
    let mut u: Vec<T> = state.u.iter().map(|&x| T::from_f64(x)).collect();
    let mut v: Vec<T> = state.v.iter().map(|&x| T::from_f64(x)).collect();
    power_iterate(w, rows, cols, &mut u, &mut v, state.n_power_iterations);
    let sigma = sigma_estimate(w, rows, cols, &u, &v);
    if sigma.abs() <= T::from_f64(1e-12) {
        state.degenerate = true;
        return w.to_vec();
    }
    state.degenerate = false;
    state.u = u.iter().map(|&x| Scalar::to_f64(x)).collect();
    state.v = v.iter().map(|&x| Scalar::to_f64(x)).collect();
    let k = T::from_f64(state.lipschitz_k);
    w.iter().map(|&x| x * k / sigma).collect()
}

/// In-graph normalization: `W * k / (u^T W v)` with `u  [1, rows]` and
/// `v [cols, 1]` held constant. Gradients flow through the division, giving
/// the standard `d sigma / dW = u v^T` term.
pub fn spectral_norm_in_graph<T: Scalar>(
    g: &mut Graph<T>,
    w: TensorId,
    u: TensorId,
    v: TensorId,
    lipschitz_k: f64,
) -> TensorId {
    let shape = g.shape(w).to_vec();
    let rows = shape[0];
    let cols: usize = shape[1..].iter().product();
    let w2 = g.reshape(w, vec![rows, cols]);
    let uw = g.matmul(u, w2);
    let sigma = g.matmul(uw, v); // [1, 1]
    let sigma = g.reshape(sigma, vec![1]);
    let k = g.scalar(lipschitz_k);
    let scale = g.div(k, sigma);
    g.mul(w, scale)
}
