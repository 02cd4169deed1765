use super::attention::{push_self_attention, self_attention_with_map};
use super::networks::{build_network, forward_network, NetworkKind, NetworkSpec};
use super::spectral::{power_iterate, sigma_estimate, spectral_norm_apply, SpectralNormState};
use super::{bind, Bound, LayerStack, NetCtx};
use crate::rng;
use crate::tensor::gradcheck;
use crate::tensor::Graph;

/// Largest singular value via Jacobi eigen-decomposition of W^T W. Brute
/// force; independent of the power iteration it checks.
fn sigma_eigen_oracle(w: &[f64], rows: usize, cols: usize) -> f64 {
    let mut a = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in 0..cols {
            let mut s = 0.0;
            for r in 0..rows {
                s += w[r * cols + i] * w[r * cols + j];
            }
            a[i * cols + j] = s;
        }
    }
    let n = cols;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q].abs();
            }
        }
        if off < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-18 {
                    continue;
                }
                let theta = 0.5 * (a[q * n + q] - a[p * n + p]) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut lmax = 0.0f64;
    for i in 0..n {
        lmax = lmax.max(a[i * n + i]);
    }
    lmax.sqrt()
}

#[test]
fn spectral_norm_diagonal_case() {
    let w = vec![3.0, 0.0, 0.0, 1.0];
    let mut st = SpectralNormState::new(2, 2, 100);
    let wn = spectral_norm_apply(&w, 2, 2, &mut st);
    let sigma = sigma_estimate(&w, 2, 2, &st.u, &st.v);
    assert!((sigma - 3.0).abs() < 1e-9, "sigma {sigma}");
    assert!((sigma_eigen_oracle(&wn, 2, 2) - 1.0).abs() < 1e-9);
    assert!(!st.degenerate);
}

#[test]
fn spectral_norm_matches_eigen_oracle_on_random_matrices() {
    let mut r = rng::seeded(17);
    for _ in 0..100 {
        let w: Vec<f64> = (0..64).map(|_| rng::normal(&mut r)).collect();
        let mut st = SpectralNormState::new(8, 8, 100);
        let wn = spectral_norm_apply(&w, 8, 8, &mut st);
        let sigma = sigma_estimate(&w, 8, 8, &st.u, &st.v);
        let oracle = sigma_eigen_oracle(&w, 8, 8);
        assert!((sigma - oracle).abs() < 1e-4, "sigma {sigma} vs oracle {oracle}");
        let sn = sigma_eigen_oracle(&wn, 8, 8);
        assert!((0.999..=1.001).contains(&sn), "normalized sigma {sn}");
        // k = 1 reproduces plain W / sigma(W)
        for (a, b) in wn.iter().zip(&w) {
            assert!((a - b / oracle).abs() < 1e-6);
        }
    }
}

#[test]
fn spectral_norm_zero_matrix_is_degenerate() {
    let w = vec![0.0; 16];
    let mut st = SpectralNormState::new(4, 4, 50);
    let wn = spectral_norm_apply(&w, 4, 4, &mut st);
    assert!(st.degenerate);
    assert_eq!(wn, w);
}

#[test]
fn in_graph_spectral_norm_matches_raw_and_checks_gradients() {
    let mut r = rng::seeded(23);
    let w: Vec<f64> = (0..24).map(|_| rng::normal(&mut r)).collect();
    let (rows, cols) = (4, 6);
    let mut u = vec![1.0; rows];
    let mut v = vec![1.0; cols];
    power_iterate(&w, rows, cols, &mut u, &mut v, 200);
    let sigma = sigma_estimate(&w, rows, cols, &u, &v);

    let mut g = Graph::<f64>::new();
    let wt = g.leaf(w.clone(), vec![rows, cols], true);
    let ut = g.leaf(u.clone(), vec![1, rows], false);
    let vt = g.leaf(v.clone(), vec![cols, 1], false);
    let wn = super::spectral::spectral_norm_in_graph(&mut g, wt, ut, vt, 1.0);
    for (a, b) in g.data(wn).iter().zip(&w) {
        assert!((a - b / sigma).abs() < 1e-9);
    }

    let worst = gradcheck::check(&[vec![rows, cols]], &[w], 1e-6, |g, ids| {
        let ut = g.leaf(u.clone(), vec![1, rows], false);
        let vt = g.leaf(v.clone(), vec![cols, 1], false);
        let wn = super::spectral::spectral_norm_in_graph(g, ids[0], ut, vt, 1.0);
        let sq = g.mul(wn, wn);
        g.sum(sq)
    });
    assert!(worst < 1e-4, "spectral norm grad worst {worst}");
}

#[test]
fn self_attention_identity_at_gamma_zero_and_row_sums() {
    let mut r = rng::seeded(5);
    let mut stack = LayerStack::<f64>::new();
    push_self_attention(&mut stack, &mut r, "sa", 4);
    let mut g = Graph::<f64>::new();
    let bound = bind(&mut g, &stack);
    let x_data: Vec<f64> = (0..4 * 6 * 6).map(|_| rng::normal(&mut r)).collect();
    let x = g.leaf(x_data.clone(), vec![4, 6, 6], false);
    let (y, attn) = {
        let mut ctx = NetCtx { g: &mut g, stack: &stack, bound: &bound };
        self_attention_with_map(&mut ctx, "sa", x)
    };
    // gamma starts at zero: exact identity
    assert_eq!(g.data(y), x_data.as_slice());
    // attention rows sum to one
    let n = 36;
    let a = g.data(attn);
    for i in 0..n {
        let s: f64 = a[i * n..(i + 1) * n].iter().sum();
        assert!((s - 1.0).abs() < 1e-6, "row {i} sums to {s}");
    }
}

#[test]
fn self_attention_gradients_match_finite_differences() {
    let mut r = rng::seeded(6);
    let mut stack = LayerStack::<f64>::new();
    push_self_attention(&mut stack, &mut r, "sa", 4);
    // move gamma off zero so its use is exercised
    stack.get_mut("sa.gamma").data[0] = 0.37;
    let x_data: Vec<f64> = (0..4 * 6 * 6).map(|_| rng::normal(&mut r)).collect();
    let shapes: Vec<Vec<usize>> = stack.entries().iter().map(|p| p.shape.clone()).collect();
    let init: Vec<Vec<f64>> = stack.entries().iter().map(|p| p.data.clone()).collect();
    let worst = gradcheck::check(&shapes, &init, 1e-5, |g, ids| {
        let bound = Bound { ids: ids.to_vec() };
        let x = g.leaf(x_data.clone(), vec![4, 6, 6], false);
        let y = {
            let mut ctx = NetCtx { g, stack: &stack, bound: &bound };
            self_attention_with_map(&mut ctx, "sa", x).0
        };
        let sq = g.mul(y, y);
        g.mean(sq)
    });
    assert!(worst < 1e-4, "self-attention worst rel err {worst}");
}

fn network_gradcheck(spec: &NetworkSpec, in_shape: Vec<usize>, seed: u64) -> f64 {
    let stack = build_network::<f64>(spec, seed);
    let mut r = rng::derive(seed, "gradcheck-input");
    let x_data: Vec<f64> = (0..in_shape.iter().product::<usize>())
        .map(|_| 0.5 + 0.2 * rng::normal(&mut r))
        .collect();
    let shapes: Vec<Vec<usize>> = stack.entries().iter().map(|p| p.shape.clone()).collect();
    let init: Vec<Vec<f64>> = stack.entries().iter().map(|p| p.data.clone()).collect();
    gradcheck::check(&shapes, &init, 1e-5, |g, ids| {
        let bound = Bound { ids: ids.to_vec() };
        let x = g.leaf(x_data.clone(), in_shape.clone(), false);
        let y = {
            let mut ctx = NetCtx { g, stack: &stack, bound: &bound };
            forward_network(spec, &mut ctx, x)
        };
        let sq = g.mul(y, y);
        g.mean(sq)
    })
}

#[test]
fn translator_full_gradcheck_at_toy_width() {
    let spec = NetworkSpec::toy(NetworkKind::TranslatorGenerator);
    let worst = network_gradcheck(&spec, vec![1, 16, 16], 101);
    assert!(worst < 1e-3, "translator worst rel err {worst}");
}

#[test]
fn patchgan_full_gradcheck_at_toy_width() {
    let spec = NetworkSpec::toy(NetworkKind::PatchganDiscriminator);
    let worst = network_gradcheck(&spec, vec![2, 16, 16], 102);
    assert!(worst < 1e-3, "patchgan worst rel err {worst}");
}

#[test]
fn sr_generator_full_gradcheck_at_toy_width() {
    let spec = NetworkSpec::toy(NetworkKind::SrGenerator);
    let worst = network_gradcheck(&spec, vec![1, 6, 6], 103);
    assert!(worst < 1e-3, "sr generator worst rel err {worst}");
}

#[test]
fn sr_discriminator_full_gradcheck_at_toy_width() {
    let spec = NetworkSpec::toy(NetworkKind::SrDiscriminator);
    let worst = network_gradcheck(&spec, vec![1, 16, 16], 104);
    assert!(worst < 1e-3, "sr discriminator worst rel err {worst}");
}

#[test]
fn srpsa_full_gradcheck_at_toy_width() {
    let spec = NetworkSpec::toy(NetworkKind::SrpsaNet);
    let worst = network_gradcheck(&spec, vec![1, 8, 8], 105);
    assert!(worst < 1e-3, "srpsa worst rel err {worst}");
}

fn run_forward_shape(spec: &NetworkSpec, in_shape: Vec<usize>) -> Vec<usize> {
    let stack = build_network::<f32>(spec, 7);
    let mut g = Graph::<f32>::new();
    let bound = bind(&mut g, &stack);
    let x = g.leaf(vec![0.5; in_shape.iter().product()], in_shape, false);
    let y = {
        let mut ctx = NetCtx { g: &mut g, stack: &stack, bound: &bound };
        forward_network(spec, &mut ctx, x)
    };
    g.shape(y).to_vec()
}

#[test]
fn unet_preserves_extents_for_power_of_two_inputs() {
    let spec = NetworkSpec::desk(NetworkKind::TranslatorGenerator);
    assert_eq!(spec.min_input(), 64);
    for sz in [64usize, 128] {
        assert_eq!(run_forward_shape(&spec, vec![1, sz, sz]), vec![1, sz, sz]);
    }
    let toy = NetworkSpec::toy(NetworkKind::TranslatorGenerator);
    for sz in [8usize, 16, 32] {
        assert_eq!(run_forward_shape(&toy, vec![1, sz, sz]), vec![1, sz, sz]);
    }
}

#[test]
fn srpsa_maps_input_to_quarter_resolution_four_channels() {
    let spec = NetworkSpec::desk(NetworkKind::SrpsaNet);
    assert_eq!(run_forward_shape(&spec, vec![1, 64, 64]), vec![4, 16, 16]);
}

#[test]
fn sr_generator_upscales_four_times() {
    let spec = NetworkSpec::toy(NetworkKind::SrGenerator);
    assert_eq!(run_forward_shape(&spec, vec![1, 32, 32]), vec![1, 128, 128]);
}

#[test]
fn same_seed_builds_identical_stacks() {
    for kind in [
        NetworkKind::TranslatorGenerator,
        NetworkKind::PatchganDiscriminator,
        NetworkKind::SrGenerator,
        NetworkKind::SrDiscriminator,
        NetworkKind::SrpsaNet,
    ] {
        let spec = NetworkSpec::desk(kind);
        let a = build_network::<f32>(&spec, 42);
        let b = build_network::<f32>(&spec, 42);
        assert_eq!(a.len(), b.len());
        for (pa, pb) in a.entries().iter().zip(b.entries()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.shape, pb.shape);
            let ba: Vec<u32> = pa.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = pb.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb, "{} differs between builds", pa.name);
        }
        let c = build_network::<f32>(&spec, 43);
        let same = a
            .entries()
            .iter()
            .zip(c.entries())
            .all(|(x, y)| x.data.iter().zip(&y.data).all(|(u, v)| u == v));
        assert!(!same, "different seeds should differ");
    }
}

#[test]
fn patchgan_emits_spatial_score_map() {
    let spec = NetworkSpec::desk(NetworkKind::PatchganDiscriminator);
    let shape = run_forward_shape(&spec, vec![2, 64, 64]);
    assert_eq!(shape, vec![1, 8, 8]);
}
