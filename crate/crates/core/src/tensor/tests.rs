use super::gradcheck::{check, rel_err};
use super::{Graph, TensorId};
use crate::rng;

fn randn(rng: &mut rng::ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng::normal(rng)).collect()
}

#[test]
fn add_and_mul_basics() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(vec![1.0, 2.0], vec![2], false);
    let b = g.leaf(vec![3.0, 4.0], vec![2], false);
    let c = g.add(a, b);
    assert_eq!(g.data(c), &[4.0, 6.0]);

    let x = g.leaf(vec![0.5, -1.5, 2.0], vec![3], false);
    let ones = g.leaf(vec![1.0; 3], vec![3], false);
    let y = g.mul(x, ones);
    assert_eq!(g.data(y), g.data(x));
}

#[test]
#[should_panic(expected = "broadcast")]
fn incompatible_shapes_panic() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(vec![0.0; 6], vec![2, 3], false);
    let b = g.leaf(vec![0.0; 8], vec![2, 4], false);
    g.add(a, b);
}

#[test]
fn grad_of_sum_of_product_is_other_factor() {
    let mut r = rng::seeded(7);
    let av = randn(&mut r, 6);
    let bv = randn(&mut r, 6);
    let mut g = Graph::<f64>::new();
    let a = g.leaf(av, vec![6], true);
    let b = g.leaf(bv.clone(), vec![6], false);
    let p = g.mul(a, b);
    let loss = g.sum(p);
    g.backward(loss);
    for (ga, be) in g.grad(a).unwrap().iter().zip(&bv) {
        assert!(rel_err(*ga, *be) < 1e-12);
    }

    // and against finite differences
    let mut r = rng::seeded(8);
    let av = randn(&mut r, 6);
    let bv = randn(&mut r, 6);
    let worst = check(&[vec![6], vec![6]], &[av, bv], 1e-5, |g, ids| {
        let p = g.mul(ids[0], ids[1]);
        g.sum(p)
    });
    assert!(worst < 1e-6, "worst rel err {worst}");
}

#[test]
fn matmul_values() {
    let mut g = Graph::<f64>::new();
    let id3 = g.leaf(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![3, 3], false);
    let m = g.leaf((1..=9).map(f64::from).collect(), vec![3, 3], false);
    let p = g.matmul(id3, m);
    assert_eq!(g.data(p), g.data(m));

    let a = g.leaf(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2], false);
    let b = g.leaf(vec![5.0, 6.0], vec![2, 1], false);
    let c = g.matmul(a, b);
    assert_eq!(g.data(c), &[17.0, 39.0]);
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut r = rng::seeded(3);
    let a = randn(&mut r, 20);
    let b = randn(&mut r, 12);
    let worst = check(&[vec![5, 4], vec![4, 3]], &[a, b], 1e-5, |g, ids| {
        let p = g.matmul(ids[0], ids[1]);
        let s = g.tanh(p);
        g.sum(s)
    });
    assert!(worst < 1e-6, "worst rel err {worst}");
}

#[test]
fn conv2d_identity_and_box_sum() {
    let mut g = Graph::<f64>::new();
    let img = g.leaf((0..16).map(f64::from).collect(), vec![1, 4, 4], false);
    let unit = g.leaf(vec![1.0], vec![1, 1, 1, 1], false);
    let out = g.conv2d(img, unit, 1, 0);
    assert_eq!(g.data(out), g.data(img));

    let ones_img = g.leaf(vec![1.0; 16], vec![1, 4, 4], false);
    let ones_k = g.leaf(vec![1.0; 9], vec![1, 1, 3, 3], false);
    let out = g.conv2d(ones_img, ones_k, 1, 0);
    assert_eq!(g.shape(out), &[1, 2, 2]);
    assert!(g.data(out).iter().all(|&v| (v - 9.0).abs() < 1e-12));
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let mut r = rng::seeded(11);
    let x = randn(&mut r, 2 * 8 * 8);
    let k = randn(&mut r, 3 * 2 * 3 * 3);
    let worst = check(&[vec![2, 8, 8], vec![3, 2, 3, 3]], &[x, k], 1e-5, |g, ids| {
        let c = g.conv2d(ids[0], ids[1], 1, 1);
        let a = g.tanh(c);
        g.mean(a)
    });
    assert!(worst < 1e-4, "worst rel err {worst}");
    // strided variant
    let mut r = rng::seeded(12);
    let x = randn(&mut r, 2 * 9 * 9);
    let k = randn(&mut r, 2 * 2 * 3 * 3);
    let worst = check(&[vec![2, 9, 9], vec![2, 2, 3, 3]], &[x, k], 1e-5, |g, ids| {
        let c = g.conv2d(ids[0], ids[1], 2, 1);
        g.mean(c)
    });
    assert!(worst < 1e-6, "worst rel err {worst}");
}

#[test]
fn conv_transpose_identity_and_shapes() {
    let mut g = Graph::<f64>::new();
    let img = g.leaf((0..36).map(f64::from).collect(), vec![1, 6, 6], false);
    let unit = g.leaf(vec![1.0], vec![1, 1, 1, 1], false);
    let out = g.conv_transpose2d(img, unit, 1, 0);
    assert_eq!(g.data(out), g.data(img));

    let x = g.leaf(vec![1.0; 16], vec![1, 4, 4], false);
    let k = g.leaf(vec![0.25; 4], vec![1, 1, 2, 2], false);
    let up = g.conv_transpose2d(x, k, 2, 0);
    assert_eq!(g.shape(up), &[1, 8, 8]);
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // <conv2d(u, K), v> == <u, conv_transpose2d(v, K)> for matching geometry
    let mut r = rng::seeded(21);
    for &(stride, pad) in &[(1usize, 0usize), (1, 1), (2, 1)] {
        let u = randn(&mut r, 2 * 6 * 6);
        let kv = randn(&mut r, 3 * 2 * 3 * 3);
        let mut g = Graph::<f64>::new();
        let ut = g.leaf(u.clone(), vec![2, 6, 6], false);
        let kt = g.leaf(kv.clone(), vec![3, 2, 3, 3], false);
        let cu = g.conv2d(ut, kt, stride, pad);
        let v = randn(&mut r, g.numel(cu));
        let vt = g.leaf(v.clone(), g.shape(cu).to_vec(), false);
        let tv = g.conv_transpose2d_to(vt, kt, stride, pad, (6, 6));
        assert_eq!(g.shape(tv), &[2, 6, 6]);
        let lhs: f64 = g.data(cu).iter().zip(&v).map(|(&a, &b)| a * b).sum();
        let rhs: f64 = u.iter().zip(g.data(tv)).map(|(&a, &b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-6, "adjoint identity broken: {lhs} vs {rhs} (s={stride}, p={pad})");
    }
}

#[test]
fn conv_transpose_gradients_match_finite_differences() {
    let mut r = rng::seeded(31);
    let x = randn(&mut r, 2 * 4 * 4);
    let k = randn(&mut r, 2 * 3 * 2 * 2);
    let worst = check(&[vec![2, 4, 4], vec![2, 3, 2, 2]], &[x, k], 1e-5, |g, ids| {
        let c = g.conv_transpose2d(ids[0], ids[1], 2, 0);
        let a = g.sigmoid(c);
        g.sum(a)
    });
    assert!(worst < 1e-6, "worst rel err {worst}");
}

#[test]
fn activation_values() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(vec![0.0, 0.0, 0.0], vec![3], false);
    let s = g.softmax(x, 0);
    for &v in g.data(s) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let z = g.leaf(vec![0.0], vec![1], false);
    let sg = g.sigmoid(z);
    assert_eq!(g.value(sg), 0.5);
}

#[test]
fn activation_gradients_match_finite_differences() {
    // random points away from kinks
    let mut r = rng::seeded(41);
    let x: Vec<f64> = randn(&mut r, 12).iter().map(|v| v + 0.3 * v.signum()).collect();
    type BuildFn = fn(&mut Graph<f64>, &[TensorId]) -> TensorId;
    let builders: Vec<BuildFn> = vec![
        |g, ids| {
            let y = g.relu(ids[0]);
            g.sum(y)
        },
        |g, ids| {
            let y = g.leaky_relu(ids[0], 0.2);
            g.sum(y)
        },
        |g, ids| {
            let y = g.sigmoid(ids[0]);
            g.sum(y)
        },
        |g, ids| {
            let y = g.tanh(ids[0]);
            g.sum(y)
        },
        |g, ids| {
            let y = g.softplus(ids[0]);
            g.sum(y)
        },
        |g, ids| {
            let y = g.softmax(ids[0], 1);
            let sq = g.mul(y, y);
            g.sum(sq)
        },
        |g, ids| {
            let y = g.abs(ids[0]);
            g.sum(y)
        },
    ];
    for (i, b) in builders.into_iter().enumerate() {
        let worst = check(&[vec![3, 4]], &[x.clone()], 1e-5, b);
        assert!(worst < 1e-6, "activation {i}: worst rel err {worst}");
    }
}

#[test]
fn pooling_values_and_gradients() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(vec![1.0, 2.0, 3.0, 4.0], vec![1, 2, 2], false);
    let m = g.max_pool2d(x, 2, 2);
    assert_eq!(g.data(m), &[4.0]);

    let c = g.leaf(vec![0.7; 36], vec![1, 6, 6], false);
    let a = g.avg_pool2d(c, 2, 2);
    assert!(g.data(a).iter().all(|&v| (v - 0.7).abs() < 1e-15));

    let mut r = rng::seeded(51);
    let x = randn(&mut r, 16);
    let worst = check(&[vec![1, 4, 4]], &[x.clone()], 1e-5, |g, ids| {
        let p = g.max_pool2d(ids[0], 2, 2);
        let sq = g.mul(p, p);
        g.sum(sq)
    });
    assert!(worst < 1e-6, "max pool worst rel err {worst}");

    // gradient of a single max-pool output is one-hot at the argmax
    let mut g = Graph::<f64>::new();
    let x = g.leaf(x, vec![1, 4, 4], true);
    let p = g.max_pool2d(x, 4, 4);
    let loss = g.sum(p);
    g.backward(loss);
    let gx = g.grad(x).unwrap();
    assert_eq!(gx.iter().filter(|&&v| v != 0.0).count(), 1);
    assert_eq!(gx.iter().sum::<f64>(), 1.0);

    let worst = check(&[vec![2, 6, 6]], &[randn(&mut r, 72)], 1e-5, |g, ids| {
        let p = g.avg_pool2d(ids[0], 3, 2);
        let t = g.tanh(p);
        g.sum(t)
    });
    assert!(worst < 1e-6, "avg pool worst rel err {worst}");
}

#[test]
fn backward_accumulates_over_reuse() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(vec![1.0, 2.0, 3.0], vec![3], true);
    let s1 = g.sum(x);
    let s2 = g.sum(x);
    let loss = g.add(s1, s2);
    g.backward(loss);
    assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0, 2.0]);

    let mut g = Graph::<f64>::new();
    let x = g.leaf(vec![1.0, 2.0, 3.0], vec![3], true);
    let loss = g.sum(x);
    g.backward(loss);
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
#[should_panic(expected = "scalar")]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(vec![1.0, 2.0], vec![2], true);
    let y = g.relu(x);
    g.backward(y);
}

#[test]
fn broadcast_gradient_conservation() {
    // gradient routed to a broadcast operand equals the gradient of the
    // explicitly tiled computation
    let mut r = rng::seeded(61);
    let a = randn(&mut r, 12); // [3,4]
    let b = randn(&mut r, 3); // [3,1] broadcast over axis 1
    let mut g = Graph::<f64>::new();
    let at = g.leaf(a.clone(), vec![3, 4], true);
    let bt = g.leaf(b.clone(), vec![3, 1], true);
    let p = g.mul(at, bt);
    let sq = g.mul(p, p);
    let loss = g.sum(sq);
    g.backward(loss);
    let gb = g.grad(bt).unwrap().to_vec();

    let mut tiled = Vec::new();
    for row in 0..3 {
        for _ in 0..4 {
            tiled.push(b[row]);
        }
    }
    let mut g2 = Graph::<f64>::new();
    let at2 = g2.leaf(a, vec![3, 4], true);
    let bt2 = g2.leaf(tiled, vec![3, 4], true);
    let p2 = g2.mul(at2, bt2);
    let sq2 = g2.mul(p2, p2);
    let loss2 = g2.sum(sq2);
    g2.backward(loss2);
    let gb2 = g2.grad(bt2).unwrap();
    for row in 0..3 {
        let summed: f64 = gb2[row * 4..(row + 1) * 4].iter().sum();
        assert!(rel_err(gb[row], summed) < 1e-12);
    }
}

#[test]
fn blurpool_kernel_normalized_and_constant_preserving() {
    let s: f64 = super::conv::BINOMIAL5.iter().sum();
    assert!((s - 1.0).abs() < 1e-15);

    let mut g = Graph::<f64>::new();
    let c = g.leaf(vec![0.42; 64], vec![1, 8, 8], false);
    let d = g.blurpool2d(c);
    assert_eq!(g.shape(d), &[1, 4, 4]);
    assert!(g.data(d).iter().all(|&v| (v - 0.42).abs() < 1e-12));
}

#[test]
fn blurpool_impulse_response_and_gradient() {
    // unit impulse reproduces the 5x5 separable kernel sampled at stride 2
    let mut img = vec![0.0; 11 * 11];
    img[5 * 11 + 5] = 1.0;
    let mut g = Graph::<f64>::new();
    let x = g.leaf(img, vec![1, 11, 11], false);
    let y = g.blurpool2d(x);
    let taps = super::conv::BINOMIAL5;
    // output cell (oy, ox) samples input (2oy-2+i, 2ox-2+j); the impulse at
    // (5,5) contributes taps[i]*taps[j] where 2oy-2+i == 5
    for oy in 0..6 {
        for ox in 0..6 {
            let i = 5isize - (2 * oy as isize - 2);
            let j = 5isize - (2 * ox as isize - 2);
            let expect = if (0..5).contains(&i) && (0..5).contains(&j) {
                taps[i as usize] * taps[j as usize]
            } else {
                0.0
            };
            let got = g.data(y)[oy * 6 + ox];
            assert!((got - expect).abs() < 1e-12, "({oy},{ox}): {got} vs {expect}");
        }
    }

    let mut r = rng::seeded(71);
    let x = randn(&mut r, 2 * 7 * 7);
    let worst = check(&[vec![2, 7, 7]], &[x], 1e-5, |g, ids| {
        let d = g.blurpool2d(ids[0]);
        let sq = g.mul(d, d);
        g.sum(sq)
    });
    assert!(worst < 1e-6, "blurpool worst rel err {worst}");
}

#[test]
fn upsample_and_misc_gradients() {
    let mut r = rng::seeded(81);
    let x = randn(&mut r, 2 * 3 * 3);
    let worst = check(&[vec![2, 3, 3]], &[x], 1e-5, |g, ids| {
        let u = g.upsample_nearest2x(ids[0]);
        let t = g.tanh(u);
        g.mean(t)
    });
    assert!(worst < 1e-6, "upsample worst rel err {worst}");

    let a = randn(&mut r, 8);
    let b = randn(&mut r, 4);
    let worst = check(&[vec![2, 2, 2], vec![1, 2, 2]], &[a, b], 1e-5, |g, ids| {
        let c = g.concat0(ids[0], ids[1]);
        let s = g.slice0(c, 1, 2);
        let sq = g.mul(s, s);
        g.sum(sq)
    });
    assert!(worst < 1e-6, "concat/slice worst rel err {worst}");

    let x: Vec<f64> = randn(&mut r, 6).iter().map(|v| v.abs() + 0.5).collect();
    let worst = check(&[vec![6]], &[x], 1e-6, |g, ids| {
        let s = g.sqrt(ids[0]);
        let l = g.ln(ids[0]);
        let e = g.exp(ids[0]);
        let d = g.div(s, e);
        let m = g.mul(d, l);
        g.sum(m)
    });
    assert!(worst < 1e-5, "sqrt/ln/exp/div worst rel err {worst}");
}

#[test]
fn forward_and_gradients_are_deterministic() {
    let run = || {
        let mut r = rng::seeded(99);
        let x = randn(&mut r, 2 * 6 * 6);
        let k = randn(&mut r, 2 * 2 * 3 * 3);
        let mut g = Graph::<f64>::new();
        let xt = g.leaf(x, vec![2, 6, 6], true);
        let kt = g.leaf(k, vec![2, 2, 3, 3], true);
        let c = g.conv2d(xt, kt, 1, 1);
        let a = g.tanh(c);
        let loss = g.mean(a);
        g.backward(loss);
        (g.value(loss).to_bits(), g.grad(kt).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}
