//! Image-quality and generative-quality metrics: PSNR, Gaussian-windowed
//! SSIM, seeded random-network embeddings, and the k-NN manifold density and
//! coverage measures. Also hosts the shift-consistency probe used to compare
//! anti-aliased and max-pool downsampling.

use crate::error::{Error, Result};
use crate::image_io::Image;
use crate::rng;
use crate::tensor::Graph;

/// `10 log10(max_val^2 / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, max_val: f64) -> f64 {
    assert_eq!((a.w, a.h), (b.w, b.h), "psnr needs equal shapes");
    let mut mse = 0.0f64;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let d = f64::from(x) - f64::from(y);
        mse += d * d;
    }
    mse /= (a.w * a.h) as f64;
    if mse == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (max_val * max_val / mse).log10()
}

fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let mut t: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = t.iter().sum();
    for v in &mut t {
        *v /= s;
    }
    t
}

pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub max_val: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, max_val: 1.0 }
    }
}

/// Mean local SSIM over every position where the full window fits,
/// computed with separable Gaussian filtering.
pub fn ssim(a: &Image, b: &Image, cfg: &SsimConfig) -> f64 {
    assert_eq!((a.w, a.h), (b.w, b.h), "ssim needs equal shapes");
    assert!(
        a.w >= cfg.window && a.h >= cfg.window,
        "image {}x{} smaller than ssim window {}",
        a.w,
        a.h,
        cfg.window
    );
    let taps = gaussian_taps(cfg.window, cfg.sigma);
    let to64 = |img: &Image| -> Vec<f64> { img.data.iter().map(|&v| f64::from(v)).collect() };
    let av = to64(a);
    let bv = to64(b);
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(u, v)| u * v).collect() };

    let filt = |src: &[f64]| gaussian_valid(src, a.w, a.h, &taps);
    let mu_a = filt(&av);
    let mu_b = filt(&bv);
    let m_aa = filt(&prod(&av, &av));
    let m_bb = filt(&prod(&bv, &bv));
    let m_ab = filt(&prod(&av, &bv));

    let c1 = (cfg.k1 * cfg.max_val).powi(2);
    let c2 = (cfg.k2 * cfg.max_val).powi(2);
    let mut acc = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = m_aa[i] - ma * ma;
        let vb = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    acc / mu_a.len() as f64
}

/// Separable valid-region Gaussian filter (output extents shrink by
/// window - 1 per axis).
fn gaussian_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    // horizontal
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, t) in taps.iter().enumerate() {
                s += t * src[y * w + x + i];
            }
            tmp[y * ow + x] = s;
        }
    }
    // vertical
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, t) in taps.iter().enumerate() {
                s += t * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

// ---- embeddings -------------------------------------------------------

/// Feature matrix for one image set, one row per image.
#[derive(Clone, Debug)]
pub struct EmbeddingSet {
    pub features: Vec<Vec<f64>>,
    pub label: String,
}

/// Deterministic features from a seeded, frozen four-stage strided
/// convolution stack with global average pooling. All images must share
/// extents (>= 16).
pub fn embed(images: &[Image], embedder_seed: u64, d: usize) -> EmbeddingSet {
    assert!(d >= 4 && d % 4 == 0, "embedding width must be a positive multiple of 4");
    let widths = [d / 8, d / 4, d / 2, d];
    let mut features = Vec::with_capacity(images.len());
    let stack = build_embedder(embedder_seed, &widths);
    for img in images {
        assert!(img.w >= 16 && img.h >= 16, "embedder needs images >= 16x16");
        features.push(embed_one(&stack, img, &widths));
    }
    EmbeddingSet { features, label: String::new() }
}

fn build_embedder(seed: u64, widths: &[usize; 4]) -> crate::nn::LayerStack<f64> {
    let mut r = rng::derive(seed, "embedder");
    let mut s = crate::nn::LayerStack::new();
    let mut c_in = 1;
    for (i, &w) in widths.iter().enumerate() {
        crate::nn::push_conv(&mut s, &mut r, &format!("e{i}"), w, c_in, 3, 3, false);
        c_in = w;
    }
    s
}

fn embed_one(stack: &crate::nn::LayerStack<f64>, img: &Image, widths: &[usize; 4]) -> Vec<f64> {
    let mut g = Graph::<f64>::new();
    let bound = crate::loss::bind_frozen(&mut g, stack);
    let data: Vec<f64> = img.data.iter().map(|&v| f64::from(v)).collect();
    let x = g.leaf(data, vec![1, img.h, img.w], false);
    let mut ctx = crate::nn::NetCtx { g: &mut g, stack, bound: &bound };
    let mut cur = x;
    for i in 0..4 {
        let c = ctx.conv(&format!("e{i}"), cur, 2, 1);
        cur = ctx.g.leaky_relu(c, 0.2);
    }
    let shape = g.shape(cur).to_vec();
    let (c, n) = (shape[0], shape[1] * shape[2]);
    debug_assert_eq!(c, widths[3]);
    let data = g.data(cur);
    (0..c).map(|ci| data[ci * n..(ci + 1) * n].iter().sum::<f64>() / n as f64).collect()
}

// ---- density & coverage -----------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct ManifoldConfig {
    /// Neighborhood size for the real-sample radii.
    pub k: usize,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        ManifoldConfig { k: 5 }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// k-NN manifold metrics over embedding sets:
/// density = (1/(k M)) sum_j sum_i [y_j in B(x_i, r_i)],
/// coverage = (1/N) sum_i [exists j: y_j in B(x_i, r_i)],
/// with r_i the distance from x_i to its k-th nearest other real point.
/// Closed balls, so coverage(X, X) = 1. An all-identical real set has zero
/// radii and is rejected.
pub fn density_coverage(real: &EmbeddingSet, fake: &EmbeddingSet, cfg: &ManifoldConfig) -> Result<(f64, f64)> {
    let n = real.features.len();
    let m = fake.features.len();
    if n <= cfg.k {
        return Err(Error::InvalidInput(format!("need more than k={} real samples, got {n}", cfg.k)));
    }
    if m == 0 {
        return Err(Error::InvalidInput("empty fake set".into()));
    }
    let radii: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist(&real.features[i], &real.features[j])).collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d[cfg.k - 1]
        })
        .collect();
    if radii.iter().all(|&r| r == 0.0) {
        return Err(Error::InvalidInput("degenerate real set: all embeddings identical (zero radii)".into()));
    }
    let mut density_hits = 0usize;
    let mut covered = 0usize;
    for (i, x) in real.features.iter().enumerate() {
        let mut any = false;
        for y in &fake.features {
            if dist(x, y) <= radii[i] {
                density_hits += 1;
                any = true;
            }
        }
        if any {
            covered += 1;
        }
    }
    let density = density_hits as f64 / (cfg.k * m) as f64;
    let coverage = covered as f64 / n as f64;
    Ok((density, coverage))
}

// ---- downsampler shift consistency --------------------------------------

/// Shift-consistency error of a stride-2 downsampler: downsampling a 1-pixel
/// shifted crop should look like the unshifted downsample moved by half a
/// sample, which is estimated with bilinear interpolation on the coarse
/// grid. Smaller is more shift-friendly. Returns (blurpool, maxpool) errors.
pub fn downsample_shift_consistency(img: &Image) -> (f64, f64) {
    let s = ((img.w.min(img.h) - 2) / 2) * 2;
    assert!(s >= 12, "image too small for the shift-consistency probe");
    let crop = |ox: usize, oy: usize| -> Vec<f64> {
        let mut v = Vec::with_capacity(s * s);
        for y in 0..s {
            for x in 0..s {
                v.push(f64::from(img.get(x + ox, y + oy)));
            }
        }
        v
    };
    let j0 = crop(0, 0);
    let j1 = crop(1, 1);

    let run = |data: &[f64], blur: bool| -> Vec<f64> {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(data.to_vec(), vec![1, s, s], false);
        let y = if blur { g.blurpool2d(x) } else { g.max_pool2d(x, 2, 2) };
        g.data(y).to_vec()
    };

    let mut errs = [0.0f64; 2];
    for (slot, blur) in [(0usize, true), (1usize, false)] {
        let a = run(&j0, blur);
        let b = run(&j1, blur);
        let n = s / 2;
        let mut acc = 0.0;
        let mut cnt = 0usize;
        for y in 1..(n - 2) {
            for x in 1..(n - 2) {
                let interp =
                    0.25 * (a[y * n + x] + a[y * n + x + 1] + a[(y + 1) * n + x] + a[(y + 1) * n + x + 1]);
                let d = b[y * n + x] - interp;
                acc += d * d;
                cnt += 1;
            }
        }
        errs[slot] = acc / cnt as f64;
    }
    (errs[0], errs[1])
}
