//! Particle-size distribution estimation: Gaussian KDE with the Improved
//! Sheather-Jones bandwidth (diffusion fixed point solved over the DCT of
//! the binned data), plus the mean / D50 / mode / StDev / CV report.

use crate::error::{Error, Result};

/// Particle sizes with a unit tag (pixels or micrometers); all positive.
#[derive(Clone, Debug)]
pub struct SizeSample {
    pub values: Vec<f64>,
    pub unit: String,
}

impl SizeSample {
    pub fn new(values: Vec<f64>, unit: &str) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty size sample".into()));
        }
        if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("size samples must be positive finite reals".into()));
        }
        Ok(SizeSample { values, unit: unit.to_string() })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatsReport {
    pub mean: f64,
    pub d50: f64,
    pub mode: f64,
    pub stdev: f64,
    /// Coefficient of variation, percent.
    pub cv: f64,
    pub count: usize,
    pub unit: String,
}

#[derive(Clone, Debug)]
pub struct KdeResult {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    /// Set when the ISJ fixed point did not converge (or n < 10) and
    /// Silverman's rule was used instead.
    pub silverman_fallback: bool,
}

// ---- FFT / DCT ---------------------------------------------------------

/// In-place iterative radix-2 complex FFT (interleaved re/im pairs).
fn fft_inplace(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    assert!(n.is_power_of_two());
    // bit reversal
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let mut i = 0;
        while i < n {
            let (mut cr, mut ci) = (1.0f64, 0.0f64);
            for k in 0..len / 2 {
                let (ur, ui) = (re[i + k], im[i + k]);
                let (vr, vi) = (
                    re[i + k + len / 2] * cr - im[i + k + len / 2] * ci,
                    re[i + k + len / 2] * ci + im[i + k + len / 2] * cr,
                );
                re[i + k] = ur + vr;
                im[i + k] = ui + vi;
                re[i + k + len / 2] = ur - vr;
                im[i + k + len / 2] = ui - vi;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// DCT-II with the weighting used by the diffusion-KDE formulation:
/// `a_0 = sum(x)`, `a_k = 2 sum_j x_j cos(pi k (2j+1) / (2n))`.
fn dct1d(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    // even-odd reordering, then FFT
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for k in 0..n / 2 {
        re[k] = x[2 * k];
        re[n - 1 - k] = x[2 * k + 1];
    }
    fft_inplace(&mut re, &mut im);
    let mut out = vec![0.0; n];
    for k in 0..n {
        let ang = -(k as f64) * std::f64::consts::PI / (2.0 * n as f64);
        let (wr, wi) = if k == 0 { (1.0, 0.0) } else { (2.0 * ang.cos(), 2.0 * ang.sin()) };
        out[k] = re[k] * wr - im[k] * wi;
    }
    out
}

// ---- ISJ bandwidth -------------------------------------------------------

const ISJ_BINS: usize = 1 << 14;

/// The fixed-point functional `t - xi gamma^[l](t)` of the diffusion
/// bandwidth estimator; its root is the squared bandwidth on [0, 1]-scaled
/// data.
fn isj_fixed_point(t: f64, n_unique: f64, idx_sq: &[f64], a2: &[f64]) -> f64 {
    let l = 7i32;
    let pi = std::f64::consts::PI;
    let mut f = 0.0;
    for (i2, a) in idx_sq.iter().zip(a2) {
        f += i2.powi(l) * a * (-i2 * pi * pi * t).exp();
    }
    f *= 2.0 * pi.powi(2 * l);
    for s in (2..l).rev() {
        let mut k0 = 1.0;
        let mut j = 1.0;
        while j < 2.0 * f64::from(s) {
            k0 *= j;
            j += 2.0;
        }
        k0 /= (2.0 * pi).sqrt();
        let cnst = (1.0 + 0.5f64.powf(f64::from(s) + 0.5)) / 3.0;
        let time = (2.0 * cnst * k0 / (n_unique * f)).powf(2.0 / (3.0 + 2.0 * f64::from(s)));
        let mut fs = 0.0;
        for (i2, a) in idx_sq.iter().zip(a2) {
            fs += i2.powi(s) * a * (-i2 * pi * pi * time).exp();
        }
        f = 2.0 * pi.powi(2 * s) * fs;
    }
    t - (2.0 * n_unique * pi.sqrt() * f).powf(-0.4)
}

/// Improved Sheather-Jones bandwidth. Returns `None` when the fixed point
/// cannot be bracketed or produces a non-finite value.
pub fn isj_bandwidth(samples: &[f64]) -> Option<f64> {
    let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) {
        return None;
    }
    let lo = min - range / 10.0;
    let hi = max + range / 10.0;
    let r = hi - lo;
    let n = ISJ_BINS;
    let dx = r / (n as f64 - 1.0);

    // binned density, normalized to sum 1
    let mut hist = vec![0.0f64; n];
    for &x in samples {
        let idx = (((x - lo) / dx).floor() as usize).min(n - 1);
        hist[idx] += 1.0;
    }
    let total: f64 = hist.iter().sum();
    for h in &mut hist {
        *h /= total;
    }

    let a = dct1d(&hist);
    let idx_sq: Vec<f64> = (1..n).map(|k| (k as f64) * (k as f64)).collect();
    let a2: Vec<f64> = a[1..].iter().map(|&v| (v / 2.0) * (v / 2.0)).collect();

    let mut sorted = samples.to_vec();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sorted.dedup();
    let n_unique = sorted.len() as f64;

    let f = |t: f64| isj_fixed_point(t, n_unique, &idx_sq, &a2);

    // bracket the root on a growing interval, as the reference solver does
    let mut tol = 1e-12 + 0.01 * (n_unique - 50.0).max(0.0) / 1000.0;
    let mut bracket = None;
    for _ in 0..64 {
        let (fa, fb) = (f(1e-14), f(tol));
        if fa.is_finite() && fb.is_finite() && fa.signum() != fb.signum() {
            bracket = Some((1e-14, tol));
            break;
        }
        tol = (tol * 2.0).min(0.1);
        if tol >= 0.1 {
            break;
        }
    }
    let t_star = match bracket {
        Some((mut a, mut b)) => {
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                let fm = f(m);
                if !fm.is_finite() {
                    return None;
                }
                if fm.signum() == f(a).signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            0.5 * (a + b)
        }
        None => {
            // minimize |f| on (0, 0.1] as a last resort
            let (mut best_t, mut best_v) = (0.0, f64::INFINITY);
            for i in 1..=400 {
                let t = 0.1 * f64::from(i) / 400.0;
                let v = f(t).abs();
                if v < best_v {
                    best_v = v;
                    best_t = t;
                }
            }
            if !best_v.is_finite() || best_v > 1e-3 {
                return None;
            }
            best_t
        }
    };
    let h = t_star.sqrt() * r;
    if h.is_finite() && h > 0.0 {
        Some(h)
    } else {
        None
    }
}

/// Silverman's rule of thumb (normal reference with IQR guard).
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < sorted.len() {
            sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
        } else {
            sorted[i]
        }
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian KDE over a regular grid spanning `[min - 3h, max + 3h]`.
/// Bandwidth comes from the ISJ fixed point, falling back to Silverman's
/// rule when it fails to converge or fewer than 10 samples are given.
pub fn kde_isj(samples: &[f64], grid_size: usize) -> Result<KdeResult> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty sample".into()));
    }
    let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let (bandwidth, fallback) = if max == min {
        // degenerate distribution: a narrow spike at the common value
        ((max.abs() * 1e-3).max(1e-6), true)
    } else if samples.len() < 10 {
        (silverman_bandwidth(samples), true)
    } else {
        match isj_bandwidth(samples) {
            Some(h) => (h, false),
            None => (silverman_bandwidth(samples), true),
        }
    };

    let lo = min - 3.0 * bandwidth;
    let hi = max + 3.0 * bandwidth;
    let step = (hi - lo) / (grid_size as f64 - 1.0);
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let mut grid = Vec::with_capacity(grid_size);
    let mut density = Vec::with_capacity(grid_size);
    for i in 0..grid_size {
        let x = lo + step * i as f64;
        let mut acc = 0.0;
        for &s in samples {
            let z = (x - s) / bandwidth;
            acc += (-0.5 * z * z).exp();
        }
        grid.push(x);
        density.push(acc * norm);
    }
    Ok(KdeResult { grid, density, bandwidth, silverman_fallback: fallback })
}

/// Trapezoid-rule integral of a KDE curve.
pub fn kde_integral(k: &KdeResult) -> f64 {
    let mut acc = 0.0;
    for i in 1..k.grid.len() {
        acc += 0.5 * (k.density[i] + k.density[i - 1]) * (k.grid[i] - k.grid[i - 1]);
    }
    acc
}

/// Mean, median, KDE-mode, population standard deviation and CV of a size
/// sample.
pub fn distribution_stats(sample: &SizeSample) -> Result<StatsReport> {
    let v = &sample.values;
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let stdev = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = v.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let d50 = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let mode = if stdev == 0.0 {
        mean
    } else {
        let kde = kde_isj(v, 1024)?;
        let mut best = 0;
        for i in 1..kde.density.len() {
            if kde.density[i] > kde.density[best] {
                best = i;
            }
        }
        kde.grid[best]
    };
    let cv = if mean != 0.0 { stdev / mean * 100.0 } else { 0.0 };
    Ok(StatsReport { mean, d50, mode, stdev, cv, count: v.len(), unit: sample.unit.clone() })
}

/// Per-field absolute and relative (to `a`) deltas between two reports.
#[derive(Clone, Debug)]
pub struct ReportDeltas {
    pub fields: Vec<(&'static str, f64, f64)>,
}

pub fn compare_reports(a: &StatsReport, b: &StatsReport) -> Result<ReportDeltas> {
    if a.unit != b.unit {
        return Err(Error::InvalidInput(format!("unit mismatch: {} vs {}", a.unit, b.unit)));
    }
    let row = |name: &'static str, x: f64, y: f64| {
        let abs = (x - y).abs();
        let rel = if x != 0.0 { abs / x.abs() } else { 0.0 };
        (name, abs, rel)
    };
    Ok(ReportDeltas {
        fields: vec![
            row("mean", a.mean, b.mean),
            row("d50", a.d50, b.d50),
            row("mode", a.mode, b.mode),
            row("stdev", a.stdev, b.stdev),
            row("cv", a.cv, b.cv),
        ],
    })
}

#[cfg(test)]
mod tests;
