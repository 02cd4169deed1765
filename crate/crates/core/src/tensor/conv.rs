//! Dense spatial kernels: cross-correlation, its adjoints, pooling, and the
//! anti-aliased binomial-5 downsampler. All tensors are row-major
//! `[channels, height, width]`, kernels `[c_out, c_in, kh, kw]`.

use super::Scalar;

/// Output height/width for a convolution axis, panicking when non-positive.
fn out_extent(inp: usize, k: usize, stride: usize, pad: usize) -> usize {
    let span = inp + 2 * pad;
    assert!(span >= k, "convolution kernel {k} exceeds padded input extent {span}");
    (span - k) / stride + 1
}

/// Valid output range along one axis for a fixed kernel tap `koff`:
/// indices `o` with `0 <= o*stride + koff - pad < inp`.
fn tap_range(inp: usize, o_n: usize, stride: usize, pad: usize, koff: usize) -> (usize, usize) {
    let lo = if koff >= pad { 0 } else { (pad - koff + stride - 1) / stride };
    let max_i = inp as isize - 1 + pad as isize - koff as isize;
    if max_i < 0 {
        return (1, 0); // empty
    }
    let hi = ((max_i as usize) / stride).min(o_n.saturating_sub(1));
    (lo, hi)
}

pub fn conv_out_shape(in_sh: [usize; 3], k_sh: [usize; 4], stride: usize, pad: usize) -> [usize; 3] {
    [k_sh[0], out_extent(in_sh[1], k_sh[2], stride, pad), out_extent(in_sh[2], k_sh[3], stride, pad)]
}

pub fn conv_fwd<T: Scalar>(
    inp: &[T],
    in_sh: [usize; 3],
    k: &[T],
    k_sh: [usize; 4],
    stride: usize,
    pad: usize,
) -> (Vec<T>, [usize; 3]) {
    let out_sh = conv_out_shape(in_sh, k_sh, stride, pad);
    let mut out = vec![T::zero(); out_sh.iter().product()];
    conv_fwd_into(inp, in_sh, k, k_sh, stride, pad, out_sh, &mut out);
    (out, out_sh)
}

/// Accumulating forward: `out[co] += sum_ci k[co,ci] * inp[ci]`. The `in_sh`
/// argument of the public entry points is renamed here because this routine
/// doubles as the backward-input pass of the transposed convolution.
pub fn conv_fwd_into<T: Scalar>(
    inp: &[T],
    in_sh: [usize; 3],
    k: &[T],
    k_sh: [usize; 4],
    stride: usize,
    pad: usize,
    out_sh: [usize; 3],
    out: &mut [T],
) {
    let [c_in, h, w] = in_sh;
    let [c_out, kc, kh, kw] = k_sh;
    debug_assert_eq!(c_in, kc);
    let [_, oh_n, ow_n] = out_sh;
    for co in 0..c_out {
        let obase = co * oh_n * ow_n;
        for ci in 0..c_in {
            let ibase = ci * h * w;
            for khi in 0..kh {
                let (oy_lo, oy_hi) = tap_range(h, oh_n, stride, pad, khi);
                if oy_lo > oy_hi {
                    continue;
                }
                for kwi in 0..kw {
                    let wgt = k[((co * c_in + ci) * kh + khi) * kw + kwi];
                    if wgt == T::zero() {
                        continue;
                    }
                    let (ox_lo, ox_hi) = tap_range(w, ow_n, stride, pad, kwi);
                    if ox_lo > ox_hi {
                        continue;
                    }
                    for oy in oy_lo..=oy_hi {
                        let iy = oy * stride + khi - pad;
                        let irow = ibase + iy * w;
                        let orow = obase + oy * ow_n;
                        if stride == 1 {
                            let ioff = irow + ox_lo + kwi - pad;
                            let dst = &mut out[orow + ox_lo..=orow + ox_hi];
                            let src = &inp[ioff..ioff + dst.len()];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += wgt * s;
                            }
                        } else {
                            for ox in ox_lo..=ox_hi {
                                let ix = ox * stride + kwi - pad;
                                out[orow + ox] += wgt * inp[irow + ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the convolution input, accumulated into `gin`.
pub fn conv_bwd_input_into<T: Scalar>(
    gout: &[T],
    out_sh: [usize; 3],
    k: &[T],
    k_sh: [usize; 4],
    stride: usize,
    pad: usize,
    in_sh: [usize; 3],
    gin: &mut [T],
) {
    let [c_in, h, w] = in_sh;
    let [c_out, _, kh, kw] = k_sh;
    let [_, oh_n, ow_n] = out_sh;
    for co in 0..c_out {
        let obase = co * oh_n * ow_n;
        for ci in 0..c_in {
            let ibase = ci * h * w;
            for khi in 0..kh {
                let (oy_lo, oy_hi) = tap_range(h, oh_n, stride, pad, khi);
                if oy_lo > oy_hi {
                    continue;
                }
                for kwi in 0..kw {
                    let wgt = k[((co * c_in + ci) * kh + khi) * kw + kwi];
                    if wgt == T::zero() {
                        continue;
                    }
                    let (ox_lo, ox_hi) = tap_range(w, ow_n, stride, pad, kwi);
                    if ox_lo > ox_hi {
                        continue;
                    }
                    for oy in oy_lo..=oy_hi {
                        let iy = oy * stride + khi - pad;
                        let irow = ibase + iy * w;
                        let orow = obase + oy * ow_n;
                        if stride == 1 {
                            let ioff = irow + ox_lo + kwi - pad;
                            let src = &gout[orow + ox_lo..=orow + ox_hi];
                            let dst = &mut gin[ioff..ioff + src.len()];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += wgt * s;
                            }
                        } else {
                            for ox in ox_lo..=ox_hi {
                                let ix = ox * stride + kwi - pad;
                                gin[irow + ix] += wgt * gout[orow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the convolution kernel, accumulated into `gk`.
pub fn conv_bwd_kernel_into<T: Scalar>(
    gout: &[T],
    out_sh: [usize; 3],
    inp: &[T],
    in_sh: [usize; 3],
    stride: usize,
    pad: usize,
    k_sh: [usize; 4],
    gk: &mut [T],
) {
    let [c_in, h, w] = in_sh;
    let [c_out, _, kh, kw] = k_sh;
    let [_, oh_n, ow_n] = out_sh;
    for co in 0..c_out {
        let obase = co * oh_n * ow_n;
        for ci in 0..c_in {
            let ibase = ci * h * w;
            for khi in 0..kh {
                let (oy_lo, oy_hi) = tap_range(h, oh_n, stride, pad, khi);
                if oy_lo > oy_hi {
                    continue;
                }
                for kwi in 0..kw {
                    let (ox_lo, ox_hi) = tap_range(w, ow_n, stride, pad, kwi);
                    if ox_lo > ox_hi {
                        continue;
                    }
                    let mut acc = T::zero();
                    for oy in oy_lo..=oy_hi {
                        let iy = oy * stride + khi - pad;
                        let irow = ibase + iy * w;
                        let orow = obase + oy * ow_n;
                        if stride == 1 {
                            let ioff = irow + ox_lo + kwi - pad;
                            let a = &gout[orow + ox_lo..=orow + ox_hi];
                            let b = &inp[ioff..ioff + a.len()];
                            for (&x, &y) in a.iter().zip(b) {
                                acc += x * y;
                            }
                        } else {
                            for ox in ox_lo..=ox_hi {
                                let ix = ox * stride + kwi - pad;
                                acc += gout[orow + ox] * inp[irow + ix];
                            }
                        }
                    }
                    gk[((co * c_in + ci) * kh + khi) * kw + kwi] += acc;
                }
            }
        }
    }
}

/// Transposed convolution: the adjoint map of `conv_fwd` for the same
/// `(kernel, stride, pad)`. Input `[c_out, h, w]`, kernel `[c_out, c_in, kh,
/// kw]`, output `[c_in, (h-1)*stride + kh - 2*pad, ...]`.
pub fn conv_transpose_fwd<T: Scalar>(
    inp: &[T],
    in_sh: [usize; 3],
    k: &[T],
    k_sh: [usize; 4],
    stride: usize,
    pad: usize,
    out_hw: Option<(usize, usize)>,
) -> (Vec<T>, [usize; 3]) {
    let [_, h, w] = in_sh;
    let [_, c_in, kh, kw] = k_sh;
    let (oh, ow) = match out_hw {
        Some((oh, ow)) => {
            // strided convolutions floor away up to stride-1 rows; any target
            // extent mapping back onto this input grid is a valid adjoint
            assert_eq!(out_extent(oh, kh, stride, pad), h, "conv_transpose2d target height {oh} inconsistent");
            assert_eq!(out_extent(ow, kw, stride, pad), w, "conv_transpose2d target width {ow} inconsistent");
            (oh, ow)
        }
        None => {
            let oh = (h - 1) * stride + kh;
            let ow = (w - 1) * stride + kw;
            assert!(oh > 2 * pad && ow > 2 * pad, "conv_transpose2d geometry collapses to zero extent");
            (oh - 2 * pad, ow - 2 * pad)
        }
    };
    let out_sh = [c_in, oh, ow];
    let mut out = vec![T::zero(); out_sh.iter().product()];
    conv_bwd_input_into(inp, in_sh, k, k_sh, stride, pad, out_sh, &mut out);
    (out, out_sh)
}

pub fn max_pool_fwd<T: Scalar>(
    inp: &[T],
    in_sh: [usize; 3],
    window: usize,
    stride: usize,
) -> (Vec<T>, Vec<usize>, [usize; 3]) {
    let [c, h, w] = in_sh;
    assert!(window <= h && window <= w, "pool window {window} exceeds input {h}x{w}");
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, x0) = (oy * stride, ox * stride);
                let mut best = inp[base + y0 * w + x0];
                let mut best_at = base + y0 * w + x0;
                for dy in 0..window {
                    for dx in 0..window {
                        let at = base + (y0 + dy) * w + (x0 + dx);
                        // first occurrence in scan order wins ties
                        if inp[at] > best {
                            best = inp[at];
                            best_at = at;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_at);
            }
        }
    }
    (out, argmax, [c, oh, ow])
}

pub fn avg_pool_fwd<T: Scalar>(
    inp: &[T],
    in_sh: [usize; 3],
    window: usize,
    stride: usize,
) -> (Vec<T>, [usize; 3]) {
    let [c, h, w] = in_sh;
    assert!(window <= h && window <= w, "pool window {window} exceeds input {h}x{w}");
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let inv = T::from_f64(1.0 / (window * window) as f64);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = T::zero();
                for dy in 0..window {
                    for dx in 0..window {
                        s += inp[base + (oy * stride + dy) * w + (ox * stride + dx)];
                    }
                }
                out.push(s * inv);
            }
        }
    }
    (out, [c, oh, ow])
}

pub fn avg_pool_bwd_into<T: Scalar>(
    gout: &[T],
    out_sh: [usize; 3],
    in_sh: [usize; 3],
    window: usize,
    stride: usize,
    gin: &mut [T],
) {
    let [c, h, w] = in_sh;
    let [_, oh, ow] = out_sh;
    let inv = T::from_f64(1.0 / (window * window) as f64);
    for ci in 0..c {
        let base = ci * h * w;
        let obase = ci * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let g = gout[obase + oy * ow + ox] * inv;
                for dy in 0..window {
                    for dx in 0..window {
                        gin[base + (oy * stride + dy) * w + (ox * stride + dx)] += g;
                    }
                }
            }
        }
    }
}

/// Normalized binomial-5 taps: [1, 4, 6, 4, 1] / 16.
pub const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn reflect(i: isize, n: usize) -> usize {
    // reflection without edge repetition: -1 -> 1, n -> n-2
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

pub fn blurpool_out_shape(in_sh: [usize; 3]) -> [usize; 3] {
    let [c, h, w] = in_sh;
    assert!(h >= 3 && w >= 3, "blurpool needs spatial extents >= 3, got {h}x{w}");
    [c, (h - 1) / 2 + 1, (w - 1) / 2 + 1]
}

pub fn blurpool_fwd<T: Scalar>(inp: &[T], in_sh: [usize; 3]) -> (Vec<T>, [usize; 3]) {
    let [c, h, w] = in_sh;
    let out_sh = blurpool_out_shape(in_sh);
    let [_, oh, ow] = out_sh;
    let taps: Vec<T> = BINOMIAL5.iter().map(|&t| T::from_f64(t)).collect();
    let mut out = vec![T::zero(); c * oh * ow];
    // separable: horizontal blur at the sampled rows, then vertical combine
    for ci in 0..c {
        let base = ci * h * w;
        let obase = ci * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for (dy, &ty) in taps.iter().enumerate() {
                    let iy = reflect(2 * oy as isize + dy as isize - 2, h);
                    let mut row_acc = T::zero();
                    for (dx, &tx) in taps.iter().enumerate() {
                        let ix = reflect(2 * ox as isize + dx as isize - 2, w);
                        row_acc += tx * inp[base + iy * w + ix];
                    }
                    acc += ty * row_acc;
                }
                out[obase + oy * ow + ox] = acc;
            }
        }
    }
    (out, out_sh)
}

pub fn blurpool_bwd_into<T: Scalar>(gout: &[T], out_sh: [usize; 3], in_sh: [usize; 3], gin: &mut [T]) {
    let [c, h, w] = in_sh;
    let [_, oh, ow] = out_sh;
    let taps: Vec<T> = BINOMIAL5.iter().map(|&t| T::from_f64(t)).collect();
    for ci in 0..c {
        let base = ci * h * w;
        let obase = ci * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let g = gout[obase + oy * ow + ox];
                for (dy, &ty) in taps.iter().enumerate() {
                    let iy = reflect(2 * oy as isize + dy as isize - 2, h);
                    for (dx, &tx) in taps.iter().enumerate() {
                        let ix = reflect(2 * ox as isize + dx as isize - 2, w);
                        gin[base + iy * w + ix] += ty * tx * g;
                    }
                }
            }
        }
    }
}
