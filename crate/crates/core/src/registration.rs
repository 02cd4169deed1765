//! Landmark-based affine registration: least-squares estimation of a 2x3
//! transform from point correspondences, and backward bilinear warping.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image_io::Image;

/// Point correspondences in pixels: source maps onto destination.
#[derive(Clone, Debug, Default)]
pub struct LandmarkSet {
    pub pairs: Vec<(f64, f64, f64, f64)>,
}

/// Row-major 2x3 affine matrix `[a, b, tx; c, d, ty]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    pub m: [f64; 6],
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform { m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0] }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (self.m[0] * x + self.m[1] * y + self.m[2], self.m[3] * x + self.m[4] * y + self.m[5])
    }

    pub fn determinant(&self) -> f64 {
        self.m[0] * self.m[4] - self.m[1] * self.m[3]
    }

    pub fn inverse(&self) -> Result<AffineTransform> {
        let det = self.determinant();
        if det.abs() < 1e-12 {
            return Err(Error::InvalidInput(format!("non-invertible affine transform (det {det})")));
        }
        let [a, b, tx, c, d, ty] = self.m;
        let (ia, ib) = (d / det, -b / det);
        let (ic, id) = (-c / det, a / det);
        Ok(AffineTransform {
            m: [ia, ib, -(ia * tx + ib * ty), ic, id, -(ic * tx + id * ty)],
        })
    }
}

/// Solve a 3x3 linear system by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let mut piv = col;
        for row in (col + 1)..3 {
            if a[row][col].abs() > a[piv][col].abs() {
                piv = row;
            }
        }
        if a[piv][col].abs() < 1e-9 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in (row + 1)..3 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Least-squares affine fit minimizing the sum of squared destination
/// residuals over all pairs. Exact when the pairs are consistent with one
/// affine map; collinear source points are rejected.
pub fn estimate_affine(landmarks: &LandmarkSet) -> Result<AffineTransform> {
    let pairs = &landmarks.pairs;
    if pairs.len() < 3 {
        return Err(Error::InvalidInput(format!("need >= 3 landmark pairs, got {}", pairs.len())));
    }
    // normal equations over basis [x, y, 1], shared by both output rows
    let mut m = [[0.0f64; 3]; 3];
    let mut rx = [0.0f64; 3];
    let mut ry = [0.0f64; 3];
    for &(xs, ys, xd, yd) in pairs {
        let p = [xs, ys, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += p[i] * p[j];
            }
            rx[i] += p[i] * xd;
            ry[i] += p[i] * yd;
        }
    }
    let row_x =
        solve3(m, rx).ok_or_else(|| Error::InvalidInput("degenerate landmarks: source points are collinear".into()))?;
    let row_y =
        solve3(m, ry).ok_or_else(|| Error::InvalidInput("degenerate landmarks: source points are collinear".into()))?;
    Ok(AffineTransform { m: [row_x[0], row_x[1], row_x[2], row_y[0], row_y[1], row_y[2]] })
}

/// Sum of squared destination-space residuals of a fit.
pub fn fit_residual(landmarks: &LandmarkSet, t: &AffineTransform) -> f64 {
    landmarks
        .pairs
        .iter()
        .map(|&(xs, ys, xd, yd)| {
            let (px, py) = t.apply(xs, ys);
            (px - xd).powi(2) + (py - yd).powi(2)
        })
        .sum()
}

/// Backward warp: each output pixel samples the input at the inverse-mapped
/// position with bilinear interpolation; samples outside the input are zero.
pub fn warp_image(image: &Image, transform: &AffineTransform, out_w: usize, out_h: usize) -> Result<Image> {
    let inv = transform.inverse()?;
    let mut out = Image::new(out_w, out_h);
    for y in 0..out_h {
        for x in 0..out_w {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            let v = if sx < -1.0 || sy < -1.0 || sx > image.w as f64 || sy > image.h as f64 {
                0.0
            } else {
                image.sample_bilinear(sx as f32, sy as f32)
            };
            out.set(x, y, v);
        }
    }
    Ok(out)
}

// ---- landmark CSV -----------------------------------------------------

/// Header `x_src,y_src,x_dst,y_dst`, one pair per line.
pub fn read_landmarks_csv(path: &Path) -> Result<LandmarkSet> {
    let text = std::fs::read_to_string(path)?;
    parse_landmarks_csv(&text)
}

pub fn parse_landmarks_csv(text: &str) -> Result<LandmarkSet> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty landmark CSV".into()))?;
    if header.trim() != "x_src,y_src,x_dst,y_dst" {
        return Err(Error::Format(format!(
            "bad landmark header {header:?}, expected x_src,y_src,x_dst,y_dst"
        )));
    }
    let mut out = LandmarkSet::default();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(Error::Format(format!("landmark line {}: expected 4 fields", ln + 2)));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| Error::Format(format!("landmark line {}: bad number {s:?}", ln + 2)))
        };
        out.pairs.push((parse(f[0])?, parse(f[1])?, parse(f[2])?, parse(f[3])?));
    }
    Ok(out)
}

pub fn write_landmarks_csv(path: &Path, set: &LandmarkSet) -> Result<()> {
    let mut s = String::from("x_src,y_src,x_dst,y_dst\n");
    for &(a, b, c, d) in &set.pairs {
        s.push_str(&format!("{a},{b},{c},{d}\n"));
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn known_transform() -> AffineTransform {
        // rotation 30 degrees, scale 1.2, translation (5, -3)
        let th = 30f64.to_radians();
        let s = 1.2;
        AffineTransform {
            m: [s * th.cos(), -s * th.sin(), 5.0, s * th.sin(), s * th.cos(), -3.0],
        }
    }

    #[test]
    fn identity_from_identical_points() {
        let lm = LandmarkSet {
            pairs: vec![(0.0, 0.0, 0.0, 0.0), (10.0, 0.0, 10.0, 0.0), (0.0, 10.0, 0.0, 10.0), (7.0, 5.0, 7.0, 5.0)],
        };
        let t = estimate_affine(&lm).unwrap();
        for (got, want) in t.m.iter().zip(AffineTransform::identity().m) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_known_transform_exactly() {
        let t = known_transform();
        let src = [(0.0, 0.0), (40.0, 8.0), (3.0, 29.0), (17.0, 11.0)];
        let pairs = src
            .iter()
            .map(|&(x, y)| {
                let (xd, yd) = t.apply(x, y);
                (x, y, xd, yd)
            })
            .collect();
        let lm = LandmarkSet { pairs };
        let est = estimate_affine(&lm).unwrap();
        for (got, want) in est.m.iter().zip(t.m) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        assert!(fit_residual(&lm, &est) < 1e-9);
    }

    #[test]
    fn collinear_sources_are_degenerate() {
        let lm = LandmarkSet {
            pairs: vec![(0.0, 0.0, 1.0, 1.0), (1.0, 1.0, 2.0, 2.0), (2.0, 2.0, 3.0, 3.0)],
        };
        assert!(matches!(estimate_affine(&lm), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn least_squares_beats_perturbations() {
        // residual of the fit is minimal: nudging any coefficient increases it
        let t = known_transform();
        let mut r = crate::rng::seeded(3);
        let mut pairs = Vec::new();
        for _ in 0..12 {
            let x = crate::rng::normal(&mut r) * 20.0;
            let y = crate::rng::normal(&mut r) * 20.0;
            let (mut xd, mut yd) = t.apply(x, y);
            xd += crate::rng::normal(&mut r) * 0.05;
            yd += crate::rng::normal(&mut r) * 0.05;
            pairs.push((x, y, xd, yd));
        }
        let lm = LandmarkSet { pairs };
        let est = estimate_affine(&lm).unwrap();
        let base = fit_residual(&lm, &est);
        for i in 0..6 {
            for delta in [-1e-3, 1e-3] {
                let mut p = est;
                p.m[i] += delta;
                assert!(fit_residual(&lm, &p) > base, "coefficient {i} not at a minimum");
            }
        }
    }

    #[test]
    fn warp_identity_and_integer_shift() {
        let mut img = Image::new(16, 12);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i * 37) % 256) as f32 / 255.0;
        }
        let out = warp_image(&img, &AffineTransform::identity(), 16, 12).unwrap();
        assert_eq!(out.data, img.data);

        // translation by (+3, 0): out(x, y) = in(x-3, y), zeros entering
        let t = AffineTransform { m: [1.0, 0.0, 3.0, 0.0, 1.0, 0.0] };
        let out = warp_image(&img, &t, 16, 12).unwrap();
        for y in 0..12 {
            for x in 0..16 {
                let want = if x < 3 { 0.0 } else { img.get(x - 3, y) };
                assert!((out.get(x, y) - want).abs() < 1e-6, "({x},{y})");
            }
        }
    }

    #[test]
    fn warp_round_trip_is_interpolation_limited() {
        // smooth image: warp then inverse-warp stays close in the interior
        let mut img = Image::new(32, 32);
        for y in 0..32 {
            for x in 0..32 {
                let v = 0.5
                    + 0.3 * ((x as f32) * 0.3).sin() * ((y as f32) * 0.25).cos()
                    + 0.1 * ((x as f32) * 0.12).cos();
                img.set(x, y, v.clamp(0.0, 1.0));
            }
        }
        let th = 10f64.to_radians();
        let t = AffineTransform { m: [th.cos(), -th.sin(), 2.0, th.sin(), th.cos(), 1.0] };
        let warped = warp_image(&img, &t, 32, 32).unwrap();
        let back = warp_image(&warped, &t.inverse().unwrap(), 32, 32).unwrap();
        let mut err = 0.0f64;
        let mut n = 0;
        for y in 8..24 {
            for x in 8..24 {
                err += f64::from((back.get(x, y) - img.get(x, y)).abs());
                n += 1;
            }
        }
        let mae = err / f64::from(n);
        assert!(mae < 1e-2, "interior mean abs error {mae}");
    }

    #[test]
    fn non_invertible_transform_is_rejected() {
        let t = AffineTransform { m: [1.0, 2.0, 0.0, 2.0, 4.0, 0.0] };
        assert!(warp_image(&Image::new(4, 4), &t, 4, 4).is_err());
    }

    #[test]
    fn landmark_csv_round_trip() {
        let set = LandmarkSet { pairs: vec![(1.0, 2.0, 3.0, 4.0), (5.5, 6.25, 7.0, 8.0)] };
        let dir = std::env::temp_dir().join("mgrn_reg_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("lm.csv");
        write_landmarks_csv(&p, &set).unwrap();
        let back = read_landmarks_csv(&p).unwrap();
        assert_eq!(back.pairs, set.pairs);
        assert!(parse_landmarks_csv("x,y\n").is_err());
    }
}
