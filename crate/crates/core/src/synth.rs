//! Synthetic micrograph pairs: the same particle geometry rendered once with
//! sharp, shaded discs on a dark background (electron-microscope style) and
//! once with a radius-proportional Gaussian point-spread, a bright halo ring
//! and sensor noise (optical-microscope style). Annotations are the exact
//! generating circles.

use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::image_io::{write_pgm, Image};
use crate::rng;
use crate::srpsa::{write_annotations_csv, CircleAnnotation};

#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    /// Radius distribution: normal, truncated positive.
    pub radius_mean: f64,
    pub radius_stdev: f64,
    /// Minimum center distance as a fraction of the radius sum; 1.0 keeps
    /// particles disjoint.
    pub min_separation: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 128,
            height: 128,
            count: 10,
            radius_mean: 9.34,
            radius_stdev: 2.33,
            min_separation: 1.1,
            seed: 0,
        }
    }
}

pub struct ScenePair {
    pub om: Image,
    pub sem: Image,
    pub annotations: Vec<CircleAnnotation>,
}

const BACKGROUND: f32 = 0.08;
const DISC_PEAK: f64 = 0.95;

fn om_sigma(r: f64) -> f64 {
    (0.18 * r).max(1.0)
}

fn place_particles(spec: &SceneSpec, r: &mut rng::ChaCha8Rng) -> Result<Vec<CircleAnnotation>> {
    // radii are drawn first so placement rejection cannot bias the size
    // distribution
    let mut radii = Vec::with_capacity(spec.count);
    while radii.len() < spec.count {
        let rad = spec.radius_mean + spec.radius_stdev * rng::normal(r);
        if rad < 2.0 {
            continue; // truncated normal: resample non-physical radii
        }
        radii.push(rad.min(spec.width.min(spec.height) as f64 / 3.0));
    }
    radii.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let mut placed: Vec<CircleAnnotation> = Vec::new();
    for rad in radii {
        let margin = rad + om_sigma(rad) * 2.0 + 2.0;
        if 2.0 * margin >= spec.width as f64 || 2.0 * margin >= spec.height as f64 {
            return Err(Error::InvalidInput(format!(
                "radius {rad:.1} too large for a {}x{} scene",
                spec.width, spec.height
            )));
        }
        let mut ok = false;
        for _attempt in 0..300 {
            let x = margin + r.gen::<f64>() * (spec.width as f64 - 2.0 * margin);
            let y = margin + r.gen::<f64>() * (spec.height as f64 - 2.0 * margin);
            if placed.iter().all(|p| {
                let d = ((p.x - x).powi(2) + (p.y - y).powi(2)).sqrt();
                d >= spec.min_separation * (p.r + rad)
            }) {
                placed.push(CircleAnnotation { x, y, r: rad, p: 1.0 });
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::InvalidInput(format!(
                "could not place {} particles in {}x{} under the overlap policy",
                spec.count, spec.width, spec.height
            )));
        }
    }
    Ok(placed)
}

/// Disc intensity with mild radial shading and a one-pixel anti-aliased rim.
fn disc_value(d: f64, r: f64) -> f64 {
    let coverage = (r - d + 0.5).clamp(0.0, 1.0);
    let shade = DISC_PEAK * (1.0 - 0.25 * (d / r).min(1.0).powi(2));
    shade * coverage
}

fn render_sem(spec: &SceneSpec, particles: &[CircleAnnotation], r: &mut rng::ChaCha8Rng) -> Image {
    let mut img = Image::new(spec.width, spec.height);
    for v in &mut img.data {
        *v = (f64::from(BACKGROUND) + 0.01 * rng::normal(r)).clamp(0.0, 1.0) as f32;
    }
    for p in particles {
        let lo_x = (p.x - p.r - 2.0).floor().max(0.0) as usize;
        let hi_x = (p.x + p.r + 2.0).ceil().min(spec.width as f64 - 1.0) as usize;
        let lo_y = (p.y - p.r - 2.0).floor().max(0.0) as usize;
        let hi_y = (p.y + p.r + 2.0).ceil().min(spec.height as f64 - 1.0) as usize;
        for y in lo_y..=hi_y {
            for x in lo_x..=hi_x {
                let d = ((x as f64 - p.x).powi(2) + (y as f64 - p.y).powi(2)).sqrt();
                let v = disc_value(d, p.r) as f32;
                if v > 0.0 {
                    let cur = img.get(x, y);
                    img.set(x, y, cur.max(v + BACKGROUND * (1.0 - v / DISC_PEAK as f32)));
                }
            }
        }
    }
    img
}

fn gaussian_blur_window(win: &mut [f64], w: usize, h: usize, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps = Vec::with_capacity((2 * radius + 1) as usize);
    let mut total = 0.0;
    for i in -radius..=radius {
        let t = (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp();
        taps.push(t);
        total += t;
    }
    for t in &mut taps {
        *t /= total;
    }
    let mut tmp = vec![0.0; win.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ti, t) in taps.iter().enumerate() {
                let sx = (x as i64 + ti as i64 - radius).clamp(0, w as i64 - 1) as usize;
                acc += t * win[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ti, t) in taps.iter().enumerate() {
                let sy = (y as i64 + ti as i64 - radius).clamp(0, h as i64 - 1) as usize;
                acc += t * tmp[sy * w + x];
            }
            win[y * w + x] = acc;
        }
    }
}

fn render_om(spec: &SceneSpec, particles: &[CircleAnnotation], r: &mut rng::ChaCha8Rng) -> Image {
    let mut img = Image::new(spec.width, spec.height);
    for v in &mut img.data {
        *v = f64::from(BACKGROUND) as f32;
    }
    for p in particles {
        let sigma = om_sigma(p.r);
        let pad = (p.r + 4.0 * sigma + 4.0).ceil() as i64;
        let lo_x = (p.x as i64 - pad).max(0);
        let hi_x = (p.x as i64 + pad).min(spec.width as i64 - 1);
        let lo_y = (p.y as i64 - pad).max(0);
        let hi_y = (p.y as i64 + pad).min(spec.height as i64 - 1);
        let (ww, wh) = ((hi_x - lo_x + 1) as usize, (hi_y - lo_y + 1) as usize);

        // sharp disc rendered into a local window, then blurred by the
        // radius-proportional point spread
        let mut win = vec![0.0f64; ww * wh];
        for y in 0..wh {
            for x in 0..ww {
                let gx = (lo_x + x as i64) as f64;
                let gy = (lo_y + y as i64) as f64;
                let d = ((gx - p.x).powi(2) + (gy - p.y).powi(2)).sqrt();
                win[y * ww + x] = disc_value(d, p.r) * 0.9;
            }
        }
        gaussian_blur_window(&mut win, ww, wh, sigma);

        // bright diffraction halo just outside the blurred edge
        let ring_r = p.r + 1.5 * sigma;
        let ring_w = 0.8 * sigma;
        for y in 0..wh {
            for x in 0..ww {
                let gx = (lo_x + x as i64) as f64;
                let gy = (lo_y + y as i64) as f64;
                let d = ((gx - p.x).powi(2) + (gy - p.y).powi(2)).sqrt();
                let ring = 0.12 * (-((d - ring_r).powi(2)) / (2.0 * ring_w * ring_w)).exp();
                win[y * ww + x] += ring;
            }
        }

        for y in 0..wh {
            for x in 0..ww {
                let xi = (lo_x + x as i64) as usize;
                let yi = (lo_y + y as i64) as usize;
                let cur = img.get(xi, yi);
                let v = (f64::from(BACKGROUND) + win[y * ww + x]) as f32;
                img.set(xi, yi, cur.max(v));
            }
        }
    }
    for v in &mut img.data {
        *v = (f64::from(*v) + 0.02 * rng::normal(r)).clamp(0.0, 1.0) as f32;
    }
    img
}

/// Deterministic scene generation from the spec's seed.
pub fn generate_pair(spec: &SceneSpec) -> Result<ScenePair> {
    let mut r = rng::derive(spec.seed, "scene");
    let particles = place_particles(spec, &mut r)?;
    let sem = render_sem(spec, &particles, &mut r);
    let om = render_om(spec, &particles, &mut r);
    Ok(ScenePair { om, sem, annotations: particles })
}

// ---- edge profiles ---------------------------------------------------------

/// Indices of particles whose measurement annulus (out to
/// `r + 4 sigma + 4`) is clear of every other particle, so radial profiles
/// are uncontaminated.
pub fn isolated_particles(annotations: &[CircleAnnotation]) -> Vec<usize> {
    (0..annotations.len())
        .filter(|&i| {
            let a = &annotations[i];
            let reach = a.r + 4.0 * om_sigma(a.r) + 4.0;
            annotations.iter().enumerate().all(|(j, b)| {
                j == i || {
                    let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
                    d > reach + b.r + 1.0
                }
            })
        })
        .collect()
}

/// 10%-90% edge-transition width of a particle, from an angularly averaged
/// radial intensity profile. Larger means blurrier. Only meaningful on
/// particles whose annulus is free of neighbors (see
/// [`isolated_particles`]).
pub fn edge_width(img: &Image, c: &CircleAnnotation) -> f64 {
    let sigma = om_sigma(c.r);
    let d_max = c.r + 4.0 * sigma + 4.0;
    let step = 0.25;
    let n = (d_max / step) as usize;
    let angles = 32;
    let mut profile = Vec::with_capacity(n);
    for i in 0..n {
        let d = step * i as f64;
        let mut acc = 0.0;
        for a in 0..angles {
            let th = 2.0 * std::f64::consts::PI * f64::from(a) / f64::from(angles);
            let x = c.x + d * th.cos();
            let y = c.y + d * th.sin();
            acc += f64::from(img.sample_bilinear(x as f32, y as f32));
        }
        profile.push(acc / f64::from(angles));
    }
    let idx = |d: f64| ((d / step) as usize).min(n - 1);
    let inner: f64 = profile[idx(0.2 * c.r)..=idx(0.5 * c.r)].iter().sum::<f64>()
        / (idx(0.5 * c.r) - idx(0.2 * c.r) + 1) as f64;
    let outer_lo = idx(d_max - 3.0);
    let outer: f64 = profile[outer_lo..].iter().sum::<f64>() / (n - outer_lo) as f64;
    let l90 = outer + 0.9 * (inner - outer);
    let l10 = outer + 0.1 * (inner - outer);
    let mut d90 = None;
    let mut d10 = None;
    for i in idx(0.5 * c.r)..n {
        let d = step * i as f64;
        if d90.is_none() && profile[i] < l90 {
            d90 = Some(d);
        }
        if profile[i] < l10 {
            d10 = Some(d);
            break;
        }
    }
    match (d90, d10) {
        (Some(a), Some(b)) => (b - a).max(step),
        _ => d_max, // no clean transition found; report the scan range
    }
}

// ---- dataset generation --------------------------------------------------

#[derive(Clone, Debug)]
pub struct FamilySpec {
    pub name: String,
    pub pairs: usize,
    pub scene: SceneSpec,
}

/// The three default radius distributions (pixels), broad to tight.
pub fn default_families(width: usize, height: usize, count: usize, pairs: usize, seed: u64) -> Vec<FamilySpec> {
    let base = SceneSpec { width, height, count, ..SceneSpec::default() };
    vec![
        FamilySpec {
            name: "primary".into(),
            pairs,
            scene: SceneSpec { radius_mean: 9.34, radius_stdev: 2.33, seed, ..base.clone() },
        },
        FamilySpec {
            name: "secondary".into(),
            pairs,
            scene: SceneSpec { radius_mean: 6.74, radius_stdev: 1.48, seed: seed ^ 0x5ec0, ..base.clone() },
        },
        FamilySpec {
            name: "tertiary".into(),
            pairs,
            scene: SceneSpec { radius_mean: 6.73, radius_stdev: 0.92, seed: seed ^ 0x7e47, ..base },
        },
    ]
}

/// Writes `<family>/pair_NNNN_{om,sem}.pgm` + `_ann.csv` plus a manifest
/// with an 80/20 train/validation split per family.
pub fn generate_dataset(dir: &Path, families: &[FamilySpec]) -> Result<Vec<(String, String, String)>> {
    let mut manifest: Vec<(String, String, String)> = Vec::new();
    for fam in families {
        let fdir = dir.join(&fam.name);
        std::fs::create_dir_all(&fdir)?;
        let n_train = (fam.pairs as f64 * 0.8).round() as usize;
        for i in 0..fam.pairs {
            let spec = SceneSpec { seed: rng::derive(fam.scene.seed, &format!("pair-{i}")).gen(), ..fam.scene.clone() };
            let pair = generate_pair(&spec)?;
            let split = if i < n_train { "train" } else { "val" };
            let stem = format!("{}/pair_{i:04}", fam.name);
            let om_path = fdir.join(format!("pair_{i:04}_om.pgm"));
            let sem_path = fdir.join(format!("pair_{i:04}_sem.pgm"));
            let ann_path = fdir.join(format!("pair_{i:04}_ann.csv"));
            write_pgm(&om_path, &pair.om)?;
            write_pgm(&sem_path, &pair.sem)?;
            write_annotations_csv(&ann_path, &pair.annotations)?;
            manifest.push((format!("{stem}_om.pgm"), "om".into(), split.into()));
            manifest.push((format!("{stem}_sem.pgm"), "sem".into(), split.into()));
            manifest.push((format!("{stem}_ann.csv"), "annotations".into(), split.into()));
        }
    }
    let mut text = String::from("path,kind,split\n");
    for (p, k, s) in &manifest {
        text.push_str(&format!("{p},{k},{s}\n"));
    }
    std::fs::write(dir.join("manifest.csv"), text)?;
    Ok(manifest)
}

/// Parse a manifest back into (path, kind, split) rows.
pub fn read_manifest(dir: &Path) -> Result<Vec<(String, String, String)>> {
    let text = std::fs::read_to_string(dir.join("manifest.csv"))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("path,kind,split") => {}
        other => return Err(Error::Format(format!("bad manifest header {other:?}"))),
    }
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(Error::Format(format!("bad manifest row {line:?}")));
        }
        out.push((f[0].to_string(), f[1].to_string(), f[2].to_string()));
    }
    Ok(out)
}
