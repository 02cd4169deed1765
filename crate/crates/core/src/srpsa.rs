//! Dense circle detector: target maps encode particle centers as
//! single-cell confidences with sub-cell offsets and normalized radii on a
//! quarter-resolution grid; decoding inverts the encoding with non-maximum
//! suppression, and detections from the 4x and 8x input scales are merged.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image_io::Image;
use crate::loss::srpsa_loss_graph;
use crate::nn::networks::{forward_network, NetworkSpec};
use crate::nn::{bind, LayerStack, NetCtx};
use crate::optim::{adam_step, AdamState};
use crate::rng;
use crate::tensor::{Graph, Scalar};

/// One particle: center and radius in original-image pixels, confidence in
/// [0, 1] (exactly 1 for ground truth).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CircleAnnotation {
    pub x: f64,
    pub y: f64,
    pub r: f64,
    pub p: f64,
}

/// The four (p, x, y, r) grids produced by the detector at one input scale.
/// Grid resolution is 1/4 of the (already `scale_factor`-downscaled) input.
#[derive(Clone, Debug)]
pub struct DetectionMaps {
    pub gh: usize,
    pub gw: usize,
    /// Input downscale this grid corresponds to (4 or 8 in the pipeline).
    pub scale_factor: usize,
    /// Radius normalization constant, in grid cells.
    pub max_radius: f64,
    pub p: Vec<f32>,
    pub x: Vec<f32>,
    pub y: Vec<f32>,
    pub r: Vec<f32>,
}

impl DetectionMaps {
    pub fn zeros(gh: usize, gw: usize, scale_factor: usize, max_radius: f64) -> Self {
        let n = gh * gw;
        DetectionMaps {
            gh,
            gw,
            scale_factor,
            max_radius,
            p: vec![0.0; n],
            x: vec![0.0; n],
            y: vec![0.0; n],
            r: vec![0.0; n],
        }
    }

    /// Pixels of the original image covered by one grid cell.
    pub fn cell_px(&self) -> f64 {
        (self.scale_factor * 4) as f64
    }
}

/// Grid extents for an original image downscaled by `scale_factor` and then
/// by the network's fixed factor of 4.
pub fn grid_extents(image_w: usize, image_h: usize, scale_factor: usize) -> (usize, usize) {
    ((image_w / scale_factor) / 4, (image_h / scale_factor) / 4)
}

/// Encode ground-truth circles onto detection grids. The cell containing the
/// center gets p = 1, the x/y channels its fractional offset within the cell,
/// and the r channel the radius in grid cells divided by `max_radius`. Two
/// circles falling into one cell keep the larger radius.
pub fn rasterize_targets(
    annotations: &[CircleAnnotation],
    image_w: usize,
    image_h: usize,
    scale_factor: usize,
    max_radius: f64,
) -> DetectionMaps {
    let (gw, gh) = grid_extents(image_w, image_h, scale_factor);
    let mut maps = DetectionMaps::zeros(gh, gw, scale_factor, max_radius);
    let cell = maps.cell_px();
    for a in annotations {
        let gx = a.x / cell;
        let gy = a.y / cell;
        let cx = (gx.floor() as usize).min(gw.saturating_sub(1));
        let cy = (gy.floor() as usize).min(gh.saturating_sub(1));
        let i = cy * gw + cx;
        let r_norm = (a.r / cell) / max_radius;
        if maps.p[i] > 0.0 && maps.r[i] >= r_norm as f32 {
            continue; // collision: keep the larger radius
        }
        maps.p[i] = 1.0;
        maps.x[i] = ((gx - cx as f64).clamp(0.0, 0.999_999)) as f32;
        maps.y[i] = ((gy - cy as f64).clamp(0.0, 0.999_999)) as f32;
        maps.r[i] = r_norm as f32;
    }
    maps
}

/// Invert the target encoding: keep cells whose confidence exceeds
/// `p_thresh` and is a 3x3 local maximum (ties resolved by scan order), then
/// reconstruct pixel-space circles.
pub fn decode_detections(maps: &DetectionMaps, p_thresh: f64) -> Vec<CircleAnnotation> {
    let (gh, gw) = (maps.gh, maps.gw);
    let cell = maps.cell_px();
    let mut out = Vec::new();
    for cy in 0..gh {
        for cx in 0..gw {
            let i = cy * gw + cx;
            let p = f64::from(maps.p[i]);
            if p <= p_thresh {
                continue;
            }
            let mut is_max = true;
            'nbrs: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= gw as i64 || ny >= gh as i64 {
                        continue;
                    }
                    let j = (ny as usize) * gw + nx as usize;
                    let q = f64::from(maps.p[j]);
                    // scan order breaks exact ties: earlier cell wins
                    if q > p || (q == p && j < i) {
                        is_max = false;
                        break 'nbrs;
                    }
                }
            }
            if !is_max {
                continue;
            }
            let off_x = f64::from(maps.x[i]).clamp(0.0, 0.999_999);
            let off_y = f64::from(maps.y[i]).clamp(0.0, 0.999_999);
            let r_norm = f64::from(maps.r[i]).clamp(1e-6, 1.0);
            out.push(CircleAnnotation {
                x: (cx as f64 + off_x) * cell,
                y: (cy as f64 + off_y) * cell,
                r: r_norm * maps.max_radius * cell,
                p,
            });
        }
    }
    out
}

/// Greedy confidence-descending merge of detections from two scales. Two
/// circles are duplicates when their centers lie closer than half the
/// smaller radius; the higher-confidence one survives.
pub fn multiscale_merge(dets_4x: &[CircleAnnotation], dets_8x: &[CircleAnnotation]) -> Vec<CircleAnnotation> {
    let mut all: Vec<CircleAnnotation> = dets_4x.iter().chain(dets_8x.iter()).copied().collect();
    all.sort_by(|a, b| b.p.partial_cmp(&a.p).unwrap_or(std::cmp::Ordering::Equal));
    let mut kept: Vec<CircleAnnotation> = Vec::new();
    'cand: for c in all {
        for k in &kept {
            let d2 = (c.x - k.x).powi(2) + (c.y - k.y).powi(2);
            let thr = 0.5 * c.r.min(k.r);
            if d2 < thr * thr {
                continue 'cand;
            }
        }
        kept.push(c);
    }
    kept
}

// ---- annotation CSV --------------------------------------------------------

pub fn write_annotations_csv(path: &Path, anns: &[CircleAnnotation]) -> Result<()> {
    let mut s = String::from("x,y,r,p\n");
    for a in anns {
        s.push_str(&format!("{},{},{},{}\n", a.x, a.y, a.r, a.p));
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_annotations_csv(path: &Path) -> Result<Vec<CircleAnnotation>> {
    let text = std::fs::read_to_string(path)?;
    parse_annotations_csv(&text)
}

pub fn parse_annotations_csv(text: &str) -> Result<Vec<CircleAnnotation>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty annotation CSV".into()))?;
    if header.trim() != "x,y,r,p" {
        return Err(Error::Format(format!("bad annotation header {header:?}, expected x,y,r,p")));
    }
    let mut out = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!("annotation line {}: expected 4 fields", ln + 2)));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| Error::Format(format!("annotation line {}: bad number {s:?}", ln + 2)))
        };
        out.push(CircleAnnotation {
            x: parse(fields[0])?,
            y: parse(fields[1])?,
            r: parse(fields[2])?,
            p: parse(fields[3])?,
        });
    }
    Ok(out)
}

// ---- training and inference ------------------------------------------------

#[derive(Clone, Debug)]
pub struct DetectorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda_p: f64,
    pub max_radius: f64,
    /// Mask the confidence term like the regression terms instead of taking
    /// it over the whole grid.
    pub literal_mask_p: bool,
    pub seed: u64,
    /// Fraction of the dataset held out for validation checkpointing.
    pub val_fraction: f64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        DetectorTrainConfig {
            epochs: 30,
            batch_size: 4,
            lr: 1e-4,
            weight_decay: 1e-6,
            lambda_p: 5.0,
            max_radius: 5.0,
            literal_mask_p: false,
            seed: 0,
            val_fraction: 0.2,
        }
    }
}

pub struct DetectorSample {
    pub image: Image,
    pub annotations: Vec<CircleAnnotation>,
}

fn image_leaf<T: Scalar>(g: &mut Graph<T>, img: &Image) -> crate::tensor::TensorId {
    let data: Vec<T> = img.data.iter().map(|&v| T::from_f64(f64::from(v))).collect();
    g.leaf(data, vec![1, img.h, img.w], false)
}

/// Loss of one sample at one scale, with gradients accumulated into `grads`.
fn detector_sample_pass<T: Scalar>(
    spec: &NetworkSpec,
    stack: &LayerStack<T>,
    sample: &DetectorSample,
    scale: usize,
    cfg: &DetectorTrainConfig,
    grads: Option<&mut Vec<Vec<T>>>,
) -> f64 {
    let down = sample.image.box_downscale(scale);
    let truth =
        rasterize_targets(&sample.annotations, sample.image.w, sample.image.h, scale, cfg.max_radius);
    let mut g = Graph::<T>::new();
    let bound = bind(&mut g, stack);
    let x = image_leaf(&mut g, &down);
    let raw = {
        let mut ctx = NetCtx { g: &mut g, stack, bound: &bound };
        forward_network(spec, &mut ctx, x)
    };
    let loss = srpsa_loss_graph(&mut g, raw, &truth, cfg.lambda_p, cfg.literal_mask_p);
    let value = g.value(loss).to_f64();
    if let Some(grads) = grads {
        g.backward(loss);
        for (i, id) in bound.ids.iter().enumerate() {
            if let Some(grad) = g.grad(*id) {
                if grads[i].is_empty() {
                    grads[i] = grad.to_vec();
                } else {
                    for (d, s) in grads[i].iter_mut().zip(grad) {
                        *d += *s;
                    }
                }
            }
        }
    }
    value
}

/// Train on every sample at both the 4x and 8x input scales; returns the
/// best-validation-loss parameters. Deterministic for a fixed seed.
pub fn train_detector<T: Scalar>(
    dataset: &[DetectorSample],
    spec: &NetworkSpec,
    stack: &mut LayerStack<T>,
    cfg: &DetectorTrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<LayerStack<T>> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("empty detector dataset".into()));
    }
    let n_val = ((dataset.len() as f64 * cfg.val_fraction) as usize).min(dataset.len() - 1);
    let (val, train) = dataset.split_at(n_val);
    let train = if train.is_empty() { dataset } else { train };

    let mut adam = AdamState::new(stack, cfg.lr, 0.9, 0.999, cfg.weight_decay);
    let mut order: Vec<(usize, usize)> = Vec::new();
    for i in 0..train.len() {
        order.push((i, 4));
        order.push((i, 8));
    }
    let mut r = rng::derive(cfg.seed, "detector-shuffle");
    let mut best = stack.clone();
    let mut best_val = f64::INFINITY;
    let mut step = 0usize;

    for _epoch in 0..cfg.epochs {
        shuffle(&mut order, &mut r);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut grads: Vec<Vec<T>> = vec![Vec::new(); stack.len()];
            let mut batch_loss = 0.0;
            for &(i, scale) in chunk {
                batch_loss +=
                    detector_sample_pass(spec, stack, &train[i], scale, cfg, Some(&mut grads));
            }
            batch_loss /= chunk.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!("detector loss at step {step}")));
            }
            let inv = T::from_f64(1.0 / chunk.len() as f64);
            for gv in &mut grads {
                for x in gv.iter_mut() {
                    *x *= inv;
                }
            }
            let slots: Vec<Option<&[T]>> =
                grads.iter().map(|v| if v.is_empty() { None } else { Some(v.as_slice()) }).collect();
            adam_step(stack, &slots, &mut adam);
            on_step(step, batch_loss);
            step += 1;
        }
        // validation checkpointing
        let val_set = if val.is_empty() { train } else { val };
        let mut vl = 0.0;
        for s in val_set {
            vl += detector_sample_pass(spec, stack, s, 4, cfg, None);
            vl += detector_sample_pass(spec, stack, s, 8, cfg, None);
        }
        vl /= (2 * val_set.len()) as f64;
        if vl < best_val {
            best_val = vl;
            best = stack.clone();
        }
    }
    Ok(best)
}

fn shuffle<X>(v: &mut [X], r: &mut rng::ChaCha8Rng) {
    use rand::Rng as _;
    for i in (1..v.len()).rev() {
        let j = r.gen_range(0..=i);
        v.swap(i, j);
    }
}

/// Run the detector on one image at the 4x and 8x downscales, decode both
/// grids, and merge.
pub fn detect<T: Scalar>(
    image: &Image,
    spec: &NetworkSpec,
    stack: &LayerStack<T>,
    p_thresh: f64,
    max_radius: f64,
) -> Vec<CircleAnnotation> {
    let mut per_scale: Vec<Vec<CircleAnnotation>> = Vec::new();
    for scale in [4usize, 8] {
        let down = image.box_downscale(scale);
        if down.w < 8 || down.h < 8 {
            per_scale.push(Vec::new());
            continue;
        }
        let mut g = Graph::<T>::new();
        let bound = bind(&mut g, stack);
        let x = image_leaf(&mut g, &down);
        let raw = {
            let mut ctx = NetCtx { g: &mut g, stack, bound: &bound };
            forward_network(spec, &mut ctx, x)
        };
        let sh = g.shape(raw).to_vec();
        let (gh, gw) = (sh[1], sh[2]);
        let n = gh * gw;
        let data = g.data(raw);
        let mut maps = DetectionMaps::zeros(gh, gw, scale, max_radius);
        for i in 0..n {
            maps.p[i] = sigmoid32(data[i].to_f64());
            maps.x[i] = data[n + i].to_f64() as f32;
            maps.y[i] = data[2 * n + i].to_f64() as f32;
            maps.r[i] = data[3 * n + i].to_f64() as f32;
        }
        let mut dets = decode_detections(&maps, p_thresh);
        // clamp to image bounds
        for d in &mut dets {
            d.x = d.x.min((image.w - 1) as f64);
            d.y = d.y.min((image.h - 1) as f64);
        }
        per_scale.push(dets);
    }
    multiscale_merge(&per_scale[0], &per_scale[1])
}

fn sigmoid32(x: f64) -> f32 {
    (1.0 / (1.0 + (-x).exp())) as f32
}

#[cfg(test)]
mod tests;
