//! Patch handling and the two GAN training loops: optical-to-electron style
//! translation (U-Net + PatchGAN, RMSE-weighted adversarial objective) and
//! 4x super-resolution (dense-block generator, relativistic critic).

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::image_io::Image;
use crate::loss::{
    bce_with_logits_const, cgan_adversarial, esrgan_generator_loss, relativistic_avg_loss, rmse_loss,
    GanLossConfig,
};
use crate::nn::networks::{forward_network, NetworkSpec};
use crate::nn::{bind, refresh_spectral_buffers, Bound, LayerStack, NetCtx};
use crate::optim::{adam_step, ttur_rates, AdamState, TturSchedule};
use crate::rng;
use crate::tensor::{Graph, Scalar, TensorId};

/// A registered low-resolution / high-resolution grayscale pair sharing one
/// coordinate frame.
#[derive(Clone)]
pub struct ImagePair {
    pub om: Image,
    pub sem: Image,
    pub registered: bool,
}

impl ImagePair {
    pub fn new(om: Image, sem: Image) -> Result<Self> {
        if (om.w, om.h) != (sem.w, sem.h) {
            return Err(Error::InvalidInput(format!(
                "registered pair extents differ: {}x{} vs {}x{}",
                om.w, om.h, sem.w, sem.h
            )));
        }
        Ok(ImagePair { om, sem, registered: true })
    }
}

// ---- patch grid -------------------------------------------------------

/// Row-major tiling; the final row/column anchor to the image edge so the
/// whole image is covered (overlap allowed).
pub fn patch_offsets(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    assert!(patch <= extent, "patch {patch} exceeds extent {extent}");
    assert!(stride >= 1);
    let mut offs = Vec::new();
    let mut o = 0usize;
    loop {
        if o + patch <= extent {
            offs.push(o);
        } else {
            break;
        }
        if o + patch == extent {
            return offs;
        }
        o += stride;
    }
    offs.push(extent - patch);
    offs
}

pub fn extract_patches(image: &Image, patch: usize, stride: usize) -> Vec<(Image, (usize, usize))> {
    let xs = patch_offsets(image.w, patch, stride);
    let ys = patch_offsets(image.h, patch, stride);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &oy in &ys {
        for &ox in &xs {
            let mut p = Image::new(patch, patch);
            for y in 0..patch {
                for x in 0..patch {
                    p.set(x, y, image.get(ox + x, oy + y));
                }
            }
            out.push((p, (ox, oy)));
        }
    }
    out
}

/// Reassemble patches at their offsets, averaging overlaps. Every output
/// pixel must be covered.
pub fn stitch_patches(patches: &[(Image, (usize, usize))], out_w: usize, out_h: usize) -> Result<Image> {
    let mut acc = vec![0.0f64; out_w * out_h];
    let mut cnt = vec![0u32; out_w * out_h];
    for (p, (ox, oy)) in patches {
        if ox + p.w > out_w || oy + p.h > out_h {
            return Err(Error::InvalidInput(format!(
                "patch at ({ox},{oy}) size {}x{} exceeds output {out_w}x{out_h}",
                p.w, p.h
            )));
        }
        for y in 0..p.h {
            for x in 0..p.w {
                let i = (oy + y) * out_w + (ox + x);
                acc[i] += f64::from(p.get(x, y));
                cnt[i] += 1;
            }
        }
    }
    if let Some(i) = cnt.iter().position(|&c| c == 0) {
        return Err(Error::InvalidInput(format!(
            "uncovered pixel at ({}, {}) while stitching",
            i % out_w,
            i / out_w
        )));
    }
    let data = acc.iter().zip(&cnt).map(|(&a, &c)| (a / f64::from(c)) as f32).collect();
    Ok(Image::from_data(out_w, out_h, data))
}

// ---- shared helpers -------------------------------------------------------

pub fn image_leaf<T: Scalar>(g: &mut Graph<T>, img: &Image) -> TensorId {
    let data: Vec<T> = img.data.iter().map(|&v| T::from_f64(f64::from(v))).collect();
    g.leaf(data, vec![1, img.h, img.w], false)
}

pub fn tensor_to_image<T: Scalar>(g: &Graph<T>, id: TensorId) -> Image {
    let sh = g.shape(id);
    assert_eq!(sh[0], 1, "expected a single-channel tensor");
    let (h, w) = (sh[1], sh[2]);
    let data = g.data(id).iter().map(|&v| (v.to_f64() as f32).clamp(0.0, 1.0)).collect();
    Image::from_data(w, h, data)
}

fn collect_grads<'g, T: Scalar>(g: &'g Graph<T>, bound: &Bound) -> Vec<Option<&'g [T]>> {
    bound.ids.iter().map(|&id| g.grad(id)).collect()
}

/// Flips and quarter rotations applied identically to both images of a pair.
fn augment_pair(om: &Image, sem: &Image, code: u8) -> (Image, Image) {
    let ap = |img: &Image| -> Image {
        let mut out = img.clone();
        if code & 1 != 0 {
            out = flip_h(&out);
        }
        if code & 2 != 0 {
            out = flip_v(&out);
        }
        if code & 4 != 0 {
            out = rot90(&out);
        }
        out
    };
    (ap(om), ap(sem))
}

fn flip_h(img: &Image) -> Image {
    let mut out = Image::new(img.w, img.h);
    for y in 0..img.h {
        for x in 0..img.w {
            out.set(x, y, img.get(img.w - 1 - x, y));
        }
    }
    out
}

fn flip_v(img: &Image) -> Image {
    let mut out = Image::new(img.w, img.h);
    for y in 0..img.h {
        for x in 0..img.w {
            out.set(x, y, img.get(x, img.h - 1 - y));
        }
    }
    out
}

fn rot90(img: &Image) -> Image {
    let mut out = Image::new(img.h, img.w);
    for y in 0..img.h {
        for x in 0..img.w {
            out.set(img.h - 1 - y, x, img.get(x, y));
        }
    }
    out
}

// ---- translator training ---------------------------------------------------

#[derive(Clone, Debug)]
pub struct TranslatorTrainConfig {
    pub epochs: usize,
    pub ttur: TturSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub loss: GanLossConfig,
    pub augment: bool,
    pub seed: u64,
    pub gen_spec: NetworkSpec,
    pub disc_spec: NetworkSpec,
}

pub struct TrainedGan<T> {
    pub gen: LayerStack<T>,
    pub disc: LayerStack<T>,
    /// (step, loss_g, loss_d) per step.
    pub curve: Vec<(usize, f64, f64)>,
}

fn check_finite(v: f64, what: &str, step: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} at step {step}")))
    }
}

/// Alternating discriminator/generator updates with label smoothing and the
/// switching two-time-scale rates. Deterministic for a fixed seed.
pub fn train_translator<T: Scalar>(
    pairs: &[ImagePair],
    cfg: &TranslatorTrainConfig,
    mut on_step: impl FnMut(usize, f64, f64),
) -> Result<TrainedGan<T>> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no training pairs".into()));
    }
    if let Some(bad) = pairs.iter().position(|p| !p.registered) {
        return Err(Error::InvalidInput(format!("pair {bad} is not registered")));
    }
    cfg.loss.validate();
    let mut gen = crate::nn::networks::build_network::<T>(&cfg.gen_spec, cfg.seed);
    let mut disc = crate::nn::networks::build_network::<T>(&cfg.disc_spec, cfg.seed ^ 0xd15c);
    let mut adam_g = AdamState::new(&gen, cfg.ttur.lr_g0, cfg.beta1, cfg.beta2, 0.0);
    let mut adam_d = AdamState::new(&disc, cfg.ttur.lr_d0, cfg.beta1, cfg.beta2, 0.0);
    let mut r = rng::derive(cfg.seed, "translator-shuffle");
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut curve = Vec::new();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let (lr_g, lr_d) = ttur_rates(epoch, &cfg.ttur);
        adam_g.lr = lr_g;
        adam_d.lr = lr_d;
        shuffle(&mut order, &mut r);
        for &pi in &order {
            let (om, sem) = if cfg.augment {
                augment_pair(&pairs[pi].om, &pairs[pi].sem, r.gen_range(0..8))
            } else {
                (pairs[pi].om.clone(), pairs[pi].sem.clone())
            };

            refresh_spectral_buffers(&mut gen, 1);
            refresh_spectral_buffers(&mut disc, 1);

            // discriminator update: generator frozen
            let loss_d_v = {
                let mut g = Graph::<T>::new();
                let gb = crate::loss::bind_frozen(&mut g, &gen);
                let db = bind(&mut g, &disc);
                let om_t = image_leaf(&mut g, &om);
                let sem_t = image_leaf(&mut g, &sem);
                let fake = {
                    let mut ctx = NetCtx { g: &mut g, stack: &gen, bound: &gb };
                    forward_network(&cfg.gen_spec, &mut ctx, om_t)
                };
                let real_in = g.concat0(om_t, sem_t);
                let fake_in = g.concat0(om_t, fake);
                let (d_real, d_fake) = {
                    let mut ctx = NetCtx { g: &mut g, stack: &disc, bound: &db };
                    (
                        forward_network(&cfg.disc_spec, &mut ctx, real_in),
                        forward_network(&cfg.disc_spec, &mut ctx, fake_in),
                    )
                };
                let (_, loss_d) = cgan_adversarial(&mut g, d_real, d_fake, &cfg.loss);
                let v = g.value(loss_d).to_f64();
                check_finite(v, "translator discriminator loss", step)?;
                g.backward(loss_d);
                let slots = collect_grads(&g, &db);
                adam_step(&mut disc, &slots, &mut adam_d);
                v
            };

            // generator update: gradients flow through a frozen critic
            let loss_g_v = {
                let mut g = Graph::<T>::new();
                let gb = bind(&mut g, &gen);
                let db = crate::loss::bind_frozen(&mut g, &disc);
                let om_t = image_leaf(&mut g, &om);
                let sem_t = image_leaf(&mut g, &sem);
                let fake = {
                    let mut ctx = NetCtx { g: &mut g, stack: &gen, bound: &gb };
                    forward_network(&cfg.gen_spec, &mut ctx, om_t)
                };
                let fake_in = g.concat0(om_t, fake);
                let d_fake = {
                    let mut ctx = NetCtx { g: &mut g, stack: &disc, bound: &db };
                    forward_network(&cfg.disc_spec, &mut ctx, fake_in)
                };
                let adv = bce_with_logits_const(&mut g, d_fake, 1.0);
                let rmse = rmse_loss(&mut g, fake, sem_t);
                let w = g.scalar(cfg.loss.lambda_rmse);
                let rmse_w = g.mul(rmse, w);
                let total = g.add(adv, rmse_w);
                let v = g.value(total).to_f64();
                check_finite(v, "translator generator loss", step)?;
                g.backward(total);
                let slots = collect_grads(&g, &gb);
                adam_step(&mut gen, &slots, &mut adam_g);
                v
            };

            curve.push((step, loss_g_v, loss_d_v));
            on_step(step, loss_g_v, loss_d_v);
            step += 1;
        }
    }
    Ok(TrainedGan { gen, disc, curve })
}

/// Translator inference on one image.
pub fn translate<T: Scalar>(image: &Image, spec: &NetworkSpec, gen: &LayerStack<T>) -> Image {
    let mut g = Graph::<T>::new();
    let gb = crate::loss::bind_frozen(&mut g, gen);
    let x = image_leaf(&mut g, image);
    let y = {
        let mut ctx = NetCtx { g: &mut g, stack: gen, bound: &gb };
        forward_network(spec, &mut ctx, x)
    };
    tensor_to_image(&g, y)
}

// ---- super-resolution training ----------------------------------------

#[derive(Clone, Debug)]
pub struct SrTrainConfig {
    pub epochs: usize,
    pub ttur: TturSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub loss: GanLossConfig,
    pub batch: usize,
    pub seed: u64,
    pub feat_seed: u64,
    pub feat_width: usize,
    pub gen_spec: NetworkSpec,
    pub disc_spec: NetworkSpec,
}

/// Relativistic-average GAN training for the 4x super-resolver. Inputs must
/// be exact 4x box downscales of the targets (checked).
pub fn train_super_resolver<T: Scalar>(
    pairs: &[(Image, Image)],
    cfg: &SrTrainConfig,
    mut on_step: impl FnMut(usize, f64, f64),
) -> Result<TrainedGan<T>> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no training pairs".into()));
    }
    for (i, (low, high)) in pairs.iter().enumerate() {
        if low.w * 4 != high.w || low.h * 4 != high.h {
            return Err(Error::InvalidInput(format!(
                "pair {i}: resolution ratio is not 4 ({}x{} vs {}x{})",
                low.w, low.h, high.w, high.h
            )));
        }
    }
    cfg.loss.validate();
    let mut gen = crate::nn::networks::build_network::<T>(&cfg.gen_spec, cfg.seed);
    let mut disc = crate::nn::networks::build_network::<T>(&cfg.disc_spec, cfg.seed ^ 0xd15c);
    let featnet = crate::loss::build_feature_net::<T>(cfg.feat_seed, cfg.feat_width);
    let mut adam_g = AdamState::new(&gen, cfg.ttur.lr_g0, cfg.beta1, cfg.beta2, 0.0);
    let mut adam_d = AdamState::new(&disc, cfg.ttur.lr_d0, cfg.beta1, cfg.beta2, 0.0);
    let mut r = rng::derive(cfg.seed, "sr-shuffle");
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut curve = Vec::new();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let (lr_g, lr_d) = ttur_rates(epoch, &cfg.ttur);
        adam_g.lr = lr_g;
        adam_d.lr = lr_d;
        shuffle(&mut order, &mut r);
        for chunk in order.chunks(cfg.batch.max(1)) {
            refresh_spectral_buffers(&mut gen, 1);
            refresh_spectral_buffers(&mut disc, 1);

            // discriminator pass over the batch
            let loss_d_v = {
                let mut g = Graph::<T>::new();
                let gb = crate::loss::bind_frozen(&mut g, &gen);
                let db = bind(&mut g, &disc);
                let mut c_reals = Vec::new();
                let mut c_fakes = Vec::new();
                for &pi in chunk {
                    let (low, high) = &pairs[pi];
                    let low_t = image_leaf(&mut g, low);
                    let high_t = image_leaf(&mut g, high);
                    let fake = {
                        let mut ctx = NetCtx { g: &mut g, stack: &gen, bound: &gb };
                        forward_network(&cfg.gen_spec, &mut ctx, low_t)
                    };
                    let mut ctx = NetCtx { g: &mut g, stack: &disc, bound: &db };
                    c_reals.push(forward_network(&cfg.disc_spec, &mut ctx, high_t));
                    c_fakes.push(forward_network(&cfg.disc_spec, &mut ctx, fake));
                }
                let c_real = concat_scalars(&mut g, &c_reals);
                let c_fake = concat_scalars(&mut g, &c_fakes);
                let (_, loss_d) = relativistic_avg_loss(&mut g, c_real, c_fake);
                let v = g.value(loss_d).to_f64();
                check_finite(v, "sr discriminator loss", step)?;
                g.backward(loss_d);
                let slots = collect_grads(&g, &db);
                adam_step(&mut disc, &slots, &mut adam_d);
                v
            };

            // generator pass
            let loss_g_v = {
                let mut g = Graph::<T>::new();
                let gb = bind(&mut g, &gen);
                let db = crate::loss::bind_frozen(&mut g, &disc);
                let mut fakes = Vec::new();
                let mut highs = Vec::new();
                let mut c_reals = Vec::new();
                let mut c_fakes = Vec::new();
                for &pi in chunk {
                    let (low, high) = &pairs[pi];
                    let low_t = image_leaf(&mut g, low);
                    let high_t = image_leaf(&mut g, high);
                    let fake = {
                        let mut ctx = NetCtx { g: &mut g, stack: &gen, bound: &gb };
                        forward_network(&cfg.gen_spec, &mut ctx, low_t)
                    };
                    let mut ctx = NetCtx { g: &mut g, stack: &disc, bound: &db };
                    let cr = forward_network(&cfg.disc_spec, &mut ctx, high_t);
                    let cf = forward_network(&cfg.disc_spec, &mut ctx, fake);
                    fakes.push(fake);
                    highs.push(high_t);
                    c_reals.push(cr);
                    c_fakes.push(cf);
                }
                let c_real = concat_scalars(&mut g, &c_reals);
                let c_fake = concat_scalars(&mut g, &c_fakes);
                let mut total: Option<TensorId> = None;
                for (fake, high) in fakes.iter().zip(&highs) {
                    let l = esrgan_generator_loss(&mut g, *fake, *high, c_real, c_fake, &featnet, &cfg.loss);
                    total = Some(match total {
                        Some(t) => g.add(t, l),
                        None => l,
                    });
                }
                let total = total.expect("non-empty chunk");
                let invn = g.scalar(1.0 / chunk.len() as f64);
                let total = g.mul(total, invn);
                let v = g.value(total).to_f64();
                check_finite(v, "sr generator loss", step)?;
                g.backward(total);
                let slots = collect_grads(&g, &gb);
                adam_step(&mut gen, &slots, &mut adam_g);
                v
            };

            curve.push((step, loss_g_v, loss_d_v));
            on_step(step, loss_g_v, loss_d_v);
            step += 1;
        }
    }
    Ok(TrainedGan { gen, disc, curve })
}

fn concat_scalars<T: Scalar>(g: &mut Graph<T>, ids: &[TensorId]) -> TensorId {
    let mut cur = ids[0];
    for &id in &ids[1..] {
        cur = g.concat0(cur, id);
    }
    cur
}

/// Super-resolver inference on one low-resolution image.
pub fn super_resolve_once<T: Scalar>(image: &Image, spec: &NetworkSpec, gen: &LayerStack<T>) -> Image {
    let mut g = Graph::<T>::new();
    let gb = crate::loss::bind_frozen(&mut g, gen);
    let x = image_leaf(&mut g, image);
    let y = {
        let mut ctx = NetCtx { g: &mut g, stack: gen, bound: &gb };
        forward_network(spec, &mut ctx, x)
    };
    tensor_to_image(&g, y)
}

/// Full enhancement pass: tile the input, translate each patch, downscale by
/// 4 and super-resolve back, then stitch at the original offsets. Output
/// extents equal input extents.
pub fn super_resolve<T: Scalar>(
    om: &Image,
    translator_spec: &NetworkSpec,
    translator: &LayerStack<T>,
    sr_spec: &NetworkSpec,
    sr: &LayerStack<T>,
    patch: usize,
    stride: usize,
) -> Result<Image> {
    if patch > om.w || patch > om.h {
        return Err(Error::InvalidInput(format!(
            "patch {patch} exceeds image {}x{}",
            om.w, om.h
        )));
    }
    let patches = extract_patches(om, patch, stride);
    let mut outs = Vec::with_capacity(patches.len());
    for (p, off) in &patches {
        let translated = translate(p, translator_spec, translator);
        let low = translated.box_downscale(4);
        let restored = super_resolve_once(&low, sr_spec, sr);
        outs.push((restored, *off));
    }
    stitch_patches(&outs, om.w, om.h)
}

fn shuffle<X>(v: &mut [X], r: &mut rng::ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        let j = r.gen_range(0..=i);
        v.swap(i, j);
    }
}

// ---- pixel-space baselines --------------------------------------------

pub fn pixel_rmse(a: &Image, b: &Image) -> f64 {
    assert_eq!((a.w, a.h), (b.w, b.h));
    let mut acc = 0.0;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let d = f64::from(x) - f64::from(y);
        acc += d * d;
    }
    (acc / (a.w * a.h) as f64).sqrt()
}

pub fn pixel_l1(a: &Image, b: &Image) -> f64 {
    assert_eq!((a.w, a.h), (b.w, b.h));
    let mut acc = 0.0;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        acc += (f64::from(x) - f64::from(y)).abs();
    }
    acc / (a.w * a.h) as f64
}
