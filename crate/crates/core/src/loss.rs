//! Training objectives: RMSE-weighted conditional-GAN loss for the
//! translator, relativistic average + perceptual + L1 for the
//! super-resolver, and the masked four-channel detector loss.

use crate::nn::{push_conv, Bound, LayerStack, NetCtx};
use crate::rng;
use crate::srpsa::DetectionMaps;
use crate::tensor::{Graph, Scalar, TensorId};

/// Loss weights; defaults are the published values.
#[derive(Clone, Copy, Debug)]
pub struct GanLossConfig {
    /// Weight of the RMSE term in the translator objective.
    pub lambda_rmse: f64,
    /// Weight of the relativistic adversarial term in the super-resolver.
    pub lambda_rel: f64,
    /// Weight of the L1 term in the super-resolver.
    pub eta_l1: f64,
    /// Discriminator target for real samples.
    pub label_smooth: f64,
}

impl Default for GanLossConfig {
    fn default() -> Self {
        GanLossConfig { lambda_rmse: 5.0, lambda_rel: 0.05, eta_l1: 0.01, label_smooth: 0.9 }
    }
}

impl GanLossConfig {
    pub fn validate(&self) {
        assert!(self.lambda_rmse >= 0.0 && self.lambda_rel >= 0.0 && self.eta_l1 >= 0.0);
        assert!(
            self.label_smooth > 0.5 && self.label_smooth <= 1.0,
            "label_smooth must lie in (0.5, 1], got {}",
            self.label_smooth
        );
    }
}

/// `sqrt(mean((target - generated)^2) + eps)`; the epsilon keeps the
/// gradient defined when the images coincide.
pub fn rmse_loss<T: Scalar>(g: &mut Graph<T>, generated: TensorId, target: TensorId) -> TensorId {
    let d = g.sub(target, generated);
    let sq = g.mul(d, d);
    let m = g.mean(sq);
    let eps = g.scalar(1e-12);
    let guarded = g.add(m, eps);
    g.sqrt(guarded)
}

/// Mean binary cross-entropy with logits against a constant target, in the
/// stable `softplus(z) - z*t` form.
pub fn bce_with_logits_const<T: Scalar>(g: &mut Graph<T>, logits: TensorId, target: f64) -> TensorId {
    let sp = g.softplus(logits);
    let t = g.scalar(target);
    let zt = g.mul(logits, t);
    let per = g.sub(sp, zt);
    g.mean(per)
}

/// Conditional-GAN adversarial pair for PatchGAN score maps (pre-sigmoid).
/// The discriminator sees `label_smooth` for real and 0 for fake; the
/// generator drives fakes toward 1.
pub fn cgan_adversarial<T: Scalar>(
    g: &mut Graph<T>,
    d_real: TensorId,
    d_fake: TensorId,
    cfg: &GanLossConfig,
) -> (TensorId, TensorId) {
    let loss_g = bce_with_logits_const(g, d_fake, 1.0);
    let real_term = bce_with_logits_const(g, d_real, cfg.label_smooth);
    let fake_term = bce_with_logits_const(g, d_fake, 0.0);
    let s = g.add(real_term, fake_term);
    let half = g.scalar(0.5);
    let loss_d = g.mul(s, half);
    (loss_g, loss_d)
}

/// Relativistic average losses over critic outputs (pre-sigmoid): the
/// discriminator scores how much more realistic real looks than the average
/// fake, and vice versa for the generator.
pub fn relativistic_avg_loss<T: Scalar>(
    g: &mut Graph<T>,
    c_real: TensorId,
    c_fake: TensorId,
) -> (TensorId, TensorId) {
    let mean_fake = g.mean(c_fake);
    let mean_real = g.mean(c_real);
    let rf = g.sub(c_real, mean_fake);
    let fr = g.sub(c_fake, mean_real);
    let half = g.scalar(0.5);

    let d1 = bce_with_logits_const(g, rf, 1.0);
    let d2 = bce_with_logits_const(g, fr, 0.0);
    let ds = g.add(d1, d2);
    let loss_d = g.mul(ds, half);

    let g1 = bce_with_logits_const(g, fr, 1.0);
    let g2 = bce_with_logits_const(g, rf, 0.0);
    let gs = g.add(g1, g2);
    let loss_g = g.mul(gs, half);
    (loss_g, loss_d)
}

// ---- perceptual loss ------------------------------------------------------

/// Fixed random feature extractor standing in for a pretrained backbone:
/// four convolutions, strides 1-2-1-2, leaky activations in between, final
/// pre-activation maps as the features.
pub fn build_feature_net<T: Scalar>(seed: u64, width: usize) -> LayerStack<T> {
    let mut r = rng::derive(seed, "featnet");
    let mut s = LayerStack::new();
    push_conv(&mut s, &mut r, "f0", width, 1, 3, 3, false);
    push_conv(&mut s, &mut r, "f1", width, width, 3, 3, false);
    push_conv(&mut s, &mut r, "f2", 2 * width, width, 3, 3, false);
    push_conv(&mut s, &mut r, "f3", 2 * width, 2 * width, 3, 3, false);
    s
}

/// Bind a stack with every entry frozen (no gradients into the parameters).
pub fn bind_frozen<T: Scalar>(g: &mut Graph<T>, stack: &LayerStack<T>) -> Bound {
    let ids = stack
        .entries()
        .iter()
        .map(|p| g.leaf(p.data.clone(), p.shape.clone(), false))
        .collect();
    Bound { ids }
}

/// Pre-activation feature maps of the frozen extractor.
pub fn feature_forward<T: Scalar>(
    g: &mut Graph<T>,
    featnet: &LayerStack<T>,
    bound: &Bound,
    x: TensorId,
) -> TensorId {
    let mut ctx = NetCtx { g, stack: featnet, bound };
    let c0 = ctx.conv("f0", x, 1, 1);
    let a0 = ctx.g.leaky_relu(c0, 0.2);
    let c1 = ctx.conv("f1", a0, 2, 1);
    let a1 = ctx.g.leaky_relu(c1, 0.2);
    let c2 = ctx.conv("f2", a1, 1, 1);
    let a2 = ctx.g.leaky_relu(c2, 0.2);
    ctx.conv("f3", a2, 2, 1)
}

/// Mean absolute difference between frozen features of two images.
pub fn perceptual_loss<T: Scalar>(
    g: &mut Graph<T>,
    generated: TensorId,
    target: TensorId,
    featnet: &LayerStack<T>,
) -> TensorId {
    let bound = bind_frozen(g, featnet);
    let fg = feature_forward(g, featnet, &bound, generated);
    let ft = feature_forward(g, featnet, &bound, target);
    let d = g.sub(fg, ft);
    let a = g.abs(d);
    g.mean(a)
}

/// Total super-resolver generator objective:
/// `perceptual + lambda_rel * relativistic_G + eta_l1 * L1`.
pub fn esrgan_generator_loss<T: Scalar>(
    g: &mut Graph<T>,
    generated: TensorId,
    target: TensorId,
    c_real: TensorId,
    c_fake: TensorId,
    featnet: &LayerStack<T>,
    cfg: &GanLossConfig,
) -> TensorId {
    let percep = perceptual_loss(g, generated, target, featnet);
    let (rel_g, _) = relativistic_avg_loss(g, c_real, c_fake);
    let d = g.sub(generated, target);
    let a = g.abs(d);
    let l1 = g.mean(a);

    let wl = g.scalar(cfg.lambda_rel);
    let rel_w = g.mul(rel_g, wl);
    let we = g.scalar(cfg.eta_l1);
    let l1_w = g.mul(l1, we);
    let s = g.add(percep, rel_w);
    g.add(s, l1_w)
}

// ---- detector loss ----------------------------------------------------

/// Masked detector loss on plain (already sigmoided) maps. Regression
/// channels are mean squared error over the mask cells; the confidence term
/// is weighted by `lambda_p` and, by default, taken over the whole grid so
/// spurious confidence is penalized. `literal_mask_p` restricts it to the
/// mask as the published formula literally reads.
pub fn srpsa_loss_maps(pred: &DetectionMaps, truth: &DetectionMaps, lambda_p: f64, literal_mask_p: bool) -> f64 {
    assert_eq!(pred.gh, truth.gh);
    assert_eq!(pred.gw, truth.gw);
    let n = pred.gh * pred.gw;
    let mask: Vec<bool> = truth.p.iter().map(|&v| v > 0.5).collect();
    let m_count = mask.iter().filter(|&&b| b).count();

    let masked_mse = |a: &[f32], b: &[f32]| -> f64 {
        if m_count == 0 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..n {
            if mask[i] {
                let d = f64::from(a[i]) - f64::from(b[i]);
                s += d * d;
            }
        }
        s / m_count as f64
    };

    let x_err = masked_mse(&pred.x, &truth.x);
    let y_err = masked_mse(&pred.y, &truth.y);
    let r_err = masked_mse(&pred.r, &truth.r);
    let p_err = if literal_mask_p {
        lambda_p * masked_mse(&pred.p, &truth.p)
    } else {
        let mut s = 0.0;
        for i in 0..n {
            let d = f64::from(pred.p[i]) - f64::from(truth.p[i]);
            s += d * d;
        }
        lambda_p * s / n as f64
    };
    (x_err + y_err + r_err + p_err) / 4.0
}

/// Graph-side detector loss on the raw `[4, gh, gw]` network output (p
/// channel pre-sigmoid). Matches [`srpsa_loss_maps`] on the sigmoided maps.
pub fn srpsa_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    raw_maps: TensorId,
    truth: &DetectionMaps,
    lambda_p: f64,
    literal_mask_p: bool,
) -> TensorId {
    let sh = g.shape(raw_maps).to_vec();
    assert_eq!(sh[0], 4, "detector output must have 4 channels, got {sh:?}");
    let (gh, gw) = (sh[1], sh[2]);
    assert_eq!((gh, gw), (truth.gh, truth.gw), "truth grid mismatch");
    let n = gh * gw;
    let mask: Vec<T> = truth.p.iter().map(|&v| if v > 0.5 { T::one() } else { T::zero() }).collect();
    let m_count = truth.p.iter().filter(|&&v| v > 0.5).count();

    let p_raw = g.slice0(raw_maps, 0, 1);
    let p_pred = g.sigmoid(p_raw);
    let mask_t = g.leaf(mask, vec![1, gh, gw], false);

    let to_leaf = |g: &mut Graph<T>, v: &[f32]| {
        let data: Vec<T> = v.iter().map(|&x| T::from_f64(f64::from(x))).collect();
        g.leaf(data, vec![1, gh, gw], false)
    };

    let mut reg_terms = Vec::new();
    for (ch, tr) in [(&truth.x, 1usize), (&truth.y, 2), (&truth.r, 3)] {
        let pred_c = g.slice0(raw_maps, tr, 1);
        let truth_c = to_leaf(g, ch);
        let d = g.sub(pred_c, truth_c);
        let sq = g.mul(d, d);
        let masked = g.mul(sq, mask_t);
        let s = g.sum(masked);
        let denom = g.scalar((m_count.max(1)) as f64);
        reg_terms.push(g.div(s, denom));
    }

    let truth_p = to_leaf(g, &truth.p);
    let dp = g.sub(p_pred, truth_p);
    let sqp = g.mul(dp, dp);
    let p_term = if literal_mask_p {
        let masked = g.mul(sqp, mask_t);
        let s = g.sum(masked);
        let denom = g.scalar((m_count.max(1)) as f64);
        g.div(s, denom)
    } else {
        let s = g.sum(sqp);
        let denom = g.scalar(n as f64);
        g.div(s, denom)
    };
    let wl = g.scalar(lambda_p);
    let p_w = g.mul(p_term, wl);

    let s01 = g.add(reg_terms[0], reg_terms[1]);
    let s012 = g.add(s01, reg_terms[2]);
    let total = g.add(s012, p_w);
    let quarter = g.scalar(0.25);
    g.mul(total, quarter)
}
