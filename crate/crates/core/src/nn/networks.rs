//! The four GAN networks and the detector CNN, as named-parameter builders
//! plus forward passes over a bound stack.
//!
//! Widths default to desk-scale values trainable on a CPU; the published
//! architecture sizes are available as the `paper` preset.

use super::attention::{push_self_attention, self_attention_forward};
use super::{push_conv, push_conv_transpose, LayerStack, NetCtx};
use crate::rng;
use crate::tensor::{Scalar, TensorId};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum NetworkKind {
    TranslatorGenerator,
    PatchganDiscriminator,
    SrGenerator,
    SrDiscriminator,
    SrpsaNet,
}

/// Architecture description; see the preset constructors.
#[derive(Clone, Debug)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    /// Channels at the first stage; later stages double up to an 8x cap.
    pub base_width: usize,
    /// U-Net encoder/decoder stage count (translator) or downsampling stage
    /// count (patchgan).
    pub depth: usize,
    /// Residual-in-residual dense blocks in the super-resolution generator.
    pub rrdb_blocks: usize,
    /// Growth channels inside each dense block.
    pub growth: usize,
    /// How many of the smallest decoder stages carry self-attention.
    pub attention_stages: usize,
    pub in_channels: usize,
}

impl NetworkSpec {
    pub fn desk(kind: NetworkKind) -> Self {
        NetworkSpec {
            kind,
            base_width: 16,
            depth: match kind {
                NetworkKind::TranslatorGenerator => 5,
                NetworkKind::PatchganDiscriminator => 3,
                _ => 0,
            },
            rrdb_blocks: 4,
            growth: 8,
            attention_stages: 3,
            in_channels: match kind {
                NetworkKind::PatchganDiscriminator => 2,
                _ => 1,
            },
        }
    }

    pub fn paper(kind: NetworkKind) -> Self {
        let mut s = Self::desk(kind);
        s.base_width = 64;
        s.rrdb_blocks = 23;
        s.growth = 32;
        if kind == NetworkKind::TranslatorGenerator {
            s.depth = 7;
        }
        if kind == NetworkKind::PatchganDiscriminator {
            s.depth = 4;
        }
        s
    }

    /// Tiny widths for finite-difference checks.
    pub fn toy(kind: NetworkKind) -> Self {
        let mut s = Self::desk(kind);
        s.base_width = 2;
        s.rrdb_blocks = 1;
        s.growth = 2;
        if kind == NetworkKind::TranslatorGenerator {
            s.depth = 2;
        }
        if kind == NetworkKind::PatchganDiscriminator {
            s.depth = 2;
        }
        s
    }

    fn width(&self, stage: usize) -> usize {
        self.base_width * (1 << stage.min(3))
    }

    /// Minimum square input extent the architecture accepts.
    pub fn min_input(&self) -> usize {
        match self.kind {
            // the deepest blurpool still needs a 3-pixel extent
            NetworkKind::TranslatorGenerator | NetworkKind::PatchganDiscriminator => 1 << (self.depth + 1),
            NetworkKind::SrGenerator => 4,
            NetworkKind::SrDiscriminator => 16,
            NetworkKind::SrpsaNet => 8,
        }
    }
}

/// Deterministic parameter initialization for any network kind.
pub fn build_network<T: Scalar>(spec: &NetworkSpec, seed: u64) -> LayerStack<T> {
    let mut r = rng::derive(seed, "net-init");
    let mut stack = LayerStack::new();
    match spec.kind {
        NetworkKind::TranslatorGenerator => build_translator(spec, &mut r, &mut stack),
        NetworkKind::PatchganDiscriminator => build_patchgan(spec, &mut r, &mut stack),
        NetworkKind::SrGenerator => build_sr_generator(spec, &mut r, &mut stack),
        NetworkKind::SrDiscriminator => build_sr_discriminator(spec, &mut r, &mut stack),
        NetworkKind::SrpsaNet => build_srpsa(spec, &mut r, &mut stack),
    }
    stack
}

/// Forward dispatch; `x` is `[in_channels, h, w]`.
pub fn forward_network<T: Scalar>(spec: &NetworkSpec, ctx: &mut NetCtx<T>, x: TensorId) -> TensorId {
    match spec.kind {
        NetworkKind::TranslatorGenerator => forward_translator(spec, ctx, x),
        NetworkKind::PatchganDiscriminator => forward_patchgan(spec, ctx, x),
        NetworkKind::SrGenerator => forward_sr_generator(spec, ctx, x),
        NetworkKind::SrDiscriminator => forward_sr_discriminator(spec, ctx, x),
        NetworkKind::SrpsaNet => forward_srpsa(spec, ctx, x),
    }
}

// ---- translator U-Net -------------------------------------------------

fn build_translator<T: Scalar>(spec: &NetworkSpec, r: &mut rng::ChaCha8Rng, s: &mut LayerStack<T>) {
    let d = spec.depth;
    let mut c_in = spec.in_channels;
    for i in 0..d {
        // spectral norm on every down-sampling convolution
        push_conv(s, r, &format!("enc{i}"), spec.width(i), c_in, 3, 3, true);
        c_in = spec.width(i);
    }
    push_conv(s, r, "bottleneck", spec.width(d - 1), spec.width(d - 1), 3, 3, false);
    for i in (0..d).rev() {
        let cur = if i == d - 1 { spec.width(d - 1) } else { spec.width(i + 1) };
        push_conv_transpose(s, r, &format!("dec{i}.up"), cur, spec.width(i), 2);
        push_conv(s, r, &format!("dec{i}.conv"), spec.width(i), 2 * spec.width(i), 3, 3, false);
        if i >= d.saturating_sub(spec.attention_stages) {
            push_self_attention(s, r, &format!("dec{i}.sa"), spec.width(i));
        }
    }
    push_conv(s, r, "out", 1, spec.width(0), 3, 3, false);
}

fn forward_translator<T: Scalar>(spec: &NetworkSpec, ctx: &mut NetCtx<T>, x: TensorId) -> TensorId {
    let d = spec.depth;
    let mut skips: Vec<TensorId> = Vec::with_capacity(d);
    let mut cur = x;
    for i in 0..d {
        let c = ctx.conv(&format!("enc{i}"), cur, 1, 1);
        let a = ctx.g.leaky_relu(c, 0.2);
        skips.push(a);
        cur = ctx.g.blurpool2d(a);
    }
    let b = ctx.conv("bottleneck", cur, 1, 1);
    cur = ctx.g.leaky_relu(b, 0.2);
    for i in (0..d).rev() {
        let up = ctx.conv_transpose(&format!("dec{i}.up"), cur, 2);
        let cat = ctx.g.concat0(up, skips[i]);
        let c = ctx.conv(&format!("dec{i}.conv"), cat, 1, 1);
        cur = ctx.g.relu(c);
        if i >= d.saturating_sub(spec.attention_stages) {
            cur = self_attention_forward(ctx, &format!("dec{i}.sa"), cur);
        }
    }
    let o = ctx.conv("out", cur, 1, 1);
    ctx.g.sigmoid(o)
}

// ---- PatchGAN discriminator --------------------------------------------

fn build_patchgan<T: Scalar>(spec: &NetworkSpec, r: &mut rng::ChaCha8Rng, s: &mut LayerStack<T>) {
    let mut c_in = spec.in_channels;
    for i in 0..spec.depth {
        push_conv(s, r, &format!("d{i}"), spec.width(i), c_in, 3, 3, true);
        c_in = spec.width(i);
    }
    push_conv(s, r, "score", 1, c_in, 3, 3, false);
}

fn forward_patchgan<T: Scalar>(spec: &NetworkSpec, ctx: &mut NetCtx<T>, x: TensorId) -> TensorId {
    let mut cur = x;
    for i in 0..spec.depth {
        let c = ctx.conv(&format!("d{i}"), cur, 1, 1);
        let a = ctx.g.leaky_relu(c, 0.2);
        cur = ctx.g.blurpool2d(a);
    }
    // pre-sigmoid patch score map
    ctx.conv("score", cur, 1, 1)
}

// ---- super-resolution generator (residual-in-residual dense blocks) -----

fn build_sr_generator<T: Scalar>(spec: &NetworkSpec, r: &mut rng::ChaCha8Rng, s: &mut LayerStack<T>) {
    let nf = spec.base_width;
    let gc = spec.growth;
    push_conv(s, r, "head", nf, spec.in_channels, 3, 3, true);
    for b in 0..spec.rrdb_blocks {
        for d in 0..3 {
            for c in 0..5 {
                let cin = nf + c * gc;
                let cout = if c == 4 { nf } else { gc };
                push_conv(s, r, &format!("rrdb{b}.rdb{d}.c{c}"), cout, cin, 3, 3, true);
            }
        }
    }
    push_conv(s, r, "trunk", nf, nf, 3, 3, true);
    push_conv(s, r, "up0", nf, nf, 3, 3, true);
    push_conv(s, r, "up1", nf, nf, 3, 3, true);
    push_conv(s, r, "hr", nf, nf, 3, 3, true);
    push_conv(s, r, "last", 1, nf, 3, 3, true);
}

fn dense_block<T: Scalar>(ctx: &mut NetCtx<T>, prefix: &str, x: TensorId) -> TensorId {
    let mut cat = x;
    for c in 0..4 {
        let conv = ctx.conv(&format!("{prefix}.c{c}"), cat, 1, 1);
        let a = ctx.g.leaky_relu(conv, 0.2);
        cat = ctx.g.concat0(cat, a);
    }
    let last = ctx.conv(&format!("{prefix}.c4"), cat, 1, 1);
    let scale = ctx.g.scalar(0.2);
    let scaled = ctx.g.mul(last, scale);
    ctx.g.add(x, scaled)
}

fn forward_sr_generator<T: Scalar>(spec: &NetworkSpec, ctx: &mut NetCtx<T>, x: TensorId) -> TensorId {
    let fea = ctx.conv("head", x, 1, 1);
    let mut cur = fea;
    for b in 0..spec.rrdb_blocks {
        let mut inner = cur;
        for d in 0..3 {
            inner = dense_block(ctx, &format!("rrdb{b}.rdb{d}"), inner);
        }
        let scale = ctx.g.scalar(0.2);
        let scaled = ctx.g.mul(inner, scale);
        cur = ctx.g.add(cur, scaled);
    }
    let trunk = ctx.conv("trunk", cur, 1, 1);
    let mut cur = ctx.g.add(fea, trunk);
    for up in ["up0", "up1"] {
        let u = ctx.g.upsample_nearest2x(cur);
        let c = ctx.conv(up, u, 1, 1);
        cur = ctx.g.leaky_relu(c, 0.2);
    }
    let h = ctx.conv("hr", cur, 1, 1);
    let h = ctx.g.leaky_relu(h, 0.2);
    let o = ctx.conv("last", h, 1, 1);
    ctx.g.sigmoid(o)
}

// ---- super-resolution discriminator -------------------------------------

fn build_sr_discriminator<T: Scalar>(spec: &NetworkSpec, r: &mut rng::ChaCha8Rng, s: &mut LayerStack<T>) {
    let w = spec.base_width;
    push_conv(s, r, "c0", w, spec.in_channels, 3, 3, true);
    push_conv(s, r, "c1", w, w, 4, 4, true);
    push_conv(s, r, "c2", 2 * w, w, 3, 3, true);
    push_conv(s, r, "c3", 2 * w, 2 * w, 4, 4, true);
    push_conv(s, r, "c4", 4 * w, 2 * w, 3, 3, true);
    push_conv(s, r, "score", 1, 4 * w, 3, 3, true);
}

/// Scalar critic `[1]` per image (spatial mean of the final score map).
fn forward_sr_discriminator<T: Scalar>(_spec: &NetworkSpec, ctx: &mut NetCtx<T>, x: TensorId) -> TensorId {
    let mut cur = x;
    for (name, stride, pad) in
        [("c0", 1, 1), ("c1", 2, 1), ("c2", 1, 1), ("c3", 2, 1), ("c4", 1, 1)]
    {
        let c = ctx.conv(name, cur, stride, pad);
        cur = ctx.g.leaky_relu(c, 0.2);
    }
    let sc = ctx.conv("score", cur, 1, 1);
    ctx.g.mean(sc)
}

// ---- dense circle detector ----------------------------------------------

fn build_srpsa<T: Scalar>(spec: &NetworkSpec, r: &mut rng::ChaCha8Rng, s: &mut LayerStack<T>) {
    let w = spec.base_width;
    // six convolutions, two max-pools; the last layer emits the four
    // (p, x, y, r) maps at quarter resolution
    push_conv(s, r, "c0", w, spec.in_channels, 3, 3, false);
    push_conv(s, r, "c1", 2 * w, w, 3, 3, false);
    push_conv(s, r, "c2", 2 * w, 2 * w, 3, 3, false);
    push_conv(s, r, "c3", 4 * w, 2 * w, 3, 3, false);
    push_conv(s, r, "c4", 4 * w, 4 * w, 3, 3, false);
    push_conv(s, r, "maps", 4, 4 * w, 1, 1, false);
}

/// Raw `[4, h/4, w/4]` maps; the p channel is pre-sigmoid.
fn forward_srpsa<T: Scalar>(_spec: &NetworkSpec, ctx: &mut NetCtx<T>, x: TensorId) -> TensorId {
    let c = ctx.conv("c0", x, 1, 1);
    let a = ctx.g.relu(c);
    let p = ctx.g.max_pool2d(a, 2, 2);
    let c = ctx.conv("c1", p, 1, 1);
    let a = ctx.g.relu(c);
    let c = ctx.conv("c2", a, 1, 1);
    let a = ctx.g.relu(c);
    let p = ctx.g.max_pool2d(a, 2, 2);
    let c = ctx.conv("c3", p, 1, 1);
    let a = ctx.g.relu(c);
    let c = ctx.conv("c4", a, 1, 1);
    let a = ctx.g.relu(c);
    ctx.conv("maps", a, 1, 0)
}
