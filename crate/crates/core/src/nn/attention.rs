//! Self-attention block for convolutional feature maps: three 1x1
//! convolutions form an attention map over all spatial positions, a fourth
//! projects back, and a learnable gamma (initialized to zero) gates the
//! residual so the block starts as an exact identity.

use super::{push_conv, LayerStack, NetCtx, ParamKind};
use crate::rng;
use crate::tensor::{Scalar, TensorId};

/// Channel widths used inside a block for `c` input channels.
pub fn inner_widths(c: usize) -> (usize, usize) {
    ((c / 8).max(1), (c / 2).max(1))
}

pub fn push_self_attention<T: Scalar>(
    stack: &mut LayerStack<T>,
    rng: &mut rng::ChaCha8Rng,
    prefix: &str,
    c: usize,
) {
    let (cf, ch) = inner_widths(c);
    push_conv(stack, rng, &format!("{prefix}.f"), cf, c, 1, 1, false);
    push_conv(stack, rng, &format!("{prefix}.g"), cf, c, 1, 1, false);
    push_conv(stack, rng, &format!("{prefix}.h"), ch, c, 1, 1, false);
    push_conv(stack, rng, &format!("{prefix}.v"), c, ch, 1, 1, false);
    stack.push(&format!("{prefix}.gamma"), vec![T::zero()], vec![1], ParamKind::Trainable);
}

/// `y = gamma * v(attention . h(x)) + x`; rows of the attention map are a
/// softmax and sum to one.
pub fn self_attention_forward<T: Scalar>(ctx: &mut NetCtx<T>, prefix: &str, x: TensorId) -> TensorId {
    self_attention_with_map(ctx, prefix, x).0
}

/// Forward pass that also returns the `[n, n]` attention map.
pub fn self_attention_with_map<T: Scalar>(
    ctx: &mut NetCtx<T>,
    prefix: &str,
    x: TensorId,
) -> (TensorId, TensorId) {
    let shape = ctx.g.shape(x).to_vec();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let n = h * w;
    let (cf, ch) = inner_widths(c);

    let f = ctx.conv(&format!("{prefix}.f"), x, 1, 0);
    let gm = ctx.conv(&format!("{prefix}.g"), x, 1, 0);
    let hm = ctx.conv(&format!("{prefix}.h"), x, 1, 0);

    let f2 = ctx.g.reshape(f, vec![cf, n]);
    let g2 = ctx.g.reshape(gm, vec![cf, n]);
    let h2 = ctx.g.reshape(hm, vec![ch, n]);

    let ft = ctx.g.transpose(f2);
    let scores = ctx.g.matmul(ft, g2); // [n, n]
    let attn = ctx.g.softmax(scores, 1);
    let attn_t = ctx.g.transpose(attn);
    let o = ctx.g.matmul(h2, attn_t); // [ch, n]
    let o_img = ctx.g.reshape(o, vec![ch, h, w]);
    let v = ctx.conv(&format!("{prefix}.v"), o_img, 1, 0);

    let gamma = ctx.p(&format!("{prefix}.gamma"));
    let gated = ctx.g.mul(v, gamma);
    (ctx.g.add(gated, x), attn)
}
