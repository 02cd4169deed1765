//! Network building blocks: named parameter stacks, spectral normalization,
//! self-attention, and the builders/forwards for the four GAN networks plus
//! the detector CNN.

pub mod attention;
pub mod networks;
pub mod spectral;

#[cfg(test)]
mod tests;

use std::collections::HashMap;

use crate::rng;
use crate::tensor::{Graph, Scalar, TensorId};

/// Whether a stack entry receives optimizer updates.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ParamKind {
    Trainable,
    /// Persistent state that is saved/loaded but not optimized (power
    /// iteration vectors).
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub data: Vec<T>,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

/// Ordered, named parameter collection for one network. Entry order is the
/// serialization order and the optimizer traversal order.
#[derive(Clone, Default)]
pub struct LayerStack<T> {
    entries: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> LayerStack<T> {
    pub fn new() -> Self {
        LayerStack { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn push(&mut self, name: &str, data: Vec<T>, shape: Vec<usize>, kind: ParamKind) {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "param {name}: data/shape mismatch");
        assert!(
            self.index.insert(name.to_string(), self.entries.len()).is_none(),
            "duplicate parameter name {name}"
        );
        self.entries.push(Param { name: name.to_string(), data, shape, kind });
    }

    pub fn idx(&self, name: &str) -> usize {
        *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get(&self, name: &str) -> &Param<T> {
        &self.entries[self.idx(name)]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param<T> {
        let i = self.idx(name);
        &mut self.entries[i]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn entries(&self) -> &[Param<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Param<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }

    /// Convert element type (f32 stacks for training, f64 for grad checks).
    pub fn cast<U: Scalar>(&self) -> LayerStack<U> {
        let mut out = LayerStack::new();
        for p in &self.entries {
            out.push(
                &p.name,
                p.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
                p.shape.clone(),
                p.kind,
            );
        }
        out
    }

    /// Copy every entry under a name prefix into `dst` (used to pack
    /// generator + discriminator into one checkpoint).
    pub fn copy_prefixed_into(&self, prefix: &str, dst: &mut LayerStack<T>) {
        for p in &self.entries {
            dst.push(&format!("{prefix}{}", p.name), p.data.clone(), p.shape.clone(), p.kind);
        }
    }

    /// Extract the entries under `prefix`, stripping it.
    pub fn strip_prefix(&self, prefix: &str) -> LayerStack<T> {
        let mut out = LayerStack::new();
        for p in &self.entries {
            if let Some(rest) = p.name.strip_prefix(prefix) {
                out.push(rest, p.data.clone(), p.shape.clone(), p.kind);
            }
        }
        out
    }
}

/// Graph leaves for every stack entry, in entry order. Trainable entries are
/// differentiable leaves; buffers are constants.
pub struct Bound {
    pub ids: Vec<TensorId>,
}

pub fn bind<T: Scalar>(g: &mut Graph<T>, stack: &LayerStack<T>) -> Bound {
    let ids = stack
        .entries()
        .iter()
        .map(|p| g.leaf(p.data.clone(), p.shape.clone(), p.kind == ParamKind::Trainable))
        .collect();
    Bound { ids }
}

/// Forward-pass context: graph plus the stack binding it reads parameters
/// through.
pub struct NetCtx<'g, 's, T: Scalar> {
    pub g: &'g mut Graph<T>,
    pub stack: &'s LayerStack<T>,
    pub bound: &'s Bound,
}

impl<T: Scalar> NetCtx<'_, '_, T> {
    pub fn p(&self, name: &str) -> TensorId {
        self.bound.ids[self.stack.idx(name)]
    }

    /// Convolution with bias; applies spectral normalization first when the
    /// layer carries power-iteration buffers.
    pub fn conv(&mut self, name: &str, x: TensorId, stride: usize, pad: usize) -> TensorId {
        let w = self.p(&format!("{name}.w"));
        let w = if self.stack.contains(&format!("{name}.sn_u")) {
            let u = self.p(&format!("{name}.sn_u"));
            let v = self.p(&format!("{name}.sn_v"));
            spectral::spectral_norm_in_graph(self.g, w, u, v, 1.0)
        } else {
            w
        };
        let y = self.g.conv2d(x, w, stride, pad);
        let b = self.p(&format!("{name}.b"));
        self.g.add(y, b)
    }

    pub fn conv_transpose(&mut self, name: &str, x: TensorId, stride: usize) -> TensorId {
        let w = self.p(&format!("{name}.w"));
        let y = self.g.conv_transpose2d(x, w, stride, 0);
        let b = self.p(&format!("{name}.b"));
        self.g.add(y, b)
    }
}

/// He-normal convolution weights (variance 2/fan_in), zero bias, optional
/// spectral-norm buffers.
pub fn push_conv<T: Scalar>(
    stack: &mut LayerStack<T>,
    rng: &mut rng::ChaCha8Rng,
    name: &str,
    c_out: usize,
    c_in: usize,
    kh: usize,
    kw: usize,
    sn: bool,
) {
    let fan_in = c_in * kh * kw;
    let std = (2.0 / fan_in as f64).sqrt();
    let w: Vec<T> = (0..c_out * fan_in).map(|_| T::from_f64(rng::normal(rng) * std)).collect();
    stack.push(&format!("{name}.w"), w, vec![c_out, c_in, kh, kw], ParamKind::Trainable);
    stack.push(&format!("{name}.b"), vec![T::zero(); c_out], vec![c_out, 1, 1], ParamKind::Trainable);
    if sn {
        let mut u: Vec<f64> = (0..c_out).map(|_| rng::normal(rng)).collect();
        normalize(&mut u);
        let mut v: Vec<f64> = (0..fan_in).map(|_| rng::normal(rng)).collect();
        normalize(&mut v);
        stack.push(
            &format!("{name}.sn_u"),
            u.into_iter().map(T::from_f64).collect(),
            vec![1, c_out],
            ParamKind::Buffer,
        );
        stack.push(
            &format!("{name}.sn_v"),
            v.into_iter().map(T::from_f64).collect(),
            vec![fan_in, 1],
            ParamKind::Buffer,
        );
    }
}

/// Transposed-convolution parameters, kernel `[c_in, c_out, kh, kw]`.
pub fn push_conv_transpose<T: Scalar>(
    stack: &mut LayerStack<T>,
    rng: &mut rng::ChaCha8Rng,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
) {
    let fan_in = c_in * k * k;
    let std = (2.0 / fan_in as f64).sqrt();
    let w: Vec<T> = (0..c_in * c_out * k * k).map(|_| T::from_f64(rng::normal(rng) * std)).collect();
    stack.push(&format!("{name}.w"), w, vec![c_in, c_out, k, k], ParamKind::Trainable);
    stack.push(&format!("{name}.b"), vec![T::zero(); c_out], vec![c_out, 1, 1], ParamKind::Trainable);
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in v {
        *x /= n;
    }
}

/// Refresh every spectral-norm buffer pair in the stack with `iters` power
/// iterations against the current weights. Call once per training step,
/// before binding the stack into a graph.
pub fn refresh_spectral_buffers<T: Scalar>(stack: &mut LayerStack<T>, iters: usize) {
    let names: Vec<String> = stack
        .entries()
        .iter()
        .filter_map(|p| p.name.strip_suffix(".sn_u").map(str::to_string))
        .collect();
    for base in names {
        let w = stack.get(&format!("{base}.w"));
        let co = w.shape[0];
        let rest: usize = w.shape[1..].iter().product();
        let wdata = w.data.clone();
        let (mut u, mut v) = (
            stack.get(&format!("{base}.sn_u")).data.clone(),
            stack.get(&format!("{base}.sn_v")).data.clone(),
        );
        spectral::power_iterate(&wdata, co, rest, &mut u, &mut v, iters);
        stack.get_mut(&format!("{base}.sn_u")).data = u;
        stack.get_mut(&format!("{base}.sn_v")).data = v;
    }
}
