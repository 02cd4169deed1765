//! Adam with decoupled weight decay, plus the switching two-time-scale
//! learning-rate schedule used for both GAN stages.

use crate::nn::{LayerStack, ParamKind};
use crate::tensor::Scalar;

/// Per-stack Adam state. Moment buffers follow the stack's entry order;
/// buffer entries get empty slots.
#[derive(Clone)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(stack: &LayerStack<T>, lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        let m = stack
            .entries()
            .iter()
            .map(|p| if p.kind == ParamKind::Trainable { vec![T::zero(); p.data.len()] } else { Vec::new() })
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState { lr, beta1, beta2, eps: 1e-8, weight_decay, t: 0, m, v }
    }
}

/// One bias-corrected update. `grads[i]` pairs with the stack's i-th entry;
/// entries without a gradient are left untouched. Weight decay is decoupled
/// (`lr * wd * theta` subtracted alongside the Adam step).
pub fn adam_step<T: Scalar>(stack: &mut LayerStack<T>, grads: &[Option<&[T]>], st: &mut AdamState<T>) {
    assert_eq!(grads.len(), stack.len(), "gradient slots must match stack entries");
    st.t += 1;
    let b1 = T::from_f64(st.beta1);
    let b2 = T::from_f64(st.beta2);
    let one = T::one();
    let bc1 = T::from_f64(1.0 - st.beta1.powi(st.t as i32));
    let bc2 = T::from_f64(1.0 - st.beta2.powi(st.t as i32));
    let lr = T::from_f64(st.lr);
    let eps = T::from_f64(st.eps);
    let wd = T::from_f64(st.weight_decay);

    for (i, p) in stack.entries_mut().iter_mut().enumerate() {
        if p.kind != ParamKind::Trainable {
            continue;
        }
        let Some(grad) = grads[i] else { continue };
        assert_eq!(grad.len(), p.data.len(), "gradient extent mismatch for {}", p.name);
        let (m, v) = (&mut st.m[i], &mut st.v[i]);
        for j in 0..grad.len() {
            let gj = grad[j];
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            let theta = p.data[j];
            p.data[j] = theta - lr * (mhat / (vhat.sqrt() + eps) + wd * theta);
        }
    }
}

/// Switching two-time-scale schedule: the generator/discriminator rates are
/// exchanged at `switch_epoch`, then both decay by `decay_factor` every
/// `decay_every` epochs.
#[derive(Clone, Copy, Debug)]
pub struct TturSchedule {
    pub lr_g0: f64,
    pub lr_d0: f64,
    pub switch_epoch: usize,
    pub decay_factor: f64,
    pub decay_every: usize,
}

pub fn ttur_rates(epoch: usize, s: &TturSchedule) -> (f64, f64) {
    if epoch < s.switch_epoch {
        (s.lr_g0, s.lr_d0)
    } else {
        let decays = if s.decay_every == 0 { 0 } else { ((epoch - s.switch_epoch) / s.decay_every) as i32 };
        let f = s.decay_factor.powi(decays);
        (s.lr_d0 * f, s.lr_g0 * f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerStack;
    use crate::nn::ParamKind;

    #[test]
    fn zero_gradient_zero_decay_is_a_fixed_point() {
        let mut s = LayerStack::<f64>::new();
        s.push("w", vec![1.5, -2.0], vec![2], ParamKind::Trainable);
        let mut st = AdamState::new(&s, 0.1, 0.9, 0.999, 0.0);
        let g = vec![0.0, 0.0];
        adam_step(&mut s, &[Some(&g)], &mut st);
        assert_eq!(s.get("w").data, vec![1.5, -2.0]);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // theta = 0, g = 1, lr = 0.1: bias-corrected mhat = 1, vhat = 1, so
        // theta_1 = -0.1 / (1 + eps)
        let mut s = LayerStack::<f64>::new();
        s.push("w", vec![0.0], vec![1], ParamKind::Trainable);
        let mut st = AdamState::new(&s, 0.1, 0.9, 0.999, 0.0);
        let g = vec![1.0];
        adam_step(&mut s, &[Some(&g)], &mut st);
        let got = s.get("w").data[0];
        assert!((got + 0.1).abs() < 1e-8, "got {got}");
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut s = LayerStack::<f32>::new();
            s.push("w", vec![0.5f32; 8], vec![8], ParamKind::Trainable);
            let mut st = AdamState::new(&s, 0.01, 0.9, 0.999, 1e-6);
            for k in 0..50 {
                let g: Vec<f32> = (0..8).map(|j| ((j + k) as f32 * 0.37).sin()).collect();
                adam_step(&mut s, &[Some(&g)], &mut st);
            }
            s.get("w").data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_descends_a_convex_quadratic() {
        // f(x) = 0.5 * sum(x^2); gradient = x
        let mut s = LayerStack::<f64>::new();
        s.push("x", vec![3.0, -2.0, 1.0], vec![3], ParamKind::Trainable);
        let mut st = AdamState::new(&s, 0.05, 0.9, 0.999, 0.0);
        let f = |x: &[f64]| 0.5 * x.iter().map(|v| v * v).sum::<f64>();
        let start = f(&s.get("x").data);
        for _ in 0..100 {
            let g = s.get("x").data.clone();
            adam_step(&mut s, &[Some(&g)], &mut st);
        }
        let end = f(&s.get("x").data);
        assert!(end < start * 0.5, "no descent: {start} -> {end}");
    }

    #[test]
    fn ttur_switches_then_decays() {
        let s = TturSchedule {
            lr_g0: 0.005,
            lr_d0: 0.001,
            switch_epoch: 10,
            decay_factor: 0.5,
            decay_every: 10,
        };
        assert_eq!(ttur_rates(0, &s), (0.005, 0.001));
        assert_eq!(ttur_rates(9, &s), (0.005, 0.001));
        assert_eq!(ttur_rates(10, &s), (0.001, 0.005));
        assert_eq!(ttur_rates(20, &s), (0.0005, 0.0025));
        // piecewise constant, exchanged exactly once, non-increasing after
        let mut prev = ttur_rates(10, &s);
        for e in 11..60 {
            let cur = ttur_rates(e, &s);
            assert!(cur.0 <= prev.0 && cur.1 <= prev.1);
            prev = cur;
        }
    }

    #[test]
    fn sr_schedule_example() {
        let s = TturSchedule {
            lr_g0: 0.003,
            lr_d0: 0.001,
            switch_epoch: 5,
            decay_factor: 0.5,
            decay_every: 10,
        };
        assert_eq!(ttur_rates(0, &s), (0.003, 0.001));
        assert_eq!(ttur_rates(5, &s), (0.001, 0.003));
    }
}
