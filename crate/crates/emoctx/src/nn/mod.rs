//! A small convolutional network framework on `ndarray`.
//!
//! Layers are concrete structs with three entry points: `forward_train`
//! caches what the backward pass needs, `backward` consumes that cache
//! and accumulates parameter gradients, and `infer` runs statelessly on
//! `&self`. Tensors are f32 in `[batch, channel, height, width]` order
//! for convolutional features and `[batch, feature]` for fully
//! connected ones.
//!
//! Batch-level work fans out through [`crate::exec`], one sample per
//! slot, and gradient contributions are reduced in sample order, so
//! parallel and sequential execution produce bitwise identical results.

pub mod layers;
pub mod resnet;

pub use layers::{BatchNorm2d, Conv2d, Dropout, GlobalAvgPool, Linear, MaxPool2d, Relu};
pub use resnet::{Block, ResNet};

use ndarray::ArrayD;

/// One learnable tensor with its gradient and momentum accumulators.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
    pub momentum: ArrayD<f32>,
}

impl Param {
    pub fn new(value: ArrayD<f32>) -> Param {
        let grad = ArrayD::zeros(value.raw_dim());
        let momentum = ArrayD::zeros(value.raw_dim());
        Param {
            value,
            grad,
            momentum,
        }
    }
}

/// One named tensor yielded during a state walk. Trainable parameters
/// carry their gradient and momentum buffers; running statistics and
/// other buffers carry `None`.
pub struct Visited<'a> {
    pub name: String,
    pub value: &'a mut ArrayD<f32>,
    pub train: Option<(&'a mut ArrayD<f32>, &'a mut ArrayD<f32>)>,
}

/// Walk every stateful tensor of a module, depth first, in a fixed
/// order. Names are dotted paths ("layer1.0.conv1.weight").
pub trait Visit {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(Visited<'_>));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn visit_param(
    p: &mut Param,
    prefix: &str,
    name: &str,
    f: &mut dyn FnMut(Visited<'_>),
) {
    f(Visited {
        name: join(prefix, name),
        value: &mut p.value,
        train: Some((&mut p.grad, &mut p.momentum)),
    });
}

/// Number of trainable scalar parameters.
pub fn param_count(m: &mut dyn Visit) -> usize {
    let mut n = 0;
    m.visit("", &mut |v| {
        if v.train.is_some() {
            n += v.value.len();
        }
    });
    n
}

/// Clear accumulated gradients.
pub fn zero_grad(m: &mut dyn Visit) {
    m.visit("", &mut |v| {
        if let Some((grad, _)) = v.train {
            grad.fill(0.0);
        }
    });
}

/// Stochastic gradient descent with classical momentum:
/// `buf = momentum * buf + grad; value -= lr * buf`.
#[derive(Debug, Clone, Copy)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
}

impl Sgd {
    pub fn step(&self, m: &mut dyn Visit) {
        let (lr, mo) = (self.lr, self.momentum);
        m.visit("", &mut |v| {
            if let Some((grad, buf)) = v.train {
                buf.zip_mut_with(grad, |b, &g| *b = mo * *b + g);
                v.value.zip_mut_with(buf, |p, &b| *p -= lr * b);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    struct OneParam(Param);

    impl Visit for OneParam {
        fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(Visited<'_>)) {
            visit_param(&mut self.0, prefix, "w", f);
        }
    }

    #[test]
    fn sgd_momentum_recurrence() {
        let mut m = OneParam(Param::new(arr1(&[1.0f32]).into_dyn()));
        let sgd = Sgd {
            lr: 0.1,
            momentum: 0.9,
        };
        // Constant gradient 1.0 for three steps.
        let mut buf = 0.0f32;
        let mut val = 1.0f32;
        for _ in 0..3 {
            m.0.grad.fill(1.0);
            sgd.step(&mut m);
            buf = 0.9 * buf + 1.0;
            val -= 0.1 * buf;
            assert_eq!(m.0.value[[0]], val);
            assert_eq!(m.0.momentum[[0]], buf);
        }
    }

    #[test]
    fn zero_grad_clears() {
        let mut m = OneParam(Param::new(arr1(&[1.0f32, 2.0]).into_dyn()));
        m.0.grad.fill(3.0);
        zero_grad(&mut m);
        assert!(m.0.grad.iter().all(|&g| g == 0.0));
        assert_eq!(param_count(&mut m), 2);
    }
}
