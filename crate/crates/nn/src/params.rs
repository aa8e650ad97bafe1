//! Named parameter trees.
//!
//! Model parameters are plain structs generic over the leaf type: `T =
//! Tensor` for stored weights, `T = Var<'t>` once bound to a tape. The
//! [`param_struct!`] macro derives a name-aware `map` plus [`Module`], so
//! binding, gradient extraction, optimizer steps and checkpoints all walk
//! the same fixed field order.

use std::collections::BTreeMap;

use rand::Rng;

use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;
use crate::NnError;

/// A tree of named tensors.
pub trait Module: Sized {
    type Bound<'t>;

    /// Records every tensor as a leaf of `tape`.
    fn bind<'t>(&self, tape: &'t Tape) -> Self::Bound<'t>;

    /// Gradients for a bound tree, shaped like `Self`.
    fn grads(bound: &Self::Bound<'_>, grads: &Gradients) -> Self;

    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));
}

macro_rules! param_struct {
    (@ty $t:ident, leaf) => { $t };
    (@ty $t:ident, (sub $s:ident)) => { $s<$t> };
    (@ty $t:ident, (list $s:ident)) => { Vec<$s<$t>> };

    (@map $t:ident, leaf, $v:expr, $n:expr, $f:ident) => { $f($n, $v) };
    (@map $t:ident, (sub $s:ident), $v:expr, $n:expr, $f:ident) => {
        $v.map(&mut |name: &str, x: &$t| $f(&format!("{}.{}", $n, name), x))
    };
    (@map $t:ident, (list $s:ident), $v:expr, $n:expr, $f:ident) => {
        $v.iter()
            .enumerate()
            .map(|(i, item)| item.map(&mut |name: &str, x: &$t| $f(&format!("{}.{}.{}", $n, i, name), x)))
            .collect()
    };

    (@visit leaf, $v:expr, $n:expr, $f:ident) => { $f($n, $v) };
    (@visit (sub $s:ident), $v:expr, $n:expr, $f:ident) => {
        $crate::params::Module::visit($v, &mut |name: &str, x: &$crate::tensor::Tensor| $f(&format!("{}.{}", $n, name), x))
    };
    (@visit (list $s:ident), $v:expr, $n:expr, $f:ident) => {
        for (i, item) in $v.iter().enumerate() {
            $crate::params::Module::visit(item, &mut |name: &str, x: &$crate::tensor::Tensor| {
                $f(&format!("{}.{}.{}", $n, i, name), x)
            });
        }
    };

    (@visit_mut leaf, $v:expr, $n:expr, $f:ident) => { $f($n, $v) };
    (@visit_mut (sub $s:ident), $v:expr, $n:expr, $f:ident) => {
        $crate::params::Module::visit_mut($v, &mut |name: &str, x: &mut $crate::tensor::Tensor| {
            $f(&format!("{}.{}", $n, name), x)
        })
    };
    (@visit_mut (list $s:ident), $v:expr, $n:expr, $f:ident) => {
        for (i, item) in $v.iter_mut().enumerate() {
            $crate::params::Module::visit_mut(item, &mut |name: &str, x: &mut $crate::tensor::Tensor| {
                $f(&format!("{}.{}.{}", $n, i, name), x)
            });
        }
    };

    (
        $(#[$meta:meta])*
        pub struct $name:ident {
            $( $(#[$fmeta:meta])* $field:ident : $kind:tt ),* $(,)?
        }
    ) => {
        $(#[$meta])*
        pub struct $name<T = $crate::tensor::Tensor> {
            $( $(#[$fmeta])* pub $field: param_struct!(@ty T, $kind), )*
        }

        impl<T: Clone> Clone for $name<T> {
            fn clone(&self) -> Self {
                $name { $( $field: self.$field.clone(), )* }
            }
        }

        impl<T: PartialEq> PartialEq for $name<T> {
            fn eq(&self, other: &Self) -> bool {
                true $( && self.$field == other.$field )*
            }
        }

        impl<T: std::fmt::Debug> std::fmt::Debug for $name<T> {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.debug_struct(stringify!($name))
                    $( .field(stringify!($field), &self.$field) )*
                    .finish()
            }
        }

        impl<T> $name<T> {
            /// Applies `f` to every leaf with its dotted name.
            pub fn map<U>(&self, f: &mut dyn FnMut(&str, &T) -> U) -> $name<U> {
                $name {
                    $( $field: param_struct!(@map T, $kind, &self.$field, stringify!($field), f), )*
                }
            }
        }

        impl $crate::params::Module for $name<$crate::tensor::Tensor> {
            type Bound<'t> = $name<$crate::tape::Var<'t>>;

            fn bind<'t>(&self, tape: &'t $crate::tape::Tape) -> Self::Bound<'t> {
                self.map(&mut |_, t| tape.leaf(t.clone()))
            }

            fn grads(bound: &Self::Bound<'_>, grads: &$crate::tape::Gradients) -> Self {
                bound.map(&mut |_, v| grads.get(*v))
            }

            fn visit(&self, f: &mut dyn FnMut(&str, &$crate::tensor::Tensor)) {
                $( param_struct!(@visit $kind, &self.$field, stringify!($field), f); )*
            }

            fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut $crate::tensor::Tensor)) {
                $( param_struct!(@visit_mut $kind, &mut self.$field, stringify!($field), f); )*
            }
        }
    };
}

param_struct! {
    /// `y = x·Wᵀ + b` on row vectors; `weight` is `[out, in]`, `bias` `[1, out]`.
    pub struct Linear {
        weight: leaf,
        bias: leaf,
    }
}

param_struct! {
    /// Per-row normalization followed by a learned scale and shift, both `[1, d]`.
    pub struct Norm {
        scale: leaf,
        shift: leaf,
    }
}

impl Linear {
    /// Gaussian weights with variance `1 / in`, zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::randn(&[outputs, inputs], (1.0 / inputs.max(1) as f64).sqrt(), rng),
            bias: Tensor::zeros(&[1, outputs]),
        }
    }
}

impl<'t> Linear<Var<'t>> {
    pub fn apply(&self, x: Var<'t>) -> Var<'t> {
        x.matmul(self.weight.t()).add(self.bias)
    }
}

impl Norm {
    pub fn init(dim: usize) -> Self {
        Self {
            scale: Tensor::filled(&[1, dim], 1.0),
            shift: Tensor::zeros(&[1, dim]),
        }
    }
}

pub const NORM_EPS: f64 = 1e-5;

impl<'t> Norm<Var<'t>> {
    pub fn apply(&self, x: Var<'t>) -> Var<'t> {
        x.row_norm(NORM_EPS).mul(self.scale).add(self.shift)
    }
}

/// Every tensor of a tree, by dotted name, in visiting order.
pub fn named_tensors<M: Module>(module: &M) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    module.visit(&mut |name, t| out.push((name.to_string(), t.clone())));
    out
}

pub fn parameter_count<M: Module>(module: &M) -> usize {
    let mut n = 0;
    module.visit(&mut |_, t| n += t.len());
    n
}

/// Overwrites every tensor of `module` from `source`; names and shapes
/// must match exactly.
pub fn load_named<M: Module>(module: &mut M, source: &BTreeMap<String, Tensor>) -> Result<(), NnError> {
    let mut error = None;
    module.visit_mut(&mut |name, t| {
        if error.is_some() {
            return;
        }
        match source.get(name) {
            None => error = Some(NnError::MissingTensor(name.to_string())),
            Some(src) if src.shape() != t.shape() => {
                error = Some(NnError::Shape {
                    what: name.to_string(),
                    expected: t.shape().to_vec(),
                    found: src.shape().to_vec(),
                })
            }
            Some(src) => *t = src.clone(),
        }
    });
    error.map_or(Ok(()), Err)
}

/// Gradient descent with optional heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step<M: Module>(&mut self, params: &mut M, grads: &M) {
        let mut flat = Vec::new();
        grads.visit(&mut |_, g| flat.push(g.clone()));
        if self.velocity.len() != flat.len() {
            self.velocity = flat.iter().map(|g| Tensor::zeros(g.shape())).collect();
        }
        let (lr, mu) = (self.lr, self.momentum);
        let mut k = 0;
        let velocity = &mut self.velocity;
        params.visit_mut(&mut |_, p| {
            let v = &mut velocity[k];
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(flat[k].data()) {
                *vv = mu * *vv + gv;
                *pv -= lr * *vv;
            }
            k += 1;
        });
    }
}

/// Sums gradient trees elementwise into `acc`.
pub fn accumulate<M: Module>(acc: &mut M, grads: &M) {
    let mut flat = Vec::new();
    grads.visit(&mut |_, g| flat.push(g.clone()));
    let mut k = 0;
    acc.visit_mut(&mut |_, a| {
        a.add_assign(&flat[k]);
        k += 1;
    });
}

/// Multiplies every tensor of a tree by `s`.
pub fn scale_all<M: Module>(m: &mut M, s: f64) {
    m.visit_mut(&mut |_, t| t.data_mut().iter_mut().for_each(|v| *v *= s));
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    param_struct! {
        pub struct Pair {
            first: (sub Linear),
            rest: (list Linear),
            gain: leaf,
        }
    }

    fn pair() -> Pair {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Pair {
            first: Linear::init(2, 3, &mut rng),
            rest: vec![Linear::init(3, 1, &mut rng)],
            gain: Tensor::scalar(2.0),
        }
    }

    #[test]
    fn names_follow_field_order() {
        let names: Vec<String> = named_tensors(&pair()).into_iter().map(|(n, _)| n).collect();
        assert_eq!(
            names,
            ["first.weight", "first.bias", "rest.0.weight", "rest.0.bias", "gain"]
        );
        assert_eq!(parameter_count(&pair()), 6 + 3 + 3 + 1 + 1);
    }

    #[test]
    fn load_checks_names_and_shapes() {
        let src: BTreeMap<String, Tensor> = named_tensors(&pair()).into_iter().collect();
        let mut target = pair();
        scale_all(&mut target, 0.0);
        load_named(&mut target, &src).unwrap();
        assert_eq!(target, pair());

        let mut bad = src.clone();
        bad.insert("gain".into(), Tensor::zeros(&[2, 2]));
        assert!(matches!(load_named(&mut target, &bad), Err(NnError::Shape { .. })));
        bad.remove("gain");
        assert!(matches!(load_named(&mut target, &bad), Err(NnError::MissingTensor(n)) if n == "gain"));
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut p = pair();
        let before = p.gain.data()[0];
        let tape = Tape::new();
        let b = p.bind(&tape);
        let loss = b.gain.mul(b.gain).sum();
        let g = Pair::grads(&b, &loss.backward());
        let mut opt = Sgd::new(0.1, 0.0);
        opt.step(&mut p, &g);
        assert!((p.gain.data()[0] - (before - 0.1 * 2.0 * before)).abs() < 1e-12);
        assert_eq!(g.first.weight, Tensor::zeros(&[3, 2]));
    }
}
