//! Reverse-mode gradient tape over a closed operation set.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and backward is a single reverse sweep. Reductions to
//! scalars keep an exact `f64` copy of their value next to the `T` tensor.

use std::hash::{Hash, Hasher};

use super::conv;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::ssim::{self, SsimConfig};

/// `softplus(1 - SOFTPLUS_SHIFT) == 1`, so a unit pre-activation emits `h = 1`.
pub const SOFTPLUS_SHIFT: f64 = 0.458_675_145_387_081_8;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Input,
    Param(usize),
    Conv3x3 { x: Var, weight: Var },
    BiasAdd { x: Var, bias: Var },
    Relu(Var),
    ShiftedSoftplus(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Abs(Var),
    PowConst(Var, f64),
    Affine { x: Var, scale: f64 },
    Mean(Var),
    Ssim { a: Var, b: Var, cfg: SsimConfig },
    WeightedSum(Vec<(Var, f64)>),
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op,
    value: Tensor<T>,
    scalar: Option<f64>,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward sweep.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(usize, usize)>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// `(parameter index, gradient)` for every parameter node that received
    /// a gradient, in tape order.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &[T])> + '_ {
        self.params
            .iter()
            .filter_map(|&(param, node)| self.grads[node].as_deref().map(|g| (param, g)))
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor<T>, scalar: Option<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            scalar,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    /// Exact value of a scalar node.
    pub fn scalar(&self, v: Var) -> f64 {
        let node = self.node(v);
        node.scalar.unwrap_or_else(|| node.value.data()[0].to_f64())
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Constant, value, None, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Input, value, None, true)
    }

    /// A leaf bound to parameter `index` of a parameter store.
    pub fn param(&mut self, index: usize, value: Tensor<T>) -> Var {
        self.push(Op::Param(index), value, None, true)
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            Ok(())
        } else {
            Err(Error::shape(format!("{sa:?}"), format!("{sb:?}")))
        }
    }

    fn unary(&mut self, op: Op, x: Var, f: impl Fn(f64) -> f64) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| T::from_f64(f(v.to_f64()))).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("shape preserved");
        let rg = self.needs(&[x]);
        self.push(op, value, None, rg)
    }

    /// 3x3 stride-1 convolution with symmetric padding. `weight` is
    /// `[out, in, 3, 3]`.
    pub fn conv3x3(&mut self, x: Var, weight: Var) -> Result<Var> {
        let (c_in, h, w) = self.value(x).chw()?;
        let ws = self.value(weight).shape().to_vec();
        if ws.len() != 4 || ws[1] != c_in || ws[2] != conv::K || ws[3] != conv::K {
            return Err(Error::shape(format!("[out, {c_in}, 3, 3]"), format!("{ws:?}")));
        }
        let c_out = ws[0];
        let out = conv::forward(self.value(x).data(), c_in, h, w, self.value(weight).data(), c_out);
        let value = Tensor::new(vec![c_out, h, w], out)?;
        let rg = self.needs(&[x, weight]);
        Ok(self.push(Op::Conv3x3 { x, weight }, value, None, rg))
    }

    /// Adds `bias[c]` to every element of channel `c`.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if self.value(bias).len() != c {
            return Err(Error::shape(format!("{c} biases"), self.value(bias).len()));
        }
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for (ch, chunk) in data.chunks_mut(h * w).enumerate() {
            chunk.iter_mut().for_each(|v| *v += b[ch]);
        }
        let value = Tensor::new(vec![c, h, w], data)?;
        let rg = self.needs(&[x, bias]);
        Ok(self.push(Op::BiasAdd { x, bias }, value, None, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Op::Relu(x), x, |v| v.max(0.0))
    }

    /// `softplus(x - SOFTPLUS_SHIFT)`, floored at the smallest positive
    /// normal so the output is strictly positive.
    pub fn shifted_softplus(&mut self, x: Var) -> Var {
        let floor = T::MIN_POSITIVE.to_f64();
        self.unary(Op::ShiftedSoftplus(x), x, move |v| {
            softplus(v - SOFTPLUS_SHIFT).max(floor)
        })
    }

    fn binary(&mut self, op: Op, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(op, value, None, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(Op::Abs(x), x, f64::abs)
    }

    /// `max(x, 0)^p`.
    pub fn pow_const(&mut self, x: Var, p: f64) -> Var {
        self.unary(Op::PowConst(x, p), x, move |v| {
            if v > 0.0 {
                v.powf(p)
            } else if p == 0.0 {
                1.0
            } else {
                0.0
            }
        })
    }

    /// `scale * x + offset`; keeps scalar values exact.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Var {
        let scalar = self.node(x).scalar.map(|s| scale * s + offset);
        let v = self.unary(Op::Affine { x, scale }, x, move |v| scale * v + offset);
        if let Some(s) = scalar {
            self.nodes[v.0].scalar = Some(s);
            self.nodes[v.0].value = Tensor::scalar(T::from_f64(s));
        }
        v
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let m = src.data().iter().map(|v| v.to_f64()).sum::<f64>() / src.len() as f64;
        let rg = self.needs(&[x]);
        self.push(Op::Mean(x), Tensor::scalar(T::from_f64(m)), Some(m), rg)
    }

    /// Mean SSIM between two `[c, h, w]` tensors.
    pub fn ssim(&mut self, a: Var, b: Var, cfg: SsimConfig) -> Result<Var> {
        self.same_shape(a, b)?;
        let (c, h, w) = self.value(a).chw()?;
        let s = ssim::mean_ssim(
            &self.value(a).to_f64_vec(),
            &self.value(b).to_f64_vec(),
            c,
            h,
            w,
            &cfg,
        )?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Ssim { a, b, cfg }, Tensor::scalar(T::from_f64(s)), Some(s), rg))
    }

    /// `sum_i weight_i * term_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, wt) in terms {
            if self.value(v).len() != 1 {
                return Err(Error::shape("scalar term", format!("{:?}", self.value(v).shape())));
            }
            total += wt * self.scalar(v);
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.needs(&vars);
        Ok(self.push(
            Op::WeightedSum(terms.to_vec()),
            Tensor::scalar(T::from_f64(total)),
            Some(total),
            rg,
        ))
    }

    /// Hash of the active branch of every piecewise op (ReLU, abs, the power
    /// floor). Two evaluations with equal signatures lie on the same smooth
    /// piece.
    pub fn kink_signature(&self) -> u64 {
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            let input = match node.op {
                Op::Relu(x) | Op::Abs(x) | Op::PowConst(x, _) => x,
                _ => continue,
            };
            for v in self.value(input).data() {
                let v = v.to_f64();
                ((v > 0.0) as u8 | (((v < 0.0) as u8) << 1)).hash(&mut hasher);
            }
        }
        hasher.finish()
    }

    /// Propagates `seed * d(root)` back through the tape, consuming it.
    pub fn backward(self, root: Var, seed: f64) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || root.0 >= self.nodes.len() {
            return Err(Error::BackwardWithoutForward);
        }
        if self.value(root).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[root.0] = Some(vec![T::from_f64(seed)]);
        let mut params = Vec::new();

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if let Op::Param(p) = node.op {
                params.push((p, i));
            }
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        params.reverse();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::Conv3x3 { x, weight } => {
                let (c_in, h, w) = self.value(*x).chw()?;
                let c_out = self.value(*weight).shape()[0];
                let (gx, gw) = conv::backward(
                    self.value(*x).data(),
                    c_in,
                    h,
                    w,
                    self.value(*weight).data(),
                    c_out,
                    g,
                    rg(*x),
                );
                if let Some(gx) = gx {
                    accumulate(grads, *x, gx);
                }
                if rg(*weight) {
                    accumulate(grads, *weight, gw);
                }
            }
            Op::BiasAdd { x, bias } => {
                if rg(*x) {
                    accumulate(grads, *x, g.to_vec());
                }
                if rg(*bias) {
                    let c = self.value(*bias).len();
                    let plane = g.len() / c;
                    let gb = g
                        .chunks(plane)
                        .map(|ch| T::from_f64(ch.iter().map(|v| v.to_f64()).sum()))
                        .collect();
                    accumulate(grads, *bias, gb);
                }
            }
            Op::Relu(x) => {
                let xs = self.value(*x).data();
                let gx = g
                    .iter()
                    .zip(xs)
                    .map(|(&gi, &xi)| if xi > T::ZERO { gi } else { T::ZERO })
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::ShiftedSoftplus(x) => {
                let xs = self.value(*x).data();
                let gx = g
                    .iter()
                    .zip(xs)
                    .map(|(&gi, &xi)| {
                        T::from_f64(gi.to_f64() * sigmoid(xi.to_f64() - SOFTPLUS_SHIFT))
                    })
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if rg(*v) {
                        accumulate(grads, *v, g.to_vec());
                    }
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if rg(*b) {
                    accumulate(grads, *b, g.iter().map(|&v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if rg(*a) {
                    accumulate(grads, *a, g.iter().zip(vb).map(|(&gi, &y)| gi * y).collect());
                }
                if rg(*b) {
                    accumulate(grads, *b, g.iter().zip(va).map(|(&gi, &x)| gi * x).collect());
                }
            }
            Op::Abs(x) => {
                let xs = self.value(*x).data();
                let gx = g
                    .iter()
                    .zip(xs)
                    .map(|(&gi, &xi)| {
                        if xi > T::ZERO {
                            gi
                        } else if xi < T::ZERO {
                            -gi
                        } else {
                            T::ZERO
                        }
                    })
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::PowConst(x, p) => {
                let xs = self.value(*x).data();
                let gx = g
                    .iter()
                    .zip(xs)
                    .map(|(&gi, &xi)| {
                        let xv = xi.to_f64();
                        if xv > 0.0 {
                            T::from_f64(gi.to_f64() * p * xv.powf(p - 1.0))
                        } else {
                            T::ZERO
                        }
                    })
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                accumulate(grads, *x, g.iter().map(|&v| T::from_f64(v.to_f64() * s)).collect());
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                let share = T::from_f64(g[0].to_f64() / n as f64);
                accumulate(grads, *x, vec![share; n]);
            }
            Op::Ssim { a, b, cfg } => {
                let (c, h, w) = self.value(*a).chw()?;
                let (_, ga, gb) = ssim::mean_ssim_with_grad(
                    &self.value(*a).to_f64_vec(),
                    &self.value(*b).to_f64_vec(),
                    c,
                    h,
                    w,
                    cfg,
                )?;
                let up = g[0].to_f64();
                if rg(*a) {
                    accumulate(grads, *a, ga.iter().map(|&v| T::from_f64(up * v)).collect());
                }
                if rg(*b) {
                    accumulate(grads, *b, gb.iter().map(|&v| T::from_f64(up * v)).collect());
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, wt) in terms {
                    if rg(v) {
                        accumulate(grads, v, vec![T::from_f64(g[0].to_f64() * wt)]);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_makes_unit_bias_emit_one() {
        assert!((softplus(1.0 - SOFTPLUS_SHIFT) - 1.0).abs() < 1e-15);
        assert!((SOFTPLUS_SHIFT - (1.0 - (std::f64::consts::E - 1.0).ln())).abs() < 1e-15);
    }

    #[test]
    fn backward_on_empty_tape_is_an_error() {
        let tape = Tape::<f32>::new();
        assert!(matches!(tape.backward(Var(0), 1.0), Err(Error::BackwardWithoutForward)));
    }

    #[test]
    fn zero_seed_gives_zero_gradients() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::new(vec![1, 2, 2], vec![0.1, -0.4, 0.3, 0.9]).unwrap());
        let w = tape.param(0, Tensor::filled(vec![2, 1, 3, 3], 0.2));
        let y = tape.conv3x3(x, w).unwrap();
        let r = tape.relu(y);
        let m = tape.mean(r);
        let grads = tape.backward(m, 0.0).unwrap();
        assert!(grads.wrt(x).unwrap().iter().all(|&v| v == 0.0));
        let (idx, gw) = grads.param_grads().next().unwrap();
        assert_eq!(idx, 0);
        assert!(gw.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_stays_exact() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        let m = tape.mean(x);
        let a = tape.affine(m, 3.0, 1.0);
        let s = tape.weighted_sum(&[(m, 2.0), (a, 0.5)]).unwrap();
        let mean = (0.1f32 as f64 + 0.2f32 as f64 + 0.3f32 as f64) / 3.0;
        assert_eq!(tape.scalar(s), 2.0 * mean + 0.5 * (3.0 * mean + 1.0));
        let grads = tape.backward(s, 1.0).unwrap();
        for &g in grads.wrt(x).unwrap() {
            assert!((g - 3.5 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::filled(vec![4], 1.0));
        let y = tape.relu(x);
        assert!(tape.backward(y, 1.0).is_err());
    }
}
