//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Operations are recorded in execution order, so node indices are already a
//! topological order. `backward` walks the tape once in reverse and can only
//! be run once per tape.

use std::cell::{Cell, Ref, RefCell};

use crate::error::{Error, Result};
use crate::kernels::{self, sigmoid, Conv2dSpec};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type CustomBackward = Box<dyn Fn(&[&Tensor], &Tensor, &Tensor) -> Vec<Option<Tensor>>>;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Silu(usize),
    Softmax {
        x: usize,
        axis: usize,
        temperature: f64,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        spec: Conv2dSpec,
    },
    AvgPool2d {
        x: usize,
        window: (usize, usize),
    },
    SumAxis {
        x: usize,
        axis: usize,
    },
    MeanAxis {
        x: usize,
        axis: usize,
    },
    SumAll(usize),
    Reshape(usize),
    Permute {
        x: usize,
        perm: Vec<usize>,
    },
    Narrow {
        x: usize,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<usize>,
        axis: usize,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        normalized: Tensor,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    DynCombine {
        ys: Vec<usize>,
        pi: usize,
    },
    Bce {
        pred: usize,
        target: usize,
    },
    Custom {
        inputs: Vec<usize>,
        backward: CustomBackward,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-channel statistics computed by a batch-statistics normalization.
#[derive(Clone, Debug)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    /// Biased variance.
    pub var: Vec<f64>,
    pub count: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by `Var`.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub const BN_EPS: f64 = 1e-5;
const BCE_EPS: f64 = 1e-7;

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push_raw(value, Op::Leaf, requires_grad)
    }

    pub fn param(&self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn push_raw(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn push(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let rg = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        self.push_raw(value, op, rg)
    }

    fn binary(&self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        ta.zip_map(tb, f).map_err(|_| {
            Error::shape(name, format!("{:?} vs {:?}", ta.shape(), tb.shape()))
        })
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        self.nodes.borrow()[a.0].value.map(f)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let v = self.unary(a, |x| x * c);
        self.push(v, Op::Scale(a.0, c), &[a.0])
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let v = self.unary(a, sigmoid);
        self.push(v, Op::Sigmoid(a.0), &[a.0])
    }

    pub fn tanh(&self, a: Var) -> Var {
        let v = self.unary(a, f64::tanh);
        self.push(v, Op::Tanh(a.0), &[a.0])
    }

    pub fn relu(&self, a: Var) -> Var {
        let v = self.unary(a, |x| x.max(0.0));
        self.push(v, Op::Relu(a.0), &[a.0])
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self, a: Var) -> Var {
        let v = self.unary(a, |x| x * sigmoid(x));
        self.push(v, Op::Silu(a.0), &[a.0])
    }

    /// `exp(x / temperature)` normalized along `axis`.
    pub fn softmax(&self, x: Var, axis: usize, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::invalid(
                "softmax",
                format!("temperature must be positive, got {temperature}"),
            ));
        }
        let v = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            check_axis("softmax", t, axis)?;
            kernels::softmax_forward(t, axis, temperature)
        };
        Ok(self.push(
            v,
            Op::Softmax {
                x: x.0,
                axis,
                temperature,
            },
            &[x.0],
        ))
    }

    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            kernels::conv2d_forward(
                &nodes[x.0].value,
                &nodes[w.0].value,
                b.map(|b| &nodes[b.0].value),
                spec,
            )?
        };
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        Ok(self.push(
            v,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                spec,
            },
            &inputs,
        ))
    }

    pub fn avg_pool2d(&self, x: Var, window: (usize, usize)) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            let s = t.shape();
            if s.len() != 4 {
                return Err(Error::shape("avg_pool2d", format!("expected rank 4, got {s:?}")));
            }
            if window.0 == 0 || window.1 == 0 || !s[2].is_multiple_of(window.0) || !s[3].is_multiple_of(window.1) {
                return Err(Error::shape(
                    "avg_pool2d",
                    format!("window {window:?} does not divide ({}, {})", s[2], s[3]),
                ));
            }
            kernels::avg_pool2d_forward(t, window)
        };
        Ok(self.push(v, Op::AvgPool2d { x: x.0, window }, &[x.0]))
    }

    pub fn sum_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            check_axis("sum_axis", t, axis)?;
            kernels::sum_axis(t, axis)
        };
        Ok(self.push(v, Op::SumAxis { x: x.0, axis }, &[x.0]))
    }

    pub fn mean_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            check_axis("mean_axis", t, axis)?;
            let n = t.shape()[axis] as f64;
            kernels::sum_axis(t, axis).map(|s| s / n)
        };
        Ok(self.push(v, Op::MeanAxis { x: x.0, axis }, &[x.0]))
    }

    pub fn sum(&self, x: Var) -> Var {
        let s = self.nodes.borrow()[x.0].value.sum();
        self.push(Tensor::scalar(s), Op::SumAll(x.0), &[x.0])
    }

    pub fn mean(&self, x: Var) -> Var {
        let n = self.nodes.borrow()[x.0].value.len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.nodes.borrow()[x.0].value.reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x.0), &[x.0]))
    }

    pub fn permute(&self, x: Var, perm: &[usize]) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            let mut sorted = perm.to_vec();
            sorted.sort_unstable();
            if sorted != (0..t.rank()).collect::<Vec<_>>() {
                return Err(Error::invalid(
                    "permute",
                    format!("{perm:?} is not a permutation of rank {}", t.rank()),
                ));
            }
            kernels::permute(t, perm)
        };
        Ok(self.push(
            v,
            Op::Permute {
                x: x.0,
                perm: perm.to_vec(),
            },
            &[x.0],
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            check_axis("narrow", t, axis)?;
            if len == 0 || start + len > t.shape()[axis] {
                return Err(Error::shape(
                    "narrow",
                    format!("[{start}, {}) out of range for axis of {}", start + len, t.shape()[axis]),
                ));
            }
            let (outer, n, inner) = kernels::axis_split(t.shape(), axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                data.extend_from_slice(&t.data()[(o * n + start) * inner..][..len * inner]);
            }
            let mut shape = t.shape().to_vec();
            shape[axis] = len;
            Tensor::from_vec(&shape, data)?
        };
        Ok(self.push(v, Op::Narrow { x: x.0, axis, start }, &[x.0]))
    }

    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let first = &nodes[xs.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?.0].value;
            check_axis("concat", first, axis)?;
            let mut total = 0;
            for x in xs {
                let s = nodes[x.0].value.shape();
                let same_rest = s.len() == first.rank()
                    && s.iter()
                        .zip(first.shape())
                        .enumerate()
                        .all(|(i, (a, b))| i == axis || a == b);
                if !same_rest {
                    return Err(Error::shape(
                        "concat",
                        format!("{s:?} incompatible with {:?} on axis {axis}", first.shape()),
                    ));
                }
                total += s[axis];
            }
            let (outer, _, inner) = kernels::axis_split(first.shape(), axis);
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for x in xs {
                    let t = &nodes[x.0].value;
                    let n = t.shape()[axis];
                    data.extend_from_slice(&t.data()[o * n * inner..][..n * inner]);
                }
            }
            let mut shape = first.shape().to_vec();
            shape[axis] = total;
            Tensor::from_vec(&shape, data)?
        };
        let ids: Vec<usize> = xs.iter().map(|x| x.0).collect();
        Ok(self.push(v, Op::Concat { xs: ids.clone(), axis }, &ids))
    }

    /// `x[N, Din] @ w[Dout, Din]^T + b[Dout]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let (tx, tw) = (&nodes[x.0].value, &nodes[w.0].value);
            if tx.rank() != 2 || tw.rank() != 2 || tx.shape()[1] != tw.shape()[1] {
                return Err(Error::shape(
                    "linear",
                    format!("input {:?} vs weight {:?}", tx.shape(), tw.shape()),
                ));
            }
            let tb = b.map(|b| &nodes[b.0].value);
            if let Some(tb) = tb {
                if tb.shape() != [tw.shape()[0]] {
                    return Err(Error::shape(
                        "linear",
                        format!("bias {:?} vs weight {:?}", tb.shape(), tw.shape()),
                    ));
                }
            }
            kernels::linear_forward(tx, tw, tb)
        };
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        Ok(self.push(
            v,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
            },
            &inputs,
        ))
    }

    /// Per-channel normalization of `x[B, C, ...]` followed by `gamma * x + beta`.
    ///
    /// With `stats = None` the batch statistics are used (and returned);
    /// otherwise the supplied running mean and variance are treated as
    /// constants.
    pub fn batch_norm(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, ChannelStats)> {
        let (v, normalized, inv_std, out_stats) = {
            let nodes = self.nodes.borrow();
            let (tx, tg, tb) = (&nodes[x.0].value, &nodes[gamma.0].value, &nodes[beta.0].value);
            let s = tx.shape();
            if s.len() < 2 || tg.shape() != [s[1]] || tb.shape() != [s[1]] {
                return Err(Error::shape(
                    "batch_norm",
                    format!("input {s:?}, gamma {:?}, beta {:?}", tg.shape(), tb.shape()),
                ));
            }
            let (b, c) = (s[0], s[1]);
            let inner: usize = s[2..].iter().product();
            let count = b * inner;
            let xd = tx.data();
            let (mean, var) = match stats {
                Some((m, v)) => {
                    if m.len() != c || v.len() != c {
                        return Err(Error::shape("batch_norm", "running stats length"));
                    }
                    (m.to_vec(), v.to_vec())
                }
                None => {
                    let mut mean = vec![0.0; c];
                    let mut var = vec![0.0; c];
                    for ch in 0..c {
                        let mut acc = 0.0;
                        for bi in 0..b {
                            acc += xd[(bi * c + ch) * inner..][..inner].iter().sum::<f64>();
                        }
                        let m = acc / count as f64;
                        let mut sq = 0.0;
                        for bi in 0..b {
                            sq += xd[(bi * c + ch) * inner..][..inner]
                                .iter()
                                .map(|v| (v - m) * (v - m))
                                .sum::<f64>();
                        }
                        mean[ch] = m;
                        var[ch] = sq / count as f64;
                    }
                    (mean, var)
                }
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let mut normalized = vec![0.0; xd.len()];
            let mut out = vec![0.0; xd.len()];
            for bi in 0..b {
                for ch in 0..c {
                    let base = (bi * c + ch) * inner;
                    let (g, bt) = (tg.data()[ch], tb.data()[ch]);
                    for i in base..base + inner {
                        let n = (xd[i] - mean[ch]) * inv_std[ch];
                        normalized[i] = n;
                        out[i] = g * n + bt;
                    }
                }
            }
            (
                Tensor::from_vec(s, out)?,
                Tensor::from_vec(s, normalized)?,
                inv_std,
                ChannelStats { mean, var, count },
            )
        };
        let var = self.push(
            v,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                normalized,
                inv_std,
                batch_stats: stats.is_none(),
            },
            &[x.0, gamma.0, beta.0],
        );
        Ok((var, out_stats))
    }

    /// Frequency-wise convex combination of per-kernel outputs:
    /// `y[b,c,t,f] = sum_k pi[b,k,f] * ys[k][b,c,t,f]`.
    pub fn dyn_combine(&self, ys: &[Var], pi: Var) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let tp = &nodes[pi.0].value;
            let first = &nodes[ys.first().ok_or_else(|| Error::invalid("dyn_combine", "no branches"))?.0].value;
            let s = first.shape();
            if s.len() != 4
                || tp.shape() != [s[0], ys.len(), s[3]]
                || ys.iter().any(|y| nodes[y.0].value.shape() != s)
            {
                return Err(Error::shape(
                    "dyn_combine",
                    format!("branches {s:?} x {} vs attention {:?}", ys.len(), tp.shape()),
                ));
            }
            let (b, c, t, f) = (s[0], s[1], s[2], s[3]);
            let k = ys.len();
            let pd = tp.data();
            let mut out = vec![0.0; first.len()];
            for (ki, y) in ys.iter().enumerate() {
                let yd = nodes[y.0].value.data();
                for bi in 0..b {
                    let p_row = &pd[(bi * k + ki) * f..][..f];
                    for ci in 0..c {
                        for ti in 0..t {
                            let base = ((bi * c + ci) * t + ti) * f;
                            for fi in 0..f {
                                out[base + fi] += p_row[fi] * yd[base + fi];
                            }
                        }
                    }
                }
            }
            Tensor::from_vec(s, out)?
        };
        let ids: Vec<usize> = ys.iter().map(|y| y.0).collect();
        let mut inputs = ids.clone();
        inputs.push(pi.0);
        Ok(self.push(v, Op::DynCombine { ys: ids, pi: pi.0 }, &inputs))
    }

    /// Mean binary cross-entropy between probabilities and targets in `[0, 1]`.
    pub fn bce(&self, pred: Var, target: Var) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let (p, t) = (&nodes[pred.0].value, &nodes[target.0].value);
            if p.shape() != t.shape() {
                return Err(Error::shape(
                    "bce",
                    format!("prediction {:?} vs target {:?}", p.shape(), t.shape()),
                ));
            }
            let total: f64 = p
                .data()
                .iter()
                .zip(t.data())
                .map(|(&p, &t)| {
                    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                })
                .sum();
            Tensor::scalar(total / p.len() as f64)
        };
        Ok(self.push(
            v,
            Op::Bce {
                pred: pred.0,
                target: target.0,
            },
            &[pred.0, target.0],
        ))
    }

    /// Records an operation with a caller-supplied vector-Jacobian product.
    ///
    /// `backward(inputs, output, grad_output)` returns one optional gradient
    /// per input.
    pub fn custom(
        &self,
        inputs: &[Var],
        value: Tensor,
        backward: impl Fn(&[&Tensor], &Tensor, &Tensor) -> Vec<Option<Tensor>> + 'static,
    ) -> Var {
        let ids: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        self.push(
            value,
            Op::Custom {
                inputs: ids.clone(),
                backward: Box::new(backward),
            },
            &ids,
        )
    }

    /// Accumulates `d loss / d v` for every node that requires a gradient.
    ///
    /// Only leaf gradients are kept in the result.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::ones(lv.shape()));
        }
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, gi) in input_grads(&nodes, node, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        Err(Error::invalid(
            op,
            format!("axis {axis} out of range for rank {}", t.rank()),
        ))
    } else {
        Ok(())
    }
}

fn input_grads(nodes: &[Node], node: &Node, g: &Tensor) -> Vec<(usize, Tensor)> {
    let val = |i: usize| &nodes[i].value;
    let wants = |i: usize| nodes[i].requires_grad;
    let y = &node.value;
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
        Op::Mul(a, b) => vec![
            (*a, g.zip_map(val(*b), |g, b| g * b).expect("shape")),
            (*b, g.zip_map(val(*a), |g, a| g * a).expect("shape")),
        ],
        Op::Scale(a, c) => vec![(*a, g.map(|v| v * c))],
        Op::Sigmoid(a) => vec![(*a, g.zip_map(y, |g, s| g * s * (1.0 - s)).expect("shape"))],
        Op::Tanh(a) => vec![(*a, g.zip_map(y, |g, t| g * (1.0 - t * t)).expect("shape"))],
        Op::Relu(a) => vec![(
            *a,
            g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 })
                .expect("shape"),
        )],
        Op::Silu(a) => vec![(
            *a,
            g.zip_map(val(*a), |g, x| {
                let s = sigmoid(x);
                g * (s + x * s * (1.0 - s))
            })
            .expect("shape"),
        )],
        Op::Softmax {
            x,
            axis,
            temperature,
        } => vec![(*x, kernels::softmax_backward(y, g, *axis, *temperature))],
        Op::Conv2d { x, w, b, spec } => {
            let (gx, gw, gb) = kernels::conv2d_backward(
                val(*x),
                val(*w),
                g,
                *spec,
                (wants(*x), wants(*w), b.is_some_and(wants)),
            );
            let mut out = Vec::new();
            out.extend(gx.map(|t| (*x, t)));
            out.extend(gw.map(|t| (*w, t)));
            if let (Some(b), Some(gb)) = (b, gb) {
                out.push((*b, gb));
            }
            out
        }
        Op::AvgPool2d { x, window } => vec![(
            *x,
            kernels::avg_pool2d_backward(val(*x).shape(), g, *window),
        )],
        Op::SumAxis { x, axis } => vec![(*x, kernels::expand_axis(g, val(*x).shape(), *axis, 1.0))],
        Op::MeanAxis { x, axis } => {
            let s = val(*x).shape();
            let n = s[*axis] as f64;
            vec![(*x, kernels::expand_axis(g, s, *axis, 1.0 / n))]
        }
        Op::SumAll(x) => vec![(*x, Tensor::full(val(*x).shape(), g.item()))],
        Op::Reshape(x) => vec![(*x, g.reshape(val(*x).shape()).expect("shape"))],
        Op::Permute { x, perm } => vec![(*x, kernels::permute(g, &kernels::inverse_perm(perm)))],
        Op::Narrow { x, axis, start } => {
            let s = val(*x).shape();
            let (outer, n, inner) = kernels::axis_split(s, *axis);
            let len = g.shape()[*axis];
            let mut gx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                gx[(o * n + start) * inner..][..len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..][..len * inner]);
            }
            vec![(*x, Tensor::from_vec(s, gx).expect("shape"))]
        }
        Op::Concat { xs, axis } => {
            let (outer, total, inner) = kernels::axis_split(g.shape(), *axis);
            let mut offset = 0;
            let mut out = Vec::with_capacity(xs.len());
            for &x in xs {
                let s = val(x).shape();
                let n = s[*axis];
                if wants(x) {
                    let mut gx = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        gx.extend_from_slice(&g.data()[(o * total + offset) * inner..][..n * inner]);
                    }
                    out.push((x, Tensor::from_vec(s, gx).expect("shape")));
                }
                offset += n;
            }
            out
        }
        Op::Linear { x, w, b } => {
            let (gx, gw, gb) = kernels::linear_backward(
                val(*x),
                val(*w),
                g,
                (wants(*x), wants(*w), b.is_some_and(wants)),
            );
            let mut out = Vec::new();
            out.extend(gx.map(|t| (*x, t)));
            out.extend(gw.map(|t| (*w, t)));
            if let (Some(b), Some(gb)) = (b, gb) {
                out.push((*b, gb));
            }
            out
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            normalized,
            inv_std,
            batch_stats,
        } => {
            let s = g.shape();
            let (b, c) = (s[0], s[1]);
            let inner: usize = s[2..].iter().product();
            let count = (b * inner) as f64;
            let (gd, nd) = (g.data(), normalized.data());
            let gam = val(*gamma).data();
            let mut sum_g = vec![0.0; c];
            let mut sum_gn = vec![0.0; c];
            for bi in 0..b {
                for ch in 0..c {
                    let base = (bi * c + ch) * inner;
                    for i in base..base + inner {
                        sum_g[ch] += gd[i];
                        sum_gn[ch] += gd[i] * nd[i];
                    }
                }
            }
            let mut gx = vec![0.0; gd.len()];
            for bi in 0..b {
                for ch in 0..c {
                    let base = (bi * c + ch) * inner;
                    let k = gam[ch] * inv_std[ch];
                    for i in base..base + inner {
                        gx[i] = if *batch_stats {
                            k * (gd[i] - sum_g[ch] / count - nd[i] * sum_gn[ch] / count)
                        } else {
                            k * gd[i]
                        };
                    }
                }
            }
            vec![
                (*x, Tensor::from_vec(s, gx).expect("shape")),
                (*gamma, Tensor::from_vec(&[c], sum_gn).expect("shape")),
                (*beta, Tensor::from_vec(&[c], sum_g).expect("shape")),
            ]
        }
        Op::DynCombine { ys, pi } => {
            let s = g.shape();
            let (b, c, t, f) = (s[0], s[1], s[2], s[3]);
            let k = ys.len();
            let pd = val(*pi).data();
            let gd = g.data();
            let mut out = Vec::with_capacity(k + 1);
            let mut gpi = vec![0.0; b * k * f];
            for (ki, &yk) in ys.iter().enumerate() {
                let yd = val(yk).data();
                let mut gy = vec![0.0; gd.len()];
                for bi in 0..b {
                    let p_row = &pd[(bi * k + ki) * f..][..f];
                    let gp_row = &mut gpi[(bi * k + ki) * f..][..f];
                    for ci in 0..c {
                        for ti in 0..t {
                            let base = ((bi * c + ci) * t + ti) * f;
                            for fi in 0..f {
                                gy[base + fi] = p_row[fi] * gd[base + fi];
                                gp_row[fi] += gd[base + fi] * yd[base + fi];
                            }
                        }
                    }
                }
                if wants(yk) {
                    out.push((yk, Tensor::from_vec(s, gy).expect("shape")));
                }
            }
            out.push((*pi, Tensor::from_vec(&[b, k, f], gpi).expect("shape")));
            out
        }
        Op::Bce { pred, target } => {
            let (p, t) = (val(*pred), val(*target));
            let n = p.len() as f64;
            let scale = g.item() / n;
            let gp = p
                .zip_map(t, |p, t| {
                    if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                        0.0
                    } else {
                        scale * (p - t) / (p * (1.0 - p))
                    }
                })
                .expect("shape");
            let gt = p.map(|p| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                scale * ((1.0 - p).ln() - p.ln())
            });
            vec![(*pred, gp), (*target, gt)]
        }
        Op::Custom { inputs, backward } => {
            let vals: Vec<&Tensor> = inputs.iter().map(|&i| val(i)).collect();
            backward(&vals, y, g)
                .into_iter()
                .zip(inputs)
                .filter_map(|(gi, &i)| gi.map(|gi| (i, gi)))
                .collect()
        }
    }
}
