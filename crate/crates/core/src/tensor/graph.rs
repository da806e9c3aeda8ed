//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value; nodes only
//! refer to earlier nodes, so the insertion order is a topological order
//! and [`Graph::backward`] is a single reverse sweep.

use super::conv::{self, ConvGeom};
use super::{leaky, ConvRank, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A scalar function of one tensor with an analytic gradient.
///
/// Used to splice losses with hand-derived gradients (the fairness
/// regularizers) into a graph.
pub trait ScalarObjective {
    /// Returns the value and the gradient with respect to every entry of `x`.
    fn value_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>);
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeom,
    },
    LeakyRelu {
        x: NodeId,
        slope: f64,
    },
    Reshape {
        x: NodeId,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    Broadcast {
        x: NodeId,
        spatial: usize,
    },
    Dense {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        s: f64,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sum {
        x: NodeId,
    },
    MeanAbsError {
        x: NodeId,
        target: Vec<f64>,
    },
    Objective {
        x: NodeId,
        grad: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let tracked = inputs.iter().any(|i| self.nodes[i.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::invalid(format!("node {} not in graph", id.0)))
        }
    }

    /// Constant input; receives no gradient of its own beyond zero.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn conv(&mut self, x: NodeId, w: NodeId, b: NodeId, rank: ConvRank) -> Result<NodeId> {
        for id in [x, w, b] {
            self.check(id)?;
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let geom = ConvGeom::new(xv.shape(), wv.shape(), bv.shape(), rank)?;
        let out = conv::forward(&geom, xv.data(), wv.data(), bv.data());
        let value = Tensor::new(geom.output_shape(xv.shape()), out)?;
        Ok(self.push(value, Op::Conv { x, w, b, geom }, &[x, w, b]))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        self.check(x)?;
        let value = self.value(x).map(|v| leaky(v, slope));
        Ok(self.push(value, Op::LeakyRelu { x, slope }, &[x]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.check(x)?;
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// Concatenation along the leading axis; trailing axes must agree.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        for &p in parts {
            self.check(p)?;
        }
        let tail = self.value(first).shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.ndim() == 0 || v.shape()[1..] != tail[..] {
                return Err(Error::invalid(format!(
                    "concat shape mismatch {:?} vs trailing {:?}",
                    v.shape(),
                    tail
                )));
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    /// Repeats a `(C)` vector over `spatial` trailing axes: `(C, spatial...)`.
    pub fn broadcast(&mut self, x: NodeId, spatial: &[usize]) -> Result<NodeId> {
        self.check(x)?;
        let v = self.value(x);
        if v.ndim() != 1 {
            return Err(Error::invalid(format!(
                "broadcast needs a vector, got {:?}",
                v.shape()
            )));
        }
        let n: usize = spatial.iter().product();
        let data = v
            .data()
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, n))
            .collect();
        let mut shape = vec![v.len()];
        shape.extend_from_slice(spatial);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Broadcast { x, spatial: n }, &[x]))
    }

    /// `w · flatten(x) + b` with `w` of shape `(out, len(x))`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        for id in [x, w, b] {
            self.check(id)?;
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let n = xv.len();
        if wv.ndim() != 2 || wv.shape()[1] != n || bv.shape() != [wv.shape()[0]] {
            return Err(Error::invalid(format!(
                "dense shapes x {:?}, w {:?}, b {:?} disagree",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let data = wv
            .data()
            .chunks(n)
            .zip(bv.data())
            .map(|(row, b)| b + row.iter().zip(xv.data()).map(|(a, c)| a * c).sum::<f64>())
            .collect();
        let value = Tensor::new(vec![wv.shape()[0]], data)?;
        Ok(self.push(value, Op::Dense { x, w, b }, &[x, w, b]))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> Result<NodeId> {
        self.check(x)?;
        let value = self.value(x).scale(s);
        Ok(self.push(value, Op::Scale { x, s }, &[x]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let value = self.value(a).add_scaled(self.value(b), 1.0)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let value = Tensor::scalar(self.value(x).sum());
        Ok(self.push(value, Op::Sum { x }, &[x]))
    }

    /// Mean of `|x - target|` over all entries.
    pub fn mean_abs_error(&mut self, x: NodeId, target: &[f64]) -> Result<NodeId> {
        self.check(x)?;
        let v = self.value(x);
        if v.len() != target.len() || target.is_empty() {
            return Err(Error::invalid(format!(
                "MAE target has {} entries, prediction {}",
                target.len(),
                v.len()
            )));
        }
        let mae = v
            .data()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / target.len() as f64;
        let value = Tensor::scalar(mae);
        Ok(self.push(
            value,
            Op::MeanAbsError {
                x,
                target: target.to_vec(),
            },
            &[x],
        ))
    }

    /// Scalar node evaluating `objective` on the value of `x`.
    pub fn objective(&mut self, x: NodeId, objective: &dyn ScalarObjective) -> Result<NodeId> {
        self.check(x)?;
        let (value, grad) = objective.value_and_grad(self.value(x).data());
        if grad.len() != self.value(x).len() {
            return Err(Error::invalid("objective gradient length mismatch"));
        }
        Ok(self.push(Tensor::scalar(value), Op::Objective { x, grad }, &[x]))
    }

    /// Gradient of the scalar `loss` with respect to every node.
    ///
    /// Nodes that do not influence `loss` get an all-zero gradient.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.tracked {
                self.propagate(&node.op, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                let data = g.unwrap_or_else(|| vec![0.0; n.value.len()]);
                Tensor::new(n.value.shape().to_vec(), data).expect("gradient shape")
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let tracked = |id: NodeId| self.nodes[id.0].tracked;
        match op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let mut gx = tracked(*x).then(|| take_or_zero(grads, *x, self.value(*x).len()));
                let mut gw = tracked(*w).then(|| take_or_zero(grads, *w, self.value(*w).len()));
                let mut gb = tracked(*b).then(|| take_or_zero(grads, *b, self.value(*b).len()));
                conv::backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                for (id, grad) in [(*x, gx), (*w, gw), (*b, gb)] {
                    if let Some(grad) = grad {
                        grads[id.0] = Some(grad);
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x).data();
                accumulate(grads, *x, xv.len(), |acc| {
                    for ((a, &gi), &xi) in acc.iter_mut().zip(g).zip(xv) {
                        *a += if xi > 0.0 { gi } else { slope * gi };
                    }
                });
            }
            Op::Reshape { x } => accumulate(grads, *x, g.len(), |acc| add_into(acc, g)),
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if tracked(p) {
                        accumulate(grads, p, n, |acc| add_into(acc, &g[offset..offset + n]));
                    }
                    offset += n;
                }
            }
            Op::Broadcast { x, spatial } => {
                let n = self.value(*x).len();
                accumulate(grads, *x, n, |acc| {
                    for (a, chunk) in acc.iter_mut().zip(g.chunks(*spatial)) {
                        *a += chunk.iter().sum::<f64>();
                    }
                });
            }
            Op::Dense { x, w, b } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let n = xv.len();
                if tracked(*x) {
                    accumulate(grads, *x, n, |acc| {
                        for (row, &gi) in wv.chunks(n).zip(g) {
                            for (a, &wi) in acc.iter_mut().zip(row) {
                                *a += gi * wi;
                            }
                        }
                    });
                }
                if tracked(*w) {
                    accumulate(grads, *w, wv.len(), |acc| {
                        for (row, &gi) in acc.chunks_mut(n).zip(g) {
                            for (a, &xi) in row.iter_mut().zip(xv) {
                                *a += gi * xi;
                            }
                        }
                    });
                }
                if tracked(*b) {
                    accumulate(grads, *b, g.len(), |acc| add_into(acc, g));
                }
            }
            Op::Scale { x, s } => accumulate(grads, *x, g.len(), |acc| {
                for (a, gi) in acc.iter_mut().zip(g) {
                    *a += s * gi;
                }
            }),
            Op::Add { a, b } => {
                for id in [*a, *b] {
                    if tracked(id) {
                        accumulate(grads, id, g.len(), |acc| add_into(acc, g));
                    }
                }
            }
            Op::Sum { x } => {
                let n = self.value(*x).len();
                accumulate(grads, *x, n, |acc| acc.iter_mut().for_each(|a| *a += g[0]));
            }
            Op::MeanAbsError { x, target } => {
                let xv = self.value(*x).data();
                let scale = g[0] / target.len() as f64;
                accumulate(grads, *x, xv.len(), |acc| {
                    for ((a, &p), &t) in acc.iter_mut().zip(xv).zip(target) {
                        // subgradient 0 at the kink
                        *a += scale * sign(p - t);
                    }
                });
            }
            Op::Objective { x, grad } => accumulate(grads, *x, grad.len(), |acc| {
                for (a, gi) in acc.iter_mut().zip(grad) {
                    *a += g[0] * gi;
                }
            }),
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn take_or_zero(grads: &mut [Option<Vec<f64>>], id: NodeId, n: usize) -> Vec<f64> {
    grads[id.0].take().unwrap_or_else(|| vec![0.0; n])
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, n: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[id.0].get_or_insert_with(|| vec![0.0; n]);
    f(slot);
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// Gradients of one scalar with respect to every node of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn take(&mut self, id: NodeId) -> Tensor {
        std::mem::replace(&mut self.grads[id.0], Tensor::zeros(&[]))
    }
}
