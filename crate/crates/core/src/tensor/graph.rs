use std::collections::HashMap;

use crate::error::{Error, Result};

use super::kernels;
use super::Tensor;

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    /// Parameter or constant input.
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Upsample {
        x: Var,
    },
    MaxOverSet {
        inputs: Vec<Var>,
        winners: Vec<u32>,
    },
    Concat {
        parts: Vec<Var>,
    },
    Normalize {
        x: Var,
    },
    CosineLoss {
        pred: Var,
        target: Tensor,
        mask: Vec<bool>,
        count: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Sum {
        x: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Append-only record of a forward computation.
///
/// Nodes only enter the tape with their operation when at least one input
/// requires a gradient; everything else is stored as a constant leaf. One
/// graph supports exactly one [`Graph::backward`] call.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of the loss with respect to every trainable leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    fn check_open(&self) -> Result<()> {
        if self.consumed {
            Err(Error::Graph("graph already consumed by backward"))
        } else {
            Ok(())
        }
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        self.check_open()?;
        let out = kernels::conv2d(self.value(input), self.value(weight), self.value(bias), stride, padding)?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            out,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.check_open()?;
        let out = kernels::leaky_relu(self.value(x), slope)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, rg, Op::LeakyRelu { x, slope }))
    }

    pub fn bilinear_upsample(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        self.check_open()?;
        let out = kernels::bilinear_upsample(self.value(x), out_h, out_w)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, rg, Op::Upsample { x }))
    }

    pub fn max_over_set(&mut self, inputs: &[Var]) -> Result<Var> {
        self.check_open()?;
        let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let (out, winners) = kernels::max_over_set(&values)?;
        let rg = self.any_grad(inputs);
        Ok(self.push(
            out,
            rg,
            Op::MaxOverSet {
                inputs: inputs.to_vec(),
                winners,
            },
        ))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        self.check_open()?;
        let values: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let out = kernels::concat_channels(&values)?;
        let rg = self.any_grad(parts);
        Ok(self.push(out, rg, Op::Concat { parts: parts.to_vec() }))
    }

    /// Per-pixel unit normalisation over channels.
    pub fn normalize(&mut self, x: Var) -> Result<Var> {
        self.check_open()?;
        let out = kernels::normalize_channels(self.value(x))?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, rg, Op::Normalize { x }))
    }

    /// `1 - mean_{mask} <target, pred>` for `[1,3,H,W]` maps and an `H×W` mask.
    pub fn cosine_loss(&mut self, pred: Var, target: &Tensor, mask: &[bool]) -> Result<Var> {
        self.check_open()?;
        let p = self.value(pred);
        let (n, c, h, w) = p.dims4("cosine_loss")?;
        if target.shape() != p.shape() || n != 1 {
            return Err(Error::Shape {
                op: "cosine_loss",
                expected: p.shape().to_vec(),
                actual: target.shape().to_vec(),
            });
        }
        if mask.len() != h * w {
            return Err(Error::Shape {
                op: "cosine_loss",
                expected: vec![h, w],
                actual: vec![mask.len()],
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::invalid("cosine_loss: empty mask"));
        }
        let hw = h * w;
        let mut dot = 0.0;
        for (px, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            for ch in 0..c {
                dot += p.data()[ch * hw + px] * target.data()[ch * hw + px];
            }
        }
        let loss = Tensor::scalar(1.0 - dot / count as f64).ensure_finite("cosine_loss")?;
        let rg = self.requires_grad(pred);
        Ok(self.push(
            loss,
            rg,
            Op::CosineLoss {
                pred,
                target: target.clone(),
                mask: mask.to_vec(),
                count,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_open()?;
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape(), data)?.ensure_finite("add")?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, rg, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_open()?;
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape(), data)?.ensure_finite("mul")?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.check_open()?;
        let tx = self.value(x);
        let out = Tensor::new(tx.shape(), tx.data().iter().map(|v| v * factor).collect())?.ensure_finite("scale")?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, rg, Op::Scale { x, factor }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check_open()?;
        let out = Tensor::scalar(self.value(x).data().iter().sum()).ensure_finite("sum")?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, rg, Op::Sum { x }))
    }

    /// Mean of scalar vars.
    pub fn mean(&mut self, items: &[Var]) -> Result<Var> {
        let (&first, rest) = items
            .split_first()
            .ok_or_else(|| Error::invalid("mean: empty input list"))?;
        let mut acc = first;
        for &v in rest {
            acc = self.add(acc, v)?;
        }
        self.scale(acc, 1.0 / items.len() as f64)
    }

    /// Reverse pass from a scalar `loss`. Returns a gradient for every
    /// trainable leaf (zeros when the leaf does not reach the loss).
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.check_open()?;
        if !self.value(loss).is_scalar() {
            return Err(Error::Graph("backward needs a scalar loss"));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.requires_grad(loss) {
            grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        }

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            for (input, gi) in self.node_backward(id, &g)? {
                accumulate(&mut grads[input.0], gi)?;
            }
        }

        let mut out = Gradients::default();
        for (id, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let g = grads[id]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                out.grads.insert(Var(id), g);
            }
        }
        Ok(out)
    }

    fn node_backward(&self, id: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[id];
        let rg = |v: Var| self.requires_grad(v);
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let grads = kernels::conv2d_backward(
                    self.value(input),
                    self.value(weight),
                    self.value(bias),
                    stride,
                    padding,
                    g,
                    [rg(input), rg(weight), rg(bias)],
                )?;
                out.extend(grads.input.map(|t| (input, t)));
                out.extend(grads.weight.map(|t| (weight, t)));
                out.extend(grads.bias.map(|t| (bias, t)));
            }
            &Op::LeakyRelu { x, slope } => {
                out.push((x, kernels::leaky_relu_backward(self.value(x), slope, g)?));
            }
            &Op::Upsample { x } => {
                out.push((x, kernels::bilinear_upsample_backward(self.value(x).shape(), g)?));
            }
            Op::MaxOverSet { inputs, winners } => {
                for (idx, &v) in inputs.iter().enumerate() {
                    if !rg(v) {
                        continue;
                    }
                    let data = g
                        .data()
                        .iter()
                        .zip(winners)
                        .map(|(&gv, &win)| if win as usize == idx { gv } else { 0.0 })
                        .collect();
                    out.push((v, Tensor::new(g.shape(), data)?));
                }
            }
            Op::Concat { parts } => {
                let (n, c_total, h, w) = g.dims4("concat_channels")?;
                let hw = h * w;
                let mut offset = 0;
                for &v in parts {
                    let c = self.value(v).shape()[1];
                    if rg(v) {
                        let mut data = Vec::with_capacity(n * c * hw);
                        for b in 0..n {
                            let start = (b * c_total + offset) * hw;
                            data.extend_from_slice(&g.data()[start..start + c * hw]);
                        }
                        out.push((v, Tensor::new(self.value(v).shape(), data)?));
                    }
                    offset += c;
                }
            }
            &Op::Normalize { x } => {
                out.push((
                    x,
                    kernels::normalize_channels_backward(self.value(x), &node.value, g)?,
                ));
            }
            Op::CosineLoss {
                pred,
                target,
                mask,
                count,
            } => {
                let gl = g.data()[0];
                let shape = self.value(*pred).shape();
                let hw = shape[2] * shape[3];
                let mut data = vec![0.0; target.len()];
                for (px, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                    for ch in 0..shape[1] {
                        data[ch * hw + px] = -gl * target.data()[ch * hw + px] / *count as f64;
                    }
                }
                out.push((*pred, Tensor::new(shape, data)?));
            }
            &Op::Add { a, b } => {
                if rg(a) {
                    out.push((a, g.clone()));
                }
                if rg(b) {
                    out.push((b, g.clone()));
                }
            }
            &Op::Mul { a, b } => {
                let (ta, tb) = (self.value(a), self.value(b));
                if rg(a) {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    out.push((a, Tensor::new(ta.shape(), d)?));
                }
                if rg(b) {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    out.push((b, Tensor::new(tb.shape(), d)?));
                }
            }
            &Op::Scale { x, factor } => {
                let d = g.data().iter().map(|v| v * factor).collect();
                out.push((x, Tensor::new(g.shape(), d)?));
            }
            &Op::Sum { x } => {
                out.push((x, Tensor::full(self.value(x).shape(), g.data()[0])));
            }
        }
        Ok(out)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            same_shape("backward", acc, &g)?;
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
    Ok(())
}
