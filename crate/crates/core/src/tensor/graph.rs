use crate::error::{shape_err, Error, Result};

use super::{ops, Element, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Element> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var, padding: usize },
    LeakyRelu { input: Var, slope: T },
    Sigmoid { input: Var },
    Concat { parts: Vec<Var> },
    Add { a: Var, b: Var },
    Sum { input: Var },
    WeightedBce { pred: Var, target: Vec<bool>, pos_weight: T, neg_weight: T, eps: T },
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of one forward pass. Nodes are appended in execution order, so the
/// record is topologically sorted by construction; `backward` walks it once
/// in reverse and then refuses to run again.
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`]. Only nodes
/// that require gradients have an entry.
pub struct Gradients<T: Element> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. It participates in backward iff the tensor has
    /// `requires_grad` set.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let requires_grad = value.requires_grad();
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Records a copy of `param`'s values as a gradient-tracking leaf.
    pub fn parameter(&mut self, param: &Tensor<T>) -> Var {
        let value = Tensor::from_vec(param.shape(), param.data().to_vec()).expect("valid tensor");
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn requires(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        // Leaves keep their gradient buffer outside the tape.
        let mut value = value;
        if value.requires_grad() {
            value.set_requires_grad(false);
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, padding: usize) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(kernel), self.value(bias), padding)?;
        let rg = self.requires(input) || self.requires(kernel) || self.requires(bias);
        Ok(self.push(out, Op::Conv2d { input, kernel, bias, padding }, rg))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        let out = ops::leaky_relu(self.value(input), slope);
        let rg = self.requires(input);
        self.push(out, Op::LeakyRelu { input, slope }, rg)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = ops::sigmoid(self.value(input));
        let rg = self.requires(input);
        self.push(out, Op::Sigmoid { input }, rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat(&values)?;
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(out, Op::Concat { parts: parts.to_vec() }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().copied().sum();
        let rg = self.requires(input);
        self.push(Tensor::scalar(total), Op::Sum { input }, rg)
    }

    /// Scalar weighted BCE of `pred` against a binary `target`; returns the
    /// loss node plus its `(positive, negative)` parts.
    pub fn weighted_bce(
        &mut self,
        pred: Var,
        target: &[bool],
        pos_weight: T,
        neg_weight: T,
        eps: T,
    ) -> Result<(Var, T, T)> {
        let p = self.value(pred);
        if p.numel() != target.len() {
            return Err(shape_err!(
                "prediction has {} values, target has {}",
                p.numel(),
                target.len()
            ));
        }
        let (pos, neg) = ops::weighted_bce(p.data(), target, pos_weight, neg_weight, eps);
        let rg = self.requires(pred);
        let op = Op::WeightedBce { pred, target: target.to_vec(), pos_weight, neg_weight, eps };
        Ok((self.push(Tensor::scalar(pos + neg), op, rg), pos, neg))
    }

    /// Reverse pass from a scalar `loss`. Consumes the graph: a second call
    /// is an error rather than a silent accumulation.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Graph("backward called on an already consumed graph".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Graph(format!("loss var {} not recorded on this graph", loss.0)));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Graph(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv2d { input, kernel, bias, padding } => {
                    let (gi, gk, gb) = ops::conv2d_backward(
                        self.value(*input),
                        self.value(*kernel),
                        *padding,
                        &g,
                    );
                    self.accumulate(&mut grads, *input, gi);
                    self.accumulate(&mut grads, *kernel, gk);
                    self.accumulate(&mut grads, *bias, gb);
                }
                Op::LeakyRelu { input, slope } => {
                    let gi = ops::leaky_relu_backward(node.value.data(), &g, *slope);
                    self.accumulate(&mut grads, *input, gi);
                }
                Op::Sigmoid { input } => {
                    let gi = ops::sigmoid_backward(node.value.data(), &g);
                    self.accumulate(&mut grads, *input, gi);
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        self.accumulate(&mut grads, p, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::Add { a, b } => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *b, g);
                }
                Op::Sum { input } => {
                    let n = self.value(*input).numel();
                    self.accumulate(&mut grads, *input, vec![g[0]; n]);
                }
                Op::WeightedBce { pred, target, pos_weight, neg_weight, eps } => {
                    let gi = ops::weighted_bce_backward(
                        self.value(*pred).data(),
                        target,
                        *pos_weight,
                        *neg_weight,
                        *eps,
                        g[0],
                    );
                    self.accumulate(&mut grads, *pred, gi);
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], var: Var, delta: Vec<T>) {
        if !self.requires(var) {
            return;
        }
        match &mut grads[var.0] {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(a, &b)| *a = *a + b),
            slot @ None => *slot = Some(delta),
        }
    }
}
