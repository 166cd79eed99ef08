use super::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Neg(Var),
    Exp(Var),
    Relu(Var),
    Sigmoid(Var),
    /// column-wise max over rows, argmax row per column
    MaxPoolRows(Var, Vec<usize>),
    RepeatRows(Var, usize),
    ConcatCols(Vec<Var>),
    Sum(Var),
    L1Loss(Var, Tensor, Reduction),
    ClampedL1Loss(Var, Tensor, f64, Reduction),
    BceWithLogits(Var, Tensor),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

/// Recorded operation graph for one forward pass; reverse-mode gradients
/// via [`Tape::backward`]. Nodes are topologically ordered by construction.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> &Tensor {
        self.nodes[v.0]
            .grad
            .as_ref()
            .expect("backward() not run or node unreachable from the loss")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (n, k) = (ta.rows(), ta.cols());
        let (k2, m) = (tb.rows(), tb.cols());
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let av = ta.data[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &tb.data[p * m..(p + 1) * m];
                let orow = &mut out[i * m..(i + 1) * m];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        self.push(Tensor::matrix(n, m, out), Op::Matmul(a, b))
    }

    /// Add a length-m bias vector to every row of an (n, m) matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        let (n, m) = (ta.rows(), ta.cols());
        assert_eq!(tb.len(), m);
        let mut out = ta.data.clone();
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] += tb.data[j];
            }
        }
        self.push(Tensor::matrix(n, m, out), Op::AddBias(a, bias))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.shape, tb.shape);
        let data = ta
            .data
            .iter()
            .zip(&tb.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = ta.shape.clone();
        self.push(Tensor::new(shape, data), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|&x| f(x)).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::new(shape, data), op)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.map(a, |x| -x, Op::Neg(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    /// Column-wise max over the set (row) axis: (n, m) -> (1, m).
    /// Ties route the gradient to the lowest row index, so permutations of
    /// value-identical rows give identical gradients.
    pub fn max_pool_rows(&mut self, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let (n, m) = (ta.rows(), ta.cols());
        assert!(n >= 1);
        let mut out = vec![f64::NEG_INFINITY; m];
        let mut arg = vec![0usize; m];
        for i in 0..n {
            for j in 0..m {
                let v = ta.data[i * m + j];
                if v > out[j] {
                    out[j] = v;
                    arg[j] = i;
                }
            }
        }
        self.push(Tensor::matrix(1, m, out), Op::MaxPoolRows(a, arg))
    }

    /// Broadcast a (1, m) row to (n, m).
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let ta = &self.nodes[a.0].value;
        assert_eq!(ta.rows(), 1);
        let m = ta.cols();
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(&ta.data);
        }
        self.push(Tensor::matrix(n, m, out), Op::RepeatRows(a, n))
    }

    /// Concatenate matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.nodes[parts[0].0].value.rows();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.cols()).sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for p in parts {
                let t = &self.nodes[p.0].value;
                assert_eq!(t.rows(), n);
                let m = t.cols();
                out.extend_from_slice(&t.data[i * m..(i + 1) * m]);
            }
        }
        self.push(Tensor::matrix(n, total, out), Op::ConcatCols(parts.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// L1 loss against a constant target.
    pub fn l1_loss(&mut self, a: Var, target: &Tensor, reduction: Reduction) -> Var {
        let ta = &self.nodes[a.0].value;
        assert_eq!(ta.shape, target.shape, "l1 shape mismatch");
        let total: f64 = ta
            .data
            .iter()
            .zip(&target.data)
            .map(|(&p, &t)| (p - t).abs())
            .sum();
        let v = match reduction {
            Reduction::Sum => total,
            Reduction::Mean => total / ta.len() as f64,
        };
        self.push(
            Tensor::scalar(v),
            Op::L1Loss(a, target.clone(), reduction),
        )
    }

    /// L1 between prediction and target after clamping both to [-delta, delta].
    pub fn clamped_l1_loss(
        &mut self,
        a: Var,
        target: &Tensor,
        delta: f64,
        reduction: Reduction,
    ) -> Var {
        assert!(delta > 0.0);
        let ta = &self.nodes[a.0].value;
        assert_eq!(ta.shape, target.shape, "clamped l1 shape mismatch");
        let total: f64 = ta
            .data
            .iter()
            .zip(&target.data)
            .map(|(&p, &t)| (p.clamp(-delta, delta) - t.clamp(-delta, delta)).abs())
            .sum();
        let v = match reduction {
            Reduction::Sum => total,
            Reduction::Mean => total / ta.len() as f64,
        };
        self.push(
            Tensor::scalar(v),
            Op::ClampedL1Loss(a, target.clone(), delta, reduction),
        )
    }

    /// Mean binary cross entropy on logits, numerically stable.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor) -> Var {
        let ta = &self.nodes[logits.0].value;
        assert_eq!(ta.shape, target.shape, "bce shape mismatch");
        let total: f64 = ta
            .data
            .iter()
            .zip(&target.data)
            .map(|(&x, &t)| x.max(0.0) - t * x + (-x.abs()).exp().ln_1p())
            .sum();
        let v = total / ta.len() as f64;
        self.push(Tensor::scalar(v), Op::BceWithLogits(logits, target.clone()))
    }

    fn accumulate(&mut self, v: Var, delta: Tensor) {
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(grad) => {
                for (g, d) in grad.data.iter_mut().zip(&delta.data) {
                    *g += d;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    /// Reverse pass from a scalar node; visits nodes once in reverse order.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "loss must be scalar");
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            // taking the grad (restored below) lets the op bodies borrow
            // operand values without cloning them
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            match &op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (da, db) = {
                        let ta = &self.nodes[a.0].value;
                        let tb = &self.nodes[b.0].value;
                        let (n, k) = (ta.rows(), ta.cols());
                        let m = tb.cols();
                        let mut da = Tensor::zeros(vec![n, k]);
                        for i in 0..n {
                            let grow = &grad.data[i * m..(i + 1) * m];
                            let drow = &mut da.data[i * k..(i + 1) * k];
                            for (p, d) in drow.iter_mut().enumerate() {
                                let brow = &tb.data[p * m..(p + 1) * m];
                                let mut acc = 0.0;
                                for (g, bv) in grow.iter().zip(brow) {
                                    acc += g * bv;
                                }
                                *d = acc;
                            }
                        }
                        let mut db = Tensor::zeros(vec![k, m]);
                        for i in 0..n {
                            let grow = &grad.data[i * m..(i + 1) * m];
                            for p in 0..k {
                                let av = ta.data[i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                let drow = &mut db.data[p * m..(p + 1) * m];
                                for (d, g) in drow.iter_mut().zip(grow) {
                                    *d += av * g;
                                }
                            }
                        }
                        (da, db)
                    };
                    self.accumulate(*a, da);
                    self.accumulate(*b, db);
                }
                Op::AddBias(a, bias) => {
                    let m = self.nodes[bias.0].value.len();
                    let n = grad.len() / m;
                    let mut db = Tensor::zeros(vec![m]);
                    for i in 0..n {
                        for j in 0..m {
                            db.data[j] += grad.data[i * m + j];
                        }
                    }
                    self.accumulate(*a, grad.clone());
                    self.accumulate(*bias, db);
                }
                Op::Add(a, b) => {
                    self.accumulate(*a, grad.clone());
                    self.accumulate(*b, grad.clone());
                }
                Op::Sub(a, b) => {
                    let neg = Tensor::new(
                        grad.shape.clone(),
                        grad.data.iter().map(|g| -g).collect(),
                    );
                    self.accumulate(*a, grad.clone());
                    self.accumulate(*b, neg);
                }
                Op::Mul(a, b) => {
                    let da = Tensor::new(
                        grad.shape.clone(),
                        grad.data
                            .iter()
                            .zip(&self.nodes[b.0].value.data)
                            .map(|(g, y)| g * y)
                            .collect(),
                    );
                    let db = Tensor::new(
                        grad.shape.clone(),
                        grad.data
                            .iter()
                            .zip(&self.nodes[a.0].value.data)
                            .map(|(g, x)| g * x)
                            .collect(),
                    );
                    self.accumulate(*a, da);
                    self.accumulate(*b, db);
                }
                Op::Scale(a, k) => {
                    let da = Tensor::new(
                        grad.shape.clone(),
                        grad.data.iter().map(|g| g * k).collect(),
                    );
                    self.accumulate(*a, da);
                }
                Op::Neg(a) => {
                    let da = Tensor::new(
                        grad.shape.clone(),
                        grad.data.iter().map(|g| -g).collect(),
                    );
                    self.accumulate(*a, da);
                }
                Op::Exp(a) => {
                    let da = Tensor::new(
                        grad.shape.clone(),
                        grad.data
                            .iter()
                            .zip(&self.nodes[i].value.data)
                            .map(|(g, y)| g * y)
                            .collect(),
                    );
                    self.accumulate(*a, da);
                }
                Op::Relu(a) => {
                    let da = Tensor::new(
                        grad.shape.clone(),
                        grad.data
                            .iter()
                            .zip(&self.nodes[a.0].value.data)
                            .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                            .collect(),
                    );
                    self.accumulate(*a, da);
                }
                Op::Sigmoid(a) => {
                    let da = Tensor::new(
                        grad.shape.clone(),
                        grad.data
                            .iter()
                            .zip(&self.nodes[i].value.data)
                            .map(|(g, y)| g * y * (1.0 - y))
                            .collect(),
                    );
                    self.accumulate(*a, da);
                }
                Op::MaxPoolRows(a, arg) => {
                    let shape = self.nodes[a.0].value.shape.clone();
                    let m = shape[1];
                    let mut da = Tensor::zeros(shape);
                    for (j, &row) in arg.iter().enumerate() {
                        da.data[row * m + j] = grad.data[j];
                    }
                    self.accumulate(*a, da);
                }
                Op::RepeatRows(a, n) => {
                    let m = self.nodes[a.0].value.cols();
                    let mut da = Tensor::zeros(vec![1, m]);
                    for i in 0..*n {
                        for j in 0..m {
                            da.data[j] += grad.data[i * m + j];
                        }
                    }
                    self.accumulate(*a, da);
                }
                Op::ConcatCols(parts) => {
                    let widths: Vec<usize> =
                        parts.iter().map(|p| self.nodes[p.0].value.cols()).collect();
                    let total: usize = widths.iter().sum();
                    let n = grad.len() / total;
                    let mut offset = 0;
                    for (p, w) in parts.iter().zip(&widths) {
                        let mut dp = Tensor::zeros(vec![n, *w]);
                        for i in 0..n {
                            dp.data[i * w..(i + 1) * w].copy_from_slice(
                                &grad.data[i * total + offset..i * total + offset + w],
                            );
                        }
                        self.accumulate(*p, dp);
                        offset += w;
                    }
                }
                Op::Sum(a) => {
                    let shape = self.nodes[a.0].value.shape.clone();
                    let n = shape.iter().product();
                    let da = Tensor::new(shape, vec![grad.item(); n]);
                    self.accumulate(*a, da);
                }
                Op::L1Loss(a, target, reduction) => {
                    let ta = &self.nodes[a.0].value;
                    let scale = match reduction {
                        Reduction::Sum => 1.0,
                        Reduction::Mean => 1.0 / ta.len() as f64,
                    } * grad.item();
                    let da = Tensor::new(
                        ta.shape.clone(),
                        ta.data
                            .iter()
                            .zip(&target.data)
                            .map(|(&p, &t)| sign0(p - t) * scale)
                            .collect(),
                    );
                    self.accumulate(*a, da);
                }
                Op::ClampedL1Loss(a, target, delta, reduction) => {
                    let ta = &self.nodes[a.0].value;
                    let scale = match reduction {
                        Reduction::Sum => 1.0,
                        Reduction::Mean => 1.0 / ta.len() as f64,
                    } * grad.item();
                    let da = Tensor::new(
                        ta.shape.clone(),
                        ta.data
                            .iter()
                            .zip(&target.data)
                            .map(|(&p, &t)| {
                                if p.abs() >= *delta {
                                    0.0
                                } else {
                                    sign0(p.clamp(-delta, *delta) - t.clamp(-delta, *delta))
                                        * scale
                                }
                            })
                            .collect(),
                    );
                    self.accumulate(*a, da);
                }
                Op::BceWithLogits(a, target) => {
                    let ta = &self.nodes[a.0].value;
                    let scale = grad.item() / ta.len() as f64;
                    let da = Tensor::new(
                        ta.shape.clone(),
                        ta.data
                            .iter()
                            .zip(&target.data)
                            .map(|(&x, &t)| (1.0 / (1.0 + (-x).exp()) - t) * scale)
                            .collect(),
                    );
                    self.accumulate(*a, da);
                }
            }
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(grad);
        }
    }
}

/// Subgradient convention at the L1 kink: sign(0) = 0.
fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
