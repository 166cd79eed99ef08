//! Minimal dense-tensor reverse-mode autodiff, layer primitives, the Adam
//! optimizer, and the uncertainty-weighted multi-task loss.

mod gradcheck;
mod loss;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{
    branch_loss, multitask_loss, multitask_loss_masked, BranchKind, MultiTaskLossState,
};
pub use optim::AdamState;
pub use tape::{Reduction, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value encountered{0}")]
    NonFinite(String),
}

/// A fully-connected stack; ReLU between layers, linear final layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// (weight (in, out), bias (out)) per layer
    pub layers: Vec<(Tensor, Tensor)>,
}

impl Mlp {
    pub fn init(dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                (
                    Tensor::init_uniform(fan_in, fan_out, fan_in, seed ^ ((i as u64) << 32)),
                    Tensor::init_uniform(1, fan_out, fan_in, seed ^ ((i as u64) << 32) ^ 1)
                        .into_vector(),
                )
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().0.cols()
    }

    /// Forward pass; returns the output and the post-activation hidden
    /// layers in order.
    pub fn forward(&self, tape: &mut Tape, input: Var) -> (Var, Vec<Var>) {
        let mut x = input;
        let mut hidden = Vec::new();
        let count = self.layers.len();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let wv = tape.leaf(w.clone());
            let bv = tape.leaf(b.clone());
            let lin = tape.matmul(x, wv);
            x = tape.add_bias(lin, bv);
            if i + 1 < count {
                x = tape.relu(x);
                hidden.push(x);
            }
        }
        (x, hidden)
    }

    /// Forward with parameters already on the tape (for training).
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        params: &[(Var, Var)],
        input: Var,
    ) -> (Var, Vec<Var>) {
        assert_eq!(params.len(), self.layers.len());
        let mut x = input;
        let mut hidden = Vec::new();
        for (i, (wv, bv)) in params.iter().enumerate() {
            let lin = tape.matmul(x, *wv);
            x = tape.add_bias(lin, *bv);
            if i + 1 < params.len() {
                x = tape.relu(x);
                hidden.push(x);
            }
        }
        (x, hidden)
    }

    /// Put all parameters on a tape as leaves, in layer order.
    pub fn stage(&self, tape: &mut Tape) -> Vec<(Var, Var)> {
        self.layers
            .iter()
            .map(|(w, b)| (tape.leaf(w.clone()), tape.leaf(b.clone())))
            .collect()
    }

    pub fn param_tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|(w, b)| [w, b])
            .collect()
    }
}

impl Tensor {
    fn into_vector(mut self) -> Tensor {
        let n = self.len();
        self.shape = vec![n];
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_and_backward() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.leaf(Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]));
        let c = tape.matmul(a, b);
        assert_eq!(tape.value(c).data, vec![4.0, 5.0, 10.0, 11.0]);
        let s = tape.sum(c);
        tape.backward(s);
        // dA = 1 * B^T broadcast over rows
        assert_eq!(tape.grad(a).data, vec![1.0, 1.0, 2.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn max_pool_is_permutation_invariant_bitwise() {
        let rows = vec![
            vec![0.3, -1.0, 2.0],
            vec![0.1, 4.0, -2.0],
            vec![-0.5, 0.0, 1.5],
        ];
        let pool = |order: &[usize]| -> (Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let data: Vec<f64> = order.iter().flat_map(|&i| rows[i].clone()).collect();
            let a = tape.leaf(Tensor::matrix(3, 3, data));
            let p = tape.max_pool_rows(a);
            let s = tape.sum(p);
            tape.backward(s);
            (tape.value(p).data.clone(), tape.grad(a).data.clone())
        };
        let (v1, g1) = pool(&[0, 1, 2]);
        let (v2, g2) = pool(&[2, 0, 1]);
        assert_eq!(v1, v2);
        // gradient mass lands on the same (value-identical) elements
        let nonzero = |g: &[f64], data_order: &[usize]| -> Vec<(usize, usize)> {
            let mut out = Vec::new();
            for (flat, v) in g.iter().enumerate() {
                if *v != 0.0 {
                    out.push((data_order[flat / 3], flat % 3));
                }
            }
            out.sort_unstable();
            out
        };
        assert_eq!(nonzero(&g1, &[0, 1, 2]), nonzero(&g2, &[2, 0, 1]));
    }

    #[test]
    fn max_pool_idempotent_under_duplication() {
        let mut tape = Tape::new();
        let base = vec![0.5, 1.0, -0.3, 0.2];
        let a = tape.leaf(Tensor::matrix(2, 2, base.clone()));
        let p1 = tape.max_pool_rows(a);
        let doubled: Vec<f64> = base.iter().chain(&base).copied().collect();
        let b = tape.leaf(Tensor::matrix(4, 2, doubled));
        let p2 = tape.max_pool_rows(b);
        assert_eq!(tape.value(p1).data, tape.value(p2).data);
    }

    #[test]
    fn mlp_shapes() {
        let mlp = Mlp::init(&[3, 8, 8, 2], 42);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(5, 3, vec![0.1; 15]));
        let (y, hidden) = mlp.forward(&mut tape, x);
        assert_eq!(tape.value(y).shape, vec![5, 2]);
        assert_eq!(hidden.len(), 2);
        assert_eq!(tape.value(hidden[0]).shape, vec![5, 8]);
    }
}
