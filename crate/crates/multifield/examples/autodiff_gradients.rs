//! Check reverse-mode gradients against central finite differences for an
//! MLP under a binary-cross-entropy loss, then show the uncertainty-weighted
//! multi-task loss settling at its closed-form stationary point s_i = ln L_i.
//!
//! Run with: cargo run --release --example autodiff_gradients

use multifield::nn::{grad_check, AdamState, Mlp, Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // gradient check: all MLP parameters against finite differences
    let mlp = Mlp::init(&[3, 8, 5, 1], 11);
    let params: Vec<Tensor> = mlp.param_tensors().into_iter().cloned().collect();
    let x = Tensor::matrix(4, 3, vec![0.3, -0.2, 0.9, 1.1, 0.0, -0.4, 0.2, 0.8, -1.0, 0.5, 0.5, 0.5]);
    let target = Tensor::matrix(4, 1, vec![1.0, 0.0, 1.0, 0.0]);
    let report = grad_check(&params, 1e-5, |tape, vars| {
        let input = tape.leaf(x.clone());
        let staged: Vec<(multifield::nn::Var, multifield::nn::Var)> =
            vars.chunks(2).map(|c| (c[0], c[1])).collect();
        let (out, _) = mlp.forward_with(tape, &staged, input);
        tape.bce_with_logits(out, &target)
    })?;
    println!(
        "mlp grad check: max rel error {:.2e} over {} entries ({} kinks skipped)",
        report.max_rel_error, report.checked, report.skipped
    );

    // multi-task weighting: minimizing sum_i exp(-s_i) L_i + s_i over s
    // alone has the closed-form optimum s_i = ln L_i
    let losses = [0.8, 0.25, 1.7, 0.05];
    let mut s = Tensor::vector(vec![0.0; 4]);
    let mut adam = AdamState::new(0.05, &[4]);
    for _ in 0..2000 {
        let mut tape = Tape::new();
        let sv = tape.leaf(s.clone());
        let neg = tape.neg(sv);
        let w = tape.exp(neg);
        let lv = tape.leaf(Tensor::vector(losses.to_vec()));
        let weighted = tape.mul(w, lv);
        let a = tape.sum(weighted);
        let b = tape.sum(sv);
        let total = tape.add(a, b);
        tape.backward(total);
        let grad = tape.grad(sv).clone();
        adam.step(&mut [&mut s], &[&grad]);
    }
    for (si, li) in s.data.iter().zip(&losses) {
        println!("s = {si:+.6}  ln L = {:+.6}", li.ln());
    }
    Ok(())
}
