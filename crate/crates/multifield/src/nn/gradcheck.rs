use super::{NnError, Tape, Tensor, Var};

/// Outcome of a finite-difference gradient check over a set of leaves.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over checked entries of |analytic - numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    /// entries skipped because the function is locally non-smooth there
    pub skipped: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol && self.checked > 0
    }
}

/// Central-difference gradient check of a scalar-valued graph builder.
///
/// `build` receives a fresh tape plus leaf vars for each input tensor and
/// returns the scalar output var. Entries where the left and right
/// one-sided differences disagree strongly (a kink, e.g. a ReLU or L1
/// boundary within `eps` of the sample point) are skipped rather than
/// reported as failures.
pub fn grad_check(
    inputs: &[Tensor],
    eps: f64,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
) -> Result<GradCheckReport, NnError> {
    let eval = |tensors: &[Tensor]| -> Result<f64, NnError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(NnError::NonFinite(" during gradient check".into()));
        }
        Ok(v)
    };

    // analytic gradients at the base point
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    if !tape.value(out).is_finite() {
        return Err(NnError::NonFinite(" during gradient check".into()));
    }
    tape.backward(out);
    let base = eval(inputs)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v).clone()).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        skipped: 0,
        checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for ti in 0..inputs.len() {
        for j in 0..inputs[ti].len() {
            let orig = work[ti].data[j];
            work[ti].data[j] = orig + eps;
            let plus = eval(&work)?;
            work[ti].data[j] = orig - eps;
            let minus = eval(&work)?;
            work[ti].data[j] = orig;

            let central = (plus - minus) / (2.0 * eps);
            let right = (plus - base) / eps;
            let left = (base - minus) / eps;
            // a kink inside the stencil makes the one-sided slopes disagree
            let side_gap = (right - left).abs();
            if side_gap > 10.0 * eps + 1e-3 * (right.abs() + left.abs()) {
                report.skipped += 1;
                continue;
            }

            let a = analytic[ti].data[j];
            let rel = (a - central).abs() / central.abs().max(1.0);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mlp, Reduction};

    #[test]
    fn linear_function_is_exact() {
        // f(x) = sum(3x) is linear so central differences are exact
        let x = Tensor::vector(vec![0.2, -1.3, 0.7]);
        let report = grad_check(&[x], 1e-5, |tape, vars| {
            let s = tape.scale(vars[0], 3.0);
            tape.sum(s)
        })
        .unwrap();
        assert_eq!(report.checked, 3);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn quadratic_norm_matches() {
        // f(x) = ||x||^2 via elementwise multiply
        let x = Tensor::vector(vec![0.5, -0.25, 1.5, 2.0]);
        let report = grad_check(&[x], 1e-5, |tape, vars| {
            let sq = tape.mul(vars[0], vars[0]);
            tape.sum(sq)
        })
        .unwrap();
        assert!(report.passes(1e-6), "{report:?}");
    }

    #[test]
    fn relu_kink_is_skipped_not_failed() {
        let x = Tensor::vector(vec![0.0, 1.0, -1.0]);
        let report = grad_check(&[x], 1e-5, |tape, vars| {
            let r = tape.relu(vars[0]);
            tape.sum(r)
        })
        .unwrap();
        assert_eq!(report.skipped, 1);
        assert_eq!(report.checked, 2);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn mlp_with_losses_passes() {
        let mlp = Mlp::init(&[3, 6, 2], 7);
        let input = Tensor::matrix(4, 3, (0..12).map(|i| (i as f64) * 0.13 - 0.7).collect());
        let target = Tensor::matrix(4, 2, (0..8).map(|i| (i as f64) * 0.21 - 0.9).collect());
        let params: Vec<Tensor> = mlp
            .param_tensors()
            .into_iter()
            .cloned()
            .collect();
        let report = grad_check(&params, 1e-6, |tape, vars| {
            let staged: Vec<_> = vars.chunks(2).map(|c| (c[0], c[1])).collect();
            let x = tape.leaf(input.clone());
            let (y, _) = mlp.forward_with(tape, &staged, x);
            tape.l1_loss(y, &target, Reduction::Mean)
        })
        .unwrap();
        assert!(report.checked > 0);
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn multitask_loss_gradients_match() {
        use crate::nn::{multitask_loss, MultiTaskLossState};
        let mut state = MultiTaskLossState::new(0.1);
        state.s = [0.3, -0.2, 0.7, 0.0];
        let base = Tensor::vector(vec![0.8, 1.4, 0.6, 2.2]);
        // differentiate w.r.t. the branch losses themselves
        let report = grad_check(&[base], 1e-6, |tape, vars| {
            let v = tape.value(vars[0]).clone();
            let _ = v;
            // split the vector into four scalar losses via masks
            let parts: [crate::nn::Var; 4] = std::array::from_fn(|i| {
                let mut mask = Tensor::zeros(vec![4]);
                mask.data[i] = 1.0;
                let m = tape.leaf(mask);
                let picked = tape.mul(vars[0], m);
                tape.sum(picked)
            });
            let (total, _) = multitask_loss(tape, &state, parts).unwrap();
            total
        })
        .unwrap();
        assert!(report.passes(1e-6), "{report:?}");
    }

    #[test]
    fn non_finite_is_reported() {
        let x = Tensor::vector(vec![f64::NAN]);
        assert!(matches!(
            grad_check(&[x], 1e-5, |tape, vars| tape.sum(vars[0])),
            Err(NnError::NonFinite(_))
        ));
    }
}
