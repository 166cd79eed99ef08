use super::{NnError, Reduction, Tape, Tensor, Var};

/// Loss family of one decoder branch.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum BranchKind {
    /// binary cross entropy on logits
    Bce,
    /// L1 after clamping both sides to [-delta, delta]
    ClampedL1 { delta: f64 },
    /// plain mean L1
    L1,
}

/// Log-variance weights s_i = log(sigma_i^2) for the four branches, plus
/// their loss kinds: BCE for occupancy, clamped L1 for signed distance,
/// L1 for the coverage coefficients and the direction feature.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MultiTaskLossState {
    pub s: [f64; 4],
    pub kinds: [BranchKind; 4],
}

impl MultiTaskLossState {
    pub fn new(sdf_clamp: f64) -> Self {
        Self {
            s: [0.0; 4],
            kinds: [
                BranchKind::Bce,
                BranchKind::ClampedL1 { delta: sdf_clamp },
                BranchKind::L1,
                BranchKind::L1,
            ],
        }
    }
}

/// Branch loss on the tape; mean reduction over the batch.
pub fn branch_loss(
    tape: &mut Tape,
    kind: BranchKind,
    prediction: Var,
    target: &Tensor,
) -> Result<Var, NnError> {
    if tape.value(prediction).shape != target.shape {
        return Err(NnError::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            tape.value(prediction).shape,
            target.shape
        )));
    }
    Ok(match kind {
        BranchKind::Bce => tape.bce_with_logits(prediction, target),
        BranchKind::ClampedL1 { delta } => {
            tape.clamped_l1_loss(prediction, target, delta, Reduction::Mean)
        }
        BranchKind::L1 => tape.l1_loss(prediction, target, Reduction::Mean),
    })
}

/// Uncertainty-weighted total: `sum_i exp(-s_i) * L_i + s_i`, with
/// gradients flowing to both the branch losses and the `s` leaves.
///
/// Returns (total, s leaf vars) so a training loop can update `s`.
pub fn multitask_loss(
    tape: &mut Tape,
    state: &MultiTaskLossState,
    branch_losses: [Var; 4],
) -> Result<(Var, [Var; 4]), NnError> {
    multitask_loss_masked(tape, state, branch_losses, [true; 4])
}

/// As [`multitask_loss`] but summing only the enabled branches; disabled
/// branches contribute nothing and their `s` receives zero gradient.
pub fn multitask_loss_masked(
    tape: &mut Tape,
    state: &MultiTaskLossState,
    branch_losses: [Var; 4],
    mask: [bool; 4],
) -> Result<(Var, [Var; 4]), NnError> {
    if mask.iter().all(|m| !m) {
        return Err(NnError::ShapeMismatch("all branches masked out".into()));
    }
    for (l, m) in branch_losses.iter().zip(mask) {
        if m && !tape.value(*l).item().is_finite() {
            return Err(NnError::NonFinite(" in branch loss".into()));
        }
    }
    let s_vars = state.s.map(|s| tape.leaf(Tensor::scalar(s)));
    let mut total: Option<Var> = None;
    for ((s, l), m) in s_vars.iter().zip(branch_losses).zip(mask) {
        if !m {
            continue;
        }
        let neg = tape.neg(*s);
        let weight = tape.exp(neg);
        let weighted = tape.mul(weight, l);
        let term = tape.add(weighted, *s);
        total = Some(match total {
            Some(t) => tape.add(t, term),
            None => term,
        });
    }
    let total = total.unwrap();
    if !tape.value(total).item().is_finite() {
        return Err(NnError::NonFinite(" in total loss".into()));
    }
    Ok((total, s_vars))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_saturated_logit_is_near_zero() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![20.0]));
        let l = branch_loss(&mut tape, BranchKind::Bce, p, &Tensor::vector(vec![1.0])).unwrap();
        assert!(tape.value(l).item() <= 1e-6);
    }

    #[test]
    fn clamped_l1_both_clamped_is_zero() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![0.5]));
        let l = branch_loss(
            &mut tape,
            BranchKind::ClampedL1 { delta: 0.1 },
            p,
            &Tensor::vector(vec![0.3]),
        )
        .unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn plain_l1_mean() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let l = branch_loss(&mut tape, BranchKind::L1, p, &Tensor::vector(vec![0.0, 0.0]))
            .unwrap();
        assert_eq!(tape.value(l).item(), 1.5);
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(
            branch_loss(&mut tape, BranchKind::L1, p, &Tensor::vector(vec![0.0])),
            Err(NnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn zero_s_reduces_to_plain_sum() {
        let mut tape = Tape::new();
        let state = MultiTaskLossState::new(0.1);
        let ls = [1.0, 1.0, 1.0, 1.0].map(|v| tape.leaf(Tensor::scalar(v)));
        let (total, _) = multitask_loss(&mut tape, &state, ls).unwrap();
        assert!((tape.value(total).item() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_point_in_s_at_log_loss() {
        // d/ds_i (e^{-s} L + s) = 0 at s = ln L; with L = e the term is 2
        let mut state = MultiTaskLossState::new(0.1);
        state.s = [1.0; 4];
        let mut tape = Tape::new();
        let e = std::f64::consts::E;
        let ls = [e, e, e, e].map(|v| tape.leaf(Tensor::scalar(v)));
        let (total, s_vars) = multitask_loss(&mut tape, &state, ls).unwrap();
        assert!((tape.value(total).item() - 8.0).abs() < 1e-12);
        tape.backward(total);
        for s in s_vars {
            assert!(tape.grad(s).item().abs() < 1e-12);
        }
    }

    #[test]
    fn minimizing_s_gives_one_plus_log() {
        // plugging s_i = ln L_i: total = sum_i (1 + ln L_i)
        let mut state = MultiTaskLossState::new(0.1);
        let losses = [0.5, 2.0, 1.0, 3.0];
        state.s = losses.map(f64::ln);
        let mut tape = Tape::new();
        let ls = losses.map(|v| tape.leaf(Tensor::scalar(v)));
        let (total, _) = multitask_loss(&mut tape, &state, ls).unwrap();
        let expected: f64 = losses.iter().map(|l| 1.0 + l.ln()).sum();
        assert!((tape.value(total).item() - expected).abs() < 1e-12);
    }
}
