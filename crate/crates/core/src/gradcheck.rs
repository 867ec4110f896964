//! Central finite-difference gradient checking.
//!
//! The checker is deliberately independent of the backward pass it verifies:
//! it only re-runs the forward closure at perturbed parameter values. Test
//! suites across the workspace build their gradient oracles on top of this.

use crate::autodiff::{Tape, Var};
use crate::tensor::{Tensor, TensorError};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Outcome of a finite-difference comparison.
#[derive(Debug)]
pub struct GradReport {
    pub coords_checked: usize,
    pub max_rel_err: f64,
}

/// Builds the scalar loss for a given set of tracked parameter leaves.
pub type LossBuilder<'a> = &'a dyn Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>;

/// Compares analytic gradients of `build` against central finite differences
/// with the given `step`. At most `max_coords_per_param` coordinates per
/// parameter are probed (sampled reproducibly from `seed`); `None` checks all.
///
/// A coordinate passes when `|analytic - numeric|` is within `rel_tol` of
/// `max(|analytic|, |numeric|)` or within `abs_tol` absolutely.
pub fn check_gradients(
    params: &[Tensor],
    build: LossBuilder<'_>,
    step: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_coords_per_param: Option<usize>,
    seed: u64,
) -> Result<GradReport, String> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let loss = build(&mut tape, &vars).map_err(|e| format!("forward failed: {e}"))?;
    tape.backward(loss).map_err(|e| format!("backward failed: {e}"))?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("tracked leaf").to_vec())
        .collect();

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let eval = |theta: &[Tensor]| -> Result<f64, String> {
        let mut t = Tape::new();
        let vs: Vec<Var> = theta.iter().map(|p| t.leaf(p.clone(), true)).collect();
        let l = build(&mut t, &vs).map_err(|e| format!("forward failed: {e}"))?;
        Ok(t.value(l).scalar_value())
    };

    let mut checked = 0usize;
    let mut max_rel: f64 = 0.0;
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let coords: Vec<usize> = match max_coords_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for ci in coords {
            let mut plus = params.to_vec();
            plus[pi].data_mut()[ci] += step;
            let mut minus = params.to_vec();
            minus[pi].data_mut()[ci] -= step;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
            let a = analytic[pi][ci];
            let diff = (a - numeric).abs();
            let denom = a.abs().max(numeric.abs());
            let rel = if denom > 0.0 { diff / denom } else { 0.0 };
            if diff > abs_tol && rel > rel_tol {
                return Err(format!(
                    "gradient mismatch: param {pi} coord {ci}: analytic {a:.9e} vs numeric {numeric:.9e} (rel {rel:.3e})"
                ));
            }
            if diff > abs_tol {
                max_rel = max_rel.max(rel);
            }
            checked += 1;
        }
    }
    Ok(GradReport {
        coords_checked: checked,
        max_rel_err: max_rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn accepts_correct_matmul_gradient() {
        let a = Tensor::new(3, 4, (0..12).map(|i| 0.1 * i as f64 - 0.5).collect()).unwrap();
        let b = Tensor::new(4, 2, (0..8).map(|i| 0.3 - 0.07 * i as f64).collect()).unwrap();
        let report = check_gradients(
            &[a, b],
            &|tape, vars| {
                let y = tape.matmul(vars[0], vars[1])?;
                Ok(tape.sum(y))
            },
            1e-5,
            1e-4,
            1e-9,
            None,
            7,
        )
        .unwrap();
        assert_eq!(report.coords_checked, 20);
    }

    #[test]
    fn catches_wrong_gradient() {
        // exp used in place of log's derivative would be caught; emulate a bad
        // gradient by checking a non-differentiable mismatch: compare silu's
        // gradient against a deliberately perturbed loss.
        let x = Tensor::new(1, 3, vec![0.4, -0.2, 1.1]).unwrap();
        let r = check_gradients(
            &[x],
            &|tape, vars| {
                // loss whose FD will not match the analytic grad of sum(silu(x)):
                // build sum(silu(x)) but probe with mismatched step sign by
                // constructing sum(silu(x) * 1.001) only in the FD path is not
                // possible here, so instead verify the checker flags a real
                // mismatch: gradient of clamp outside its range is zero while
                // FD across the boundary is not.
                let y = tape.clamp(vars[0], -0.1999999, 10.0);
                Ok(tape.sum(y))
            },
            1e-3,
            1e-4,
            1e-12,
            None,
            7,
        );
        assert!(r.is_err());
    }
}
