//! Low-level recurrence kernels for the diagonal state-space scan.
//!
//! The zero-order-hold step and the time-varying scan live here as plain
//! slice arithmetic so the tape op, the untracked forward path, and the
//! fixed-parameter reference scans all share one numerical definition.

use crate::tensor::TensorError;

/// Threshold below which the discretized input matrix collapses to its
/// delta*B limit.
pub const ZOH_LIMIT: f64 = 1e-8;

/// Discretize one diagonal entry under a zero-order hold:
/// `a_bar = exp(delta*a)`, `b_bar = (exp(delta*a) - 1) / a * b`,
/// with the `|delta*a| < ZOH_LIMIT` limit evaluating to `delta * b`.
#[inline]
pub fn zoh_entry(a: f64, b: f64, delta: f64) -> (f64, f64) {
    let x = delta * a;
    let a_bar = x.exp();
    let b_bar = if x.abs() < ZOH_LIMIT {
        delta * b
    } else {
        x.exp_m1() / a * b
    };
    (a_bar, b_bar)
}

/// Inputs to the time-varying diagonal scan. All slices are row-major:
/// `u`, `delta` are L x d; `b_seq`, `c_seq` are L x s_dim; `a` is d x s_dim;
/// `d_skip`, when present, has length d.
pub struct ScanInputs<'a> {
    pub seq_len: usize,
    pub channels: usize,
    pub state: usize,
    pub u: &'a [f64],
    pub delta: &'a [f64],
    pub b_seq: &'a [f64],
    pub c_seq: &'a [f64],
    pub a: &'a [f64],
    pub d_skip: Option<&'a [f64]>,
}

/// Runs `h_t = a_bar_t * h_{t-1} + b_bar_t * u_t`, `y_t = <h_t, c_t> (+ d*u_t)`
/// over the sequence. When `keep_history` is set the post-step hidden state is
/// recorded for every position (needed by the backward pass).
///
/// Returns the L x d output and the optional L x d x s_dim history. A
/// non-finite output value aborts with the offending position.
pub fn scan_forward(
    inp: &ScanInputs<'_>,
    keep_history: bool,
) -> Result<(Vec<f64>, Option<Vec<f64>>), TensorError> {
    let (l, d, s) = (inp.seq_len, inp.channels, inp.state);
    if l == 0 {
        return Err(TensorError::Domain {
            op: "scan_forward",
            msg: "empty sequence".into(),
        });
    }
    let mut h = vec![0.0; d * s];
    let mut y = vec![0.0; l * d];
    let mut hist = if keep_history {
        Some(vec![0.0; l * d * s])
    } else {
        None
    };
    for t in 0..l {
        let b_t = &inp.b_seq[t * s..(t + 1) * s];
        let c_t = &inp.c_seq[t * s..(t + 1) * s];
        for ch in 0..d {
            let u_tc = inp.u[t * d + ch];
            let delta_tc = inp.delta[t * d + ch];
            let a_row = &inp.a[ch * s..(ch + 1) * s];
            let h_row = &mut h[ch * s..(ch + 1) * s];
            let mut acc = 0.0;
            for k in 0..s {
                let (a_bar, b_bar) = zoh_entry(a_row[k], b_t[k], delta_tc);
                h_row[k] = a_bar * h_row[k] + b_bar * u_tc;
                acc += h_row[k] * c_t[k];
            }
            if let Some(dk) = inp.d_skip {
                acc += dk[ch] * u_tc;
            }
            if !acc.is_finite() {
                return Err(TensorError::NonFinite {
                    op: "scan_forward",
                    position: t,
                });
            }
            y[t * d + ch] = acc;
        }
        if let Some(hh) = hist.as_mut() {
            hh[t * d * s..(t + 1) * d * s].copy_from_slice(&h);
        }
    }
    Ok((y, hist))
}

/// Gradients of every scan input.
pub struct ScanGrads {
    pub du: Vec<f64>,
    pub ddelta: Vec<f64>,
    pub db_seq: Vec<f64>,
    pub dc_seq: Vec<f64>,
    pub da: Vec<f64>,
    pub dd_skip: Option<Vec<f64>>,
}

/// Reverse-mode adjoint of [`scan_forward`]. `grad_y` is L x d and `history`
/// must be the history recorded by the forward pass.
pub fn scan_backward(inp: &ScanInputs<'_>, history: &[f64], grad_y: &[f64]) -> ScanGrads {
    let (l, d, s) = (inp.seq_len, inp.channels, inp.state);
    debug_assert_eq!(history.len(), l * d * s);
    let mut du = vec![0.0; l * d];
    let mut ddelta = vec![0.0; l * d];
    let mut db_seq = vec![0.0; l * s];
    let mut dc_seq = vec![0.0; l * s];
    let mut da = vec![0.0; d * s];
    let mut dd_skip = inp.d_skip.map(|_| vec![0.0; d]);

    // lambda[ch,k] = dL/dh_t[ch,k] at the current time step
    let mut lambda = vec![0.0; d * s];
    for t in (0..l).rev() {
        let b_t = &inp.b_seq[t * s..(t + 1) * s];
        let c_t = &inp.c_seq[t * s..(t + 1) * s];
        let h_t = &history[t * d * s..(t + 1) * d * s];
        let h_prev = if t > 0 {
            Some(&history[(t - 1) * d * s..t * d * s])
        } else {
            None
        };
        for ch in 0..d {
            let gy = grad_y[t * d + ch];
            let u_tc = inp.u[t * d + ch];
            let delta_tc = inp.delta[t * d + ch];
            let a_row = &inp.a[ch * s..(ch + 1) * s];
            let lam_row = &mut lambda[ch * s..(ch + 1) * s];
            if let (Some(dk), Some(dd)) = (inp.d_skip, dd_skip.as_mut()) {
                dd[ch] += gy * u_tc;
                du[t * d + ch] += gy * dk[ch];
            }
            let mut du_acc = 0.0;
            let mut ddelta_acc = 0.0;
            for k in 0..s {
                // contribution of y_t = <h_t, c_t>
                dc_seq[t * s + k] += gy * h_t[ch * s + k];
                let mut lam = lam_row[k] + gy * c_t[k];

                // h_t = a_bar*h_prev + b_bar*u_t
                let a_k = a_row[k];
                let x = delta_tc * a_k;
                let a_bar = x.exp();
                let hp = h_prev.map_or(0.0, |h| h[ch * s + k]);
                let da_bar = lam * hp;
                let (b_bar, db_bar_ddelta, db_bar_da, db_bar_db);
                if x.abs() < ZOH_LIMIT {
                    b_bar = delta_tc * b_t[k];
                    db_bar_ddelta = b_t[k];
                    db_bar_da = 0.0;
                    db_bar_db = delta_tc;
                } else {
                    let em1 = x.exp_m1();
                    b_bar = em1 / a_k * b_t[k];
                    db_bar_ddelta = a_bar * b_t[k];
                    db_bar_da = b_t[k] * (delta_tc * a_bar * a_k - em1) / (a_k * a_k);
                    db_bar_db = em1 / a_k;
                }
                let db_bar = lam * u_tc;
                du_acc += lam * b_bar;
                ddelta_acc += da_bar * a_k * a_bar + db_bar * db_bar_ddelta;
                da[ch * s + k] += da_bar * delta_tc * a_bar + db_bar * db_bar_da;
                db_seq[t * s + k] += db_bar * db_bar_db;

                // propagate into h_{t-1}
                lam *= a_bar;
                lam_row[k] = lam;
            }
            du[t * d + ch] += du_acc;
            ddelta[t * d + ch] += ddelta_acc;
        }
    }
    ScanGrads {
        du,
        ddelta,
        db_seq,
        dc_seq,
        da,
        dd_skip,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zoh_limit_case() {
        let (a_bar, b_bar) = zoh_entry(0.0, 1.0, 0.1);
        assert_eq!(a_bar, 1.0);
        assert_eq!(b_bar, 0.1);
    }

    #[test]
    fn zoh_closed_form() {
        // a=-1, b=1, delta=0.1
        let (a_bar, b_bar) = zoh_entry(-1.0, 1.0, 0.1);
        assert!((a_bar - 0.9048374180359595).abs() < 1e-15);
        assert!((b_bar - 0.09516258196404048).abs() < 1e-15);
    }

    #[test]
    fn scan_matches_hand_recurrence() {
        // a_bar=0.5 <=> exp(delta*a)=0.5 with C=1, b_bar=1 arranged via the
        // limit branch is awkward; drive the kernel directly with a single
        // channel and state and verify against the two-term recurrence.
        let l = 3;
        let u = vec![1.0, 1.0, 1.0];
        let delta = vec![0.2, 0.2, 0.2];
        let b_seq = vec![0.7, 0.7, 0.7];
        let c_seq = vec![1.3, 1.3, 1.3];
        let a = vec![-0.9];
        let inp = ScanInputs {
            seq_len: l,
            channels: 1,
            state: 1,
            u: &u,
            delta: &delta,
            b_seq: &b_seq,
            c_seq: &c_seq,
            a: &a,
            d_skip: None,
        };
        let (y, _) = scan_forward(&inp, false).unwrap();
        let (a_bar, b_bar) = zoh_entry(-0.9, 0.7, 0.2);
        let mut h = 0.0;
        for t in 0..l {
            h = a_bar * h + b_bar * u[t];
            assert!((y[t] - 1.3 * h).abs() < 1e-14, "t={t}");
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let inp = ScanInputs {
            seq_len: 0,
            channels: 1,
            state: 1,
            u: &[],
            delta: &[],
            b_seq: &[],
            c_seq: &[],
            a: &[-1.0],
            d_skip: None,
        };
        assert!(scan_forward(&inp, false).is_err());
    }

    #[test]
    fn nonfinite_reports_position() {
        let u = vec![1.0, f64::NAN];
        let delta = vec![0.1, 0.1];
        let b_seq = vec![1.0, 1.0];
        let c_seq = vec![1.0, 1.0];
        let a = vec![-1.0];
        let inp = ScanInputs {
            seq_len: 2,
            channels: 1,
            state: 1,
            u: &u,
            delta: &delta,
            b_seq: &b_seq,
            c_seq: &c_seq,
            a: &a,
            d_skip: None,
        };
        match scan_forward(&inp, false) {
            Err(TensorError::NonFinite { position, .. }) => assert_eq!(position, 1),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }
}
