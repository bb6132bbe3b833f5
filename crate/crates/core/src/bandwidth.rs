//! Optimal bandwidth split for the clients of one edge server.
//!
//! Each client finishes at `a_n + c_n / b_n`, where `a_n` is its
//! bandwidth-independent delay, `c_n` its upload time at full bandwidth, and
//! `b_n` its share. Minimizing the slowest completion over the share simplex
//! is convex, and at the optimum every completion is equal: the common value
//! T solves sum(c_n / (T - a_n)) = 1, a strictly decreasing function with one
//! root above max(a_n). The solver brackets that root, bisects to the
//! requested tolerance, and polishes with a few Newton steps so the returned
//! shares reproduce T to near machine precision.

/// One server's allocation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BwInstance {
    /// Per client: delay that does not depend on bandwidth (s).
    pub fixed_delay_s: Vec<f64>,
    /// Per client: upload time when given the entire band (s).
    pub full_band_upload_s: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum BwError {
    #[error("no clients in bandwidth instance")]
    EmptyInstance,
    #[error("client {index}: non-finite or non-positive coefficient")]
    NonFinite { index: usize },
    #[error("grid search supports at most {max} clients, got {got}")]
    TooManyClients { max: usize, got: usize },
}

/// Default absolute tolerance on the optimal delay (s).
pub const DEFAULT_TOL: f64 = 1e-9;

fn validate(inst: &BwInstance) -> Result<(), BwError> {
    if inst.fixed_delay_s.is_empty() {
        return Err(BwError::EmptyInstance);
    }
    assert_eq!(inst.fixed_delay_s.len(), inst.full_band_upload_s.len());
    for (i, (&a, &c)) in inst
        .fixed_delay_s
        .iter()
        .zip(&inst.full_band_upload_s)
        .enumerate()
    {
        if !a.is_finite() || !c.is_finite() || a < 0.0 || c <= 0.0 {
            return Err(BwError::NonFinite { index: i });
        }
    }
    Ok(())
}

/// sum(c_n / (T - a_n)) - 1; positive below the root, negative above.
fn residual(inst: &BwInstance, t: f64) -> f64 {
    inst.fixed_delay_s
        .iter()
        .zip(&inst.full_band_upload_s)
        .map(|(&a, &c)| c / (t - a))
        .sum::<f64>()
        - 1.0
}

fn residual_slope(inst: &BwInstance, t: f64) -> f64 {
    -inst
        .fixed_delay_s
        .iter()
        .zip(&inst.full_band_upload_s)
        .map(|(&a, &c)| c / (t - a).powi(2))
        .sum::<f64>()
}

/// Minimizes the slowest completion time of one server's clients over
/// bandwidth shares.
///
/// Returns per-client shares summing to exactly 1 and the optimal delay.
/// Every client's `a_n + c_n / b_n` equals the returned delay to well within
/// `10 * tol`.
pub fn solve_bandwidth(inst: &BwInstance, tol: f64) -> Result<(Vec<f64>, f64), BwError> {
    assert!(tol > 0.0, "tolerance must be positive");
    validate(inst)?;
    let n = inst.fixed_delay_s.len();
    if n == 1 {
        return Ok((vec![1.0], inst.fixed_delay_s[0] + inst.full_band_upload_s[0]));
    }
    let a_max = inst.fixed_delay_s.iter().cloned().fold(f64::MIN, f64::max);
    let c_sum: f64 = inst.full_band_upload_s.iter().sum();
    // residual -> +inf as T -> a_max from above, and residual(a_max + c_sum)
    // <= 0 because every denominator is at least c_sum there.
    let mut lo = a_max;
    let mut hi = a_max + c_sum;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if residual(inst, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Newton from the feasible side; the residual is convex and decreasing,
    // so iterates fall monotonically toward the root without crossing it.
    let mut t = hi;
    for _ in 0..8 {
        let r = residual(inst, t);
        if r.abs() < 1e-15 {
            break;
        }
        let slope = residual_slope(inst, t);
        let next = t - r / slope;
        if !next.is_finite() || next <= a_max || next == t {
            break;
        }
        t = next;
    }
    let mut shares: Vec<f64> = inst
        .fixed_delay_s
        .iter()
        .zip(&inst.full_band_upload_s)
        .map(|(&a, &c)| c / (t - a))
        .collect();
    let sum: f64 = shares.iter().sum();
    for b in &mut shares {
        *b /= sum;
    }
    // Pin the total to exactly 1 by recomputing the last share.
    let head: f64 = shares[..n - 1].iter().sum();
    shares[n - 1] = 1.0 - head;
    Ok((shares, t))
}

/// Exhaustive grid search over the share simplex, for verification at small
/// sizes. Minimizes the same objective over shares that are multiples of
/// `grid_step`.
pub fn oracle_bandwidth(inst: &BwInstance, grid_step: f64) -> Result<(Vec<f64>, f64), BwError> {
    validate(inst)?;
    let n = inst.fixed_delay_s.len();
    if n > 4 {
        return Err(BwError::TooManyClients { max: 4, got: n });
    }
    let steps = (1.0 / grid_step).round() as usize;
    let objective = |shares: &[f64]| -> f64 {
        inst.fixed_delay_s
            .iter()
            .zip(&inst.full_band_upload_s)
            .zip(shares)
            .map(|((&a, &c), &b)| a + c / b)
            .fold(f64::MIN, f64::max)
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut consider = |ticks: &[usize]| {
        if ticks.iter().any(|&t| t == 0) {
            return;
        }
        let shares: Vec<f64> = ticks.iter().map(|&t| t as f64 * grid_step).collect();
        let obj = objective(&shares);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((shares, obj));
        }
    };
    match n {
        1 => consider(&[steps]),
        2 => {
            for i in 0..=steps {
                consider(&[i, steps - i]);
            }
        }
        3 => {
            for i in 0..=steps {
                for j in 0..=steps - i {
                    consider(&[i, j, steps - i - j]);
                }
            }
        }
        4 => {
            for i in 0..=steps {
                for j in 0..=steps - i {
                    for k in 0..=steps - i - j {
                        consider(&[i, j, k, steps - i - j - k]);
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(best.expect("full-allocation grid point always exists"))
}
