//! Reductions, finite-difference oracles and refinement-order fits.

/// Pairwise (cascade) summation. The reduction tree depends only on the
/// length of the input, so results are bit-stable for a given ordering.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        let mut s = 0.0;
        for x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// A derivative estimate from a step sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdEstimate {
    pub value: f64,
    /// Richardson-style error estimate at the chosen step.
    pub error: f64,
    pub step: f64,
}

fn log_steps(t_max: f64, t_min: f64, count: usize) -> Vec<f64> {
    let r = (t_min / t_max).powf(1.0 / (count.max(2) - 1) as f64);
    (0..count).map(|i| t_max * r.powi(i as i32)).collect()
}

fn best_of(samples: Vec<(f64, f64)>) -> FdEstimate {
    // samples: (step, central estimate), steps decreasing by a fixed ratio
    let mut best = FdEstimate {
        value: samples[0].1,
        error: f64::INFINITY,
        step: samples[0].0,
    };
    for w in samples.windows(2) {
        let err = (w[1].1 - w[0].1).abs();
        if err < best.error {
            best = FdEstimate {
                value: w[1].1,
                error: err,
                step: w[1].0,
            };
        }
    }
    best
}

/// Central first derivative of `f` at 0, sweeping the step over a
/// logarithmic range and keeping the step where consecutive estimates agree best.
pub fn sweep_first<F: FnMut(f64) -> f64>(mut f: F, t_max: f64, t_min: f64, count: usize) -> FdEstimate {
    let samples = log_steps(t_max, t_min, count)
        .into_iter()
        .map(|t| (t, (f(t) - f(-t)) / (2.0 * t)))
        .collect();
    best_of(samples)
}

/// Central second derivative of `f` at 0 with the same step sweep.
pub fn sweep_second<F: FnMut(f64) -> f64>(mut f: F, t_max: f64, t_min: f64, count: usize) -> FdEstimate {
    let f0 = f(0.0);
    let samples = log_steps(t_max, t_min, count)
        .into_iter()
        .map(|t| (t, (f(t) - 2.0 * f0 + f(-t)) / (t * t)))
        .collect();
    best_of(samples)
}

/// Least-squares slope of log(err) against log(h): the observed convergence order.
pub fn convergence_order(h: &[f64], err: &[f64]) -> f64 {
    let n = h.len() as f64;
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|v| v.abs().max(1e-300).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

#[cfg(test)]
pub(crate) fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(a.abs()).max(1e-300)
}
