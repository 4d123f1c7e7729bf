//! Hessian comparison bounds for the distance from a pole, the Λ constants
//! that feed the monotonicity formula, and numerical checks of the
//! monotonicity inequality and of the volume-growth hypothesis.

use rayon::prelude::*;

use crate::energy::{phi_energy, MapField};
use crate::error::{Error, Result};
use crate::manifold::{x_coth_x, CurvatureProfile, DomainGrid, GridModel};
use crate::variation::euler_lagrange_residual;

/// Eigenvalue bounds of `Hess(r²) − 2dr⊗dr` on the complement of `∂/∂r`
/// at one radius, and the resulting monotonicity condition value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialEigenSummary {
    pub radius: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `1 + (m−1)λ_min/2 − 3·max{2, λ_max}`.
    pub condition: f64,
}

impl RadialEigenSummary {
    fn new(radius: f64, lambda_min: f64, lambda_max: f64, m: usize) -> Self {
        RadialEigenSummary {
            radius,
            lambda_min,
            lambda_max,
            condition: condition_value(lambda_min, lambda_max, m),
        }
    }
}

pub fn condition_value(lambda_min: f64, lambda_max: f64, m: usize) -> f64 {
    1.0 + (m as f64 - 1.0) * lambda_min / 2.0 - 3.0 * lambda_max.max(2.0)
}

/// Comparison bounds on `Hess(r²) − 2dr⊗dr` from two-sided radial curvature bounds.
pub fn hessian_comparison(profile: &CurvatureProfile, r: f64, m: usize) -> Result<RadialEigenSummary> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::param("r", "must be positive"));
    }
    if m < 2 {
        return Err(Error::param("m", "must be at least 2"));
    }
    let (lo, hi) = match profile.validated()? {
        CurvatureProfile::PinchedNegative { max_rate, min_rate } => {
            (2.0 * x_coth_x(min_rate * r), 2.0 * x_coth_x(max_rate * r))
        }
        CurvatureProfile::PowerDecay {
            negative,
            positive,
            decay,
        } => (
            2.0 * (1.0 - positive / (2.0 * decay)),
            2.0 * (negative / (2.0 * decay)).exp(),
        ),
        CurvatureProfile::InverseSquare { negative, positive } => (
            1.0 + (1.0 - 4.0 * positive * positive).sqrt(),
            1.0 + (1.0 + 4.0 * negative * negative).sqrt(),
        ),
    };
    Ok(RadialEigenSummary::new(r, lo, hi, m))
}

/// The exact eigenvalue `2r f'/f` of the rotationally symmetric model on a pole grid.
pub fn model_eigen_summary(grid: &DomainGrid, r: f64) -> Result<RadialEigenSummary> {
    let (f, df, _) = grid.warp(r).ok_or(Error::NoPole)?;
    let lambda = 2.0 * r * df / f;
    Ok(RadialEigenSummary::new(r, lambda, lambda, grid.dim()))
}

/// The lower bound Λ of the condition value guaranteed by the profile.
pub fn lambda_constant(profile: &CurvatureProfile, m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::param("m", "must be at least 2"));
    }
    let mf = m as f64;
    let lambda = match profile.validated()? {
        CurvatureProfile::PinchedNegative { max_rate, min_rate } => {
            let ratio = if max_rate == min_rate {
                1.0
            } else if min_rate > 0.0 {
                max_rate / min_rate
            } else {
                return Err(Error::HypothesesUnmet(
                    "pinched curvature bound needs min_rate > 0 unless the rates coincide".into(),
                ));
            };
            if mf - 1.0 - 6.0 * ratio < 0.0 {
                return Err(Error::HypothesesUnmet(format!(
                    "(m−1)·min_rate − 6·max_rate = {} is negative",
                    (mf - 1.0) - 6.0 * ratio
                )));
            }
            mf - 6.0 * ratio
        }
        CurvatureProfile::PowerDecay {
            negative,
            positive,
            decay,
        } => 1.0 + (mf - 1.0) * (1.0 - positive / (2.0 * decay)) - 6.0 * (negative / (2.0 * decay)).exp(),
        CurvatureProfile::InverseSquare { negative, positive } => {
            1.0 + (mf - 1.0) * (1.0 + (1.0 - 4.0 * positive * positive).sqrt()) / 2.0
                - 6.0 * (1.0 + (1.0 + 4.0 * negative * negative).sqrt()) / 2.0
        }
    };
    if lambda <= 0.0 {
        return Err(Error::HypothesesUnmet(format!("Λ = {lambda} is not positive")));
    }
    Ok(lambda)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityReport {
    pub zeta: f64,
    pub radii: Vec<f64>,
    pub energies: Vec<f64>,
    /// `ρ^{−ζ} E(B(ρ))`.
    pub normalized: Vec<f64>,
    /// Largest relative drop between consecutive normalized energies.
    pub worst_dip: f64,
    /// Model condition value at each radius.
    pub conditions: Vec<f64>,
    /// First radius where the condition value falls below ζ.
    pub condition_violated_at: Option<f64>,
    /// Smallest nodal value of `⟨d₍₃₎u(∂r), du(∂r)⟩`, which the formula drops as nonnegative.
    pub radial_term_min: f64,
    pub residual: f64,
    pub pass: bool,
}

const DIP_TOLERANCE: f64 = 1e-3;

/// Checks that `ρ ↦ ρ^{−ζ} E(B(ρ))` is nondecreasing over the given radii.
pub fn monotonicity_check(u: &MapField, zeta: f64, radii: &[f64]) -> Result<MonotonicityReport> {
    let grid = u.grid();
    if !grid.has_pole() {
        return Err(Error::NoPole);
    }
    if !(zeta > 0.0) {
        return Err(Error::param("zeta", "must be positive"));
    }
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0)) || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("radii", "must be positive and strictly increasing"));
    }
    let energies = radii
        .par_iter()
        .map(|&r| phi_energy(u, 3, Some(r)))
        .collect::<Result<Vec<f64>>>()?;
    let normalized: Vec<f64> = radii.iter().zip(&energies).map(|(r, e)| e / r.powf(zeta)).collect();
    let worst_dip = normalized
        .windows(2)
        .map(|w| if w[0] > 0.0 { (w[0] - w[1]) / w[0] } else { 0.0 })
        .fold(0.0, f64::max);
    let conditions = radii
        .iter()
        .map(|&r| model_eigen_summary(grid, r).map(|s| s.condition))
        .collect::<Result<Vec<f64>>>()?;
    let condition_violated_at = radii
        .iter()
        .zip(&conditions)
        .find(|(_, c)| **c < zeta)
        .map(|(r, _)| *r);
    let radial_term_min = (0..u.len())
        .into_par_iter()
        .filter(|&n| grid.weight(n) > 0.0)
        .map(|n| {
            // e_rᵀ U³ e_r with U e_r = Fᵀ du(∂r)
            let f = u.frame_differential(n);
            let a = f.transpose() * f.column(0);
            a.dot(&(f.transpose() * (&f * &a)))
        })
        .reduce(|| f64::INFINITY, f64::min);
    let pass = worst_dip <= DIP_TOLERANCE && condition_violated_at.is_none();
    Ok(MonotonicityReport {
        zeta,
        radii: radii.to_vec(),
        energies,
        normalized,
        worst_dip,
        conditions,
        condition_violated_at,
        radial_term_min,
        residual: euler_lagrange_residual(u),
        pass,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeConditionReport {
    pub zeta: f64,
    pub radii: Vec<f64>,
    /// `∫_R^∞ Vol(∂B(r))^{−1/5} dr`, quadrature part plus tail.
    pub lhs: Vec<f64>,
    /// Analytic tail beyond the truncation radius, included in `lhs`.
    pub tail: f64,
    pub truncation: f64,
    /// `min_R lhs(R)·R^{ζ/5}`.
    pub fitted_constant: f64,
    /// `C·R^{−ζ/5}` with the fitted constant.
    pub rhs: Vec<f64>,
    /// Least-squares slope of `log lhs` against `log R`.
    pub slope: f64,
    pub pass: bool,
}

const SLOPE_SLACK: f64 = 0.02;

/// Evaluates the volume-growth hypothesis `∫_R^∞ Vol(∂B(r))^{−1/5} dr ≥ C R^{−ζ/5}`.
pub fn volume_integral_condition(grid: &DomainGrid, zeta: f64, radii: &[f64]) -> Result<VolumeConditionReport> {
    let rings = grid.ring_count().ok_or(Error::NoPole)?;
    let extent = grid.radial_extent().ok_or(Error::NoPole)?;
    if !(zeta > 0.0) {
        return Err(Error::param("zeta", "must be positive"));
    }
    let truncation = 0.9 * extent;
    if radii.len() < 2 || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::param("radii", "need at least two positive radii"));
    }
    if let Some(&bad) = radii.iter().find(|r| **r >= truncation) {
        return Err(Error::OutOfRange {
            radius: bad,
            extent: truncation,
        });
    }
    let m = grid.dim();
    let samples: Vec<(f64, f64)> = (0..rings)
        .map(|k| {
            let r = grid.ring_radius(k).unwrap_or(0.0);
            grid.shell_area(k).map(|a| (r, a.powf(-0.2)))
        })
        .collect::<Result<_>>()?;
    let at = |r: f64| -> f64 {
        let i = samples.partition_point(|s| s.0 <= r).clamp(1, samples.len() - 1);
        let (r0, f0) = samples[i - 1];
        let (r1, f1) = samples[i];
        f0 + (f1 - f0) * (r - r0) / (r1 - r0)
    };
    // trapezoid through the ring centers between a and the truncation radius
    let integral = |a: f64| -> f64 {
        let mut nodes = vec![a];
        nodes.extend(samples.iter().map(|s| s.0).filter(|r| *r > a && *r < truncation));
        nodes.push(truncation);
        nodes.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (at(w[0]) + at(w[1]))).sum()
    };
    // beyond the truncation, a power law with the local exponent of the shell area bounds the remainder
    let (f, df, _) = grid.warp(truncation).ok_or(Error::NoPole)?;
    let exponent = truncation * df / f * (m as f64 - 1.0) / 5.0;
    let tail = if exponent > 1.0 {
        at(truncation) * truncation / (exponent - 1.0)
    } else {
        f64::INFINITY
    };
    let lhs: Vec<f64> = radii.iter().map(|&r| integral(r) + tail).collect();
    let fitted_constant = radii
        .iter()
        .zip(&lhs)
        .map(|(r, l)| l * r.powf(zeta / 5.0))
        .fold(f64::INFINITY, f64::min);
    let rhs = radii.iter().map(|r| fitted_constant * r.powf(-zeta / 5.0)).collect();
    let slope = if tail.is_finite() {
        let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
        let ys: Vec<f64> = lhs.iter().map(|l| l.ln()).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    } else {
        0.0
    };
    let pass = fitted_constant > 0.0 && slope >= -zeta / 5.0 - SLOPE_SLACK;
    Ok(VolumeConditionReport {
        zeta,
        radii: radii.to_vec(),
        lhs,
        tail,
        truncation,
        fitted_constant,
        rhs,
        slope,
        pass,
    })
}

/// The curvature profile a pole grid was built from.
pub fn grid_profile(grid: &DomainGrid) -> Option<CurvatureProfile> {
    match grid.model() {
        GridModel::RotationalPole { profile, .. } => Some(*profile),
        _ => None,
    }
}
