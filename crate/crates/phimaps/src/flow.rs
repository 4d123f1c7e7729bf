//! Gradient descent on the Φ₍₃₎ energy and the energy-shrinking homotopy on
//! sphere targets built from conformal flows.

use rayon::prelude::*;

use crate::energy::{phi_energy, MapField};
use crate::error::{Error, Result};
use crate::manifold::{EmbeddedTarget, GridModel, Target};
use crate::maps::{conformal_flow, AmbientMap};
use crate::variation::{euler_lagrange_residual, tension_field};

/// Energies and step data of a flow run. `energies[0]` is the initial energy;
/// step `i` moves from `energies[i]` to `energies[i + 1]` with `step_sizes[i]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowTrace {
    pub energies: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `E_{ℓ+1}/E_ℓ`.
    pub ratios: Vec<f64>,
    /// Ratio predicted by each step's shrink schedule (homotopy runs only).
    pub predicted_ratios: Vec<f64>,
    /// Chosen ambient axis and sign per homotopy step.
    pub descent: Vec<(usize, f64)>,
}

impl FlowTrace {
    fn start(energy: f64, residual: f64) -> Self {
        FlowTrace {
            energies: vec![energy],
            residuals: vec![residual],
            ..Default::default()
        }
    }

    fn push(&mut self, energy: f64, step: f64, residual: f64) {
        let prev = *self.energies.last().unwrap_or(&energy);
        self.ratios.push(if prev > 0.0 { energy / prev } else { 0.0 });
        self.energies.push(energy);
        self.step_sizes.push(step);
        self.residuals.push(residual);
    }

    pub fn steps(&self) -> usize {
        self.step_sizes.len()
    }

    pub fn initial_energy(&self) -> f64 {
        self.energies.first().copied().unwrap_or(0.0)
    }

    pub fn final_energy(&self) -> f64 {
        self.energies.last().copied().unwrap_or(0.0)
    }

    /// Largest observed one-step ratio.
    pub fn empirical_rho(&self) -> f64 {
        self.ratios.iter().copied().fold(0.0, f64::max)
    }
}

/// Backtracking rule: halve on energy increase, grow after acceptance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRule {
    pub initial: f64,
    pub growth: f64,
    pub shrink: f64,
    pub min_step: f64,
    /// Stop once the Euler–Lagrange residual falls below this.
    pub residual_tol: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule {
            initial: 1e-2,
            growth: 1.5,
            shrink: 0.5,
            min_step: 1e-14,
            residual_tol: 1e-10,
        }
    }
}

/// Explicit descent `u ← Π(u + dt·τ(u))` on a grid without overlapping charts.
pub fn gradient_flow(u0: &MapField, max_steps: usize, rule: StepRule) -> Result<(MapField, FlowTrace)> {
    match u0.grid().model() {
        GridModel::FlatTorus { .. } | GridModel::FlatBox { .. } => {}
        _ => {
            return Err(Error::Inapplicable(
                "gradient flow needs a grid where every node is an independent unknown (flat box or torus)".into(),
            ))
        }
    }
    if !(rule.initial > 0.0 && rule.growth >= 1.0 && rule.shrink > 0.0 && rule.shrink < 1.0 && rule.residual_tol > 0.0) {
        return Err(Error::param("step rule", "need positive step, growth >= 1 and 0 < shrink < 1"));
    }
    let target = u0.target().clone();
    let q = u0.ambient_dim();
    let mut u = MapField::from_values(u0.shared_grid(), target.clone(), u0.values().to_vec())?;
    let mut energy = phi_energy(&u, 3, None)?;
    let mut residual = euler_lagrange_residual(&u);
    let mut trace = FlowTrace::start(energy, residual);
    let mut dt = rule.initial;
    while trace.steps() < max_steps && residual > rule.residual_tol {
        let tau = tension_field(&u);
        loop {
            if dt < rule.min_step {
                return Err(Error::StepUnderflow {
                    steps: trace.steps(),
                    residual,
                });
            }
            let moved = u
                .values()
                .par_chunks(q)
                .enumerate()
                .map(|(node, p)| {
                    let shifted: Vec<f64> = p.iter().zip(tau.value(node)).map(|(x, t)| x + dt * t).collect();
                    target.project(&shifted)
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            let next = MapField::from_values(u.shared_grid(), target.clone(), moved.concat())?;
            let e = phi_energy(&next, 3, None)?;
            if e < energy {
                u = next;
                energy = e;
                residual = euler_lagrange_residual(&u);
                trace.push(energy, dt, residual);
                dt *= rule.growth;
                break;
            }
            dt *= rule.shrink;
        }
    }
    Ok((u, trace))
}

fn sphere_radius(u: &MapField) -> Result<(usize, f64)> {
    match u.target() {
        Target::Sphere { dim, radius } => Ok((*dim, *radius)),
        other => Err(Error::Inapplicable(format!(
            "conformal flows need a sphere target, got {}",
            other.name()
        ))),
    }
}

/// Composes `u` with the time-`t` flow of `v^⊤` on its sphere target.
pub fn conformal_shrink_step(u: &MapField, direction: &[f64], t: f64) -> Result<MapField> {
    let (_, radius) = sphere_radius(u)?;
    let q = u.ambient_dim();
    if direction.len() != q {
        return Err(Error::DimensionMismatch {
            context: "flow direction",
            expected: q,
            found: direction.len(),
        });
    }
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::param("direction", "must be a unit vector"));
    }
    if !(-1.0..=1.0).contains(&t) {
        return Err(Error::param("t", "must lie in [-1, 1]"));
    }
    if t == 0.0 {
        return Ok(u.clone());
    }
    let target = u.target().clone();
    if u.source().is_some() {
        return u.then(
            AmbientMap::ConformalFlow {
                pole: direction.to_vec(),
                time: t,
                radius,
            },
            target,
        );
    }
    let values: Vec<f64> = u
        .values()
        .chunks(q)
        .flat_map(|p| conformal_flow(p, direction, t, radius))
        .collect();
    MapField::from_values(u.shared_grid(), target, values)
}

/// Measured derivatives of `t ↦ E(f_t^{e_ℓ} ∘ u)` at `t = 0` for one axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisDerivatives {
    pub axis: usize,
    pub first: f64,
    pub second: f64,
    pub third: f64,
}

const AXIS_STEP: f64 = 1e-2;

/// Central-difference derivatives of the energy along the conformal flow of every ambient axis.
pub fn axis_energy_derivatives(u: &MapField) -> Result<Vec<AxisDerivatives>> {
    sphere_radius(u)?;
    let q = u.ambient_dim();
    let e0 = phi_energy(u, 3, None)?;
    let h = AXIS_STEP;
    (0..q)
        .into_par_iter()
        .map(|axis| {
            let mut dir = vec![0.0; q];
            dir[axis] = 1.0;
            let e = |t: f64| -> Result<f64> { phi_energy(&conformal_shrink_step(u, &dir, t)?, 3, None) };
            let (p1, m1, p2, m2) = (e(h)?, e(-h)?, e(2.0 * h)?, e(-2.0 * h)?);
            Ok(AxisDerivatives {
                axis,
                first: (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h),
                second: (-p2 + 16.0 * p1 - 30.0 * e0 + 16.0 * m1 - m2) / (12.0 * h * h),
                third: (p2 - 2.0 * p1 + 2.0 * m1 - m2) / (2.0 * h * h * h),
            })
        })
        .collect()
}

/// Constants of one shrinking step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShrinkSchedule {
    /// `−min_ℓ E''_ℓ / (6E)`.
    pub kappa: f64,
    /// Measured `max_ℓ |E'''_ℓ| / E`.
    pub xi_measured: f64,
    /// `max{6κ, ξ_measured}`, the value used.
    pub xi: f64,
    /// `max{5κ, ξ_measured}`, for comparison.
    pub xi_alternative: f64,
    /// Flow time `5κ/ξ`.
    pub zeta: f64,
    /// Predicted ratio `1 − κζ²/2`.
    pub rho: f64,
}

impl ShrinkSchedule {
    pub fn new(kappa: f64, xi_measured: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::param("kappa", "must be positive"));
        }
        let xi = xi_measured.max(6.0 * kappa);
        let zeta = 5.0 * kappa / xi;
        Ok(ShrinkSchedule {
            kappa,
            xi_measured,
            xi,
            xi_alternative: xi_measured.max(5.0 * kappa),
            zeta,
            rho: 1.0 - kappa * zeta * zeta / 2.0,
        })
    }
}

#[derive(Clone, Debug)]
pub struct ShrinkRun {
    pub trace: FlowTrace,
    /// Uniform schedule from the smallest κ and largest ξ over the run.
    pub schedule: Option<ShrinkSchedule>,
    /// Schedule of each step.
    pub steps: Vec<ShrinkSchedule>,
    pub map: MapField,
}

const TIE_TOLERANCE: f64 = 1e-12;

/// Picks the axis with the most negative second derivative and the sign
/// that makes the first derivative nonpositive.
pub fn choose_descent_axis(derivatives: &[AxisDerivatives]) -> Result<(usize, f64, f64)> {
    let min = derivatives.iter().map(|d| d.second).fold(f64::INFINITY, f64::min);
    let best = derivatives
        .iter()
        .find(|d| d.second <= min + TIE_TOLERANCE * min.abs().max(1.0))
        .ok_or(Error::NoDescentAxis { min_second: min })?;
    if !(best.second < 0.0) {
        return Err(Error::NoDescentAxis { min_second: min });
    }
    let sign = if best.first > 0.0 { -1.0 } else { 1.0 };
    Ok((best.axis, sign, best.second))
}

/// Iterates `u_{ℓ+1} = f_ζ^V ∘ u_ℓ` along the best descent axis of each step.
pub fn homotopy_shrink(u0: &MapField, iterations: usize) -> Result<ShrinkRun> {
    let (n, _) = sphere_radius(u0)?;
    if n <= 6 {
        return Err(Error::HypothesesUnmet(format!(
            "S^{n} is not Φ₍₃₎-SSU; shrinking needs a sphere of dimension above 6"
        )));
    }
    let q = u0.ambient_dim();
    let mut u = u0.clone();
    let mut energy = phi_energy(&u, 3, None)?;
    let mut trace = FlowTrace::start(energy, euler_lagrange_residual(&u));
    let mut steps = Vec::new();
    for _ in 0..iterations {
        if energy <= 0.0 {
            break;
        }
        let derivs = axis_energy_derivatives(&u)?;
        let (axis, sign, second) = choose_descent_axis(&derivs)?;
        let kappa = -second / (6.0 * energy);
        let xi0 = derivs.iter().map(|d| d.third.abs()).fold(0.0, f64::max) / energy;
        let schedule = ShrinkSchedule::new(kappa, xi0)?;
        let mut dir = vec![0.0; q];
        dir[axis] = sign;
        u = conformal_shrink_step(&u, &dir, schedule.zeta)?;
        energy = phi_energy(&u, 3, None)?;
        trace.push(energy, schedule.zeta, euler_lagrange_residual(&u));
        trace.predicted_ratios.push(schedule.rho);
        trace.descent.push((axis, sign));
        steps.push(schedule);
    }
    let schedule = if steps.is_empty() {
        None
    } else {
        let kappa = steps.iter().map(|s| s.kappa).fold(f64::INFINITY, f64::min);
        let xi = steps.iter().map(|s| s.xi_measured).fold(0.0, f64::max);
        Some(ShrinkSchedule::new(kappa, xi)?)
    };
    Ok(ShrinkRun {
        trace,
        schedule,
        steps,
        map: u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{build_model_grid, sphere_target};
    use crate::maps::AnalyticMap;
    use crate::variation::{second_variation, VariationField};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn s2(n: usize) -> Arc<crate::manifold::DomainGrid> {
        Arc::new(build_model_grid(GridModel::RoundSphere { dim: 2, radius: 1.0, nodes: n }).unwrap())
    }

    fn great_sphere(n: usize, target_dim: usize) -> MapField {
        let incl = DMatrix::from_fn(target_dim + 1, 3, |i, j| if i == j { 1.0 } else { 0.0 });
        MapField::from_analytic(
            s2(n),
            sphere_target(target_dim, 1.0).unwrap(),
            AnalyticMap::identity().then(AmbientMap::linear(incl)),
        )
        .unwrap()
    }

    #[test]
    fn flow_step_is_invertible_and_stays_on_target() {
        let u = great_sphere(20, 7);
        let mut dir = vec![0.0; 8];
        dir[1] = 0.6;
        dir[5] = 0.8;
        let there = conformal_shrink_step(&u, &dir, 0.7).unwrap();
        let back = conformal_shrink_step(&there, &dir, -0.7).unwrap();
        let dev = u.values().iter().zip(back.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-8);
        assert!(there.constraint_residual() < 1e-10);
        assert_eq!(conformal_shrink_step(&u, &dir, 0.0).unwrap().values(), u.values());
        let pole = MapField::constant(s2(12), sphere_target(7, 1.0).unwrap(), dir.clone()).unwrap();
        let fixed = conformal_shrink_step(&pole, &dir, 0.9).unwrap();
        let dev = pole.values().iter().zip(fixed.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-14);
        // nodal maps take the same path through their values
        let nodal = MapField::from_values(u.shared_grid(), u.target().clone(), u.values().to_vec()).unwrap();
        let moved = conformal_shrink_step(&nodal, &dir, 0.7).unwrap();
        let dev = moved.values().iter().zip(there.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-13);
    }

    #[test]
    fn axis_curvature_matches_second_variation_at_harmonic_map() {
        let u = great_sphere(32, 7);
        let d = axis_energy_derivatives(&u).unwrap();
        for (l, dl) in d.iter().enumerate() {
            let v = VariationField::tangential_axis(&u, l).unwrap();
            let i = second_variation(&u, &v, &v).unwrap();
            assert!((dl.second - i).abs() < 1e-3 * i.abs().max(1.0), "axis {l}: {} vs {i}", dl.second);
            assert!(dl.first.abs() < 1e-6);
        }
        let total: f64 = d.iter().map(|x| x.second).sum();
        assert!((total + 8.0 * PI).abs() < 0.02 * 8.0 * PI);
    }

    #[test]
    fn shrinking_refuses_low_dimensional_spheres() {
        let u = great_sphere(16, 5);
        assert!(matches!(homotopy_shrink(&u, 3), Err(Error::HypothesesUnmet(_))));
        // the identity of S⁵ has a nonnegative axis sum, 5(6 − 5)·Vol(S⁵)
        let g = Arc::new(build_model_grid(GridModel::RoundSphere { dim: 5, radius: 1.0, nodes: 12 }).unwrap());
        let id = MapField::identity(g, sphere_target(5, 1.0).unwrap()).unwrap();
        let total: f64 = axis_energy_derivatives(&id).unwrap().iter().map(|d| d.second).sum();
        assert!(total > 0.0);
    }

    #[test]
    fn constant_map_does_not_move() {
        let mut p = vec![0.0; 8];
        p[3] = 1.0;
        let c = MapField::constant(s2(12), sphere_target(7, 1.0).unwrap(), p).unwrap();
        let run = homotopy_shrink(&c, 5).unwrap();
        assert_eq!(run.trace.energies, vec![0.0]);
        assert!(run.schedule.is_none());
    }

    #[test]
    fn great_sphere_energy_shrinks_geometrically() {
        let u = great_sphere(24, 7);
        let run = homotopy_shrink(&u, 6).unwrap();
        let t = &run.trace;
        assert!(t.ratios.iter().all(|r| *r < 1.0), "{:?}", t.ratios);
        let rho = t.empirical_rho();
        assert!(t.final_energy() <= rho.powi(6) * t.initial_energy());
        assert!(run.map.constraint_residual() < 1e-10);
        let s = run.schedule.unwrap();
        assert!(s.zeta <= 1.0 && s.rho > 0.0 && s.rho < 1.0);
        for step in &run.steps {
            assert!(step.xi >= 6.0 * step.kappa);
        }
    }

    #[test]
    fn schedule_arithmetic() {
        let s = ShrinkSchedule::new(0.1, 0.0).unwrap();
        assert!((s.xi - 0.6).abs() < 1e-15 && (s.zeta - 5.0 / 6.0).abs() < 1e-15);
        assert!((s.rho - (1.0 - 0.05 * 25.0 / 36.0)).abs() < 1e-15);
        assert_eq!(s.xi_alternative, 0.5);
        let s = ShrinkSchedule::new(0.1, 3.0).unwrap();
        assert!((s.zeta - 0.5 / 3.0).abs() < 1e-15);
        assert!(ShrinkSchedule::new(0.0, 1.0).is_err());
    }

    #[test]
    fn linear_torus_map_is_stationary() {
        let g = Arc::new(build_model_grid(GridModel::FlatTorus { dim: 2, nodes: 16 }).unwrap());
        let u = MapField::from_analytic(g, Target::torus(2), AnalyticMap::identity().then(AmbientMap::AnglesToCircles)).unwrap();
        let (_, trace) = gradient_flow(&u, 10, StepRule { residual_tol: 1e-8, ..Default::default() }).unwrap();
        assert_eq!(trace.steps(), 0);
        assert!(trace.residuals[0] < 1e-8);
    }

    #[test]
    fn perturbed_constant_map_into_s7_relaxes() {
        let g = Arc::new(build_model_grid(GridModel::FlatTorus { dim: 2, nodes: 12 }).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base: Vec<f64> = (0..8).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        let values: Vec<f64> = (0..g.len())
            .flat_map(|_| {
                let p: Vec<f64> = base.iter().map(|b| b + 0.05 * rng.random_range(-1.0..1.0)).collect();
                let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                p.into_iter().map(move |x| x / n)
            })
            .collect();
        let u0 = MapField::from_values(g, sphere_target(7, 1.0).unwrap(), values).unwrap();
        let (u, trace) = gradient_flow(&u0, 400, StepRule { initial: 1.0, ..Default::default() }).unwrap();
        assert!(trace.energies.windows(2).all(|w| w[1] < w[0]));
        assert!(trace.final_energy() <= 1e-6 * trace.initial_energy(), "{} {}", trace.final_energy(), trace.initial_energy());
        assert!(u.constraint_residual() < 1e-10);
        let c = MapField::constant(u.shared_grid(), sphere_target(7, 1.0).unwrap(), base).unwrap();
        let (_, t) = gradient_flow(&c, 5, StepRule::default()).unwrap();
        assert_eq!(t.steps(), 0);
    }

    #[test]
    fn gradient_flow_refuses_sphere_grids() {
        let u = great_sphere(12, 7);
        assert!(matches!(gradient_flow(&u, 3, StepRule::default()), Err(Error::Inapplicable(_))));
    }
}
