//! Sampled maps, pullback metrics and Φ-energies.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifold::{CurvatureProfile, DomainGrid, EmbeddedTarget, GridModel, Target, NONE};
use crate::maps::{AmbientMap, AnalyticMap, MapSource};
use crate::numeric::pairwise_sum;
use crate::real::Hyper;

/// Largest tolerated constraint residual of nodal values.
pub const ON_TARGET_TOL: f64 = 1e-10;

/// A map `u : M → N ⊂ R^q` sampled on a [`DomainGrid`].
///
/// Nodal values are stored together with coordinate derivatives
/// `∂_a u` (index `node·m·q + a·q + c`). Maps built from an [`AnalyticMap`]
/// carry exact derivatives and keep the closed form around; maps built from
/// nodal values use finite differences along the grid axes.
#[derive(Clone, Debug)]
pub struct MapField {
    grid: Arc<DomainGrid>,
    target: Target,
    values: Vec<f64>,
    d1: Vec<f64>,
    source: Option<AnalyticMap>,
}

impl MapField {
    /// Samples a closed-form map, followed by projection onto the target.
    pub fn from_analytic(grid: Arc<DomainGrid>, target: Target, map: AnalyticMap) -> Result<Self> {
        let map = map.then(AmbientMap::Project(target.clone()));
        let (values, d1) = analytic_jets(&grid, &map, target.ambient_dim())?;
        let field = MapField {
            grid,
            target,
            values,
            d1,
            source: Some(map),
        };
        field.check_on_target()?;
        Ok(field)
    }

    /// Wraps nodal values (`N × q`, row-major); derivatives by finite differences.
    pub fn from_values(grid: Arc<DomainGrid>, target: Target, values: Vec<f64>) -> Result<Self> {
        let q = target.ambient_dim();
        if values.len() != grid.len() * q {
            return Err(Error::DimensionMismatch {
                context: "nodal values",
                expected: grid.len() * q,
                found: values.len(),
            });
        }
        let d1 = nodal_differential(&grid, &values, q);
        let field = MapField {
            grid,
            target,
            values,
            d1,
            source: None,
        };
        field.check_on_target()?;
        Ok(field)
    }

    /// Wraps nodal values together with stored coordinate derivatives
    /// (`N × m × q`), as written by a run artifact.
    pub fn from_jets(grid: Arc<DomainGrid>, target: Target, values: Vec<f64>, derivatives: Vec<f64>) -> Result<Self> {
        let q = target.ambient_dim();
        for (context, expected, found) in [
            ("nodal values", grid.len() * q, values.len()),
            ("nodal derivatives", grid.len() * grid.dim() * q, derivatives.len()),
        ] {
            if expected != found {
                return Err(Error::DimensionMismatch { context, expected, found });
            }
        }
        let field = MapField {
            grid,
            target,
            values,
            d1: derivatives,
            source: None,
        };
        field.check_on_target()?;
        Ok(field)
    }

    pub fn identity(grid: Arc<DomainGrid>, target: Target) -> Result<Self> {
        Self::from_analytic(grid, target, AnalyticMap::identity())
    }

    pub fn constant(grid: Arc<DomainGrid>, target: Target, point: Vec<f64>) -> Result<Self> {
        Self::from_analytic(grid, target, AnalyticMap::constant(point))
    }

    fn check_on_target(&self) -> Result<()> {
        let worst = self.constraint_residual();
        if !(worst <= ON_TARGET_TOL) {
            return Err(Error::OffTarget { residual: worst });
        }
        Ok(())
    }

    /// Largest nodal violation of the target's defining constraint.
    pub fn constraint_residual(&self) -> f64 {
        self.values
            .par_chunks(self.ambient_dim())
            .map(|p| self.target.constraint_residual(p))
            .reduce(|| 0.0, f64::max)
    }

    pub fn grid(&self) -> &DomainGrid {
        &self.grid
    }

    pub fn shared_grid(&self) -> Arc<DomainGrid> {
        Arc::clone(&self.grid)
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    /// The closed form, if the map was built from one.
    pub fn source(&self) -> Option<&AnalyticMap> {
        self.source.as_ref()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn domain_dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn ambient_dim(&self) -> usize {
        self.target.ambient_dim()
    }

    /// All coordinate derivatives, `N × m × q` row-major.
    pub fn derivatives(&self) -> &[f64] {
        &self.d1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, node: usize) -> &[f64] {
        let q = self.ambient_dim();
        &self.values[node * q..(node + 1) * q]
    }

    /// Coordinate derivatives `∂_a u` at a node, `a`-major.
    pub fn coordinate_derivatives(&self, node: usize) -> &[f64] {
        let mq = self.domain_dim() * self.ambient_dim();
        &self.d1[node * mq..(node + 1) * mq]
    }

    /// `du(e_a)` as the columns of a `q × m` matrix, in the orthonormal frame `e_a = ∂_a/√g_aa`.
    pub fn frame_differential(&self, node: usize) -> DMatrix<f64> {
        let (m, q) = (self.domain_dim(), self.ambient_dim());
        let g = self.grid.metric_diag(node);
        let d = self.coordinate_derivatives(node);
        DMatrix::from_fn(q, m, |c, a| d[a * q + c] / g[a].sqrt())
    }

    /// The same map with derivatives recomputed by finite differences.
    pub fn to_nodal(&self) -> Result<Self> {
        Self::from_values(self.shared_grid(), self.target.clone(), self.values.clone())
    }

    /// Appends an ambient stage to an analytic map, landing on `target`.
    pub fn then(&self, stage: AmbientMap, target: Target) -> Result<Self> {
        let map = self
            .source
            .clone()
            .ok_or_else(|| Error::Incompatible("stage composition needs an analytic map".into()))?;
        Self::from_analytic(self.shared_grid(), target, map.then(stage))
    }

    pub(crate) fn energy_density_at(&self, node: usize, k: u32) -> f64 {
        PullbackMetric::from_frame_differential(&self.frame_differential(node)).trace_power(k) / (2.0 * k as f64)
    }
}

/// Evaluates values and exact first derivatives, two directions per pass.
fn analytic_jets(grid: &DomainGrid, map: &AnalyticMap, q: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, m) = (grid.len(), grid.dim());
    let mut values = vec![0.0; n * q];
    let mut d1 = vec![0.0; n * m * q];
    values
        .par_chunks_mut(q)
        .zip(d1.par_chunks_mut(m * q))
        .enumerate()
        .try_for_each(|(node, (val, der))| -> Result<()> {
            let x = grid.coords(node);
            let chart = grid.chart(node);
            for a in (0..m).step_by(2) {
                let seeded: Vec<Hyper> = (0..m)
                    .map(|b| {
                        let e1 = if b == a { 1.0 } else { 0.0 };
                        let e2 = if b == a + 1 { 1.0 } else { 0.0 };
                        Hyper::new(x[b], e1, e2, 0.0)
                    })
                    .collect();
                let out = map.eval(grid, chart, &seeded)?;
                if out.len() != q {
                    return Err(Error::DimensionMismatch {
                        context: "map output",
                        expected: q,
                        found: out.len(),
                    });
                }
                for (c, h) in out.iter().enumerate() {
                    val[c] = h.re;
                    der[a * q + c] = h.e1;
                    if a + 1 < m {
                        der[(a + 1) * q + c] = h.e2;
                    }
                }
            }
            if m == 0 {
                let out: Vec<f64> = map.eval(grid, chart, x)?;
                val.copy_from_slice(&out);
            }
            Ok(())
        })?;
    Ok((values, d1))
}

/// Axis derivatives of nodal data: central where both neighbors exist,
/// second-order one-sided at open edges, first order as a last resort.
pub(crate) fn nodal_differential(grid: &DomainGrid, values: &[f64], q: usize) -> Vec<f64> {
    let (n, m) = (grid.len(), grid.dim());
    let mut d1 = vec![0.0; n * m * q];
    let at = |i: u32, c: usize| values[i as usize * q + c];
    d1.par_chunks_mut(m * q).enumerate().for_each(|(node, out)| {
        for a in 0..m {
            let h = grid.steps()[a];
            let lo = grid.neighbor(node, a, 0);
            let hi = grid.neighbor(node, a, 1);
            let me = node as u32;
            let o = &mut out[a * q..(a + 1) * q];
            if lo != NONE && hi != NONE {
                for (c, v) in o.iter_mut().enumerate() {
                    *v = (at(hi, c) - at(lo, c)) / (2.0 * h);
                }
                continue;
            }
            let (next, sign) = if hi != NONE { (hi, 1.0) } else if lo != NONE { (lo, -1.0) } else { continue };
            let side = if sign > 0.0 { 1 } else { 0 };
            let far = grid.neighbor(next as usize, a, side);
            for (c, v) in o.iter_mut().enumerate() {
                *v = if far != NONE {
                    sign * (-3.0 * at(me, c) + 4.0 * at(next, c) - at(far, c)) / (2.0 * h)
                } else {
                    sign * (at(next, c) - at(me, c)) / h
                };
            }
        }
    });
    d1
}

/// The pullback metric `U_ij = h(du(e_i), du(e_j))` in an orthonormal frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PullbackMetric(DMatrix<f64>);

impl PullbackMetric {
    /// Wraps a symmetric matrix, symmetrizing away rounding.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                context: "pullback metric",
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        Ok(PullbackMetric(sym))
    }

    pub fn from_frame_differential(du: &DMatrix<f64>) -> Self {
        PullbackMetric(du.transpose() * du)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// `tr(U^k)` for the symmetric `U`.
    pub fn trace_power(&self, k: u32) -> f64 {
        let u = &self.0;
        match k {
            0 => u.nrows() as f64,
            1 => u.trace(),
            2 => u.iter().map(|x| x * x).sum(),
            3 => (u * u).component_mul(u).sum(),
            _ => {
                let mut p = u.clone();
                for _ in 1..k {
                    p = &p * u;
                }
                p.trace()
            }
        }
    }

    /// Eigenvalues in nondecreasing order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(0.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }
}

pub fn pullback_metric(u: &MapField, node: usize) -> PullbackMetric {
    PullbackMetric::from_frame_differential(&u.frame_differential(node))
}

fn check_order(k: u32) -> Result<()> {
    if !(1..=3).contains(&k) {
        return Err(Error::param("k", "energy order must be 1, 2 or 3"));
    }
    Ok(())
}

/// `tr(U^k)/(2k)` for `k ∈ {1, 2, 3}`.
pub fn phi_energy_density(metric: &PullbackMetric, k: u32) -> Result<f64> {
    check_order(k)?;
    Ok(metric.trace_power(k) / (2.0 * k as f64))
}

/// Integrated Φ-energy, optionally restricted to the geodesic ball `B(ρ)` about the pole.
pub fn phi_energy(u: &MapField, k: u32, region: Option<f64>) -> Result<f64> {
    check_order(k)?;
    let grid = u.grid();
    if let Some(rho) = region {
        let extent = grid.radial_extent().ok_or(Error::NoPole)?;
        if !(rho >= 0.0 && rho <= extent) {
            return Err(Error::OutOfRange { radius: rho, extent });
        }
    }
    let terms: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|node| {
            let mut w = grid.weight(node);
            if let Some(rho) = region {
                w *= grid.ball_fraction(node, rho).unwrap_or(0.0);
            }
            if w > 0.0 {
                w * u.energy_density_at(node, k)
            } else {
                0.0
            }
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Summary statistics of the nodal density over nodes with positive weight.
pub fn density_range(u: &MapField, k: u32) -> Result<(f64, f64)> {
    check_order(k)?;
    let grid = u.grid();
    Ok((0..grid.len())
        .into_par_iter()
        .filter(|n| grid.weight(*n) > 0.0)
        .map(|n| {
            let d = u.energy_density_at(n, k);
            (d, d)
        })
        .reduce(|| (f64::INFINITY, f64::NEG_INFINITY), |a, b| (a.0.min(b.0), a.1.max(b.1))))
}

/// Outcome of the composition energy bound `E(u∘ψ) ≤ C·E(ψ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositionReport {
    /// `E(u∘ψ)`, from the composed closed form when available.
    pub lhs: f64,
    /// The same energy through the chain rule on `ψ`'s stored derivatives.
    pub chain_rule_lhs: f64,
    /// `C·E(ψ)` with `C = sup λ_max(U_u)³`.
    pub rhs: f64,
    pub constant: f64,
    /// `sup max_ij |U_ij|³`, the looser entrywise constant.
    pub entry_constant: f64,
    pub inner_energy: f64,
    pub entry_bound_holds: bool,
    pub pass: bool,
}

/// Relative slack allowed for sampling the supremum on grid nodes.
const COMPOSITION_SLACK: f64 = 1e-3;

fn hosts(target: &Target, grid: &DomainGrid) -> bool {
    match (target, grid.model()) {
        (Target::Sphere { dim, radius }, GridModel::RoundSphere { dim: d, radius: r, .. }) => {
            dim == d && (radius - r).abs() <= 1e-12 * r.abs().max(1.0)
        }
        (Target::Euclidean { dim }, GridModel::FlatBox { dim: d, .. } | GridModel::FlatTorus { dim: d, .. }) => {
            dim == d
        }
        (Target::Euclidean { dim }, GridModel::RotationalPole { dim: d, profile, .. }) => {
            dim == d && *profile == CurvatureProfile::flat()
        }
        _ => false,
    }
}

/// Checks `E_Φ(3)(u∘ψ) ≤ C·E_Φ(3)(ψ)` for `ψ : K → N` and `u : N → M′`.
///
/// `u` must be analytic and `ψ`'s target must be the manifold its grid samples.
pub fn composition_energy_bound_check(u: &MapField, psi: &MapField) -> Result<CompositionReport> {
    let outer = u
        .source()
        .ok_or_else(|| Error::Incompatible("the outer map must be analytic".into()))?;
    if !hosts(psi.target(), u.grid()) {
        return Err(Error::Incompatible(format!(
            "{} target does not match the {} grid of the outer map",
            psi.target().name(),
            u.grid().model().name()
        )));
    }
    let grid_n = u.grid();
    let (constant, entry_constant) = (0..grid_n.len())
        .into_par_iter()
        .filter(|n| grid_n.weight(*n) > 0.0)
        .map(|n| {
            let metric = pullback_metric(u, n);
            let lmax = metric.max_eigenvalue().max(0.0);
            let emax = metric.matrix().amax();
            (lmax.powi(3), emax.powi(3))
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));

    let inner_energy = phi_energy(psi, 3, None)?;

    // chain rule: push ψ's jets through u's stages
    let grid_k = psi.grid();
    let (m, qp) = (grid_k.dim(), psi.ambient_dim());
    let chain_terms: Vec<f64> = (0..grid_k.len())
        .into_par_iter()
        .map(|node| -> Result<f64> {
            let w = grid_k.weight(node);
            if w <= 0.0 {
                return Ok(0.0);
            }
            let p = psi.value(node);
            let d = psi.coordinate_derivatives(node);
            let g = grid_k.metric_diag(node);
            let q = u.ambient_dim();
            let mut du = DMatrix::zeros(q, m);
            for a in (0..m).step_by(2) {
                let seeded: Vec<Hyper> = (0..qp)
                    .map(|c| {
                        let e2 = if a + 1 < m { d[(a + 1) * qp + c] } else { 0.0 };
                        Hyper::new(p[c], d[a * qp + c], e2, 0.0)
                    })
                    .collect();
                let out = outer.eval_at_position(&seeded)?;
                for (c, h) in out.iter().enumerate() {
                    du[(c, a)] = h.e1 / g[a].sqrt();
                    if a + 1 < m {
                        du[(c, a + 1)] = h.e2 / g[a + 1].sqrt();
                    }
                }
            }
            Ok(w * PullbackMetric::from_frame_differential(&du).trace_power(3) / 6.0)
        })
        .collect::<Result<Vec<f64>>>()?;
    let chain_rule_lhs = pairwise_sum(&chain_terms);

    let lhs = match psi.source() {
        Some(inner) if outer.source == MapSource::Position => {
            let mut stages = inner.stages.clone();
            stages.extend(outer.stages.iter().cloned());
            let composed = AnalyticMap {
                source: inner.source.clone(),
                stages,
            };
            let direct = MapField::from_analytic(psi.shared_grid(), u.target().clone(), composed)?;
            phi_energy(&direct, 3, None)?
        }
        _ => chain_rule_lhs,
    };

    let rhs = constant * inner_energy;
    let slack = |bound: f64| bound * (1.0 + COMPOSITION_SLACK) + 1e-12;
    Ok(CompositionReport {
        lhs,
        chain_rule_lhs,
        rhs,
        constant,
        entry_constant,
        inner_energy,
        entry_bound_holds: lhs <= slack(entry_constant * inner_energy),
        pass: lhs <= slack(rhs),
    })
}
