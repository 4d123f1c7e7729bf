//! Tension field, stress-energy tensor and the first and second variations
//! of the Φ₍₃₎-energy, with finite-difference oracles along the
//! nearest-point retraction.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::energy::{nodal_differential, MapField, PullbackMetric};
use crate::error::{Error, Result};
use crate::manifold::{DomainGrid, EmbeddedTarget, GridModel, Target, NONE};
use crate::maps::{bump, DomainVectorField, TrigMode};
use crate::numeric::{pairwise_sum, sweep_first, sweep_second, FdEstimate};
use crate::real::{dot, Hyper, Real};

/// Deliberate faults for checking that the verification suite is not vacuous.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mutation {
    #[default]
    None,
    /// Uses `S = e·g + U³` instead of `e·g − U³`.
    FlipStressCoupling,
    /// Negates the tension field.
    FlipTension,
    /// Drops one of the five gradient terms (numbered 1 to 5) of the second variation.
    DropSecondVariationTerm(u8),
}

/// An ambient vector field restricted to the image and projected onto `T_u N`.
#[derive(Clone, Debug, PartialEq)]
pub enum AmbientVariation {
    Constant(Vec<f64>),
    /// `direction` times a bump of the given radius around `center`, both in
    /// the grid's canonical embedding.
    Localized {
        direction: Vec<f64>,
        center: Vec<f64>,
        radius: f64,
    },
    /// Trigonometric modes of the domain position.
    Trig(Vec<TrigMode>),
}

impl AmbientVariation {
    fn eval<T: Real>(&self, pos: &[T], q: usize) -> Result<Vec<T>> {
        match self {
            AmbientVariation::Constant(v) => {
                if v.len() != q {
                    return Err(Error::DimensionMismatch {
                        context: "ambient direction",
                        expected: q,
                        found: v.len(),
                    });
                }
                Ok(v.iter().map(|x| T::cst(*x)).collect())
            }
            AmbientVariation::Localized {
                direction,
                center,
                radius,
            } => {
                if direction.len() != q || center.len() != pos.len() {
                    return Err(Error::param("localized variation", "direction or center has the wrong length"));
                }
                let mut s2 = T::cst(0.0);
                for (p, c) in pos.iter().zip(center) {
                    let d = (*p - *c) / *radius;
                    s2 += d * d;
                }
                let b = bump(s2);
                Ok(direction.iter().map(|d| b * *d).collect())
            }
            AmbientVariation::Trig(modes) => {
                if modes.iter().any(|m| m.component >= q || m.wave.len() != pos.len()) {
                    return Err(Error::param("modes", "mode dimensions do not match"));
                }
                let mut out = vec![T::cst(0.0); q];
                for mode in modes {
                    let mut arg = T::cst(mode.phase);
                    for (k, x) in mode.wave.iter().zip(pos) {
                        arg += *x * *k;
                    }
                    out[mode.component] += arg.sin() * mode.amplitude;
                }
                Ok(out)
            }
        }
    }
}

/// A vector field along a map: one tangent vector of `T_{u(x)}N` per node,
/// with a support mask and coordinate derivatives.
#[derive(Clone, Debug)]
pub struct VariationField {
    grid: Arc<DomainGrid>,
    q: usize,
    values: Vec<f64>,
    support: Vec<bool>,
    d1: OnceLock<Vec<f64>>,
}

const TANGENT_TOL: f64 = 1e-10;

impl VariationField {
    fn assemble(grid: Arc<DomainGrid>, q: usize, values: Vec<f64>, d1: Option<Vec<f64>>) -> Self {
        let support = values.chunks(q).map(|v| v.iter().any(|x| *x != 0.0)).collect();
        let cell = OnceLock::new();
        if let Some(d) = d1 {
            let _ = cell.set(d);
        }
        VariationField {
            grid,
            q,
            values,
            support,
            d1: cell,
        }
    }

    /// Wraps nodal tangent vectors; derivatives by finite differences.
    pub fn from_values(u: &MapField, values: Vec<f64>, support: Vec<bool>) -> Result<Self> {
        let q = u.ambient_dim();
        if values.len() != u.len() * q || support.len() != u.len() {
            return Err(Error::DimensionMismatch {
                context: "variation field",
                expected: u.len() * q,
                found: values.len(),
            });
        }
        for node in 0..u.len() {
            let v = &values[node * q..(node + 1) * q];
            if !support[node] && v.iter().any(|x| *x != 0.0) {
                return Err(Error::SupportViolation(format!("nonzero vector outside the support at node {node}")));
            }
            let p = u.value(node);
            let t = u.target().tangent_project(p, v);
            let normal = v.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
            if normal > TANGENT_TOL * scale {
                return Err(Error::OffTarget { residual: normal });
            }
        }
        Ok(VariationField {
            grid: u.shared_grid(),
            q,
            values,
            support,
            d1: OnceLock::new(),
        })
    }

    pub fn zero(u: &MapField) -> Self {
        let q = u.ambient_dim();
        Self::assemble(u.shared_grid(), q, vec![0.0; u.len() * q], Some(vec![0.0; u.len() * q * u.domain_dim()]))
    }

    /// `P_{u(x)} w(x)` for an ambient field `w` of the domain position.
    pub fn tangential(u: &MapField, w: &AmbientVariation) -> Result<Self> {
        let grid = u.grid();
        let (n, m, q) = (u.len(), u.domain_dim(), u.ambient_dim());
        let target = u.target();
        match u.source() {
            Some(map) => {
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
                            let seeded = pair_seed(x, a);
                            let p = map.eval(grid, chart, &seeded)?;
                            let pos = grid.position_generic(chart, &seeded);
                            let v = target.tangent_project_generic(&p, &w.eval(&pos, q)?);
                            scatter_pair(&v, a, m, q, val, der);
                        }
                        Ok(())
                    })?;
                Ok(Self::assemble(u.shared_grid(), q, values, Some(d1)))
            }
            None => {
                let mut values = vec![0.0; n * q];
                values.par_chunks_mut(q).enumerate().try_for_each(|(node, val)| -> Result<()> {
                    let pos = grid.position_generic(grid.chart(node), grid.coords(node));
                    let v = target.tangent_project(u.value(node), &w.eval(&pos, q)?);
                    val.copy_from_slice(&v);
                    Ok(())
                })?;
                Ok(Self::assemble(u.shared_grid(), q, values, None))
            }
        }
    }

    /// Tangential part of the ambient coordinate direction `axis`.
    pub fn tangential_axis(u: &MapField, axis: usize) -> Result<Self> {
        let q = u.ambient_dim();
        if axis >= q {
            return Err(Error::param("axis", "exceeds the ambient dimension"));
        }
        let mut v = vec![0.0; q];
        v[axis] = 1.0;
        Self::tangential(u, &AmbientVariation::Constant(v))
    }

    /// `du(X)` for a domain vector field `X`.
    pub fn from_domain_field(u: &MapField, field: &DomainVectorField) -> Result<Self> {
        let grid = u.grid();
        let (n, m, q) = (u.len(), u.domain_dim(), u.ambient_dim());
        let mut values = vec![0.0; n * q];
        match u.source() {
            Some(map) => {
                let mut d1 = vec![0.0; n * m * q];
                values
                    .par_chunks_mut(q)
                    .zip(d1.par_chunks_mut(m * q))
                    .enumerate()
                    .try_for_each(|(node, (val, der))| -> Result<()> {
                        let x = grid.coords(node);
                        let chart = grid.chart(node);
                        for b in 0..m {
                            let xs: Vec<Hyper> = (0..m)
                                .map(|c| Hyper::new(x[c], if c == b { 1.0 } else { 0.0 }, 0.0, 0.0))
                                .collect();
                            let comps = field.components(grid, chart, &xs)?;
                            // x + ε₁ e_b + ε₂ X + ε₁ε₂ ∂_b X
                            let seeded: Vec<Hyper> = (0..m)
                                .map(|c| Hyper::new(x[c], if c == b { 1.0 } else { 0.0 }, comps[c].re, comps[c].e1))
                                .collect();
                            let out = map.eval(grid, chart, &seeded)?;
                            for c in 0..q {
                                val[c] = out[c].e2;
                                der[b * q + c] = out[c].e12;
                            }
                        }
                        Ok(())
                    })?;
                Ok(Self::assemble(u.shared_grid(), q, values, Some(d1)))
            }
            None => {
                values.par_chunks_mut(q).enumerate().try_for_each(|(node, val)| -> Result<()> {
                    let comps: Vec<f64> = field.components(grid, grid.chart(node), grid.coords(node))?;
                    let d = u.coordinate_derivatives(node);
                    for (a, xa) in comps.iter().enumerate() {
                        for c in 0..q {
                            val[c] += xa * d[a * q + c];
                        }
                    }
                    Ok(())
                })?;
                Ok(Self::assemble(u.shared_grid(), q, values, None))
            }
        }
    }

    pub fn grid(&self) -> &DomainGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, node: usize) -> &[f64] {
        &self.values[node * self.q..(node + 1) * self.q]
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    /// Coordinate derivatives `∂_a V` at a node, `a`-major.
    pub fn derivatives(&self, node: usize) -> &[f64] {
        let d = self
            .d1
            .get_or_init(|| nodal_differential(&self.grid, &self.values, self.q));
        let mq = self.grid.dim() * self.q;
        &d[node * mq..(node + 1) * mq]
    }

    pub fn scaled(&self, s: f64) -> Self {
        let d1 = self.d1.get().map(|d| d.iter().map(|x| x * s).collect());
        let mut out = Self::assemble(
            Arc::clone(&self.grid),
            self.q,
            self.values.iter().map(|x| x * s).collect(),
            d1,
        );
        out.support.clone_from(&self.support);
        out
    }

    /// Largest nodal length.
    pub fn max_norm(&self) -> f64 {
        self.values
            .chunks(self.q)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Largest normal component relative to the map's tangent spaces.
    pub fn normal_residual(&self, u: &MapField) -> f64 {
        (0..self.len())
            .map(|node| {
                let v = self.value(node);
                let t = u.target().tangent_project(u.value(node), v);
                v.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    }
}

fn pair_seed(x: &[f64], a: usize) -> Vec<Hyper> {
    (0..x.len())
        .map(|b| {
            Hyper::new(
                x[b],
                if b == a { 1.0 } else { 0.0 },
                if b == a + 1 { 1.0 } else { 0.0 },
                0.0,
            )
        })
        .collect()
}

fn scatter_pair(v: &[Hyper], a: usize, m: usize, q: usize, val: &mut [f64], der: &mut [f64]) {
    for (c, h) in v.iter().enumerate() {
        val[c] = h.re;
        der[a * q + c] = h.e1;
        if a + 1 < m {
            der[(a + 1) * q + c] = h.e2;
        }
    }
}

fn check_grid(u: &MapField, v: &VariationField) -> Result<()> {
    if !std::ptr::eq(u.grid(), v.grid()) && u.grid().len() != v.grid().len() {
        return Err(Error::Incompatible("variation field lives on another grid".into()));
    }
    if v.q != u.ambient_dim() {
        return Err(Error::DimensionMismatch {
            context: "variation field",
            expected: u.ambient_dim(),
            found: v.q,
        });
    }
    Ok(())
}

/// Variation fields on open grids must vanish on the masked boundary layers.
fn check_compact(v: &VariationField) -> Result<()> {
    let g = v.grid();
    if g.is_closed() {
        return Ok(());
    }
    for node in 0..v.len() {
        if g.is_boundary(node) && v.value(node).iter().any(|x| x.abs() > 1e-14) {
            return Err(Error::SupportViolation(format!(
                "variation field is nonzero on boundary node {node}"
            )));
        }
    }
    Ok(())
}

fn check_compact_domain(u: &MapField, field: &DomainVectorField) -> Result<()> {
    let g = u.grid();
    if g.is_closed() {
        return Ok(());
    }
    for node in 0..g.len() {
        if g.is_boundary(node) {
            let x: Vec<f64> = field.components(g, g.chart(node), g.coords(node))?;
            if x.iter().any(|c| c.abs() > 1e-14) {
                return Err(Error::SupportViolation(format!("vector field is nonzero on boundary node {node}")));
            }
        }
    }
    Ok(())
}

/// `d₍₃₎u(X) = du·U²·x` for `X` given by frame coordinates `x`.
pub fn d3_form(u: &MapField, node: usize, x: &[f64]) -> Result<Vec<f64>> {
    let m = u.domain_dim();
    if x.len() != m {
        return Err(Error::DimensionMismatch {
            context: "frame direction",
            expected: m,
            found: x.len(),
        });
    }
    let f = u.frame_differential(node);
    let metric = PullbackMetric::from_frame_differential(&f);
    let u2 = metric.matrix() * metric.matrix();
    let xv = nalgebra::DVector::from_column_slice(x);
    Ok((f * (u2 * xv)).iter().copied().collect())
}

fn stress_matrix(metric: &PullbackMetric, mutation: Mutation) -> DMatrix<f64> {
    let u = metric.matrix();
    let u3 = u * u * u;
    let m = u.nrows();
    let e = u3.trace() / 6.0;
    let sign = if mutation == Mutation::FlipStressCoupling { 1.0 } else { -1.0 };
    DMatrix::identity(m, m) * e + u3 * sign
}

/// Per-node stress-energy tensor in the orthonormal frame.
#[derive(Clone, Debug)]
pub struct StressTensor {
    dim: usize,
    data: Vec<f64>,
}

impl StressTensor {
    pub fn at(&self, node: usize) -> DMatrix<f64> {
        let k = self.dim * self.dim;
        DMatrix::from_column_slice(self.dim, self.dim, &self.data[node * k..(node + 1) * k])
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.dim * self.dim).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn max_asymmetry(&self) -> f64 {
        (0..self.len())
            .map(|n| {
                let s = self.at(n);
                (&s - s.transpose()).amax()
            })
            .fold(0.0, f64::max)
    }
}

pub fn stress_energy(u: &MapField) -> StressTensor {
    stress_energy_with(u, Mutation::None)
}

pub fn stress_energy_with(u: &MapField, mutation: Mutation) -> StressTensor {
    let m = u.domain_dim();
    let mut data = vec![0.0; u.len() * m * m];
    data.par_chunks_mut(m * m).enumerate().for_each(|(node, out)| {
        let s = stress_matrix(&PullbackMetric::from_frame_differential(&u.frame_differential(node)), mutation);
        out.copy_from_slice(s.as_slice());
    });
    StressTensor { dim: m, data }
}

/// Coordinate derivatives of the diagonal metric at a node, `[a·m + c] = ∂_a g_cc`.
fn metric_derivatives(grid: &DomainGrid, node: usize) -> Vec<f64> {
    let m = grid.dim();
    let x = grid.coords(node);
    let mut out = vec![0.0; m * m];
    for a in (0..m).step_by(2) {
        let g = grid.metric_generic(grid.chart(node), &pair_seed(x, a));
        for c in 0..m {
            out[a * m + c] = g[c].e1;
            if a + 1 < m {
                out[(a + 1) * m + c] = g[c].e2;
            }
        }
    }
    out
}

/// Chart components of a domain field and their derivatives, `[a·m + c] = ∂_a X^c`.
fn field_jet(grid: &DomainGrid, field: &DomainVectorField, node: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = grid.dim();
    let x = grid.coords(node);
    let mut val = vec![0.0; m];
    let mut der = vec![0.0; m * m];
    for a in (0..m).step_by(2) {
        let comps = field.components(grid, grid.chart(node), &pair_seed(x, a))?;
        scatter_pair(&comps, a, m, m, &mut val, &mut der);
    }
    Ok((val, der))
}

/// Central-difference divergence of per-node fluxes `flux[node][a][c]`:
/// `(1/√g) Σ_a (F^a(x + h e_a) − F^a(x − h e_a)) / 2h`.
fn flux_divergence(grid: &DomainGrid, flux: &[f64], width: usize, node: usize) -> Vec<f64> {
    let m = grid.dim();
    let mut acc = vec![0.0; width];
    for a in 0..m {
        let lo = grid.neighbor(node, a, 0);
        let hi = grid.neighbor(node, a, 1);
        debug_assert!(lo != NONE && hi != NONE);
        let h2 = 2.0 * grid.steps()[a];
        let base = a * width;
        let fl = &flux[lo as usize * m * width + base..][..width];
        let fh = &flux[hi as usize * m * width + base..][..width];
        for c in 0..width {
            acc[c] += (fh[c] - fl[c]) / h2;
        }
    }
    let inv = 1.0 / grid.sqrt_det(node);
    acc.iter_mut().for_each(|v| *v *= inv);
    acc
}

/// The Φ₍₃₎-tension field `div d₍₃₎u`, on interior nodes only.
pub fn tension_field(u: &MapField) -> VariationField {
    tension_field_with(u, Mutation::None)
}

pub fn tension_field_with(u: &MapField, mutation: Mutation) -> VariationField {
    let grid = u.grid();
    let (n, m, q) = (u.len(), u.domain_dim(), u.ambient_dim());
    let mut flux = vec![0.0; n * m * q];
    flux.par_chunks_mut(m * q).enumerate().for_each(|(node, out)| {
        let f = u.frame_differential(node);
        let metric = PullbackMetric::from_frame_differential(&f);
        let d3 = &f * (metric.matrix() * metric.matrix());
        let sg = grid.sqrt_det(node);
        let g = grid.metric_diag(node);
        for a in 0..m {
            let s = sg / g[a].sqrt();
            for c in 0..q {
                out[a * q + c] = s * d3[(c, a)];
            }
        }
    });
    let sign = if mutation == Mutation::FlipTension { -1.0 } else { 1.0 };
    let mut values = vec![0.0; n * q];
    values.par_chunks_mut(q).enumerate().for_each(|(node, out)| {
        if !grid.is_interior(node) {
            return;
        }
        let div = flux_divergence(grid, &flux, q, node);
        let t = u.target().tangent_project(u.value(node), &div);
        for c in 0..q {
            out[c] = sign * t[c];
        }
    });
    let mut field = VariationField::assemble(u.shared_grid(), q, values, None);
    field.support = (0..n).map(|node| grid.is_interior(node)).collect();
    field
}

/// Weighted L² norm of the tension field over interior nodes.
pub fn euler_lagrange_residual(u: &MapField) -> f64 {
    let tau = tension_field(u);
    let grid = u.grid();
    let terms: Vec<f64> = (0..u.len())
        .map(|node| {
            if grid.is_interior(node) {
                grid.weight(node) * tau.value(node).iter().map(|x| x * x).sum::<f64>()
            } else {
                0.0
            }
        })
        .collect();
    pairwise_sum(&terms).sqrt()
}

/// `10×` the residual of the canonical identity on the same grid, the
/// threshold below which a map counts as discretely harmonic.
pub fn harmonic_threshold(grid: Arc<DomainGrid>) -> Result<f64> {
    let target = match grid.model() {
        GridModel::RoundSphere { dim, radius, .. } => Target::Sphere {
            dim: *dim,
            radius: *radius,
        },
        _ if grid.has_pole() => {
            return Err(Error::Inapplicable("no canonical identity on pole grids".into()));
        }
        _ => Target::euclidean(grid.dim()),
    };
    let id = MapField::identity(grid, target)?;
    Ok((10.0 * euler_lagrange_residual(&id)).max(1e-9))
}

/// The first variation `−∫⟨v, τ⟩`, evaluated in its integrated-by-parts
/// form `∫ Σ_i ⟨∇̃_{e_i} v, d₍₃₎u(e_i)⟩`.
pub fn first_variation(u: &MapField, v: &VariationField) -> Result<f64> {
    check_grid(u, v)?;
    check_compact(v)?;
    let grid = u.grid();
    let (m, q) = (u.domain_dim(), u.ambient_dim());
    let terms: Vec<f64> = (0..u.len())
        .into_par_iter()
        .map(|node| {
            let w = grid.weight(node);
            if w <= 0.0 || !v.support[node] {
                return 0.0;
            }
            let f = u.frame_differential(node);
            let metric = PullbackMetric::from_frame_differential(&f);
            let d3 = &f * (metric.matrix() * metric.matrix());
            let g = grid.metric_diag(node);
            let dv = v.derivatives(node);
            let mut s = 0.0;
            for a in 0..m {
                let inv = 1.0 / g[a].sqrt();
                for c in 0..q {
                    s += dv[a * q + c] * inv * d3[(c, a)];
                }
            }
            w * s
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// The strong form `−Σ w⟨v, τ⟩` over interior nodes.
pub fn first_variation_strong(u: &MapField, v: &VariationField) -> Result<f64> {
    first_variation_strong_with(u, v, Mutation::None)
}

pub fn first_variation_strong_with(u: &MapField, v: &VariationField, mutation: Mutation) -> Result<f64> {
    check_grid(u, v)?;
    check_compact(v)?;
    let tau = tension_field_with(u, mutation);
    let grid = u.grid();
    let terms: Vec<f64> = (0..u.len())
        .map(|node| {
            if grid.is_interior(node) {
                -grid.weight(node) * dot(v.value(node), tau.value(node))
            } else {
                0.0
            }
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// `½ (L_X g)(e_a, e_b)` from chart data of `X` and the diagonal metric.
fn half_lie_derivative(x: &[f64], dx: &[f64], g: &[f64], dg: &[f64]) -> DMatrix<f64> {
    let m = g.len();
    DMatrix::from_fn(m, m, |a, b| {
        let mut v = g[b] * dx[a * m + b] + g[a] * dx[b * m + a];
        if a == b {
            for c in 0..m {
                v += x[c] * dg[c * m + a];
            }
        }
        0.5 * v / (g[a] * g[b]).sqrt()
    })
}

/// `−∫⟨S, ½ L_X g⟩`, the variation of the energy along the flow of `X`.
pub fn first_variation_diffeo(u: &MapField, field: &DomainVectorField) -> Result<f64> {
    first_variation_diffeo_with(u, field, Mutation::None)
}

pub fn first_variation_diffeo_with(u: &MapField, field: &DomainVectorField, mutation: Mutation) -> Result<f64> {
    check_compact_domain(u, field)?;
    let grid = u.grid();
    let terms = (0..u.len())
        .into_par_iter()
        .map(|node| -> Result<f64> {
            let w = grid.weight(node);
            if w <= 0.0 {
                return Ok(0.0);
            }
            let (x, dx) = field_jet(grid, field, node)?;
            if x.iter().chain(&dx).all(|v| *v == 0.0) {
                return Ok(0.0);
            }
            let s = stress_matrix(&PullbackMetric::from_frame_differential(&u.frame_differential(node)), mutation);
            let lie = half_lie_derivative(&x, &dx, grid.metric_diag(node), &metric_derivatives(grid, node));
            Ok(-w * s.component_mul(&lie).sum())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&terms))
}

fn stress_flux(u: &MapField, mutation: Mutation) -> (StressTensor, Vec<f64>) {
    let grid = u.grid();
    let m = u.domain_dim();
    let stress = stress_energy_with(u, mutation);
    let mut flux = vec![0.0; u.len() * m * m];
    flux.par_chunks_mut(m * m).enumerate().for_each(|(node, out)| {
        let s = stress.at(node);
        let g = grid.metric_diag(node);
        let sg = grid.sqrt_det(node);
        for a in 0..m {
            for b in 0..m {
                out[a * m + b] = sg * s[(a, b)] * (g[b] / g[a]).sqrt();
            }
        }
    });
    (stress, flux)
}

/// `(div S)(X)` at an interior node.
fn stress_divergence(grid: &DomainGrid, stress: &StressTensor, flux: &[f64], node: usize, x: &[f64]) -> f64 {
    let m = grid.dim();
    let div = flux_divergence(grid, flux, m, node);
    let s = stress.at(node);
    let g = grid.metric_diag(node);
    let dg = metric_derivatives(grid, node);
    let mut out = 0.0;
    for b in 0..m {
        let mut corr = 0.0;
        for a in 0..m {
            corr += dg[b * m + a] / g[a] * s[(a, a)];
        }
        out += x[b] * (div[b] - 0.5 * corr);
    }
    out
}

/// `(div S)(X) + ⟨τ, du(X)⟩` per node; zero off the interior.
pub fn conservation_residual(u: &MapField, field: &DomainVectorField) -> Result<Vec<f64>> {
    conservation_residual_with(u, field, Mutation::None)
}

pub fn conservation_residual_with(u: &MapField, field: &DomainVectorField, mutation: Mutation) -> Result<Vec<f64>> {
    let grid = u.grid();
    let q = u.ambient_dim();
    let (stress, flux) = stress_flux(u, mutation);
    let tau = tension_field_with(u, mutation);
    (0..u.len())
        .into_par_iter()
        .map(|node| -> Result<f64> {
            if !grid.is_interior(node) {
                return Ok(0.0);
            }
            let x: Vec<f64> = field.components(grid, grid.chart(node), grid.coords(node))?;
            let d = u.coordinate_derivatives(node);
            let mut dux = vec![0.0; q];
            for (a, xa) in x.iter().enumerate() {
                for c in 0..q {
                    dux[c] += xa * d[a * q + c];
                }
            }
            Ok(stress_divergence(grid, &stress, &flux, node, &x) + dot(tau.value(node), &dux))
        })
        .collect()
}

/// Both sides of `∫_{∂B} S(X, ν) = ∫_B ⟨S, ½L_X g⟩ + (div S)(X)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StokesReport {
    /// The radius actually used: the center of the ring nearest the request.
    pub radius: f64,
    pub boundary_term: f64,
    pub bulk_term: f64,
    pub deformation_term: f64,
    pub divergence_term: f64,
    pub residual: f64,
}

pub fn stokes_balance(u: &MapField, field: &DomainVectorField, radius: f64) -> Result<StokesReport> {
    let grid = u.grid();
    let dr = grid.ring_step().ok_or(Error::NoPole)?;
    let rings = grid.ring_count().ok_or(Error::NoPole)?;
    let k = ((radius / dr) - 0.5).round().max(0.0) as usize;
    let usable = grid.ring_radius(rings.saturating_sub(3)).unwrap_or(0.0);
    if k + 3 > rings || radius > usable + 0.5 * dr {
        return Err(Error::OutOfRange { radius, extent: usable });
    }
    let rk = grid.ring_radius(k).unwrap_or(0.0);
    let (stress, flux) = stress_flux(u, Mutation::None);

    let boundary: Vec<f64> = grid
        .ring_nodes(k)
        .map(|node| -> Result<f64> {
            let (x, _) = field_jet(grid, field, node)?;
            let s = stress.at(node);
            let g = grid.metric_diag(node);
            let sxn: f64 = (0..grid.dim()).map(|b| x[b] * g[b].sqrt() * s[(b, 0)]).sum();
            Ok(grid.weight(node) / dr * sxn)
        })
        .collect::<Result<_>>()?;

    let parts = (0..grid.len())
        .into_par_iter()
        .map(|node| -> Result<(f64, f64)> {
            let frac = grid.ball_fraction(node, rk)?;
            let w = grid.weight(node) * frac;
            if w <= 0.0 {
                return Ok((0.0, 0.0));
            }
            let (x, dx) = field_jet(grid, field, node)?;
            let lie = half_lie_derivative(&x, &dx, grid.metric_diag(node), &metric_derivatives(grid, node));
            let deform = w * stress.at(node).component_mul(&lie).sum();
            let div = if grid.is_interior(node) {
                w * stress_divergence(grid, &stress, &flux, node, &x)
            } else {
                0.0
            };
            Ok((deform, div))
        })
        .collect::<Result<Vec<_>>>()?;
    let deformation_term = pairwise_sum(&parts.iter().map(|p| p.0).collect::<Vec<_>>());
    let divergence_term = pairwise_sum(&parts.iter().map(|p| p.1).collect::<Vec<_>>());
    let boundary_term = pairwise_sum(&boundary);
    let bulk_term = deformation_term + divergence_term;
    Ok(StokesReport {
        radius: rk,
        boundary_term,
        bulk_term,
        deformation_term,
        divergence_term,
        residual: boundary_term - bulk_term,
    })
}

/// The second variation `I(V, W)`: five gradient couplings plus the curvature
/// term of the target, read off the Gauss equation.
pub fn second_variation(u: &MapField, v: &VariationField, w: &VariationField) -> Result<f64> {
    second_variation_with(u, v, w, Mutation::None)
}

pub fn second_variation_with(u: &MapField, v: &VariationField, w: &VariationField, mutation: Mutation) -> Result<f64> {
    check_grid(u, v)?;
    check_grid(u, w)?;
    check_compact(v)?;
    check_compact(w)?;
    let grid = u.grid();
    let target = u.target();
    let (m, q) = (u.domain_dim(), u.ambient_dim());
    let keep = |k: u8| if mutation == Mutation::DropSecondVariationTerm(k) { 0.0 } else { 1.0 };
    let terms: Vec<f64> = (0..u.len())
        .into_par_iter()
        .map(|node| {
            let wt = grid.weight(node);
            if wt <= 0.0 || !(v.support[node] || w.support[node]) {
                return 0.0;
            }
            let p = u.value(node);
            let f = u.frame_differential(node);
            let metric = PullbackMetric::from_frame_differential(&f);
            let um = metric.matrix();
            let u2 = um * um;
            let g = grid.metric_diag(node);
            let grad = |field: &VariationField| {
                let d = field.derivatives(node);
                let mut out = DMatrix::zeros(q, m);
                for a in 0..m {
                    let col: Vec<f64> = (0..q).map(|c| d[a * q + c] / g[a].sqrt()).collect();
                    let t = target.tangent_project(p, &col);
                    for c in 0..q {
                        out[(c, a)] = t[c];
                    }
                }
                out
            };
            let dv = grad(v);
            let dw = grad(w);
            let a = dv.transpose() * &f;
            let b = dw.transpose() * &f;
            let gram = dv.transpose() * &dw;
            let t1 = (&gram * &u2).trace();
            let t2 = (&a * &b * um).trace();
            let t3 = (&a * b.transpose()).component_mul(um).sum();
            let t4 = (&a * um).component_mul(&b).sum();
            let t5 = (&a * um * &b).trace();
            let d3 = &f * &u2;
            let (vv, ww) = (v.value(node), w.value(node));
            let bvw = target.second_fundamental_form(p, vv, ww);
            let mut curv = 0.0;
            for i in 0..m {
                let fi: Vec<f64> = f.column(i).iter().copied().collect();
                let d3i: Vec<f64> = d3.column(i).iter().copied().collect();
                curv += dot(
                    &target.second_fundamental_form(p, vv, &d3i),
                    &target.second_fundamental_form(p, &fi, ww),
                ) - dot(&bvw, &target.second_fundamental_form(p, &fi, &d3i));
            }
            wt * (keep(1) * t1 + keep(2) * t2 + keep(3) * t3 + keep(4) * t4 + keep(5) * t5 + curv)
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// [`second_variation`] guarded by a harmonicity check against `threshold`.
pub fn harmonic_second_variation(u: &MapField, v: &VariationField, w: &VariationField, threshold: f64) -> Result<f64> {
    let residual = euler_lagrange_residual(u);
    if residual > threshold {
        return Err(Error::NotHarmonic { residual, threshold });
    }
    second_variation(u, v, w)
}

/// `E_Φ(3)(Π(u + Σ t_j V_j))`, with the differential of the retracted map
/// pushed through the projection exactly.
pub fn retracted_energy(u: &MapField, moves: &[(&VariationField, f64)]) -> Result<f64> {
    for (v, _) in moves {
        check_grid(u, v)?;
    }
    let grid = u.grid();
    let target: &Target = u.target();
    let (m, q) = (u.domain_dim(), u.ambient_dim());
    let terms = (0..u.len())
        .into_par_iter()
        .map(|node| -> Result<f64> {
            let w = grid.weight(node);
            if w <= 0.0 {
                return Ok(0.0);
            }
            let mut p = u.value(node).to_vec();
            let mut d = u.coordinate_derivatives(node).to_vec();
            for (v, t) in moves {
                if *t == 0.0 || !v.support[node] {
                    continue;
                }
                for (pc, vc) in p.iter_mut().zip(v.value(node)) {
                    *pc += t * vc;
                }
                for (dc, vc) in d.iter_mut().zip(v.derivatives(node)) {
                    *dc += t * vc;
                }
            }
            let g = grid.metric_diag(node);
            let mut f = DMatrix::zeros(q, m);
            for a in (0..m).step_by(2) {
                let seeded: Vec<Hyper> = (0..q)
                    .map(|c| {
                        let e2 = if a + 1 < m { d[(a + 1) * q + c] } else { 0.0 };
                        Hyper::new(p[c], d[a * q + c], e2, 0.0)
                    })
                    .collect();
                let out = target.project_generic(&seeded)?;
                for c in 0..q {
                    f[(c, a)] = out[c].e1 / g[a].sqrt();
                    if a + 1 < m {
                        f[(c, a + 1)] = out[c].e2 / g[a + 1].sqrt();
                    }
                }
            }
            Ok(w * PullbackMetric::from_frame_differential(&f).trace_power(3) / 6.0)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&terms))
}

fn step_scale(v: &VariationField) -> f64 {
    let n = v.max_norm();
    if n > 0.0 {
        1.0 / n
    } else {
        1.0
    }
}

/// Central-difference slope of the retracted energy along `v`, with a step sweep.
pub fn fd_first_variation(u: &MapField, v: &VariationField) -> Result<FdEstimate> {
    let s = step_scale(v);
    let mut err = None;
    let est = sweep_first(
        |t| {
            retracted_energy(u, &[(v, t)]).unwrap_or_else(|e| {
                err = Some(e);
                f64::NAN
            })
        },
        1e-1 * s,
        1e-6 * s,
        16,
    );
    err.map_or(Ok(est), Err)
}

/// Central second difference of the retracted energy along `v`.
pub fn fd_second_variation(u: &MapField, v: &VariationField) -> Result<FdEstimate> {
    let s = step_scale(v);
    let mut err = None;
    let est = sweep_second(
        |t| {
            retracted_energy(u, &[(v, t)]).unwrap_or_else(|e| {
                err = Some(e);
                f64::NAN
            })
        },
        1e-1 * s,
        1e-4 * s,
        13,
    );
    err.map_or(Ok(est), Err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::phi_energy;
    use crate::manifold::{build_model_grid, sphere_target, CurvatureProfile};
    use crate::maps::{AmbientMap, AnalyticMap, MapSource};
    use crate::numeric::{convergence_order, rel_diff};
    use nalgebra::DVector;
    use std::f64::consts::PI;

    fn torus(dim: usize, nodes: usize) -> Arc<DomainGrid> {
        Arc::new(build_model_grid(GridModel::FlatTorus { dim, nodes }).unwrap())
    }

    fn sphere(dim: usize, nodes: usize) -> Arc<DomainGrid> {
        Arc::new(build_model_grid(GridModel::RoundSphere { dim, radius: 1.0, nodes }).unwrap())
    }

    fn mode(component: usize, wave: Vec<f64>, phase: f64, amplitude: f64) -> TrigMode {
        TrigMode {
            component,
            wave,
            phase,
            amplitude,
        }
    }

    /// A smooth periodic map of the 2-torus into the unit sphere.
    fn wavy_sphere_map(g: &Arc<DomainGrid>) -> MapField {
        let modes = vec![
            mode(0, vec![1.0, 0.0], 0.1, 0.8),
            mode(1, vec![0.0, 1.0], 0.7, 0.6),
            mode(0, vec![1.0, 1.0], 1.3, 0.3),
        ];
        MapField::from_analytic(
            Arc::clone(g),
            sphere_target(2, 1.0).unwrap(),
            AnalyticMap {
                source: MapSource::Wave {
                    base: vec![0.2, 0.1, 1.0],
                    modes,
                },
                stages: vec![],
            },
        )
        .unwrap()
    }

    fn perturbed_sphere_identity(g: &Arc<DomainGrid>) -> MapField {
        MapField::from_analytic(
            Arc::clone(g),
            sphere_target(2, 1.0).unwrap(),
            AnalyticMap::identity().then(AmbientMap::Perturb {
                amplitude: 0.15,
                modes: vec![mode(0, vec![0.0, 1.0, 2.0], 0.4, 1.0), mode(2, vec![1.5, 0.0, 0.0], 0.0, 1.0)],
            }),
        )
        .unwrap()
    }

    #[test]
    fn d3_form_matches_triple_sum() {
        let g = torus(3, 6);
        let a = DMatrix::from_row_slice(4, 3, &[1.0, 0.5, -0.2, 0.0, 2.0, 0.3, 1.5, -1.0, 0.7, 0.1, 0.2, 0.3]);
        let u = MapField::from_analytic(Arc::clone(&g), Target::euclidean(4), AnalyticMap::identity().then(AmbientMap::linear(a)))
            .unwrap();
        let x = [0.3, -1.1, 0.4];
        let got = d3_form(&u, 2, &x).unwrap();
        let f = u.frame_differential(2);
        let col = |i: usize| -> Vec<f64> { f.column(i).iter().copied().collect() };
        let dux: Vec<f64> = (0..4).map(|c| (0..3).map(|i| x[i] * f[(c, i)]).sum()).collect();
        let mut expect = vec![0.0; 4];
        for j in 0..3 {
            for k in 0..3 {
                let s = dot(&dux, &col(j)) * dot(&col(j), &col(k));
                for c in 0..4 {
                    expect[c] += s * f[(c, k)];
                }
            }
        }
        for c in 0..4 {
            assert!((got[c] - expect[c]).abs() < 1e-10);
        }
        let id = MapField::identity(torus(2, 8), Target::euclidean(2)).unwrap();
        assert_eq!(d3_form(&id, 0, &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn stress_examples() {
        let id = MapField::identity(torus(2, 8), Target::euclidean(2)).unwrap();
        let s = stress_energy(&id);
        assert!((s.at(3) + DMatrix::identity(2, 2) * (2.0 / 3.0)).amax() < 1e-14);
        let diag = PullbackMetric::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]))).unwrap();
        let s = stress_matrix(&diag, Mutation::None);
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, -2.0, -21.0]));
        assert!((s - expect).amax() < 1e-12);
    }

    #[test]
    fn stress_trace_identity_and_symmetry() {
        let g = torus(2, 16);
        let u = wavy_sphere_map(&g);
        let s = stress_energy(&u);
        assert!(s.max_asymmetry() <= 1e-10);
        for node in (0..u.len()).step_by(17) {
            let tr3 = crate::energy::pullback_metric(&u, node).trace_power(3);
            assert!((s.at(node).trace() - (2.0 / 6.0 - 1.0) * tr3).abs() <= 1e-10 * tr3.max(1.0));
        }
    }

    #[test]
    fn constant_map_is_inert() {
        let g = torus(2, 12);
        let c = MapField::constant(Arc::clone(&g), sphere_target(2, 1.0).unwrap(), vec![0.0, 0.0, 1.0]).unwrap();
        let v = VariationField::tangential_axis(&c, 0).unwrap();
        assert_eq!(first_variation(&c, &v).unwrap(), 0.0);
        assert_eq!(euler_lagrange_residual(&c), 0.0);
        assert_eq!(second_variation(&c, &v, &v).unwrap(), 0.0);
        let x = DomainVectorField::Coordinate { axis: 1, scale: 1.0 };
        assert_eq!(first_variation_diffeo(&c, &x).unwrap(), 0.0);
        assert!(conservation_residual(&c, &x).unwrap().iter().all(|r| *r == 0.0));
    }

    #[test]
    fn first_variation_matches_retraction_slope() {
        let g = torus(2, 32);
        let u = wavy_sphere_map(&g);
        let v = VariationField::tangential(
            &u,
            &AmbientVariation::Trig(vec![mode(1, vec![2.0, 1.0], 0.3, 1.0), mode(2, vec![0.0, 1.0], 0.0, 0.5)]),
        )
        .unwrap();
        let exact = first_variation(&u, &v).unwrap();
        let fd = fd_first_variation(&u, &v).unwrap();
        assert!(rel_diff(exact, fd.value) < 1e-6, "{exact} {fd:?}");
        let neg = first_variation(&u, &v.scaled(-1.0)).unwrap();
        assert_eq!(neg, -exact);
    }

    #[test]
    fn strong_form_converges_to_weak_form() {
        let mut hs = Vec::new();
        let mut errs = Vec::new();
        for n in [16, 32, 64] {
            let g = torus(2, n);
            hs.push(g.steps()[0]);
            let u = wavy_sphere_map(&g);
            let v = VariationField::tangential_axis(&u, 1).unwrap();
            let weak = first_variation(&u, &v).unwrap();
            errs.push((first_variation_strong(&u, &v).unwrap() - weak).abs());
        }
        assert!(convergence_order(&hs, &errs) > 1.9, "{errs:?}");
    }

    #[test]
    fn diffeo_form_matches_weak_form() {
        let g = torus(2, 32);
        let u = wavy_sphere_map(&g);
        let x = DomainVectorField::Trig(vec![mode(0, vec![1.0, 1.0], 0.2, 1.0), mode(1, vec![2.0, 0.0], 1.0, 0.7)]);
        let v = VariationField::from_domain_field(&u, &x).unwrap();
        let weak = first_variation(&u, &v).unwrap();
        let diffeo = first_variation_diffeo(&u, &x).unwrap();
        assert!(rel_diff(weak, diffeo) < 1e-6, "{weak} {diffeo}");
        let flipped = first_variation_diffeo_with(&u, &x, Mutation::FlipStressCoupling).unwrap();
        assert!(rel_diff(weak, flipped) > 1e-3);
    }

    #[test]
    fn diffeo_form_on_sphere() {
        let g = sphere(2, 48);
        let u = perturbed_sphere_identity(&g);
        let x = DomainVectorField::Ambient {
            matrix: DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.3, -1.0, 0.0, 0.0, 0.2, 0.5, 0.0]),
            offset: DVector::from_vec(vec![0.3, -0.2, 0.9]),
        };
        let v = VariationField::from_domain_field(&u, &x).unwrap();
        let weak = first_variation(&u, &v).unwrap();
        let diffeo = first_variation_diffeo(&u, &x).unwrap();
        assert!(rel_diff(weak, diffeo) < 1e-6, "{weak} {diffeo}");
        let fd = fd_first_variation(&u, &v).unwrap();
        assert!(rel_diff(weak, fd.value) < 1e-3);
    }

    #[test]
    fn domain_field_derivatives_match_differences() {
        let x = DomainVectorField::Trig(vec![mode(0, vec![1.0, 0.0], 0.2, 1.0)]);
        let errs: Vec<f64> = [64, 128]
            .into_iter()
            .map(|n| {
                let u = wavy_sphere_map(&torus(2, n));
                let exact = VariationField::from_domain_field(&u, &x).unwrap();
                let fd = VariationField::from_values(&u, exact.values().to_vec(), vec![true; u.len()]).unwrap();
                (0..u.len())
                    .flat_map(|node| {
                        exact
                            .derivatives(node)
                            .iter()
                            .zip(fd.derivatives(node))
                            .map(|(a, b)| (a - b).abs())
                            .collect::<Vec<_>>()
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(errs[0] / errs[1] > 3.5, "{errs:?}");
    }

    #[test]
    fn linear_map_has_no_tension() {
        let g = torus(2, 16);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.4, -0.3, 1.2, 0.5, 0.5]);
        let u = MapField::from_analytic(Arc::clone(&g), Target::euclidean(3), AnalyticMap::identity().then(AmbientMap::linear(a)))
            .unwrap();
        assert!(euler_lagrange_residual(&u) < 1e-10);
    }

    #[test]
    fn sphere_identity_tension_decays() {
        let mut hs = Vec::new();
        let mut res = Vec::new();
        for n in [16, 24, 32] {
            let g = sphere(2, n);
            hs.push(g.steps()[0]);
            let u = MapField::identity(Arc::clone(&g), sphere_target(2, 1.0).unwrap()).unwrap();
            res.push(euler_lagrange_residual(&u));
        }
        assert!(convergence_order(&hs, &res) >= 1.9, "{res:?}");
        let g = sphere(2, 16);
        assert!(euler_lagrange_residual(&perturbed_sphere_identity(&g)) > 1e-2);
    }

    #[test]
    fn conservation_residual_decays() {
        let mut hs = Vec::new();
        let mut sup = Vec::new();
        let x = DomainVectorField::Trig(vec![mode(0, vec![1.0, 1.0], 0.2, 1.0), mode(1, vec![0.0, 1.0], 0.5, 0.8)]);
        for n in [64, 128, 256] {
            let g = torus(2, n);
            hs.push(g.steps()[0]);
            let u = wavy_sphere_map(&g);
            let r = conservation_residual(&u, &x).unwrap();
            sup.push(r.iter().fold(0.0_f64, |a, b| a.max(b.abs())));
        }
        assert!(convergence_order(&hs, &sup) >= 1.9, "{sup:?}");
        let g = torus(2, 64);
        let u = wavy_sphere_map(&g);
        let bad = conservation_residual_with(&u, &x, Mutation::FlipTension).unwrap();
        assert!(bad.iter().fold(0.0_f64, |a, b| a.max(b.abs())) > 10.0 * sup[0]);
    }

    #[test]
    fn stokes_balance_for_radial_field() {
        let grid = Arc::new(
            build_model_grid(GridModel::RotationalPole {
                dim: 3,
                profile: CurvatureProfile::flat(),
                extent: 2.0,
                nodes: 40,
                angular_nodes: Some(20),
            })
            .unwrap(),
        );
        let u = MapField::identity(Arc::clone(&grid), Target::euclidean(3)).unwrap();
        let rep = stokes_balance(&u, &DomainVectorField::RadialScale, 1.2).unwrap();
        let expect = -2.0 * PI * rep.radius.powi(3);
        assert!(rel_diff(rep.boundary_term, expect) < 1e-3, "{rep:?}");
        assert!(rep.residual.abs() <= 1e-3 * rep.boundary_term.abs(), "{rep:?}");
        // harmonic: the boundary term is the deformation term alone
        assert!(rel_diff(rep.boundary_term, rep.deformation_term) < 1e-3);
        assert!(matches!(
            stokes_balance(&u, &DomainVectorField::RadialScale, 1.98),
            Err(Error::OutOfRange { .. })
        ));
        let c = MapField::constant(grid, Target::euclidean(3), vec![1.0, 0.0, 0.0]).unwrap();
        let rep = stokes_balance(&c, &DomainVectorField::RadialScale, 1.0).unwrap();
        assert_eq!((rep.boundary_term, rep.bulk_term), (0.0, 0.0));
    }

    #[test]
    fn second_variation_is_symmetric_and_matches_hessian() {
        let g = sphere(2, 32);
        let t = sphere_target(2, 1.0).unwrap();
        let u = MapField::identity(Arc::clone(&g), t).unwrap();
        let v = VariationField::tangential(&u, &AmbientVariation::Constant(vec![0.3, -0.5, 0.8])).unwrap();
        let w = VariationField::tangential(&u, &AmbientVariation::Trig(vec![mode(0, vec![1.0, 2.0, 0.0], 0.1, 1.0)])).unwrap();
        let vw = second_variation(&u, &v, &w).unwrap();
        let wv = second_variation(&u, &w, &v).unwrap();
        assert!(rel_diff(vw, wv) < 1e-8, "{vw} {wv}");
        let i = second_variation(&u, &w, &w).unwrap();
        let fd = fd_second_variation(&u, &w).unwrap();
        assert!(rel_diff(i, fd.value) < 1e-2, "{i} {fd:?}");
        let axis_sum: f64 = (0..3)
            .map(|l| {
                let v = VariationField::tangential_axis(&u, l).unwrap();
                second_variation(&u, &v, &v).unwrap()
            })
            .sum();
        // identity of S²: Σ_ℓ I = tr(U³)(6 − m)·Vol = 2·4·4π
        let expect = 2.0 * 4.0 * 4.0 * PI;
        assert!(rel_diff(axis_sum, expect) < 2e-2, "{axis_sum} {expect}");
    }

    #[test]
    fn harmonic_guard() {
        let g = sphere(2, 16);
        let u = perturbed_sphere_identity(&g);
        let v = VariationField::tangential_axis(&u, 0).unwrap();
        let thr = harmonic_threshold(Arc::clone(&g)).unwrap();
        assert!(matches!(
            harmonic_second_variation(&u, &v, &v, thr),
            Err(Error::NotHarmonic { .. })
        ));
    }

    #[test]
    fn open_grids_require_compact_support() {
        let g = Arc::new(build_model_grid(GridModel::FlatBox { dim: 2, side: 1.0, nodes: 20 }).unwrap());
        let u = MapField::identity(Arc::clone(&g), Target::euclidean(2)).unwrap();
        let v = VariationField::tangential_axis(&u, 0).unwrap();
        assert!(matches!(first_variation(&u, &v), Err(Error::SupportViolation(_))));
        let local = VariationField::tangential(
            &u,
            &AmbientVariation::Localized {
                direction: vec![1.0, 0.5],
                center: vec![0.5, 0.5],
                radius: 0.3,
            },
        )
        .unwrap();
        let a = first_variation(&u, &local).unwrap();
        let fd = fd_first_variation(&u, &local).unwrap();
        assert!(rel_diff(a, fd.value) < 1e-3 || a.abs() < 1e-12);
        let e = phi_energy(&u, 3, None).unwrap();
        assert!(e > 0.0);
    }
}
