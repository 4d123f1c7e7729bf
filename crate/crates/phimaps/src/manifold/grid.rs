use std::collections::HashMap;
use std::io::Write;

use nalgebra::DMatrix;

use super::profile::{CurvatureProfile, Warp};
use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::real::Real;

/// Sentinel for a missing neighbor.
pub const NONE: u32 = u32::MAX;

/// Half-width of the partition-of-unity transition band, in units of height.
const BLEND: f64 = 0.5;
/// Nodes whose partition weight falls below this are dropped from a chart.
const CHI_FLOOR: f64 = 1e-13;
/// Chart cubes extend slightly past the support of the partition function.
const CUBE_MARGIN: f64 = 1.02;

/// The model manifolds a grid can sample.
#[derive(Clone, Debug, PartialEq)]
pub enum GridModel {
    /// `[0, side]^m` with trapezoid weights.
    FlatBox { dim: usize, side: f64, nodes: usize },
    /// `R^m / (2π Z)^m`.
    FlatTorus { dim: usize, nodes: usize },
    /// Round sphere covered by two stereographic charts blended by a smooth partition of unity.
    RoundSphere { dim: usize, radius: f64, nodes: usize },
    /// Rotationally symmetric `dr² + f(r)² g_sphere` in a polar chart about a pole.
    /// `nodes` counts radial rings; `angular_nodes` defaults to `nodes`.
    RotationalPole {
        dim: usize,
        profile: CurvatureProfile,
        extent: f64,
        nodes: usize,
        angular_nodes: Option<usize>,
    },
}

impl GridModel {
    pub fn dim(&self) -> usize {
        match self {
            GridModel::FlatBox { dim, .. }
            | GridModel::FlatTorus { dim, .. }
            | GridModel::RoundSphere { dim, .. }
            | GridModel::RotationalPole { dim, .. } => *dim,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GridModel::FlatBox { .. } => "flat_box",
            GridModel::FlatTorus { .. } => "flat_torus",
            GridModel::RoundSphere { .. } => "round_sphere",
            GridModel::RotationalPole { .. } => "rotational_pole",
        }
    }
}

#[derive(Clone, Debug)]
struct Radial {
    rings: usize,
    dr: f64,
    angular_len: usize,
    /// `∫ f^{m-1} dr` over each radial cell.
    ring_measure: Vec<f64>,
    angular_weight: Vec<f64>,
    warp: Warp,
}

/// A sampled chart atlas of a model manifold.
///
/// All chart metrics are diagonal, so the metric is stored as its diagonal
/// and the orthonormal frame at a node is `e_a = ∂_a / √g_aa`.
#[derive(Clone, Debug)]
pub struct DomainGrid {
    model: GridModel,
    dim: usize,
    coords: Vec<f64>,
    chart: Vec<i8>,
    metric: Vec<f64>,
    weights: Vec<f64>,
    steps: Vec<f64>,
    neighbors: Vec<u32>,
    interior: Vec<bool>,
    boundary: Vec<bool>,
    radial: Option<Radial>,
}

pub fn build_model_grid(model: GridModel) -> Result<DomainGrid> {
    let m = model.dim();
    if m < 1 {
        return Err(Error::param("dim", "must be at least 1"));
    }
    let nodes = match &model {
        GridModel::FlatBox { nodes, .. }
        | GridModel::FlatTorus { nodes, .. }
        | GridModel::RoundSphere { nodes, .. }
        | GridModel::RotationalPole { nodes, .. } => *nodes,
    };
    if nodes < 4 {
        return Err(Error::param("nodes", "need at least 4 nodes per axis"));
    }
    match model {
        GridModel::FlatBox { side, .. } => {
            if !(side > 0.0 && side.is_finite()) {
                return Err(Error::param("side", "must be positive"));
            }
            Ok(flat(model, m, nodes, side, false))
        }
        GridModel::FlatTorus { .. } => Ok(flat(model, m, nodes, 2.0 * std::f64::consts::PI, true)),
        GridModel::RoundSphere { radius, .. } => {
            if !(radius > 0.0 && radius.is_finite()) {
                return Err(Error::param("radius", "must be positive"));
            }
            if m > 8 {
                return Err(Error::UnsupportedDimension {
                    model: "round_sphere",
                    dim: m,
                });
            }
            Ok(sphere(model, m, radius, nodes))
        }
        GridModel::RotationalPole {
            profile,
            extent,
            angular_nodes,
            ..
        } => {
            if !(extent > 0.0 && extent.is_finite()) {
                return Err(Error::param("extent", "must be positive"));
            }
            if m > 9 {
                return Err(Error::UnsupportedDimension {
                    model: "rotational_pole",
                    dim: m,
                });
            }
            let ang = angular_nodes.unwrap_or(nodes);
            if ang < 4 {
                return Err(Error::param("angular_nodes", "need at least 4 nodes per axis"));
            }
            let profile = profile.validated()?;
            Ok(pole(model, m, &profile, extent, nodes, ang))
        }
    }
}

fn flat(model: GridModel, m: usize, n: usize, side: f64, periodic: bool) -> DomainGrid {
    let len = n.pow(m as u32);
    let h = if periodic { side / n as f64 } else { side / (n - 1) as f64 };
    let mut coords = vec![0.0; len * m];
    let mut weights = vec![0.0; len];
    let mut neighbors = vec![NONE; len * 2 * m];
    let mut interior = vec![true; len];
    let mut idx = vec![0usize; m];
    for node in 0..len {
        let mut w = 1.0;
        let mut stride = 1;
        for a in 0..m {
            let i = idx[a];
            coords[node * m + a] = i as f64 * h;
            if !periodic && (i == 0 || i == n - 1) {
                w *= 0.5 * h;
            } else {
                w *= h;
            }
            let (lo, hi) = if periodic {
                (Some((i + n - 1) % n), Some((i + 1) % n))
            } else {
                (i.checked_sub(1), (i + 1 < n).then_some(i + 1))
            };
            if let Some(j) = lo {
                neighbors[node * 2 * m + 2 * a] = (node - i * stride + j * stride) as u32;
            }
            if let Some(j) = hi {
                neighbors[node * 2 * m + 2 * a + 1] = (node - i * stride + j * stride) as u32;
            }
            if !periodic && (i < 2 || i + 2 >= n) {
                interior[node] = false;
            }
            stride *= n;
        }
        weights[node] = w;
        for i in idx.iter_mut() {
            *i += 1;
            if *i < n {
                break;
            }
            *i = 0;
        }
    }
    let boundary = if periodic {
        vec![false; len]
    } else {
        interior.iter().map(|b| !b).collect()
    };
    DomainGrid {
        model,
        dim: m,
        coords,
        chart: vec![0; len],
        metric: vec![1.0; len * m],
        weights,
        steps: vec![h; m],
        neighbors,
        interior,
        boundary,
        radial: None,
    }
}

/// Smooth step `ψ(z) = f(z) / (f(z) + f(1-z))`, `f(z) = e^{-1/z}`.
fn smooth_step(z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if z >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / z).exp();
    let b = (-1.0 / (1.0 - z)).exp();
    a / (a + b)
}

/// Partition weight of the stereographic chart whose center has |y| = 0,
/// as a function of `|y|²`.
fn chart_partition(y2: f64) -> f64 {
    let height = (1.0 - y2) / (1.0 + y2);
    smooth_step((height + BLEND) / (2.0 * BLEND))
}

/// Two stereographic cube charts of the unit sphere `S^k`.
struct SphereCharts {
    coords: Vec<f64>,
    chart: Vec<i8>,
    chi: Vec<f64>,
    core: Vec<bool>,
    neighbors: Vec<u32>,
    antipode: Vec<u32>,
    h: f64,
}

fn sphere_charts(k: usize, n: usize, halo: usize) -> SphereCharts {
    if k == 0 {
        return SphereCharts {
            coords: Vec::new(),
            chart: vec![1, -1],
            chi: vec![1.0, 1.0],
            core: vec![true, true],
            neighbors: Vec::new(),
            antipode: vec![1, 0],
            h: 1.0,
        };
    }
    let half = CUBE_MARGIN * 3.0_f64.sqrt();
    let h = 2.0 * half / (n - 1) as f64;
    let coord = |i: usize| -half + i as f64 * h;
    // largest |y|² whose partition weight clears the floor
    let (mut lo, mut hi) = (0.0_f64, 3.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chart_partition(mid) >= CHI_FLOOR {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let core_r2 = lo;

    let total = (n as u64).pow(k as u32);
    let mut core_ids: Vec<u64> = Vec::new();
    let mut idx = vec![0usize; k];
    let sq: Vec<f64> = (0..n).map(|i| coord(i) * coord(i)).collect();
    let mut y2: f64 = idx.iter().map(|&i| sq[i]).sum();
    for lin in 0..total {
        if y2 <= core_r2 {
            core_ids.push(lin);
        }
        for i in idx.iter_mut() {
            y2 -= sq[*i];
            *i += 1;
            if *i < n {
                y2 += sq[*i];
                break;
            }
            *i = 0;
            y2 += sq[0];
        }
    }
    let strides: Vec<u64> = (0..k).map(|a| (n as u64).pow(a as u32)).collect();
    let digit = |lin: u64, a: usize| ((lin / strides[a]) % n as u64) as usize;

    let mut layer: HashMap<u64, u8> = core_ids.iter().map(|&l| (l, 0u8)).collect();
    let mut frontier = core_ids.clone();
    for depth in 1..=halo {
        let mut next = Vec::new();
        for &lin in &frontier {
            for a in 0..k {
                let i = digit(lin, a);
                if i > 0 {
                    let nb = lin - strides[a];
                    if let std::collections::hash_map::Entry::Vacant(e) = layer.entry(nb) {
                        e.insert(depth as u8);
                        next.push(nb);
                    }
                }
                if i + 1 < n {
                    let nb = lin + strides[a];
                    if let std::collections::hash_map::Entry::Vacant(e) = layer.entry(nb) {
                        e.insert(depth as u8);
                        next.push(nb);
                    }
                }
            }
        }
        frontier = next;
    }
    let mut ids: Vec<u64> = layer.keys().copied().collect();
    ids.sort_unstable();
    let per_chart = ids.len();
    let lookup: HashMap<u64, u32> = ids.iter().enumerate().map(|(i, &l)| (l, i as u32)).collect();

    let len = 2 * per_chart;
    let mut coords = vec![0.0; len * k];
    let mut chart = vec![0i8; len];
    let mut chi = vec![0.0; len];
    let mut core = vec![false; len];
    let mut neighbors = vec![NONE; len * 2 * k];
    let mut antipode = vec![NONE; len];
    for (c, s) in [1i8, -1i8].into_iter().enumerate() {
        let base = c * per_chart;
        for (local, &lin) in ids.iter().enumerate() {
            let node = base + local;
            chart[node] = s;
            let mut y2 = 0.0;
            let mut mirror = 0u64;
            for a in 0..k {
                let i = digit(lin, a);
                let y = coord(i);
                coords[node * k + a] = y;
                y2 += y * y;
                mirror += (n - 1 - i) as u64 * strides[a];
                if i > 0 {
                    if let Some(&j) = lookup.get(&(lin - strides[a])) {
                        neighbors[node * 2 * k + 2 * a] = base as u32 + j;
                    }
                }
                if i + 1 < n {
                    if let Some(&j) = lookup.get(&(lin + strides[a])) {
                        neighbors[node * 2 * k + 2 * a + 1] = base as u32 + j;
                    }
                }
            }
            let is_core = layer[&lin] == 0;
            core[node] = is_core;
            chi[node] = if is_core { chart_partition(y2) } else { 0.0 };
            if let Some(&j) = lookup.get(&mirror) {
                antipode[node] = ((1 - c) * per_chart) as u32 + j;
            }
        }
    }
    SphereCharts {
        coords,
        chart,
        chi,
        core,
        neighbors,
        antipode,
        h,
    }
}

fn halo_layers(k: usize) -> usize {
    if k <= 4 {
        2
    } else {
        1
    }
}

fn sphere(model: GridModel, m: usize, radius: f64, n: usize) -> DomainGrid {
    let sc = sphere_charts(m, n, halo_layers(m));
    let len = sc.chart.len();
    let mut metric = vec![0.0; len * m];
    let mut weights = vec![0.0; len];
    let mut interior = vec![false; len];
    for node in 0..len {
        let y2: f64 = sc.coords[node * m..(node + 1) * m].iter().map(|y| y * y).sum();
        let lambda = 2.0 * radius / (1.0 + y2);
        for a in 0..m {
            metric[node * m + a] = lambda * lambda;
        }
        weights[node] = sc.chi[node] * (lambda * sc.h).powi(m as i32);
        interior[node] = sc.core[node] && sc.neighbors[node * 2 * m..(node + 1) * 2 * m].iter().all(|&j| j != NONE);
    }
    DomainGrid {
        model,
        dim: m,
        coords: sc.coords,
        chart: sc.chart,
        metric,
        weights,
        steps: vec![sc.h; m],
        neighbors: sc.neighbors,
        interior,
        boundary: vec![false; len],
        radial: None,
    }
}

fn pole(model: GridModel, m: usize, profile: &CurvatureProfile, extent: f64, rings: usize, ang: usize) -> DomainGrid {
    let k = m - 1;
    let sc = sphere_charts(k, ang, halo_layers(k));
    let alen = sc.chart.len();
    let warp = Warp::new(profile, extent);
    let dr = extent / rings as f64;
    let ring_measure: Vec<f64> = (0..rings)
        .map(|i| warp.power_integral(i as f64 * dr, (i + 1) as f64 * dr, k as i32))
        .collect();
    let mut angular_weight = vec![0.0; alen];
    let mut angular_conf = vec![1.0; alen];
    let mut angular_interior = vec![false; alen];
    for a in 0..alen {
        let y2: f64 = sc.coords[a * k..(a + 1) * k].iter().map(|y| y * y).sum();
        let mu = 2.0 / (1.0 + y2);
        angular_conf[a] = mu;
        angular_weight[a] = sc.chi[a] * (mu * sc.h).powi(k as i32);
        angular_interior[a] = sc.core[a] && sc.neighbors[a * 2 * k..(a + 1) * 2 * k].iter().all(|&j| j != NONE);
    }
    let len = rings * alen;
    let mut coords = vec![0.0; len * m];
    let mut chart = vec![0i8; len];
    let mut metric = vec![0.0; len * m];
    let mut weights = vec![0.0; len];
    let mut neighbors = vec![NONE; len * 2 * m];
    let mut interior = vec![false; len];
    let mut boundary = vec![false; len];
    for i in 0..rings {
        let r = (i as f64 + 0.5) * dr;
        let f = warp.eval(r).0;
        for a in 0..alen {
            let node = i * alen + a;
            coords[node * m] = r;
            coords[node * m + 1..(node + 1) * m].copy_from_slice(&sc.coords[a * k..(a + 1) * k]);
            chart[node] = sc.chart[a];
            metric[node * m] = 1.0;
            for b in 1..m {
                metric[node * m + b] = (f * angular_conf[a]).powi(2);
            }
            weights[node] = ring_measure[i] * angular_weight[a];
            let nb = &mut neighbors[node * 2 * m..(node + 1) * 2 * m];
            nb[0] = if i == 0 {
                sc.antipode[a]
            } else {
                ((i - 1) * alen + a) as u32
            };
            nb[1] = if i + 1 < rings {
                ((i + 1) * alen + a) as u32
            } else {
                NONE
            };
            for b in 0..k {
                for side in 0..2 {
                    let j = sc.neighbors[a * 2 * k + 2 * b + side];
                    nb[2 * (b + 1) + side] = if j == NONE {
                        NONE
                    } else {
                        (i * alen) as u32 + j
                    };
                }
            }
            interior[node] = angular_interior[a] && i >= 2 && i + 2 < rings;
            boundary[node] = i + 2 >= rings;
        }
    }
    let mut steps = vec![sc.h; m];
    steps[0] = dr;
    DomainGrid {
        model,
        dim: m,
        coords,
        chart,
        metric,
        weights,
        steps,
        neighbors,
        interior,
        boundary,
        radial: Some(Radial {
            rings,
            dr,
            angular_len: alen,
            ring_measure,
            angular_weight,
            warp,
        }),
    }
}

/// Stereographic embedding of the unit sphere `S^k` from the chart with sign `s`.
fn unit_sphere_point<T: Real>(s: i8, y: &[T]) -> Vec<T> {
    if y.is_empty() {
        return vec![T::cst(s as f64)];
    }
    let mut y2 = T::cst(0.0);
    for v in y {
        y2 += *v * *v;
    }
    let inv = (y2 + 1.0).recip();
    let mut p: Vec<T> = y.iter().map(|v| *v * inv * 2.0).collect();
    p.push((-y2 + 1.0) * inv * s as f64);
    p
}

/// Coordinate derivatives of [`unit_sphere_point`].
fn unit_sphere_tangents<T: Real>(s: i8, y: &[T]) -> Vec<Vec<T>> {
    let k = y.len();
    let mut y2 = T::cst(0.0);
    for v in y {
        y2 += *v * *v;
    }
    let inv = (y2 + 1.0).recip();
    let inv2 = inv * inv;
    (0..k)
        .map(|a| {
            let mut t: Vec<T> = (0..k)
                .map(|b| {
                    let delta = if a == b { inv * 2.0 } else { T::cst(0.0) };
                    delta - y[b] * y[a] * inv2 * 4.0
                })
                .collect();
            t.push(-(y[a] * inv2 * 4.0) * s as f64);
            t
        })
        .collect()
}

impl DomainGrid {
    pub fn model(&self) -> &GridModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn coords(&self, node: usize) -> &[f64] {
        &self.coords[node * self.dim..(node + 1) * self.dim]
    }

    /// Chart label of a node: `±1` for the two stereographic charts, `0` on flat grids.
    pub fn chart(&self, node: usize) -> i8 {
        self.chart[node]
    }

    pub fn metric_diag(&self, node: usize) -> &[f64] {
        &self.metric[node * self.dim..(node + 1) * self.dim]
    }

    pub fn metric(&self, node: usize) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(self.metric_diag(node)))
    }

    pub fn inverse_metric(&self, node: usize) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.dim,
            self.metric_diag(node).iter().map(|g| 1.0 / g),
        ))
    }

    pub fn sqrt_det(&self, node: usize) -> f64 {
        self.metric_diag(node).iter().product::<f64>().sqrt()
    }

    pub fn weight(&self, node: usize) -> f64 {
        self.weights[node]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    /// Neighbor along `axis` on the given side (`0` = minus, `1` = plus), or [`NONE`].
    pub fn neighbor(&self, node: usize, axis: usize, side: usize) -> u32 {
        self.neighbors[node * 2 * self.dim + 2 * axis + side]
    }

    /// Nodes where divergence stencils are complete and strong-form operators are evaluated.
    pub fn is_interior(&self, node: usize) -> bool {
        self.interior[node]
    }

    /// Nodes within two layers of an open edge; variation fields must vanish there.
    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    /// Whether the minus-radial neighbor of this node is reached through the pole.
    pub fn reflected_through_pole(&self, node: usize) -> bool {
        self.radial.as_ref().is_some_and(|r| node < r.angular_len)
    }

    pub fn has_pole(&self) -> bool {
        self.radial.is_some()
    }

    pub fn is_closed(&self) -> bool {
        matches!(self.model, GridModel::FlatTorus { .. } | GridModel::RoundSphere { .. })
    }

    /// Geodesic distance to the pole.
    pub fn radius_at(&self, node: usize) -> Option<f64> {
        self.radial.as_ref().map(|_| self.coords[node * self.dim])
    }

    pub fn radial_extent(&self) -> Option<f64> {
        self.radial.as_ref().map(|r| r.dr * r.rings as f64)
    }

    pub fn ring_count(&self) -> Option<usize> {
        self.radial.as_ref().map(|r| r.rings)
    }

    pub fn ring_step(&self) -> Option<f64> {
        self.radial.as_ref().map(|r| r.dr)
    }

    pub fn ring_of(&self, node: usize) -> Option<usize> {
        self.radial.as_ref().map(|r| node / r.angular_len)
    }

    /// Center radius of a ring.
    pub fn ring_radius(&self, ring: usize) -> Option<f64> {
        self.radial.as_ref().map(|r| (ring as f64 + 0.5) * r.dr)
    }

    /// Nodes of one radial ring.
    pub fn ring_nodes(&self, ring: usize) -> std::ops::Range<usize> {
        match &self.radial {
            Some(r) => ring * r.angular_len..(ring + 1) * r.angular_len,
            None => 0..0,
        }
    }

    /// The warped factor `(f, f', f'')` of a pole grid.
    pub fn warp(&self, r: f64) -> Option<(f64, f64, f64)> {
        self.radial.as_ref().map(|rad| rad.warp.eval(r))
    }

    /// Fraction of the node's cell measure lying in the geodesic ball `B(ρ)`.
    pub fn ball_fraction(&self, node: usize, rho: f64) -> Result<f64> {
        let rad = self.radial.as_ref().ok_or(Error::NoPole)?;
        let ring = node / rad.angular_len;
        let a = ring as f64 * rad.dr;
        let b = a + rad.dr;
        Ok(if b <= rho {
            1.0
        } else if a >= rho {
            0.0
        } else {
            rad.warp.power_integral(a, rho, self.dim as i32 - 1) / rad.ring_measure[ring]
        })
    }

    /// Area of the geodesic sphere through a ring's centers: the ring's
    /// quadrature weight divided by the shell thickness.
    pub fn shell_area(&self, ring: usize) -> Result<f64> {
        let rad = self.radial.as_ref().ok_or(Error::NoPole)?;
        let w = &self.weights[ring * rad.angular_len..(ring + 1) * rad.angular_len];
        Ok(pairwise_sum(w) / rad.dr)
    }

    /// Total angular weight, i.e. the quadrature volume of the unit sphere `S^{m-1}`.
    pub fn angular_volume(&self) -> Option<f64> {
        self.radial.as_ref().map(|r| pairwise_sum(&r.angular_weight))
    }

    pub fn volume(&self) -> f64 {
        pairwise_sum(&self.weights)
    }

    /// Dimension of the canonical embedding returned by [`Self::position_generic`].
    pub fn embedding_dim(&self) -> usize {
        match self.model {
            GridModel::RoundSphere { .. } => self.dim + 1,
            _ => self.dim,
        }
    }

    /// Canonical position of a chart point: the point itself on flat grids,
    /// the embedded sphere point on spheres and `r ω(y)` on pole grids.
    pub fn position_generic<T: Real>(&self, chart: i8, x: &[T]) -> Vec<T> {
        match &self.model {
            GridModel::FlatBox { .. } | GridModel::FlatTorus { .. } => x.to_vec(),
            GridModel::RoundSphere { radius, .. } => unit_sphere_point(chart, x).into_iter().map(|v| v * *radius).collect(),
            GridModel::RotationalPole { .. } => {
                let r = x[0];
                unit_sphere_point(chart, &x[1..]).into_iter().map(|v| v * r).collect()
            }
        }
    }

    /// Coordinate derivatives `∂_a` of [`Self::position_generic`].
    pub fn position_tangents_generic<T: Real>(&self, chart: i8, x: &[T]) -> Vec<Vec<T>> {
        let m = self.dim;
        match &self.model {
            GridModel::FlatBox { .. } | GridModel::FlatTorus { .. } => (0..m)
                .map(|a| (0..m).map(|b| T::cst(if a == b { 1.0 } else { 0.0 })).collect())
                .collect(),
            GridModel::RoundSphere { radius, .. } => unit_sphere_tangents(chart, x)
                .into_iter()
                .map(|t| t.into_iter().map(|v| v * *radius).collect())
                .collect(),
            GridModel::RotationalPole { .. } => {
                let r = x[0];
                let mut out = vec![unit_sphere_point(chart, &x[1..])];
                for t in unit_sphere_tangents(chart, &x[1..]) {
                    out.push(t.into_iter().map(|v| v * r).collect());
                }
                out
            }
        }
    }

    /// Diagonal chart metric at a chart point.
    pub fn metric_generic<T: Real>(&self, chart: i8, x: &[T]) -> Vec<T> {
        let m = self.dim;
        let _ = chart;
        match &self.model {
            GridModel::FlatBox { .. } | GridModel::FlatTorus { .. } => vec![T::cst(1.0); m],
            GridModel::RoundSphere { radius, .. } => {
                let mut y2 = T::cst(0.0);
                for v in x {
                    y2 += *v * *v;
                }
                let l = (y2 + 1.0).recip() * (2.0 * radius);
                vec![l * l; m]
            }
            GridModel::RotationalPole { .. } => {
                let rad = self.radial.as_ref().expect("pole grid carries radial data");
                let (f0, f1, f2) = rad.warp.eval(x[0].re());
                let f = x[0].lift(f0, f1, f2);
                let mut y2 = T::cst(0.0);
                for v in &x[1..] {
                    y2 += *v * *v;
                }
                let mu = (y2 + 1.0).recip() * 2.0;
                let g = (f * mu) * (f * mu);
                let mut out = vec![g; m];
                out[0] = T::cst(1.0);
                out
            }
        }
    }

    /// Chart coordinates of a point given in the canonical embedding.
    /// Spheres pick the chart whose center is nearer.
    pub fn locate_generic<T: Real>(&self, p: &[T]) -> Result<(i8, Vec<T>)> {
        match &self.model {
            GridModel::FlatBox { .. } | GridModel::FlatTorus { .. } => Ok((0, p.to_vec())),
            GridModel::RoundSphere { radius, .. } => {
                let m = self.dim;
                let last = p[m].re();
                let s: i8 = if last >= 0.0 { 1 } else { -1 };
                let denom = (p[m] * s as f64 + *radius).recip();
                Ok((s, p[..m].iter().map(|v| *v * denom).collect()))
            }
            GridModel::RotationalPole { .. } => Err(Error::Incompatible(
                "pole grids do not locate ambient points".into(),
            )),
        }
    }

    /// Writes `node, coords..., metric..., weight` rows.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let m = self.dim;
        let mut header = vec!["node".to_string()];
        header.extend((0..m).map(|a| format!("x{a}")));
        header.extend((0..m).map(|a| format!("g{a}{a}")));
        header.push("weight".into());
        writeln!(out, "{}", header.join(","))?;
        for node in 0..self.len() {
            write!(out, "{node}")?;
            for v in self.coords(node).iter().chain(self.metric_diag(node)) {
                write!(out, ",{v:.17e}")?;
            }
            writeln!(out, ",{:.17e}", self.weights[node])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::convergence_order;
    use std::f64::consts::PI;

    fn sphere_volume(m: usize) -> f64 {
        // Vol(S^m) = 2π^{(m+1)/2} / Γ((m+1)/2)
        let mut v = [2.0, 2.0 * PI];
        for k in 2..=m {
            let next = 2.0 * PI / (k as f64 - 1.0) * v[0];
            v = [v[1], next];
        }
        if m == 0 {
            2.0
        } else {
            v[1]
        }
    }

    #[test]
    fn sphere_volume_formula() {
        assert!((sphere_volume(2) - 4.0 * PI).abs() < 1e-12);
        assert!((sphere_volume(7) - PI.powi(4) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn torus_volume_is_exact() {
        let g = build_model_grid(GridModel::FlatTorus { dim: 2, nodes: 32 }).unwrap();
        assert!((g.volume() - 4.0 * PI * PI).abs() < 1e-6);
    }

    #[test]
    fn round_sphere_area() {
        let g = build_model_grid(GridModel::RoundSphere {
            dim: 2,
            radius: 1.0,
            nodes: 64,
        })
        .unwrap();
        assert!((g.volume() - 4.0 * PI).abs() < 1e-3);
        let g = build_model_grid(GridModel::RoundSphere {
            dim: 3,
            radius: 2.0,
            nodes: 24,
        })
        .unwrap();
        let exact = sphere_volume(3) * 8.0;
        assert!((g.volume() - exact).abs() / exact < 1e-3);
    }

    #[test]
    fn box_metric_is_identity() {
        let g = build_model_grid(GridModel::FlatBox {
            dim: 7,
            side: 1.0,
            nodes: 4,
        })
        .unwrap();
        for node in 0..g.len() {
            assert_eq!(g.metric(node), DMatrix::identity(7, 7));
        }
        assert!((g.volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_models() {
        assert!(build_model_grid(GridModel::FlatTorus { dim: 2, nodes: 3 }).is_err());
        assert!(build_model_grid(GridModel::RoundSphere {
            dim: 9,
            radius: 1.0,
            nodes: 8
        })
        .is_err());
        assert!(build_model_grid(GridModel::FlatBox {
            dim: 2,
            side: -1.0,
            nodes: 8
        })
        .is_err());
    }

    #[test]
    fn stereographic_tangents_match_metric() {
        let g = build_model_grid(GridModel::RoundSphere {
            dim: 3,
            radius: 1.5,
            nodes: 10,
        })
        .unwrap();
        for node in (0..g.len()).step_by(7) {
            let x = g.coords(node);
            let t = g.position_tangents_generic(g.chart(node), x);
            for a in 0..3 {
                for b in 0..3 {
                    let ip: f64 = t[a].iter().zip(&t[b]).map(|(u, v)| u * v).sum();
                    let expect = if a == b { g.metric_diag(node)[a] } else { 0.0 };
                    assert!((ip - expect).abs() < 1e-12);
                }
            }
            let p = g.position_generic(g.chart(node), x);
            let (s, y) = g.locate_generic(&p).unwrap();
            let back = g.position_generic(s, &y);
            for (u, v) in p.iter().zip(&back) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn antipodal_neighbor_through_pole() {
        let g = build_model_grid(GridModel::RotationalPole {
            dim: 3,
            profile: CurvatureProfile::flat(),
            extent: 2.0,
            nodes: 8,
            angular_nodes: Some(8),
        })
        .unwrap();
        for node in g.ring_nodes(0) {
            let j = g.neighbor(node, 0, 0);
            if j == NONE {
                continue;
            }
            let p = g.position_generic(g.chart(node), g.coords(node));
            let q = g.position_generic(g.chart(j as usize), g.coords(j as usize));
            for (u, v) in p.iter().zip(&q) {
                assert!((u + v).abs() < 1e-12);
            }
        }
        assert!(g.reflected_through_pole(0));
    }

    #[test]
    fn flat_pole_grid_ball_volume() {
        let g = build_model_grid(GridModel::RotationalPole {
            dim: 3,
            profile: CurvatureProfile::flat(),
            extent: 2.0,
            nodes: 20,
            angular_nodes: Some(24),
        })
        .unwrap();
        let rho = 1.37;
        let v: f64 = (0..g.len()).map(|i| g.weight(i) * g.ball_fraction(i, rho).unwrap()).sum();
        let exact = 4.0 / 3.0 * PI * rho.powi(3);
        assert!((v - exact).abs() / exact < 1e-4, "{v} vs {exact}");
        let shell = g.shell_area(10).unwrap();
        let r = g.ring_radius(10).unwrap();
        assert!((shell - 4.0 * PI * r * r).abs() / shell < 1e-3);
    }

    #[test]
    fn one_dimensional_pole_grid() {
        let g = build_model_grid(GridModel::RotationalPole {
            dim: 1,
            profile: CurvatureProfile::flat(),
            extent: 3.0,
            nodes: 12,
            angular_nodes: None,
        })
        .unwrap();
        assert_eq!(g.len(), 24);
        assert!((g.volume() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_volume_converges_fast_under_refinement() {
        // volumes of closed model manifolds converge at least at the stencil order
        let mut hs = Vec::new();
        let mut errs = Vec::new();
        for n in [12, 16, 20] {
            let g = build_model_grid(GridModel::RoundSphere {
                dim: 2,
                radius: 1.0,
                nodes: n,
            })
            .unwrap();
            hs.push(g.steps()[0]);
            errs.push((g.volume() - 4.0 * PI).abs());
        }
        assert!(convergence_order(&hs, &errs) >= 1.9);
    }
}
