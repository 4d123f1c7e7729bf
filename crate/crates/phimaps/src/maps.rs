//! Closed-form maps and domain vector fields.
//!
//! An [`AnalyticMap`] is a source (a function of the chart point) followed by
//! a chain of ambient stages. Everything is generic over [`Real`], so the same
//! code yields nodal values and exact coordinate derivatives.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::manifold::{DomainGrid, EmbeddedTarget, GridModel, Target};
use crate::real::{dot, Real};

/// One trigonometric mode `amplitude · sin(⟨wave, x⟩ + phase)` in output component `component`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigMode {
    pub component: usize,
    pub wave: Vec<f64>,
    pub phase: f64,
    pub amplitude: f64,
}

impl TrigMode {
    /// Reproducible random modes with integer wave vectors in `[-max_freq, max_freq]`,
    /// so they stay periodic on the flat torus.
    pub fn random_set(
        input_dim: usize,
        output_dim: usize,
        count: usize,
        max_freq: i32,
        seed: u64,
    ) -> Vec<TrigMode> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let mut wave: Vec<f64> = (0..input_dim)
                    .map(|_| rng.random_range(-max_freq..=max_freq) as f64)
                    .collect();
                if wave.iter().all(|k| *k == 0.0) {
                    wave[0] = 1.0;
                }
                TrigMode {
                    component: rng.random_range(0..output_dim),
                    wave,
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amplitude: rng.random_range(-1.0..1.0),
                }
            })
            .collect()
    }
}

fn trig_sum<T: Real>(modes: &[TrigMode], x: &[T], out: &mut [T], scale: f64) {
    for mode in modes {
        let mut arg = T::cst(mode.phase);
        for (k, v) in mode.wave.iter().zip(x) {
            arg += *v * *k;
        }
        out[mode.component] += arg.sin() * (mode.amplitude * scale);
    }
}

/// Where a map starts, as a function of the chart point.
#[derive(Clone, Debug, PartialEq)]
pub enum MapSource {
    /// The grid's canonical embedding (see [`DomainGrid::position_generic`]).
    Position,
    Constant(Vec<f64>),
    /// `base + Σ modes(position)`.
    Wave { base: Vec<f64>, modes: Vec<TrigMode> },
}

/// A stage acting on ambient points.
#[derive(Clone, Debug, PartialEq)]
pub enum AmbientMap {
    Affine {
        matrix: DMatrix<f64>,
        offset: DVector<f64>,
    },
    Project(Target),
    /// The time-`time` flow of the gradient of the height `⟨p, pole⟩` on the
    /// round sphere of the given radius. Points move toward `pole`.
    ConformalFlow { pole: Vec<f64>, time: f64, radius: f64 },
    /// `p + amplitude · Σ modes(p)`.
    Perturb { amplitude: f64, modes: Vec<TrigMode> },
    /// `(x_1, …, x_k) ↦ (cos x_1, sin x_1, …, cos x_k, sin x_k)`.
    AnglesToCircles,
}

/// The closed-form conformal flow on a sphere of radius `radius`, toward the
/// direction of `pole` (which need not be normalized).
pub fn conformal_flow<T: Real>(p: &[T], pole: &[f64], time: f64, radius: f64) -> Vec<T> {
    let inv_r = 1.0 / radius;
    let norm = pole.iter().map(|v| v * v).sum::<f64>().sqrt();
    let pole: Vec<f64> = pole.iter().map(|v| v / norm).collect();
    let mut h = T::cst(0.0);
    for (x, v) in p.iter().zip(&pole) {
        h += *x * (v * inv_r);
    }
    let a = (-time).exp();
    let a2 = a * a;
    let plus = h + 1.0;
    let minus = -h + 1.0;
    let denom = (plus + minus * a2).recip();
    let along = (plus - minus * a2) * denom;
    p.iter()
        .zip(&pole)
        .map(|(x, v)| (along * *v + (*x * inv_r - h * *v) * denom * (2.0 * a)) * radius)
        .collect()
}

impl AmbientMap {
    pub fn linear(matrix: DMatrix<f64>) -> Self {
        let rows = matrix.nrows();
        AmbientMap::Affine {
            matrix,
            offset: DVector::zeros(rows),
        }
    }

    pub fn apply<T: Real>(&self, p: &[T]) -> Result<Vec<T>> {
        match self {
            AmbientMap::Affine { matrix, offset } => {
                if matrix.ncols() != p.len() {
                    return Err(Error::DimensionMismatch {
                        context: "affine stage",
                        expected: matrix.ncols(),
                        found: p.len(),
                    });
                }
                Ok((0..matrix.nrows())
                    .map(|i| {
                        let mut s = T::cst(offset[i]);
                        for (j, x) in p.iter().enumerate() {
                            s += *x * matrix[(i, j)];
                        }
                        s
                    })
                    .collect())
            }
            AmbientMap::Project(target) => {
                if target.ambient_dim() != p.len() {
                    return Err(Error::DimensionMismatch {
                        context: "projection stage",
                        expected: target.ambient_dim(),
                        found: p.len(),
                    });
                }
                target.project_generic(p)
            }
            AmbientMap::ConformalFlow { pole, time, radius } => {
                if pole.len() != p.len() {
                    return Err(Error::DimensionMismatch {
                        context: "conformal flow pole",
                        expected: p.len(),
                        found: pole.len(),
                    });
                }
                Ok(conformal_flow(p, pole, *time, *radius))
            }
            AmbientMap::Perturb { amplitude, modes } => {
                let mut out = p.to_vec();
                if modes.iter().any(|m| m.component >= p.len() || m.wave.len() != p.len()) {
                    return Err(Error::param("modes", "mode dimensions do not match the stage input"));
                }
                trig_sum(modes, p, &mut out, *amplitude);
                Ok(out)
            }
            AmbientMap::AnglesToCircles => {
                let mut out = Vec::with_capacity(2 * p.len());
                for x in p {
                    out.push(x.cos());
                    out.push(x.sin());
                }
                Ok(out)
            }
        }
    }
}

/// A closed-form map `source` followed by `stages`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticMap {
    pub source: MapSource,
    pub stages: Vec<AmbientMap>,
}

impl AnalyticMap {
    pub fn identity() -> Self {
        AnalyticMap {
            source: MapSource::Position,
            stages: Vec::new(),
        }
    }

    pub fn constant(point: Vec<f64>) -> Self {
        AnalyticMap {
            source: MapSource::Constant(point),
            stages: Vec::new(),
        }
    }

    pub fn then(mut self, stage: AmbientMap) -> Self {
        self.stages.push(stage);
        self
    }

    pub fn eval<T: Real>(&self, grid: &DomainGrid, chart: i8, x: &[T]) -> Result<Vec<T>> {
        match &self.source {
            MapSource::Constant(_) => self.eval_at_position::<T>(&[]),
            _ => self.eval_at_position(&grid.position_generic(chart, x)),
        }
    }

    /// Evaluates the map on a point of the canonical embedding instead of a chart point.
    pub fn eval_at_position<T: Real>(&self, p: &[T]) -> Result<Vec<T>> {
        let start = match &self.source {
            MapSource::Position => p.to_vec(),
            MapSource::Constant(c) => c.iter().map(|v| T::cst(*v)).collect(),
            MapSource::Wave { base, modes } => {
                if modes.iter().any(|m| m.component >= base.len() || m.wave.len() != p.len()) {
                    return Err(Error::param("modes", "wave modes do not match the point"));
                }
                let mut out: Vec<T> = base.iter().map(|v| T::cst(*v)).collect();
                trig_sum(modes, p, &mut out, 1.0);
                out
            }
        };
        self.eval_stages(&start)
    }

    /// Applies only the stages, treating `p` as the source output.
    pub fn eval_stages<T: Real>(&self, p: &[T]) -> Result<Vec<T>> {
        let mut p = p.to_vec();
        for stage in &self.stages {
            p = stage.apply(&p)?;
        }
        Ok(p)
    }
}

/// A smooth bump `exp(1 - 1/(1 - s²))` for `s² < 1`, zero outside.
pub(crate) fn bump<T: Real>(s2: T) -> T {
    if s2.re() >= 1.0 {
        return T::cst(0.0);
    }
    let inner = (-s2 + 1.0).recip();
    (-inner + 1.0).exp()
}

/// A vector field on the domain, evaluated in chart components.
#[derive(Clone, Debug, PartialEq)]
pub enum DomainVectorField {
    Zero,
    /// Constant chart components `scale · ∂_axis`.
    Coordinate { axis: usize, scale: f64 },
    /// Tangential part of the ambient field `A p + b` along the canonical embedding.
    Ambient {
        matrix: DMatrix<f64>,
        offset: DVector<f64>,
    },
    /// Chart components given by trigonometric modes of the chart point.
    Trig(Vec<TrigMode>),
    /// `r ∂/∂r` on pole grids.
    RadialScale,
    /// `field` times a bump of the given radius around a chart point.
    Localized {
        field: Box<DomainVectorField>,
        center: Vec<f64>,
        radius: f64,
    },
    /// `field` times a bump in `r` supported on `(inner, outer)`.
    RadialBand {
        field: Box<DomainVectorField>,
        inner: f64,
        outer: f64,
    },
}

impl DomainVectorField {
    /// Tangential part of the constant ambient direction `v`.
    pub fn ambient_direction(v: &[f64]) -> Self {
        DomainVectorField::Ambient {
            matrix: DMatrix::zeros(v.len(), v.len()),
            offset: DVector::from_column_slice(v),
        }
    }

    pub fn components<T: Real>(&self, grid: &DomainGrid, chart: i8, x: &[T]) -> Result<Vec<T>> {
        let m = grid.dim();
        match self {
            DomainVectorField::Zero => Ok(vec![T::cst(0.0); m]),
            DomainVectorField::Coordinate { axis, scale } => {
                if *axis >= m {
                    return Err(Error::param("axis", "exceeds the domain dimension"));
                }
                let mut out = vec![T::cst(0.0); m];
                out[*axis] = T::cst(*scale);
                Ok(out)
            }
            DomainVectorField::Ambient { matrix, offset } => {
                let q = grid.embedding_dim();
                if matrix.nrows() != q || matrix.ncols() != q || offset.len() != q {
                    return Err(Error::DimensionMismatch {
                        context: "ambient vector field",
                        expected: q,
                        found: offset.len(),
                    });
                }
                let p = grid.position_generic(chart, x);
                let w: Vec<T> = (0..q)
                    .map(|i| {
                        let mut s = T::cst(offset[i]);
                        for (j, pj) in p.iter().enumerate() {
                            s += *pj * matrix[(i, j)];
                        }
                        s
                    })
                    .collect();
                let tangents = grid.position_tangents_generic(chart, x);
                let g = grid.metric_generic(chart, x);
                Ok(tangents
                    .iter()
                    .zip(&g)
                    .map(|(t, ga)| dot(t, &w) / *ga)
                    .collect())
            }
            DomainVectorField::Trig(modes) => {
                if modes.iter().any(|md| md.component >= m || md.wave.len() != m) {
                    return Err(Error::param("modes", "mode dimensions do not match the domain"));
                }
                let mut out = vec![T::cst(0.0); m];
                trig_sum(modes, x, &mut out, 1.0);
                Ok(out)
            }
            DomainVectorField::RadialScale => {
                if !matches!(grid.model(), GridModel::RotationalPole { .. }) {
                    return Err(Error::NoPole);
                }
                let mut out = vec![T::cst(0.0); m];
                out[0] = x[0];
                Ok(out)
            }
            DomainVectorField::Localized {
                field,
                center,
                radius,
            } => {
                let mut s2 = T::cst(0.0);
                for (v, c) in x.iter().zip(center) {
                    let d = (*v - *c) / *radius;
                    s2 += d * d;
                }
                let b = bump(s2);
                Ok(field.components(grid, chart, x)?.into_iter().map(|v| v * b).collect())
            }
            DomainVectorField::RadialBand {
                field,
                inner,
                outer,
            } => {
                if !grid.has_pole() {
                    return Err(Error::NoPole);
                }
                let s = (x[0] * 2.0 - (inner + outer)) / (outer - inner);
                let b = bump(s * s);
                Ok(field.components(grid, chart, x)?.into_iter().map(|v| v * b).collect())
            }
        }
    }
}
