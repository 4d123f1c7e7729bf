//! Φ₍₃₎-SSU certificates: the quadratic form built from the second
//! fundamental form, closed-form hypersurface and submanifold criteria, and
//! the average-variation instability bounds.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::energy::{MapField, PullbackMetric};
use crate::error::{Error, Result};
use crate::manifold::{EmbeddedTarget, GridModel, PrincipalCurvatures, Target};
use crate::maps::DomainVectorField;
use crate::numeric::pairwise_sum;
use crate::real::dot;
use crate::variation::{euler_lagrange_residual, second_variation_with, Mutation, VariationField};

/// The SSU quadratic form `vᵀQv = Σ_i 6|B(v,e_i)|² − ⟨B(v,v), B(e_i,e_i)⟩`
/// in an orthonormal tangent frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SsuForm {
    matrix: DMatrix<f64>,
    max_eigenvalue: f64,
}

impl SsuForm {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.max_eigenvalue
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// `vᵀQv` for frame coordinates `v`.
    pub fn value(&self, v: &[f64]) -> f64 {
        let x = nalgebra::DVector::from_column_slice(v);
        (x.transpose() * &self.matrix * &x)[(0, 0)]
    }

    /// Negative definite, i.e. SSU at this point.
    pub fn is_ssu(&self) -> bool {
        self.max_eigenvalue < 0.0
    }
}

fn check_frame<T: EmbeddedTarget + ?Sized>(target: &T, point: &[f64], frame: &DMatrix<f64>) -> Result<()> {
    if point.len() != target.ambient_dim() || frame.nrows() != target.ambient_dim() {
        return Err(Error::DimensionMismatch {
            context: "tangent frame",
            expected: target.ambient_dim(),
            found: frame.nrows(),
        });
    }
    let k = frame.ncols();
    let dev = (frame.transpose() * frame - DMatrix::identity(k, k)).amax();
    if dev > 1e-8 {
        return Err(Error::FrameNotOrthonormal(dev));
    }
    Ok(())
}

fn columns(frame: &DMatrix<f64>) -> Vec<Vec<f64>> {
    frame.column_iter().map(|c| c.iter().copied().collect()).collect()
}

/// Assembles the SSU form of `target` at `point` in the given orthonormal frame.
pub fn ssu_form_at<T: EmbeddedTarget + ?Sized>(target: &T, point: &[f64], frame: &DMatrix<f64>) -> Result<SsuForm> {
    check_frame(target, point, frame)?;
    let e = columns(frame);
    let k = e.len();
    let b: Vec<Vec<Vec<f64>>> = e
        .iter()
        .map(|x| e.iter().map(|y| target.second_fundamental_form(point, x, y)).collect())
        .collect();
    let q = target.ambient_dim();
    let mut mean = vec![0.0; q];
    for (i, row) in b.iter().enumerate() {
        for c in 0..q {
            mean[c] += row[i][c];
        }
    }
    let mut matrix = DMatrix::from_fn(k, k, |a, c| {
        let coupling: f64 = (0..k).map(|i| dot(&b[a][i], &b[c][i])).sum();
        6.0 * coupling - dot(&b[a][c], &mean)
    });
    matrix = (&matrix + matrix.transpose()) * 0.5;
    let max_eigenvalue = SymmetricEigen::new(matrix.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SsuForm { matrix, max_eigenvalue })
}

/// `F_p(v) = (p−2)|B(v,v)|² + Σ_i 2|B(v,e_i)|² − ⟨B(v,v), B(e_i,e_i)⟩` for frame coordinates `v`.
pub fn p_ssu_value<T: EmbeddedTarget + ?Sized>(
    target: &T,
    point: &[f64],
    frame: &DMatrix<f64>,
    v: &[f64],
    p: f64,
) -> Result<f64> {
    check_frame(target, point, frame)?;
    if v.len() != frame.ncols() {
        return Err(Error::DimensionMismatch {
            context: "frame coordinates",
            expected: frame.ncols(),
            found: v.len(),
        });
    }
    if p < 2.0 {
        return Err(Error::param("p", "must be at least 2"));
    }
    let vv: Vec<f64> = (frame * nalgebra::DVector::from_column_slice(v)).iter().copied().collect();
    let bvv = target.second_fundamental_form(point, &vv, &vv);
    let mut s = (p - 2.0) * dot(&bvv, &bvv);
    for e in columns(frame) {
        let bve = target.second_fundamental_form(point, &vv, &e);
        s += 2.0 * dot(&bve, &bve) - dot(&bvv, &target.second_fundamental_form(point, &e, &e));
    }
    Ok(s)
}

fn split_curvatures(lambda: &PrincipalCurvatures) -> Result<(f64, f64, f64)> {
    let v = lambda.values();
    let (&last, rest) = v
        .split_last()
        .ok_or_else(|| Error::param("principal curvatures", "list is empty"))?;
    Ok((v[0], last, rest.iter().sum()))
}

/// `0 < λ_1` and `λ_m < (λ_1 + … + λ_{m−1})/5`.
pub fn hypersurface_phi3_ssu(lambda: &PrincipalCurvatures) -> Result<bool> {
    hypersurface_p_ssu(lambda, 6.0)
}

/// `0 < λ_1` and `λ_m < (λ_1 + … + λ_{m−1})/(p−1)`.
pub fn hypersurface_p_ssu(lambda: &PrincipalCurvatures, p: f64) -> Result<bool> {
    if !(p >= 2.0) {
        return Err(Error::param("p", "must be at least 2"));
    }
    let (first, last, rest) = split_curvatures(lambda)?;
    Ok(first > 0.0 && last < rest / (p - 1.0))
}

/// The round sphere `S^m` is Φ₍₃₎-SSU exactly when `m > 6`.
pub fn sphere_is_phi3_ssu(m: usize) -> bool {
    m >= 1 && hypersurface_phi3_ssu(&PrincipalCurvatures::new(vec![1.0; m])).unwrap_or(false)
}

/// Principal curvatures of the graph of `|x|²` over `R^m` at distance `r` from the origin.
pub fn paraboloid_principal_curvatures(m: usize, r: f64) -> PrincipalCurvatures {
    let s = 1.0 + 4.0 * r * r;
    let mut v = vec![2.0 / s.sqrt(); m.saturating_sub(1)];
    if m > 0 {
        v.push(2.0 / s.powf(1.5));
    }
    PrincipalCurvatures::new(v)
}

/// A minimal `k`-submanifold of a convex hypersurface with largest principal
/// curvature `lambda_max` is Φ₍₃₎-SSU when `Ric ≥ ric_min > (5/6)·k·λ_max²`.
pub fn minimal_submanifold_criterion(ric_min: f64, k: usize, lambda_max: f64) -> Result<bool> {
    if k < 1 {
        return Err(Error::param("k", "must be at least 1"));
    }
    if !(lambda_max > 0.0) {
        return Err(Error::param("lambda_max", "must be positive"));
    }
    Ok(ric_min > 5.0 / 6.0 * k as f64 * lambda_max * lambda_max)
}

/// The sharper threshold `(5/6)·λ_max·(sum of the k largest principal curvatures)`
/// that the criterion's proof passes through.
pub fn minimal_submanifold_sharp_threshold(curvatures: &PrincipalCurvatures, k: usize) -> Result<f64> {
    let v = curvatures.values();
    if k < 1 || k > v.len() {
        return Err(Error::param("k", "must lie between 1 and the hypersurface dimension"));
    }
    let lmax = *v.last().unwrap_or(&0.0);
    Ok(5.0 / 6.0 * lmax * v[v.len() - k..].iter().sum::<f64>())
}

/// Threshold `(5/6)·k·max(a)²/min(a)⁴` for minimal submanifolds of an ellipsoid.
pub fn ellipsoid_ssu_threshold(axes: &[f64], k: usize) -> Result<f64> {
    if axes.is_empty() || axes.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::param("axes", "must be positive"));
    }
    let max = axes.iter().copied().fold(0.0, f64::max);
    let min = axes.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(5.0 / 6.0 * k as f64 * max * max / min.powi(4))
}

pub fn ellipsoid_ssu_sufficient(axes: &[f64], ric_min: f64, k: usize) -> Result<bool> {
    Ok(ric_min > ellipsoid_ssu_threshold(axes, k)?)
}

/// `‖B₁‖² < (k−6)/(√k+6)` for a `k`-submanifold of the unit sphere, `k > 6`.
pub fn b1_norm_criterion(b1_norm_sq: f64, k: usize) -> Result<bool> {
    if k <= 6 {
        return Err(Error::Inapplicable(format!("needs k > 6, got {k}")));
    }
    let kf = k as f64;
    Ok(b1_norm_sq < (kf - 6.0) / (kf.sqrt() + 6.0))
}

/// Sum of the second variations along the ambient coordinate fields, against its bound.
#[derive(Clone, Debug, PartialEq)]
pub struct AverageVariationReport {
    pub total: f64,
    pub bound: f64,
    pub per_axis: Vec<f64>,
    /// The ambient axis with the most negative second variation.
    pub destabilizer_index: usize,
    /// Euler–Lagrange residual of the map, to judge how harmonic it is.
    pub residual: f64,
    /// `total ≤ bound` up to a 2% quadrature allowance.
    pub within_bound: bool,
}

const BOUND_SLACK: f64 = 2e-2;

fn finish(per_axis: Vec<f64>, bound: f64, residual: f64) -> AverageVariationReport {
    let total = per_axis.iter().sum::<f64>();
    let destabilizer_index = per_axis
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i);
    AverageVariationReport {
        total,
        bound,
        destabilizer_index,
        residual,
        within_bound: total <= bound + BOUND_SLACK * bound.abs() + 1e-9,
        per_axis,
    }
}

fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

/// Average variation for maps into an embedded target, with variation
/// fields `v_ℓ^⊤` along `u`. The bound integrates `tr(M³ Q)` with `M` the
/// push-forward metric on `T_u N` and `Q` the target's SSU form.
pub fn average_variation_into_ssu(u: &MapField) -> Result<AverageVariationReport> {
    average_variation_into_ssu_with(u, Mutation::None)
}

pub fn average_variation_into_ssu_with(u: &MapField, mutation: Mutation) -> Result<AverageVariationReport> {
    let target = u.target();
    let grid = u.grid();
    let q = u.ambient_dim();
    let terms = (0..u.len())
        .into_par_iter()
        .map(|node| -> Result<f64> {
            let w = grid.weight(node);
            if w <= 0.0 {
                return Ok(0.0);
            }
            let p = u.value(node);
            let frame = target.tangent_frame(p);
            let a = frame.transpose() * u.frame_differential(node);
            let m = &a * a.transpose();
            let form = ssu_form_at(target, p, &frame)?;
            Ok(w * trace_product(&(&m * &m * &m), form.matrix()))
        })
        .collect::<Result<Vec<f64>>>()?;
    let bound = pairwise_sum(&terms);
    let per_axis = (0..q)
        .map(|l| {
            let v = VariationField::tangential_axis(u, l)?;
            second_variation_with(u, &v, &v, mutation)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(finish(per_axis, bound, euler_lagrange_residual(u)))
}

/// Average variation for maps out of an embedded round sphere, with variation
/// fields `du(v_ℓ^⊤)`. The bound integrates `tr(U³ Q)` with `Q` the domain's SSU form.
pub fn average_variation_from_ssu(u: &MapField) -> Result<AverageVariationReport> {
    average_variation_from_ssu_with(u, Mutation::None)
}

pub fn average_variation_from_ssu_with(u: &MapField, mutation: Mutation) -> Result<AverageVariationReport> {
    let grid = u.grid();
    let (dim, radius) = match grid.model() {
        GridModel::RoundSphere { dim, radius, .. } => (*dim, *radius),
        _ => {
            return Err(Error::Inapplicable(
                "the domain grid does not sample an embedded sphere".into(),
            ))
        }
    };
    let domain = Target::Sphere { dim, radius };
    let qd = grid.embedding_dim();
    let terms = (0..u.len())
        .into_par_iter()
        .map(|node| -> Result<f64> {
            let w = grid.weight(node);
            if w <= 0.0 {
                return Ok(0.0);
            }
            let x = grid.coords(node);
            let chart = grid.chart(node);
            let p = grid.position_generic(chart, x);
            let tangents = grid.position_tangents_generic(chart, x);
            let g = grid.metric_diag(node);
            let frame = DMatrix::from_fn(qd, dim, |c, a| tangents[a][c] / g[a].sqrt());
            let form = ssu_form_at(&domain, &p, &frame)?;
            let metric = PullbackMetric::from_frame_differential(&u.frame_differential(node));
            let um = metric.matrix();
            Ok(w * trace_product(&(um * um * um), form.matrix()))
        })
        .collect::<Result<Vec<f64>>>()?;
    let bound = pairwise_sum(&terms);
    let per_axis = (0..qd)
        .map(|l| {
            let mut dir = vec![0.0; qd];
            dir[l] = 1.0;
            let v = VariationField::from_domain_field(u, &DomainVectorField::ambient_direction(&dir))?;
            second_variation_with(u, &v, &v, mutation)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(finish(per_axis, bound, euler_lagrange_residual(u)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{build_model_grid, ellipsoid_target, hypersurface_second_fundamental_form, sphere_target};
    use crate::maps::{AmbientMap, AnalyticMap};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn north(n: usize) -> (Vec<f64>, DMatrix<f64>) {
        let mut p = vec![0.0; n + 1];
        p[n] = 1.0;
        let mut frame = DMatrix::zeros(n + 1, n);
        for i in 0..n {
            frame[(i, i)] = 1.0;
        }
        (p, frame)
    }

    #[test]
    fn sphere_form_is_scalar() {
        for m in 2..=12 {
            let (p, frame) = north(m);
            let f = ssu_form_at(&sphere_target(m, 1.0).unwrap(), &p, &frame).unwrap();
            for ev in f.eigenvalues() {
                assert!((ev - (6.0 - m as f64)).abs() <= 1e-10);
            }
            assert_eq!(f.is_ssu(), m > 6);
        }
    }

    #[test]
    fn flat_form_vanishes() {
        let frame = DMatrix::identity(3, 3);
        let f = ssu_form_at(&Target::euclidean(3), &[0.1, 0.2, 0.3], &frame).unwrap();
        assert_eq!(f.matrix().amax(), 0.0);
        assert!(!f.is_ssu());
        let bad = DMatrix::from_element(3, 3, 1.0);
        assert!(matches!(
            ssu_form_at(&Target::euclidean(3), &[0.0; 3], &bad),
            Err(Error::FrameNotOrthonormal(_))
        ));
    }

    /// A hypersurface with prescribed principal curvatures at one point, as a target.
    struct Principal {
        lambda: PrincipalCurvatures,
    }

    impl EmbeddedTarget for Principal {
        fn ambient_dim(&self) -> usize {
            self.lambda.len() + 1
        }
        fn dim(&self) -> usize {
            self.lambda.len()
        }
        fn project(&self, p: &[f64]) -> Result<Vec<f64>> {
            Ok(p.to_vec())
        }
        fn tangent_project(&self, _p: &[f64], v: &[f64]) -> Vec<f64> {
            let mut out = v.to_vec();
            out[self.lambda.len()] = 0.0;
            out
        }
        fn normal_frame(&self, _p: &[f64]) -> Vec<Vec<f64>> {
            let mut n = vec![0.0; self.ambient_dim()];
            n[self.lambda.len()] = 1.0;
            vec![n]
        }
        fn second_fundamental_form(&self, _p: &[f64], v: &[f64], w: &[f64]) -> Vec<f64> {
            let mut frame = DMatrix::zeros(self.ambient_dim(), self.dim());
            for i in 0..self.dim() {
                frame[(i, i)] = 1.0;
            }
            let table = hypersurface_second_fundamental_form(&self.lambda, &frame, &self.normal_frame(&[])[0]).unwrap();
            let m = self.dim();
            let mut out = vec![0.0; self.ambient_dim()];
            for i in 0..m {
                for j in 0..m {
                    for c in 0..out.len() {
                        out[c] += v[i] * w[j] * table[i * m + j][c];
                    }
                }
            }
            out
        }
        fn weingarten(&self, _p: &[f64], _n: &[f64], v: &[f64]) -> Vec<f64> {
            v.to_vec()
        }
        fn constraint_residual(&self, _p: &[f64]) -> f64 {
            0.0
        }
    }

    #[test]
    fn principal_frame_values() {
        let lambda = PrincipalCurvatures::new(vec![0.5, 1.0, 2.0, 3.0]);
        let t = Principal { lambda: lambda.clone() };
        let (p, frame) = north(4);
        let f = ssu_form_at(&t, &p, &frame).unwrap();
        let h = lambda.sum();
        for (a, la) in lambda.values().iter().enumerate() {
            let mut e = vec![0.0; 4];
            e[a] = 1.0;
            assert!((f.value(&e) - (6.0 * la * la - la * h)).abs() < 1e-12);
        }
    }

    #[test]
    fn hypersurface_examples() {
        let ones = |m| PrincipalCurvatures::new(vec![1.0; m]);
        assert!(hypersurface_phi3_ssu(&ones(7)).unwrap());
        assert!(!hypersurface_phi3_ssu(&ones(6)).unwrap());
        let mut v = vec![1.0; 6];
        v.push(2.0);
        assert!(!hypersurface_phi3_ssu(&PrincipalCurvatures::new(v)).unwrap());
        assert!(hypersurface_phi3_ssu(&PrincipalCurvatures::new(vec![])).is_err());
        assert!(hypersurface_p_ssu(&ones(7), 6.0).unwrap());
        assert!(hypersurface_p_ssu(&ones(7), 2.0).unwrap());
        assert!(hypersurface_p_ssu(&ones(7), 1.5).is_err());
        for m in 2..=20 {
            assert_eq!(sphere_is_phi3_ssu(m), m > 6);
            assert_eq!(sphere_is_phi3_ssu(m), hypersurface_phi3_ssu(&ones(m)).unwrap());
        }
    }

    #[test]
    fn paraboloid_is_ssu_iff_dimension_exceeds_six() {
        for m in 2..=12 {
            for r in [0.0, 0.3, 1.0, 5.0] {
                let ok = hypersurface_phi3_ssu(&paraboloid_principal_curvatures(m, r)).unwrap();
                assert_eq!(ok, m > 6, "m={m} r={r}");
            }
        }
    }

    #[test]
    fn submanifold_criteria() {
        assert!(minimal_submanifold_criterion(6.0, 7, 1.0).unwrap());
        assert!(!minimal_submanifold_criterion(5.0, 6, 1.0).unwrap());
        assert!(minimal_submanifold_criterion(1.0, 0, 1.0).is_err());
        let t = ellipsoid_ssu_threshold(&[1.0; 8], 7).unwrap();
        assert!((t - 35.0 / 6.0).abs() < 1e-15);
        assert!((ellipsoid_ssu_threshold(&[1.0, 2.0], 7).unwrap() - 70.0 / 3.0).abs() < 1e-12);
        assert!(!ellipsoid_ssu_sufficient(&[1.0, 2.0], 20.0, 7).unwrap());
        assert!(b1_norm_criterion(0.0, 7).unwrap());
        assert!(!b1_norm_criterion(0.2, 7).unwrap());
        assert!((1.0 / (7.0_f64.sqrt() + 6.0) - 0.11566).abs() < 1e-5);
        assert!(matches!(b1_norm_criterion(0.0, 6), Err(Error::Inapplicable(_))));
        let sharp = minimal_submanifold_sharp_threshold(&PrincipalCurvatures::new(vec![1.0; 7]), 7).unwrap();
        assert!((sharp - 35.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn quadratic_form_certificate_is_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let targets = vec![
            sphere_target(8, 1.0).unwrap(),
            sphere_target(4, 2.0).unwrap(),
            ellipsoid_target(&[1.0, 1.1, 0.9, 1.2, 1.0, 1.05, 0.95, 1.1]).unwrap(),
            ellipsoid_target(&[1.0, 3.0, 0.5]).unwrap(),
        ];
        for t in &targets {
            let raw: Vec<f64> = (0..t.ambient_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = t.project(&raw).unwrap();
            let frame = t.tangent_frame(&p);
            let f = ssu_form_at(t, &p, &frame).unwrap();
            let e = columns(&frame);
            let mut all_negative = true;
            for _ in 0..1000 {
                let mut v: Vec<f64> = (0..t.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= n);
                let vv: Vec<f64> = (frame.clone() * nalgebra::DVector::from_column_slice(&v)).iter().copied().collect();
                let bvv = t.second_fundamental_form(&p, &vv, &vv);
                let literal: f64 = e
                    .iter()
                    .map(|ei| {
                        let b = t.second_fundamental_form(&p, &vv, ei);
                        6.0 * dot(&b, &b) - dot(&bvv, &t.second_fundamental_form(&p, ei, ei))
                    })
                    .sum();
                assert!((literal - f.value(&v)).abs() <= 1e-10);
                all_negative &= literal < 0.0;
                let fp = p_ssu_value(t, &p, &frame, &v, 6.0).unwrap();
                assert!(fp <= f.value(&v) + 1e-12);
            }
            if f.is_ssu() {
                assert!(all_negative);
            } else {
                assert!(f.max_eigenvalue() >= 0.0);
            }
        }
        let (p, frame) = north(5);
        let mut v = vec![0.0; 5];
        v[2] = 1.0;
        assert!((p_ssu_value(&sphere_target(5, 1.0).unwrap(), &p, &frame, &v, 2.0).unwrap() - (2.0 - 5.0)).abs() < 1e-14);
    }

    #[test]
    fn identity_of_s7_bound_integrand() {
        // tr(U³Q) = 7(6 − 7) pointwise for the identity of the unit S⁷
        let grid = Arc::new(build_model_grid(GridModel::RoundSphere { dim: 7, radius: 1.0, nodes: 4 }).unwrap());
        let u = MapField::identity(Arc::clone(&grid), sphere_target(7, 1.0).unwrap()).unwrap();
        let target = u.target();
        for node in (0..u.len()).step_by(97) {
            if grid.weight(node) <= 0.0 {
                continue;
            }
            let p = u.value(node);
            let frame = target.tangent_frame(p);
            let a = frame.transpose() * u.frame_differential(node);
            let m = &a * a.transpose();
            let form = ssu_form_at(target, p, &frame).unwrap();
            assert!((trace_product(&(&m * &m * &m), form.matrix()) + 7.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_map_reports_zero() {
        let grid = Arc::new(build_model_grid(GridModel::RoundSphere { dim: 2, radius: 1.0, nodes: 12 }).unwrap());
        let c = MapField::constant(Arc::clone(&grid), sphere_target(7, 1.0).unwrap(), {
            let mut p = vec![0.0; 8];
            p[0] = 1.0;
            p
        })
        .unwrap();
        let r = average_variation_into_ssu(&c).unwrap();
        assert_eq!((r.total, r.bound), (0.0, 0.0));
        let r = average_variation_from_ssu(&c).unwrap();
        assert_eq!((r.total, r.bound), (0.0, 0.0));
        let flat = Arc::new(build_model_grid(GridModel::FlatTorus { dim: 2, nodes: 8 }).unwrap());
        let id = MapField::identity(flat, Target::euclidean(2)).unwrap();
        assert!(matches!(average_variation_from_ssu(&id), Err(Error::Inapplicable(_))));
    }

    #[test]
    fn great_sphere_inclusion_into_s7() {
        // the totally geodesic S² ⊂ S⁷ is harmonic; Σ_ℓ I = 2(6 − 7)·4π
        let grid = Arc::new(build_model_grid(GridModel::RoundSphere { dim: 2, radius: 1.0, nodes: 32 }).unwrap());
        let incl = DMatrix::from_fn(8, 3, |i, j| if i == j { 1.0 } else { 0.0 });
        let u = MapField::from_analytic(
            Arc::clone(&grid),
            sphere_target(7, 1.0).unwrap(),
            AnalyticMap::identity().then(AmbientMap::linear(incl)),
        )
        .unwrap();
        let r = average_variation_into_ssu(&u).unwrap();
        let expect = -8.0 * PI;
        assert!((r.bound - expect).abs() < 1e-3 * 8.0 * PI, "{r:?}");
        assert!((r.total - expect).abs() < 2e-2 * 8.0 * PI, "{r:?}");
        assert!(r.within_bound);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn no_short_curvature_list_is_ssu(v in prop::collection::vec(0.01..10.0f64, 1..=6)) {
            prop_assert!(!hypersurface_phi3_ssu(&PrincipalCurvatures::new(v)).unwrap());
        }

        #[test]
        fn ellipsoid_threshold_is_monotone(a in prop::collection::vec(0.2..5.0f64, 2..6), grow in 1.0..3.0f64) {
            let base = ellipsoid_ssu_threshold(&a, 7).unwrap();
            let imax = a.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
            let mut bigger = a.clone();
            bigger[imax] *= grow;
            prop_assert!(ellipsoid_ssu_threshold(&bigger, 7).unwrap() >= base);
            let imin = a.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
            let mut smaller = a.clone();
            smaller[imin] /= grow;
            prop_assert!(ellipsoid_ssu_threshold(&smaller, 7).unwrap() >= base);
        }
    }
}
