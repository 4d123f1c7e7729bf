use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::PrincipalCurvatures;
use crate::error::{Error, Result};
use crate::real::{dot, Real};

/// A submanifold `N ⊂ R^q` with the extrinsic data the variational formulas need.
///
/// Tangent vectors are ambient `q`-vectors. The second fundamental form is
/// normal-valued and uses the outward normal with `B(v, w) = -II(v, w) ν`.
pub trait EmbeddedTarget {
    fn ambient_dim(&self) -> usize;
    fn dim(&self) -> usize;
    fn project(&self, p: &[f64]) -> Result<Vec<f64>>;
    fn tangent_project(&self, p: &[f64], v: &[f64]) -> Vec<f64>;
    fn normal_frame(&self, p: &[f64]) -> Vec<Vec<f64>>;
    fn second_fundamental_form(&self, p: &[f64], v: &[f64], w: &[f64]) -> Vec<f64>;
    fn weingarten(&self, p: &[f64], normal: &[f64], v: &[f64]) -> Vec<f64>;
    /// How far `p` is from satisfying the defining equations of `N`.
    fn constraint_residual(&self, p: &[f64]) -> f64;
}

/// The concrete targets: round spheres, ellipsoids, flat Euclidean space and
/// the flat torus realized as a product of unit circles in `R^{2k}`.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Sphere { dim: usize, radius: f64 },
    Ellipsoid { axes: Vec<f64> },
    Euclidean { dim: usize },
    Torus { circles: usize },
}

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX: usize = 50;

pub fn sphere_target(n: usize, radius: f64) -> Result<Target> {
    if n < 1 {
        return Err(Error::param("n", "must be at least 1"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::param("radius", "must be positive"));
    }
    Ok(Target::Sphere { dim: n, radius })
}

pub fn ellipsoid_target(axes: &[f64]) -> Result<Target> {
    if axes.len() < 2 {
        return Err(Error::param("axes", "need at least two semi-axes"));
    }
    if axes.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::param("axes", "semi-axes must be positive"));
    }
    Ok(Target::Ellipsoid {
        axes: axes.to_vec(),
    })
}

impl Target {
    pub fn euclidean(dim: usize) -> Target {
        Target::Euclidean { dim }
    }

    pub fn torus(circles: usize) -> Target {
        Target::Torus { circles }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Target::Sphere { .. } => "sphere",
            Target::Ellipsoid { .. } => "ellipsoid",
            Target::Euclidean { .. } => "euclidean",
            Target::Torus { .. } => "torus",
        }
    }

    pub fn is_hypersurface(&self) -> bool {
        matches!(self, Target::Sphere { .. } | Target::Ellipsoid { .. })
    }

    /// Nearest-point projection, differentiable through [`Real`].
    pub fn project_generic<T: Real>(&self, p: &[T]) -> Result<Vec<T>> {
        match self {
            Target::Sphere { radius, .. } => {
                let n2 = dot(p, p);
                if n2.re() <= 0.0 {
                    return Err(Error::param("point", "cannot project the center of a sphere"));
                }
                let s = n2.sqrt().recip() * *radius;
                Ok(p.iter().map(|x| *x * s).collect())
            }
            Target::Euclidean { .. } => Ok(p.to_vec()),
            Target::Torus { circles } => {
                let mut out = p.to_vec();
                for c in 0..*circles {
                    let n2 = p[2 * c] * p[2 * c] + p[2 * c + 1] * p[2 * c + 1];
                    if n2.re() <= 0.0 {
                        return Err(Error::param("point", "circle factor at the origin"));
                    }
                    let s = n2.sqrt().recip();
                    out[2 * c] = p[2 * c] * s;
                    out[2 * c + 1] = p[2 * c + 1] * s;
                }
                Ok(out)
            }
            Target::Ellipsoid { axes } => {
                let re: Vec<f64> = p.iter().map(|x| x.re()).collect();
                let mu0 = ellipsoid_multiplier(axes, &re)?;
                // a few Newton steps in T carry the derivatives of the multiplier
                let mut mu = T::cst(mu0);
                for _ in 0..3 {
                    let mut g = T::cst(-1.0);
                    let mut dg = T::cst(0.0);
                    for (a, x) in axes.iter().zip(p) {
                        let d = (mu + a * a).recip();
                        let t = *x * d * *a;
                        g += t * t;
                        dg -= t * t * d * 2.0;
                    }
                    mu -= g / dg;
                }
                Ok(axes
                    .iter()
                    .zip(p)
                    .map(|(a, x)| *x * (a * a) * (mu + a * a).recip())
                    .collect())
            }
        }
    }

    /// Tangent projection at a point of `N`, differentiable through [`Real`].
    pub fn tangent_project_generic<T: Real>(&self, p: &[T], v: &[T]) -> Vec<T> {
        match self {
            Target::Sphere { .. } => {
                let c = dot(v, p) / dot(p, p);
                v.iter().zip(p).map(|(a, b)| *a - *b * c).collect()
            }
            Target::Euclidean { .. } => v.to_vec(),
            Target::Torus { circles } => {
                let mut out = v.to_vec();
                for c in 0..*circles {
                    let (x, y) = (p[2 * c], p[2 * c + 1]);
                    let s = (v[2 * c] * x + v[2 * c + 1] * y) / (x * x + y * y);
                    out[2 * c] = v[2 * c] - x * s;
                    out[2 * c + 1] = v[2 * c + 1] - y * s;
                }
                out
            }
            Target::Ellipsoid { axes } => {
                let n: Vec<T> = p.iter().zip(axes).map(|(x, a)| *x / (a * a)).collect();
                let c = dot(v, &n) / dot(&n, &n);
                v.iter().zip(&n).map(|(a, b)| *a - *b * c).collect()
            }
        }
    }

    /// Orthonormal basis of `T_p N` as the columns of a `q × n` matrix.
    pub fn tangent_frame(&self, p: &[f64]) -> DMatrix<f64> {
        let q = self.ambient_dim();
        let n = self.dim();
        if let Target::Euclidean { .. } = self {
            return DMatrix::identity(q, q);
        }
        if let Target::Torus { circles } = self {
            let mut f = DMatrix::zeros(q, *circles);
            for c in 0..*circles {
                let r = (p[2 * c].powi(2) + p[2 * c + 1].powi(2)).sqrt();
                f[(2 * c, c)] = -p[2 * c + 1] / r;
                f[(2 * c + 1, c)] = p[2 * c] / r;
            }
            return f;
        }
        let mut proj = DMatrix::identity(q, q);
        for nu in self.normal_frame(p) {
            let nv = DVector::from_vec(nu);
            proj -= &nv * nv.transpose();
        }
        let eig = SymmetricEigen::new(proj);
        let mut idx: Vec<usize> = (0..q).collect();
        idx.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
        let mut f = DMatrix::zeros(q, n);
        for (k, &i) in idx.iter().take(n).enumerate() {
            f.set_column(k, &eig.eigenvectors.column(i));
        }
        f
    }

    /// Outward unit normal of a hypersurface target.
    pub fn outward_normal(&self, p: &[f64]) -> Result<Vec<f64>> {
        match self {
            Target::Sphere { .. } | Target::Ellipsoid { .. } => Ok(self.normal_frame(p).remove(0)),
            _ => Err(Error::Inapplicable(format!(
                "{} target is not a hypersurface",
                self.name()
            ))),
        }
    }

    /// Principal curvatures with respect to the outward normal (positive on convex targets).
    pub fn principal_curvatures(&self, p: &[f64]) -> Result<PrincipalCurvatures> {
        let nu = self.outward_normal(p)?;
        let frame = self.tangent_frame(p);
        let n = self.dim();
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            let ei: Vec<f64> = frame.column(i).iter().copied().collect();
            for j in 0..n {
                let ej: Vec<f64> = frame.column(j).iter().copied().collect();
                s[(i, j)] = -dot(&self.second_fundamental_form(p, &ei, &ej), &nu);
            }
        }
        let s = 0.5 * (&s + s.transpose());
        Ok(PrincipalCurvatures::new(
            SymmetricEigen::new(s).eigenvalues.iter().copied().collect(),
        ))
    }

    /// Range containing every principal curvature of an ellipsoid:
    /// `[min a / max a², max a / min a²]`.
    pub fn ellipsoid_curvature_bounds(&self) -> Result<(f64, f64)> {
        match self {
            Target::Ellipsoid { axes } => {
                let lo = axes.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = axes.iter().copied().fold(0.0, f64::max);
                Ok((lo / (hi * hi), hi / (lo * lo)))
            }
            Target::Sphere { radius, .. } => Ok((1.0 / radius, 1.0 / radius)),
            _ => Err(Error::Inapplicable("not an ellipsoid".into())),
        }
    }
}

fn ellipsoid_multiplier(axes: &[f64], p: &[f64]) -> Result<f64> {
    let amin2 = axes.iter().map(|a| a * a).fold(f64::INFINITY, f64::min);
    let amax = axes.iter().copied().fold(0.0, f64::max);
    let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
    let eval = |mu: f64| {
        let mut g = -1.0;
        let mut dg = 0.0;
        for (a, x) in axes.iter().zip(p) {
            let d = 1.0 / (a * a + mu);
            let t = a * x * d;
            g += t * t;
            dg -= 2.0 * t * t * d;
        }
        (g, dg)
    };
    let mut lo = -amin2;
    let mut hi = (amax * norm).max(0.0) + 1e-300;
    let mut mu = 0.0_f64.clamp(lo, hi);
    for _ in 0..NEWTON_MAX {
        let (g, dg) = eval(mu);
        if g.abs() < NEWTON_TOL {
            return Ok(mu);
        }
        if g > 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        let step = mu - g / dg;
        // damped: fall back to bisection when Newton leaves the bracket
        mu = if step > lo && step < hi && dg < 0.0 {
            step
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::ProjectionDiverged {
        target: "ellipsoid",
        iterations: NEWTON_MAX,
    })
}

impl EmbeddedTarget for Target {
    fn ambient_dim(&self) -> usize {
        match self {
            Target::Sphere { dim, .. } => dim + 1,
            Target::Ellipsoid { axes } => axes.len(),
            Target::Euclidean { dim } => *dim,
            Target::Torus { circles } => 2 * circles,
        }
    }

    fn dim(&self) -> usize {
        match self {
            Target::Sphere { dim, .. } => *dim,
            Target::Ellipsoid { axes } => axes.len() - 1,
            Target::Euclidean { dim } => *dim,
            Target::Torus { circles } => *circles,
        }
    }

    fn project(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.project_generic(p)
    }

    fn tangent_project(&self, p: &[f64], v: &[f64]) -> Vec<f64> {
        self.tangent_project_generic(p, v)
    }

    fn normal_frame(&self, p: &[f64]) -> Vec<Vec<f64>> {
        match self {
            Target::Sphere { .. } => {
                let r = dot(p, p).sqrt();
                vec![p.iter().map(|x| x / r).collect()]
            }
            Target::Ellipsoid { axes } => {
                let n: Vec<f64> = p.iter().zip(axes).map(|(x, a)| x / (a * a)).collect();
                let r = dot(&n, &n).sqrt();
                vec![n.iter().map(|x| x / r).collect()]
            }
            Target::Euclidean { .. } => Vec::new(),
            Target::Torus { circles } => (0..*circles)
                .map(|c| {
                    let mut nu = vec![0.0; 2 * circles];
                    let r = (p[2 * c].powi(2) + p[2 * c + 1].powi(2)).sqrt();
                    nu[2 * c] = p[2 * c] / r;
                    nu[2 * c + 1] = p[2 * c + 1] / r;
                    nu
                })
                .collect(),
        }
    }

    fn second_fundamental_form(&self, p: &[f64], v: &[f64], w: &[f64]) -> Vec<f64> {
        match self {
            Target::Sphere { radius, .. } => {
                let c = -dot(v, w) / (radius * radius);
                p.iter().map(|x| c * x).collect()
            }
            Target::Ellipsoid { axes } => {
                let n: Vec<f64> = p.iter().zip(axes).map(|(x, a)| x / (a * a)).collect();
                let nn = dot(&n, &n);
                let ii: f64 = v
                    .iter()
                    .zip(w)
                    .zip(axes)
                    .map(|((a, b), s)| a * b / (s * s))
                    .sum::<f64>();
                // -II/|n| along ν = n/|n|
                n.iter().map(|x| -ii * x / nn).collect()
            }
            Target::Euclidean { dim } => vec![0.0; *dim],
            Target::Torus { circles } => {
                let mut out = vec![0.0; 2 * circles];
                for c in 0..*circles {
                    let s = v[2 * c] * w[2 * c] + v[2 * c + 1] * w[2 * c + 1];
                    out[2 * c] = -s * p[2 * c];
                    out[2 * c + 1] = -s * p[2 * c + 1];
                }
                out
            }
        }
    }

    fn weingarten(&self, p: &[f64], normal: &[f64], v: &[f64]) -> Vec<f64> {
        match self {
            Target::Sphere { radius, .. } => {
                let c = -dot(normal, p) / (radius * radius);
                v.iter().map(|x| c * x).collect()
            }
            Target::Ellipsoid { axes } => {
                let n: Vec<f64> = p.iter().zip(axes).map(|(x, a)| x / (a * a)).collect();
                let nn = dot(&n, &n);
                let c = -dot(normal, &n) / nn;
                let sv: Vec<f64> = v.iter().zip(axes).map(|(x, a)| c * x / (a * a)).collect();
                self.tangent_project(p, &sv)
            }
            Target::Euclidean { dim } => vec![0.0; *dim],
            Target::Torus { circles } => {
                let mut out = vec![0.0; 2 * circles];
                for c in 0..*circles {
                    let s = -(normal[2 * c] * p[2 * c] + normal[2 * c + 1] * p[2 * c + 1]);
                    out[2 * c] = s * v[2 * c];
                    out[2 * c + 1] = s * v[2 * c + 1];
                }
                out
            }
        }
    }

    fn constraint_residual(&self, p: &[f64]) -> f64 {
        match self {
            Target::Sphere { radius, .. } => (dot(p, p).sqrt() - radius).abs(),
            Target::Ellipsoid { axes } => {
                let s: f64 = p.iter().zip(axes).map(|(x, a)| (x / a).powi(2)).sum();
                (s.sqrt() - 1.0).abs()
            }
            Target::Euclidean { .. } => 0.0,
            Target::Torus { circles } => (0..*circles)
                .map(|c| ((p[2 * c].powi(2) + p[2 * c + 1].powi(2)).sqrt() - 1.0).abs())
                .fold(0.0, f64::max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(t: &Target, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let q = t.ambient_dim();
        let p: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
        t.project(&p).unwrap()
    }

    fn random_tangent(t: &Target, p: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let v: Vec<f64> = (0..t.ambient_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        t.tangent_project(p, &v)
    }

    fn targets() -> Vec<Target> {
        vec![
            sphere_target(7, 1.0).unwrap(),
            sphere_target(3, 2.5).unwrap(),
            ellipsoid_target(&[1.0, 2.0, 0.7, 1.3]).unwrap(),
            Target::euclidean(3),
            Target::torus(3),
        ]
    }

    #[test]
    fn weingarten_pairs_with_second_fundamental_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in targets() {
            for _ in 0..50 {
                let p = random_point(&t, &mut rng);
                let v = random_tangent(&t, &p, &mut rng);
                let w = random_tangent(&t, &p, &mut rng);
                let b = t.second_fundamental_form(&p, &v, &w);
                let bt = t.second_fundamental_form(&p, &w, &v);
                for nu in t.normal_frame(&p) {
                    let eta: Vec<f64> = nu.iter().map(|x| x * rng.random_range(-2.0..2.0)).collect();
                    let lhs = dot(&t.weingarten(&p, &eta, &v), &w);
                    assert!((lhs - dot(&b, &eta)).abs() < 1e-8);
                }
                for (x, y) in b.iter().zip(&bt) {
                    assert!((x - y).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn sphere_form_uses_outward_normal() {
        let t = sphere_target(7, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_point(&t, &mut rng);
        let v = random_tangent(&t, &p, &mut rng);
        let n = dot(&v, &v).sqrt();
        let v: Vec<f64> = v.iter().map(|x| x / n).collect();
        let b = t.second_fundamental_form(&p, &v, &v);
        assert!((dot(&b, &b).sqrt() - 1.0).abs() < 1e-12);
        for (x, y) in b.iter().zip(&p) {
            assert!((x + y).abs() <= 1e-12);
        }
        let eta = b.clone();
        assert!((dot(&t.weingarten(&p, &eta, &v), &v) - dot(&b, &b)).abs() < 1e-12);
    }

    #[test]
    fn unit_ellipsoid_matches_sphere() {
        let e = ellipsoid_target(&[1.0; 8]).unwrap();
        let s = sphere_target(7, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = random_point(&s, &mut rng);
            let pe = e.project(&p).unwrap();
            for (x, y) in p.iter().zip(&pe) {
                assert!((x - y).abs() < 1e-12);
            }
            let v = random_tangent(&s, &p, &mut rng);
            let w = random_tangent(&s, &p, &mut rng);
            let a = e.second_fundamental_form(&p, &v, &w);
            let b = s.second_fundamental_form(&p, &v, &w);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ellipsoid_curvatures_within_bounds() {
        let e = ellipsoid_target(&[1.0, 2.0, 1.5]).unwrap();
        let (lo, hi) = e.ellipsoid_curvature_bounds().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let p = random_point(&e, &mut rng);
            for k in e.principal_curvatures(&p).unwrap().values() {
                assert!(*k >= lo - 1e-12 && *k <= hi + 1e-12, "{k} not in [{lo}, {hi}]");
            }
        }
        let planar = ellipsoid_target(&[1.0, 2.0]).unwrap();
        assert_eq!(planar.ellipsoid_curvature_bounds().unwrap(), (0.25, 2.0));
    }

    #[test]
    fn ellipsoid_projection_is_nearest_point() {
        let e = ellipsoid_target(&[0.5, 2.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let x = e.project(&p).unwrap();
            assert!(e.constraint_residual(&x) < 1e-12);
            // p - x is normal at x
            let d: Vec<f64> = p.iter().zip(&x).map(|(a, b)| a - b).collect();
            let t = e.tangent_project(&x, &d);
            assert!(dot(&t, &t).sqrt() < 1e-9 * (1.0 + dot(&d, &d).sqrt()));
        }
    }

    #[test]
    fn ellipsoid_projection_derivative_matches_differences() {
        use crate::real::Hyper;
        let e = ellipsoid_target(&[0.5, 2.0, 1.0]).unwrap();
        let p = [0.9, -1.1, 0.4];
        let v = [0.3, 0.2, -0.5];
        let h: Vec<Hyper> = p.iter().zip(&v).map(|(a, b)| Hyper::new(*a, *b, *b, 0.0)).collect();
        let jet = e.project_generic(&h).unwrap();
        let at = |t: f64| {
            let q: Vec<f64> = p.iter().zip(&v).map(|(a, b)| a + t * b).collect();
            e.project(&q).unwrap()
        };
        let s = 1e-4;
        let (xp, x0, xm) = (at(s), at(0.0), at(-s));
        for c in 0..3 {
            let d1 = (xp[c] - xm[c]) / (2.0 * s);
            let d2 = (xp[c] - 2.0 * x0[c] + xm[c]) / (s * s);
            assert!((jet[c].e1 - d1).abs() < 1e-7);
            assert!((jet[c].e12 - d2).abs() < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn tangent_projection_is_idempotent_and_self_adjoint(
            seed in 0u64..1000, which in 0usize..5
        ) {
            let t = &targets()[which];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_point(t, &mut rng);
            let v: Vec<f64> = (0..t.ambient_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..t.ambient_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pv = t.tangent_project(&p, &v);
            let ppv = t.tangent_project(&p, &pv);
            for (a, b) in pv.iter().zip(&ppv) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            let pw = t.tangent_project(&p, &w);
            prop_assert!((dot(&pv, &w) - dot(&v, &pw)).abs() <= 1e-12);
        }
    }
}
