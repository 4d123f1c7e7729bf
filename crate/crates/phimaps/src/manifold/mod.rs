//! Domain grids, embedded targets and radial curvature profiles.

mod grid;
mod profile;
mod target;

pub use grid::{build_model_grid, DomainGrid, GridModel};
pub use profile::CurvatureProfile;
pub use target::{ellipsoid_target, sphere_target, EmbeddedTarget, Target};

pub(crate) use grid::NONE;
pub(crate) use profile::x_coth_x;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Principal curvatures of a hypersurface, kept in nondecreasing order.
#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalCurvatures(Vec<f64>);

impl PrincipalCurvatures {
    pub fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        PrincipalCurvatures(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Second fundamental form of a hypersurface in its principal frame.
///
/// `frame` holds orthonormal tangent vectors as columns; the result is the
/// `m × m` table of normal vectors `B(e_i, e_j) = λ_i δ_ij ν`, row-major.
pub fn hypersurface_second_fundamental_form(
    curvatures: &PrincipalCurvatures,
    frame: &DMatrix<f64>,
    normal: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let m = curvatures.len();
    if frame.ncols() != m {
        return Err(Error::DimensionMismatch {
            context: "principal frame",
            expected: m,
            found: frame.ncols(),
        });
    }
    if frame.nrows() != normal.len() {
        return Err(Error::DimensionMismatch {
            context: "normal vector",
            expected: frame.nrows(),
            found: normal.len(),
        });
    }
    let gram = frame.transpose() * frame;
    let dev = (gram - DMatrix::identity(m, m)).abs().max();
    if dev > 1e-8 {
        return Err(Error::FrameNotOrthonormal(dev));
    }
    let mut out = vec![vec![0.0; normal.len()]; m * m];
    for (i, k) in curvatures.values().iter().enumerate() {
        out[i * m + i] = normal.iter().map(|x| k * x).collect();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn principal_curvatures_are_sorted() {
        let p = PrincipalCurvatures::new(vec![3.0, 1.0, 2.0]);
        assert_eq!(p.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn principal_frame_form() {
        let nu = [0.0, 0.0, 0.0, 1.0];
        let mut frame = DMatrix::zeros(4, 3);
        for i in 0..3 {
            frame[(i, i)] = 1.0;
        }
        let b = hypersurface_second_fundamental_form(&PrincipalCurvatures::new(vec![1.0, 1.0, 1.0]), &frame, &nu)
            .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_eq!(b[i * 3 + j][3], expect);
            }
        }
        let b = hypersurface_second_fundamental_form(&PrincipalCurvatures::new(vec![1.0, 2.0, 3.0]), &frame, &nu)
            .unwrap();
        assert_eq!(b[8].iter().map(|x| x * x).sum::<f64>().sqrt(), 3.0);
        assert!(b[1].iter().all(|x| *x == 0.0));
        let bad = DMatrix::from_element(4, 3, 1.0);
        assert!(matches!(
            hypersurface_second_fundamental_form(&PrincipalCurvatures::new(vec![1.0; 3]), &bad, &nu),
            Err(Error::FrameNotOrthonormal(_))
        ));
        assert!(hypersurface_second_fundamental_form(&PrincipalCurvatures::new(vec![1.0; 2]), &frame, &nu).is_err());
    }
}
