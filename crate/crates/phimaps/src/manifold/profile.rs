use crate::error::{Error, Result};

/// Two-sided bounds on the radial curvature of a manifold with a pole.
///
/// Each case also fixes the warped factor `f` of the rotationally symmetric
/// model `dr² + f(r)² g_sphere` used to build test grids.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CurvatureProfile {
    /// `-max_rate² ≤ K_r ≤ -min_rate²`.
    PinchedNegative { max_rate: f64, min_rate: f64 },
    /// `-negative/(1+r²)^{1+decay} ≤ K_r ≤ positive/(1+r²)^{1+decay}`.
    PowerDecay {
        negative: f64,
        positive: f64,
        decay: f64,
    },
    /// `-negative²/(1+r²) ≤ K_r ≤ positive²/(1+r²)`.
    InverseSquare { negative: f64, positive: f64 },
}

impl CurvatureProfile {
    pub fn flat() -> Self {
        CurvatureProfile::PinchedNegative {
            max_rate: 0.0,
            min_rate: 0.0,
        }
    }

    pub fn pinched_negative(max_rate: f64, min_rate: f64) -> Result<Self> {
        Self::PinchedNegative { max_rate, min_rate }.validated()
    }

    pub fn power_decay(negative: f64, positive: f64, decay: f64) -> Result<Self> {
        Self::PowerDecay {
            negative,
            positive,
            decay,
        }
        .validated()
    }

    pub fn inverse_square(negative: f64, positive: f64) -> Result<Self> {
        Self::InverseSquare { negative, positive }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let finite = |x: f64| x.is_finite();
        match self {
            CurvatureProfile::PinchedNegative { max_rate, min_rate } => {
                if !(finite(max_rate) && finite(min_rate)) || min_rate < 0.0 || max_rate < min_rate {
                    return Err(Error::param("profile", "need max_rate >= min_rate >= 0"));
                }
            }
            CurvatureProfile::PowerDecay {
                negative,
                positive,
                decay,
            } => {
                if !(finite(negative) && finite(positive) && finite(decay))
                    || decay <= 0.0
                    || negative < 0.0
                    || positive < 0.0
                    || positive >= 2.0 * decay
                {
                    return Err(Error::param(
                        "profile",
                        "need decay > 0, negative >= 0 and 0 <= positive < 2 decay",
                    ));
                }
            }
            CurvatureProfile::InverseSquare { negative, positive } => {
                if !(finite(negative) && finite(positive))
                    || negative < 0.0
                    || positive < 0.0
                    || positive * positive > 0.25
                {
                    return Err(Error::param(
                        "profile",
                        "need negative >= 0 and 0 <= positive² <= 1/4",
                    ));
                }
            }
        }
        Ok(self)
    }

    /// The radial curvature of the model metric built for this profile.
    /// It sits on the lower bound for the first two cases and on the
    /// upper bound for the inverse-square case.
    pub fn model_curvature(&self, r: f64) -> f64 {
        match *self {
            CurvatureProfile::PinchedNegative { min_rate, .. } => -min_rate * min_rate,
            CurvatureProfile::PowerDecay {
                negative, decay, ..
            } => -negative / (1.0 + r * r).powf(1.0 + decay),
            CurvatureProfile::InverseSquare { positive, .. } => positive * positive / (1.0 + r * r),
        }
    }
}

/// `x coth x`, continuous at 0.
pub(crate) fn x_coth_x(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        1.0 + x * x / 3.0
    } else {
        x / x.tanh()
    }
}

/// Warped factor `f(r)` with `f(0) = 0`, `f'(0) = 1` and `f'' = -K f`.
#[derive(Clone, Debug)]
pub(crate) enum Warp {
    Linear,
    Sinh(f64),
    Table {
        profile: CurvatureProfile,
        step: f64,
        f: Vec<f64>,
        df: Vec<f64>,
    },
}

impl Warp {
    pub(crate) fn new(profile: &CurvatureProfile, extent: f64) -> Warp {
        match *profile {
            CurvatureProfile::PinchedNegative { min_rate, .. } => {
                if min_rate == 0.0 {
                    Warp::Linear
                } else {
                    Warp::Sinh(min_rate)
                }
            }
            _ => {
                let len = 40_000usize;
                let step = 1.1 * extent / len as f64;
                let k = |r: f64| profile.model_curvature(r);
                let mut f = Vec::with_capacity(len + 1);
                let mut df = Vec::with_capacity(len + 1);
                let (mut y, mut dy) = (0.0_f64, 1.0_f64);
                f.push(y);
                df.push(dy);
                for i in 0..len {
                    let r = i as f64 * step;
                    let rhs = |r: f64, y: f64| -k(r) * y;
                    let k1y = dy;
                    let k1d = rhs(r, y);
                    let k2y = dy + 0.5 * step * k1d;
                    let k2d = rhs(r + 0.5 * step, y + 0.5 * step * k1y);
                    let k3y = dy + 0.5 * step * k2d;
                    let k3d = rhs(r + 0.5 * step, y + 0.5 * step * k2y);
                    let k4y = dy + step * k3d;
                    let k4d = rhs(r + step, y + step * k3y);
                    y += step / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
                    dy += step / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d);
                    f.push(y);
                    df.push(dy);
                }
                Warp::Table {
                    profile: *profile,
                    step,
                    f,
                    df,
                }
            }
        }
    }

    /// `(f, f', f'')` at `r`.
    pub(crate) fn eval(&self, r: f64) -> (f64, f64, f64) {
        match self {
            Warp::Linear => (r, 1.0, 0.0),
            Warp::Sinh(b) => ((b * r).sinh() / b, (b * r).cosh(), b * (b * r).sinh()),
            Warp::Table {
                profile,
                step,
                f,
                df,
            } => {
                let k = profile.model_curvature(r);
                let s = (r / step).clamp(0.0, (f.len() - 2) as f64);
                let i = s.floor() as usize;
                let t = s - i as f64;
                // cubic Hermite on (f, f') and on (f', f'' = -K f)
                let h = *step;
                let (h00, h10, h01, h11) = (
                    2.0 * t * t * t - 3.0 * t * t + 1.0,
                    t * t * t - 2.0 * t * t + t,
                    -2.0 * t * t * t + 3.0 * t * t,
                    t * t * t - t * t,
                );
                let fv = h00 * f[i] + h10 * h * df[i] + h01 * f[i + 1] + h11 * h * df[i + 1];
                let r0 = i as f64 * h;
                let dd0 = -profile.model_curvature(r0) * f[i];
                let dd1 = -profile.model_curvature(r0 + h) * f[i + 1];
                let dfv = h00 * df[i] + h10 * h * dd0 + h01 * df[i + 1] + h11 * h * dd1;
                (fv, dfv, -k * fv)
            }
        }
    }

    /// `∫_a^b f(r)^{p} dr` by composite Gauss-Legendre.
    pub(crate) fn power_integral(&self, a: f64, b: f64, p: i32) -> f64 {
        if p == 0 {
            return b - a;
        }
        const X: [f64; 5] = [
            -0.906_179_845_938_664,
            -0.538_469_310_105_683,
            0.0,
            0.538_469_310_105_683,
            0.906_179_845_938_664,
        ];
        const W: [f64; 5] = [
            0.236_926_885_056_189_1,
            0.478_628_670_499_366_5,
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_1,
        ];
        let pieces = 16;
        let h = (b - a) / pieces as f64;
        let mut s = 0.0;
        for k in 0..pieces {
            let c = a + (k as f64 + 0.5) * h;
            for (x, w) in X.iter().zip(W) {
                s += w * 0.5 * h * self.eval(c + 0.5 * h * x).0.powi(p);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn admissibility_is_enforced() {
        assert!(CurvatureProfile::pinched_negative(1.0, 2.0).is_err());
        assert!(CurvatureProfile::power_decay(1.0, 2.0, 1.0).is_err());
        assert!(CurvatureProfile::inverse_square(0.0, 0.6).is_err());
        assert!(CurvatureProfile::inverse_square(1.0, 0.5).is_ok());
    }

    #[test]
    fn tabulated_warp_is_linear_for_zero_curvature() {
        let w = Warp::new(&CurvatureProfile::inverse_square(2.0, 0.0).unwrap(), 5.0);
        for r in [0.3, 1.7, 4.9] {
            let (f, df, ddf) = w.eval(r);
            assert!((f - r).abs() < 1e-10 && (df - 1.0).abs() < 1e-10 && ddf.abs() < 1e-12);
        }
    }

    #[test]
    fn tabulated_warp_solves_jacobi_equation() {
        // K = b²/(1+r²): compare the table against a direct fine RK4 solve at one point
        let p = CurvatureProfile::inverse_square(0.0, 0.5).unwrap();
        let w = Warp::new(&p, 4.0);
        let (mut y, mut dy, n) = (0.0_f64, 1.0_f64, 400_000);
        let h = 3.0 / n as f64;
        for i in 0..n {
            // explicit midpoint is plenty at this resolution
            let r = i as f64 * h;
            let ym = y + 0.5 * h * dy;
            let dym = dy - 0.5 * h * p.model_curvature(r) * y;
            y += h * dym;
            dy -= h * p.model_curvature(r + 0.5 * h) * ym;
        }
        let (f, df, _) = w.eval(3.0);
        assert!((f - y).abs() < 1e-7, "{f} {y}");
        assert!((df - dy).abs() < 1e-7);
    }

    #[test]
    fn sinh_power_integral() {
        let w = Warp::Sinh(1.0);
        let exact = 1.0_f64.cosh() - 1.0;
        assert!((w.power_integral(0.0, 1.0, 1) - exact).abs() < 1e-13);
    }
}
