//! Scalars that can be pushed through closed-form maps.
//!
//! [`Real`] is implemented by `f64` and by [`Hyper`], a hyper-dual number
//! `a + b ε₁ + c ε₂ + d ε₁ε₂` with `ε₁² = ε₂² = 0`. Evaluating a function on
//! `x + ε₁ u + ε₂ v + ε₁ε₂ w` returns `f`, `Df·u`, `Df·v` and
//! `Df·w + D²f(u, v)` in the four slots, which is exactly the second-order
//! chain rule needed to carry jets through compositions.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Real:
    Copy
    + Send
    + Sync
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn cst(x: f64) -> Self;
    fn re(self) -> f64;
    /// Applies a scalar function given its value and first two derivatives at `self.re()`.
    fn lift(self, f0: f64, f1: f64, f2: f64) -> Self;

    fn sqrt(self) -> Self {
        let s = self.re().sqrt();
        self.lift(s, 0.5 / s, -0.25 / (s * s * s))
    }
    fn recip(self) -> Self {
        let x = self.re();
        self.lift(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x))
    }
    fn exp(self) -> Self {
        let e = self.re().exp();
        self.lift(e, e, e)
    }
    fn ln(self) -> Self {
        let x = self.re();
        self.lift(x.ln(), 1.0 / x, -1.0 / (x * x))
    }
    fn sin(self) -> Self {
        let (s, c) = self.re().sin_cos();
        self.lift(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.re().sin_cos();
        self.lift(c, -s, -c)
    }
    fn sinh(self) -> Self {
        let x = self.re();
        self.lift(x.sinh(), x.cosh(), x.sinh())
    }
    fn cosh(self) -> Self {
        let x = self.re();
        self.lift(x.cosh(), x.sinh(), x.cosh())
    }
    fn powi(self, n: i32) -> Self {
        let x = self.re();
        let nf = n as f64;
        self.lift(
            x.powi(n),
            nf * x.powi(n - 1),
            nf * (nf - 1.0) * x.powi(n - 2),
        )
    }
    fn square(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    #[inline]
    fn cst(x: f64) -> Self {
        x
    }
    #[inline]
    fn re(self) -> f64 {
        self
    }
    #[inline]
    fn lift(self, f0: f64, _f1: f64, _f2: f64) -> Self {
        f0
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn recip(self) -> Self {
        1.0 / self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sinh(self) -> Self {
        f64::sinh(self)
    }
    fn cosh(self) -> Self {
        f64::cosh(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// Hyper-dual number carrying a value, two independent first-order
/// perturbations and their mixed second-order term.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Hyper {
    pub re: f64,
    pub e1: f64,
    pub e2: f64,
    pub e12: f64,
}

impl Hyper {
    pub const fn new(re: f64, e1: f64, e2: f64, e12: f64) -> Self {
        Hyper { re, e1, e2, e12 }
    }
}

impl Real for Hyper {
    #[inline]
    fn cst(x: f64) -> Self {
        Hyper::new(x, 0.0, 0.0, 0.0)
    }
    #[inline]
    fn re(self) -> f64 {
        self.re
    }
    #[inline]
    fn lift(self, f0: f64, f1: f64, f2: f64) -> Self {
        Hyper {
            re: f0,
            e1: f1 * self.e1,
            e2: f1 * self.e2,
            e12: f1 * self.e12 + f2 * self.e1 * self.e2,
        }
    }
}

impl Add for Hyper {
    type Output = Hyper;
    #[inline]
    fn add(self, o: Hyper) -> Hyper {
        Hyper::new(self.re + o.re, self.e1 + o.e1, self.e2 + o.e2, self.e12 + o.e12)
    }
}

impl Sub for Hyper {
    type Output = Hyper;
    #[inline]
    fn sub(self, o: Hyper) -> Hyper {
        Hyper::new(self.re - o.re, self.e1 - o.e1, self.e2 - o.e2, self.e12 - o.e12)
    }
}

impl Mul for Hyper {
    type Output = Hyper;
    #[inline]
    fn mul(self, o: Hyper) -> Hyper {
        Hyper {
            re: self.re * o.re,
            e1: self.re * o.e1 + self.e1 * o.re,
            e2: self.re * o.e2 + self.e2 * o.re,
            e12: self.re * o.e12 + self.e1 * o.e2 + self.e2 * o.e1 + self.e12 * o.re,
        }
    }
}

impl Div for Hyper {
    type Output = Hyper;
    #[inline]
    fn div(self, o: Hyper) -> Hyper {
        self * o.recip()
    }
}

impl Neg for Hyper {
    type Output = Hyper;
    #[inline]
    fn neg(self) -> Hyper {
        Hyper::new(-self.re, -self.e1, -self.e2, -self.e12)
    }
}

impl Add<f64> for Hyper {
    type Output = Hyper;
    #[inline]
    fn add(self, o: f64) -> Hyper {
        Hyper { re: self.re + o, ..self }
    }
}

impl Sub<f64> for Hyper {
    type Output = Hyper;
    #[inline]
    fn sub(self, o: f64) -> Hyper {
        Hyper { re: self.re - o, ..self }
    }
}

impl Mul<f64> for Hyper {
    type Output = Hyper;
    #[inline]
    fn mul(self, o: f64) -> Hyper {
        Hyper::new(self.re * o, self.e1 * o, self.e2 * o, self.e12 * o)
    }
}

impl Div<f64> for Hyper {
    type Output = Hyper;
    #[inline]
    fn div(self, o: f64) -> Hyper {
        self * (1.0 / o)
    }
}

impl AddAssign for Hyper {
    fn add_assign(&mut self, o: Hyper) {
        *self = *self + o;
    }
}

impl SubAssign for Hyper {
    fn sub_assign(&mut self, o: Hyper) {
        *self = *self - o;
    }
}

impl MulAssign for Hyper {
    fn mul_assign(&mut self, o: Hyper) {
        *self = *self * o;
    }
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::cst(0.0);
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f<T: Real>(x: T, y: T) -> T {
        (x * y).sin() + (x.square() + 1.0).sqrt() / (y + 2.0) + x.exp() * y.powi(3)
    }

    #[test]
    fn mixed_partial_matches_closed_form() {
        let (x0, y0) = (0.3, -0.7);
        let h = f(Hyper::new(x0, 1.0, 0.0, 0.0), Hyper::new(y0, 0.0, 1.0, 0.0));
        let fx = y0 * (x0 * y0).cos() + x0 / (x0 * x0 + 1.0).sqrt() / (y0 + 2.0)
            + x0.exp() * y0.powi(3);
        let fy = x0 * (x0 * y0).cos() - (x0 * x0 + 1.0).sqrt() / (y0 + 2.0).powi(2)
            + 3.0 * x0.exp() * y0 * y0;
        let fxy = (x0 * y0).cos() - x0 * y0 * (x0 * y0).sin()
            - x0 / (x0 * x0 + 1.0).sqrt() / (y0 + 2.0).powi(2)
            + 3.0 * x0.exp() * y0 * y0;
        assert!((h.re - f(x0, y0)).abs() < 1e-15);
        assert!((h.e1 - fx).abs() < 1e-13);
        assert!((h.e2 - fy).abs() < 1e-13);
        assert!((h.e12 - fxy).abs() < 1e-13);
    }

    #[test]
    fn second_derivative_along_one_direction() {
        let x0 = 1.3_f64;
        let h = Hyper::new(x0, 1.0, 1.0, 0.0).ln().cosh();
        let g2 = {
            let l = x0.ln();
            l.cosh() / (x0 * x0) - l.sinh() / (x0 * x0)
        };
        assert!((h.e12 - g2).abs() < 1e-13);
    }
}
