//! Forward-mode dual numbers.
//!
//! [`Dual<T>`] carries a value and a single directional derivative. Nesting
//! (`Dual<Dual<f64>>`, ...) yields exact higher mixed partials: each level of
//! nesting differentiates along one seeded direction.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar field over which expressions, metrics and vector fields are evaluated.
pub trait Real:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    /// Nesting depth: 0 for `f64`, `T::ORDER + 1` for `Dual<T>`.
    const ORDER: usize;

    fn cst(c: f64) -> Self;
    fn value(&self) -> f64;

    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn powf(self, e: f64) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn one() -> Self {
        Self::cst(1.0)
    }

    fn scale(self, c: f64) -> Self {
        self * Self::cst(c)
    }
}

impl Real for f64 {
    const ORDER: usize = 0;

    #[inline]
    fn cst(c: f64) -> Self {
        c
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn powf(self, e: f64) -> Self {
        if e == 2.0 {
            self * self
        } else if e.fract() == 0.0 && e.abs() <= 64.0 {
            f64::powi(self, e as i32)
        } else {
            f64::powf(self, e)
        }
    }
}

/// Value plus one infinitesimal part.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Real> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    /// A constant (zero derivative).
    pub fn constant(re: T) -> Self {
        Dual { re, eps: T::zero() }
    }

    /// An active variable (unit derivative).
    pub fn variable(re: T) -> Self {
        Dual { re, eps: T::one() }
    }
}

/// Lift a slice into `Dual<T>`, seeding `direction` (if any) with unit derivative.
pub fn seed<T: Real>(values: &[T], direction: Option<usize>) -> Vec<Dual<T>> {
    values
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            if Some(k) == direction {
                Dual::variable(x)
            } else {
                Dual::constant(x)
            }
        })
        .collect()
}

/// Lift a slice into `Dual<T>` with an arbitrary tangent vector.
pub fn seed_tangent<T: Real>(values: &[T], tangent: &[T]) -> Vec<Dual<T>> {
    values
        .iter()
        .zip(tangent)
        .map(|(&x, &d)| Dual::new(x, d))
        .collect()
}

/// Lift without seeding.
pub fn lift<T: Real>(values: &[T]) -> Vec<Dual<T>> {
    seed(values, None)
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Dual::new(q, (self.eps - q * o.eps) / o.re)
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<T: Real> AddAssign for Dual<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> SubAssign for Dual<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real> MulAssign for Dual<T> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<T: Real> Real for Dual<T> {
    const ORDER: usize = T::ORDER + 1;

    #[inline]
    fn cst(c: f64) -> Self {
        Dual::constant(T::cst(c))
    }
    #[inline]
    fn value(&self) -> f64 {
        self.re.value()
    }
    #[inline]
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.eps * self.re.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -(self.eps * self.re.sin()))
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.eps * e)
    }
    #[inline]
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.eps / self.re)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.eps / (s + s))
    }
    #[inline]
    fn powf(self, e: f64) -> Self {
        if e == 0.0 {
            return Self::one();
        }
        if e == 1.0 {
            return self;
        }
        let d = self.re.powf(e - 1.0);
        Dual::new(d * self.re, self.eps * d.scale(e))
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        Dual::new(self.re.scale(c), self.eps.scale(c))
    }
}

/// Sum of an iterator of reals.
pub fn sum<T: Real, I: IntoIterator<Item = T>>(it: I) -> T {
    it.into_iter().fold(T::zero(), |a, b| a + b)
}

/// Euclidean dot product.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    sum(a.iter().zip(b).map(|(&x, &y)| x * y))
}
