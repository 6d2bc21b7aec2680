//! Scalar traits shared by the numeric modules.

use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, ToPrimitive, Zero};

/// Floating-point scalar used by geometry, quadrature and diagram code.
pub trait Real:
    num_traits::Float + FromPrimitive + Debug + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Ring used to weight configurations in exact enumeration.
///
/// Floating implementations sum with Neumaier compensation; the rational
/// implementation is exact.
pub trait Weight:
    Clone
    + Debug
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
{
    fn from_count(n: u64) -> Self;
    fn to_f64(&self) -> f64;
    fn abs_val(&self) -> Self;

    fn sum<I: IntoIterator<Item = Self>>(terms: I) -> Self {
        terms.into_iter().fold(Self::zero(), |acc, t| acc + t)
    }

    fn pow(&self, n: u32) -> Self {
        let mut acc = Self::one();
        let mut base = self.clone();
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base.clone();
            }
            base = base.clone() * base;
            e >>= 1;
        }
        acc
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl Weight for f64 {
    fn from_count(n: u64) -> Self {
        n as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn abs_val(&self) -> Self {
        self.abs()
    }
    fn sum<I: IntoIterator<Item = Self>>(terms: I) -> Self {
        let mut acc = CompensatedSum::new();
        for t in terms {
            acc.add(t);
        }
        acc.value()
    }
    fn pow(&self, n: u32) -> Self {
        self.powi(n as i32)
    }
}

impl Weight for f32 {
    fn from_count(n: u64) -> Self {
        n as f32
    }
    fn to_f64(&self) -> f64 {
        *self as f64
    }
    fn abs_val(&self) -> Self {
        self.abs()
    }
    fn sum<I: IntoIterator<Item = Self>>(terms: I) -> Self {
        let mut acc = CompensatedSum::new();
        for t in terms {
            acc.add(t as f64);
        }
        acc.value() as f32
    }
    fn pow(&self, n: u32) -> Self {
        self.powi(n as i32)
    }
}

impl Weight for BigRational {
    fn from_count(n: u64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn abs_val(&self) -> Self {
        num_traits::Signed::abs(self)
    }
}

/// Exact rational from a decimal-free ratio.
pub fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Exact rational equal to the given finite `f64`.
pub fn exact_from_f64(x: f64) -> BigRational {
    BigRational::from_f64(x).expect("finite value")
}
