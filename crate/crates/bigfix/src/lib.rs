//! Binary fixed-point numbers backed by `BigInt`, precise enough to serve as a
//! brute-force reference for the double-precision routines in `slowbasis`.
//!
//! A [`Fixed`] holds `raw / 2^FRAC_BITS`. Every operation truncates toward
//! negative infinity at `2^-FRAC_BITS`, so a chain of `n` operations carries an
//! absolute error of at most `n * 2^-FRAC_BITS` (about `n * 1e-308`).

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::{BigInt, Sign};
use num_traits::{One, Signed, ToPrimitive, Zero};

pub const FRAC_BITS: u32 = 1024;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Fixed {
    raw: BigInt,
}

impl Fixed {
    pub fn zero() -> Self {
        Fixed {
            raw: BigInt::zero(),
        }
    }

    pub fn one() -> Self {
        Fixed {
            raw: BigInt::one() << FRAC_BITS,
        }
    }

    pub fn from_int(v: i64) -> Self {
        Fixed {
            raw: BigInt::from(v) << FRAC_BITS,
        }
    }

    /// Exact conversion; panics on non-finite input.
    pub fn from_f64(v: f64) -> Self {
        assert!(v.is_finite(), "bigfix: non-finite input {v}");
        if v == 0.0 {
            return Self::zero();
        }
        let bits = v.to_bits();
        let sign = if bits >> 63 == 1 { -1 } else { 1 };
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mantissa, exp) = if exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), exp - 1075)
        };
        let mut raw = BigInt::from(mantissa) * sign;
        let shift = exp + FRAC_BITS as i64;
        if shift >= 0 {
            raw <<= shift as usize;
        } else {
            raw >>= (-shift) as usize;
        }
        Fixed { raw }
    }

    /// Nearest double (correct to well within one ulp for normal results).
    pub fn to_f64(&self) -> f64 {
        if self.raw.is_zero() {
            return 0.0;
        }
        // Keep 80 significant bits, then scale by an exact power of two.
        let bits = self.raw.bits() as i64;
        let drop = (bits - 80).max(0);
        let top = (&self.raw >> drop as usize).to_f64().unwrap();
        let scale = drop - FRAC_BITS as i64;
        top * 2f64.powi(scale as i32)
    }

    pub fn is_negative(&self) -> bool {
        self.raw.sign() == Sign::Minus
    }

    pub fn abs(&self) -> Self {
        Fixed {
            raw: self.raw.abs(),
        }
    }

    /// `self^n` by repeated squaring.
    pub fn powu(&self, mut n: u64) -> Self {
        let mut base = self.clone();
        let mut acc = Self::one();
        while n > 0 {
            if n & 1 == 1 {
                acc = &acc * &base;
            }
            base = &base * &base;
            n >>= 1;
        }
        acc
    }

    /// `e^x` for `x >= 0` by Taylor series; negative arguments go through the reciprocal.
    pub fn exp(&self) -> Self {
        if self.is_negative() {
            return &Self::one() / &(-self).exp();
        }
        let mut sum = Self::one();
        let mut term = Self::one();
        let mut k = 1i64;
        loop {
            term = &(&term * self) / &Self::from_int(k);
            if term.raw.is_zero() {
                break;
            }
            sum = &sum + &term;
            k += 1;
        }
        sum
    }

    /// Relative difference `|a - b| / |b|` as a double.
    pub fn rel_diff(a: f64, b: &Fixed) -> f64 {
        let diff = (&Fixed::from_f64(a) - b).abs();
        if b.raw.is_zero() {
            return diff.to_f64();
        }
        (&diff / &b.abs()).to_f64()
    }
}

impl<'a> Add<&'a Fixed> for &'a Fixed {
    type Output = Fixed;
    fn add(self, rhs: &Fixed) -> Fixed {
        Fixed {
            raw: &self.raw + &rhs.raw,
        }
    }
}

impl<'a> Sub<&'a Fixed> for &'a Fixed {
    type Output = Fixed;
    fn sub(self, rhs: &Fixed) -> Fixed {
        Fixed {
            raw: &self.raw - &rhs.raw,
        }
    }
}

impl<'a> Mul<&'a Fixed> for &'a Fixed {
    type Output = Fixed;
    fn mul(self, rhs: &Fixed) -> Fixed {
        Fixed {
            raw: (&self.raw * &rhs.raw) >> FRAC_BITS as usize,
        }
    }
}

impl<'a> Div<&'a Fixed> for &'a Fixed {
    type Output = Fixed;
    fn div(self, rhs: &Fixed) -> Fixed {
        assert!(!rhs.raw.is_zero(), "bigfix: division by zero");
        let num = &self.raw << FRAC_BITS as usize;
        let q = &num / &rhs.raw;
        Fixed { raw: q }
    }
}

impl Neg for &Fixed {
    type Output = Fixed;
    fn neg(self) -> Fixed {
        Fixed {
            raw: -self.raw.clone(),
        }
    }
}

impl PartialOrd<f64> for Fixed {
    fn partial_cmp(&self, other: &f64) -> Option<Ordering> {
        Some(self.cmp(&Fixed::from_f64(*other)))
    }
}

impl PartialEq<f64> for Fixed {
    fn eq(&self, other: &f64) -> bool {
        *self == Fixed::from_f64(*other)
    }
}

/// `P(N > threshold)` for `N ~ Poisson(mean)`, summed term by term as
/// `1 - e^{-mean} * sum_{k<=threshold} mean^k / k!`.
pub fn poisson_upper_tail(mean: f64, threshold: u64) -> Fixed {
    let lam = Fixed::from_f64(mean);
    let mut term = Fixed::one();
    let mut lower = Fixed::one();
    for k in 1..=threshold {
        term = &(&term * &lam) / &Fixed::from_int(k as i64);
        lower = &lower + &term;
    }
    let scaled = &lower / &lam.exp();
    &Fixed::one() - &scaled
}

/// `1 - (1 - p)^n`.
pub fn complement_power(p: f64, n: u64) -> Fixed {
    let q = &Fixed::one() - &Fixed::from_f64(p);
    &Fixed::one() - &q.powu(n)
}

/// `sum_{m=0}^{n-1} r^m`, accumulated term by term.
pub fn geometric_series(r: f64, n: u64) -> Fixed {
    let ratio = Fixed::from_f64(r);
    let mut term = Fixed::one();
    let mut sum = Fixed::zero();
    for _ in 0..n {
        sum = &sum + &term;
        term = &term * &ratio;
    }
    sum
}
