//! Configurable-mantissa reals.
//!
//! A [`PrecisionContext`] fixes the mantissa width `b_m`; every [`Real`]
//! created through it carries that width. Arithmetic between reals of
//! different widths is rejected rather than silently widened. Rounding is
//! round-to-nearest-even throughout (MPFR's default).

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use rug::float::Round;
use rug::ops::Pow;
use rug::{Assign, Float};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrecisionContext {
    bits: u32,
}

impl PrecisionContext {
    pub const MIN_BITS: u32 = 24;

    /// Working precision used when nothing else is requested.
    pub const DEFAULT_BITS: u32 = 128;

    pub fn new(mantissa_bits: u32) -> Result<Self> {
        if mantissa_bits < Self::MIN_BITS {
            return Err(Error::InsufficientPrecision {
                bits: mantissa_bits,
                min: Self::MIN_BITS,
            });
        }
        Ok(Self {
            bits: mantissa_bits,
        })
    }

    pub fn mantissa_bits(&self) -> u32 {
        self.bits
    }

    /// `2^(1 - b_m)`, the gap between 1 and the next representable value.
    pub fn machine_epsilon(&self) -> Real {
        Real(Float::with_val(self.bits, Float::i_exp(1, 1 - self.bits as i32)))
    }

    pub fn zero(&self) -> Real {
        Real(Float::new(self.bits))
    }

    pub fn one(&self) -> Real {
        self.from_i64(1)
    }

    pub fn from_i64(&self, v: i64) -> Real {
        Real(Float::with_val(self.bits, v))
    }

    /// Rounds the exact binary value of `v` to this precision.
    pub fn from_f64(&self, v: f64) -> Real {
        Real(Float::with_val(self.bits, v))
    }

    /// `10^exp` correctly rounded.
    pub fn pow10(&self, exp: i32) -> Real {
        let ten = Float::with_val(self.bits, 10);
        Real(ten.pow(exp))
    }

    /// Parses a signed decimal numeral with optional exponent, correctly
    /// rounded to this precision.
    pub fn parse(&self, text: &str) -> Result<Real> {
        let trimmed = text.trim();
        validate_numeral(trimmed).map_err(|reason| Error::Parse {
            text: text.to_string(),
            reason: reason.to_string(),
        })?;
        let parsed = Float::parse(trimmed).map_err(|e| Error::Parse {
            text: text.to_string(),
            reason: e.to_string(),
        })?;
        let value = Float::with_val_round(self.bits, parsed, Round::Nearest).0;
        if !value.is_finite() {
            return Err(Error::Parse {
                text: text.to_string(),
                reason: "value overflows the exponent range".into(),
            });
        }
        Ok(Real(value))
    }

    /// Parses a comma-separated vector of decimal numerals.
    pub fn parse_vector(&self, text: &str) -> Result<Vec<Real>> {
        text.split(',').map(|s| self.parse(s)).collect()
    }

    /// Converts a value to this context's precision (rounding if narrower).
    pub fn adopt(&self, v: &Real) -> Real {
        Real(Float::with_val(self.bits, &v.0))
    }

    pub(crate) fn float(&self) -> Float {
        Float::new(self.bits)
    }
}

impl Default for PrecisionContext {
    fn default() -> Self {
        Self {
            bits: Self::DEFAULT_BITS,
        }
    }
}

/// Accepts `[+-]digits[.digits][(e|E)[+-]digits]`, also `.5` and `5.`.
fn validate_numeral(s: &str) -> std::result::Result<(), &'static str> {
    let b = s.as_bytes();
    if b.is_empty() {
        return Err("empty numeral");
    }
    let mut i = 0;
    if b[i] == b'+' || b[i] == b'-' {
        i += 1;
    }
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i - int_start;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        digits += i - frac_start;
    }
    if digits == 0 {
        return Err("no digits in mantissa");
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
            i += 1;
        }
        let exp_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return Err("no digits in exponent");
        }
    }
    if i != b.len() {
        return Err("unexpected character");
    }
    Ok(())
}

/// A real number at a fixed mantissa width.
#[derive(Clone, PartialEq, PartialOrd)]
pub struct Real(pub(crate) Float);

impl Real {
    pub fn precision(&self) -> u32 {
        self.0.prec()
    }

    pub fn context(&self) -> PrecisionContext {
        PrecisionContext { bits: self.0.prec() }
    }

    /// Decimal string with enough significant digits to parse back to the
    /// identical value at this precision.
    pub fn to_decimal(&self) -> String {
        if self.0.is_zero() {
            return "0".to_string();
        }
        self.0.to_string_radix(10, None)
    }

    /// Decimal string with `digits` significant digits.
    pub fn to_decimal_digits(&self, digits: usize) -> String {
        if self.0.is_zero() {
            return "0".to_string();
        }
        self.0.to_string_radix(10, Some(digits))
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_sign_negative(&self) -> bool {
        self.0.is_sign_negative() && !self.0.is_zero()
    }

    pub fn abs(&self) -> Real {
        Real(self.0.clone().abs())
    }

    pub fn sqrt(&self) -> Real {
        Real(self.0.clone().sqrt())
    }

    /// Natural logarithm.
    pub fn ln(&self) -> Real {
        Real(self.0.clone().ln())
    }

    pub fn exp(&self) -> Real {
        Real(self.0.clone().exp())
    }

    pub fn sin(&self) -> Real {
        Real(self.0.clone().sin())
    }

    pub fn powi(&self, e: i32) -> Real {
        Real(self.0.clone().pow(e))
    }

    pub fn max(self, other: Real) -> Real {
        if other > self {
            other
        } else {
            self
        }
    }

    pub fn checked_add(&self, rhs: &Real) -> Result<Real> {
        self.same_precision(rhs)?;
        Ok(Real(Float::with_val(self.precision(), &self.0 + &rhs.0)))
    }

    pub fn checked_sub(&self, rhs: &Real) -> Result<Real> {
        self.same_precision(rhs)?;
        Ok(Real(Float::with_val(self.precision(), &self.0 - &rhs.0)))
    }

    pub fn checked_mul(&self, rhs: &Real) -> Result<Real> {
        self.same_precision(rhs)?;
        Ok(Real(Float::with_val(self.precision(), &self.0 * &rhs.0)))
    }

    pub fn checked_div(&self, rhs: &Real) -> Result<Real> {
        self.same_precision(rhs)?;
        Ok(Real(Float::with_val(self.precision(), &self.0 / &rhs.0)))
    }

    fn same_precision(&self, rhs: &Real) -> Result<()> {
        if self.precision() != rhs.precision() {
            return Err(Error::PrecisionMismatch {
                left: self.precision(),
                right: rhs.precision(),
            });
        }
        Ok(())
    }

    pub(crate) fn from_float(f: Float) -> Real {
        Real(f)
    }

    pub(crate) fn as_float(&self) -> &Float {
        &self.0
    }
}

impl fmt::Debug for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Real({}b, {})", self.precision(), self.to_decimal())
    }
}

impl fmt::Display for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal())
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $checked:ident) => {
        impl $trait<&Real> for &Real {
            type Output = Real;

            /// Panics when the operands carry different precisions.
            fn $method(self, rhs: &Real) -> Real {
                match self.$checked(rhs) {
                    Ok(v) => v,
                    Err(e) => panic!("{e}"),
                }
            }
        }

        impl $trait<Real> for Real {
            type Output = Real;

            fn $method(self, rhs: Real) -> Real {
                (&self).$method(&rhs)
            }
        }
    };
}

binop!(Add, add, checked_add);
binop!(Sub, sub, checked_sub);
binop!(Mul, mul, checked_mul);
binop!(Div, div, checked_div);

impl Neg for &Real {
    type Output = Real;

    fn neg(self) -> Real {
        Real(-self.0.clone())
    }
}

impl Neg for Real {
    type Output = Real;

    fn neg(self) -> Real {
        Real(-self.0)
    }
}

/// Total order for non-NaN reals; NaN sorts last.
pub fn total_cmp(a: &Real, b: &Real) -> Ordering {
    a.0.partial_cmp(&b.0).unwrap_or_else(|| a.0.is_nan().cmp(&b.0.is_nan()))
}

/// Euclidean norm of a vector.
pub fn norm2(v: &[Real]) -> Real {
    let ctx = v.first().map(|r| r.context()).unwrap_or_default();
    let mut acc = ctx.float();
    for x in v {
        acc += x.0.clone().square();
    }
    Real(acc.sqrt())
}

/// Sum of absolute values.
pub fn norm1(v: &[Real]) -> Real {
    let ctx = v.first().map(|r| r.context()).unwrap_or_default();
    let mut acc = ctx.float();
    for x in v {
        acc += &*x.0.as_abs();
    }
    Real(acc)
}

/// 1-norm of `a - b`.
pub fn dist1(a: &[Real], b: &[Real]) -> Real {
    let ctx = a.first().map(|r| r.context()).unwrap_or_default();
    let mut acc = ctx.float();
    let mut d = ctx.float();
    for (x, y) in a.iter().zip(b) {
        d.assign(&x.0 - &y.0);
        acc += &*d.as_abs();
    }
    Real(acc)
}

/// Euclidean distance between `a` and `b`.
pub fn dist2(a: &[Real], b: &[Real]) -> Real {
    let ctx = a.first().map(|r| r.context()).unwrap_or_default();
    let mut acc = ctx.float();
    let mut d = ctx.float();
    for (x, y) in a.iter().zip(b) {
        d.assign(&x.0 - &y.0);
        d.square_mut();
        acc += &d;
    }
    Real(acc.sqrt())
}
