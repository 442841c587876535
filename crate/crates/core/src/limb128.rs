//! Binary floating point with exactly 128 significant bits in two limbs.
//!
//! MPFR handles 128-bit operands on its generic multi-limb path, which
//! dominates series expansion at the default precision. This type supports
//! only what the expansion kernel needs (add, sub, mul, division by a small
//! integer, comparison), each correctly rounded to nearest-even, so results
//! are bit-identical to MPFR at 128 bits. Conversions read and write the
//! MPFR limbs directly.

use std::cmp::Ordering;

use gmp_mpfr_sys::mpfr;
use rug::Float;

pub(crate) const BITS: u32 = 128;

/// `mant * 2^(exp - 128)` with `mant` in `[2^127, 2^128)`, or a signed zero
/// when `mant == 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct F128 {
    mant: u128,
    exp: i64,
    neg: bool,
}

const TOP: u128 = 1 << 127;

/// Whether MPFR values of 128 bits are stored in two 64-bit limbs.
pub(crate) fn supported(prec: u32) -> bool {
    prec == BITS && gmp_mpfr_sys::gmp::NUMB_BITS == 64
}

#[inline]
fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    let (a1, a0) = (a >> 64, a & u64::MAX as u128);
    let (b1, b0) = (b >> 64, b & u64::MAX as u128);
    let p00 = a0 * b0;
    let p01 = a0 * b1;
    let p10 = a1 * b0;
    let p11 = a1 * b1;
    let mid = (p00 >> 64) + (p01 & u64::MAX as u128) + (p10 & u64::MAX as u128);
    let lo = (p00 & u64::MAX as u128) | (mid << 64);
    let hi = p11 + (p01 >> 64) + (p10 >> 64) + (mid >> 64);
    (hi, lo)
}

impl F128 {
    pub const ZERO: F128 = F128 {
        mant: 0,
        exp: 0,
        neg: false,
    };

    pub fn is_zero(&self) -> bool {
        self.mant == 0
    }

    fn zero(neg: bool) -> F128 {
        F128 {
            mant: 0,
            exp: 0,
            neg,
        }
    }

    pub fn abs(self) -> F128 {
        F128 { neg: false, ..self }
    }

    #[cfg(test)]
    pub fn neg(self) -> F128 {
        F128 {
            neg: !self.neg,
            ..self
        }
    }

    /// Rounds `(hi * 2^128 + lo + s) * 2^(exp - 256)`, where `s` is a
    /// fraction in `(0, 1)` when `sticky` is set, to 128 bits.
    #[inline]
    fn round_pack(neg: bool, exp: i64, mut hi: u128, mut lo: u128, sticky: bool) -> F128 {
        let lz = if hi != 0 {
            hi.leading_zeros()
        } else if lo != 0 {
            128 + lo.leading_zeros()
        } else {
            debug_assert!(!sticky, "sticky bits without a leading bit");
            return F128::zero(neg);
        };
        if lz >= 128 {
            hi = lo << (lz - 128);
            lo = 0;
        } else if lz > 0 {
            hi = (hi << lz) | (lo >> (128 - lz));
            lo <<= lz;
        }
        let mut exp = exp - lz as i64;
        let round_up = lo > TOP || (lo == TOP && (sticky || hi & 1 == 1));
        if round_up {
            if hi == u128::MAX {
                hi = TOP;
                exp += 1;
            } else {
                hi += 1;
            }
        }
        F128 { mant: hi, exp, neg }
    }

    #[inline]
    pub fn mul(self, other: F128) -> F128 {
        let neg = self.neg != other.neg;
        if self.is_zero() || other.is_zero() {
            return F128::zero(neg);
        }
        let (mut hi, mut lo) = mul_wide(self.mant, other.mant);
        let mut exp = self.exp + other.exp;
        // product of two normalized mantissas has at most one leading zero
        if hi < TOP {
            hi = (hi << 1) | (lo >> 127);
            lo <<= 1;
            exp -= 1;
        }
        if lo > TOP || (lo == TOP && hi & 1 == 1) {
            hi = hi.wrapping_add(1);
            if hi == 0 {
                hi = TOP;
                exp += 1;
            }
        }
        F128 { mant: hi, exp, neg }
    }

    #[inline]
    fn cmp_abs(&self, other: &F128) -> Ordering {
        match (self.is_zero(), other.is_zero()) {
            (true, true) => Ordering::Equal,
            (true, false) => Ordering::Less,
            (false, true) => Ordering::Greater,
            _ => self
                .exp
                .cmp(&other.exp)
                .then(self.mant.cmp(&other.mant)),
        }
    }

    #[inline]
    pub fn add(self, other: F128) -> F128 {
        if other.is_zero() {
            if self.is_zero() {
                return F128::zero(self.neg && other.neg);
            }
            return self;
        }
        if self.is_zero() {
            return other;
        }
        let (a, b) = if self.cmp_abs(&other) == Ordering::Less {
            (other, self)
        } else {
            (self, other)
        };
        let d = (a.exp - b.exp) as u64;
        let (b_hi, b_lo, sticky) = if d == 0 {
            (b.mant, 0, false)
        } else if d < 128 {
            (b.mant >> d, b.mant << (128 - d), false)
        } else if d == 128 {
            (0, b.mant, false)
        } else if d < 256 {
            (0, b.mant >> (d - 128), b.mant << (256 - d) != 0)
        } else {
            (0, 0, true)
        };
        if a.neg == b.neg {
            let lo = b_lo;
            let (hi, overflow) = a.mant.overflowing_add(b_hi);
            if overflow {
                let sticky = sticky || lo & 1 == 1;
                let lo = (lo >> 1) | (hi << 127);
                let hi = (hi >> 1) | TOP;
                F128::round_pack(a.neg, a.exp + 1, hi, lo, sticky)
            } else {
                F128::round_pack(a.neg, a.exp, hi, lo, sticky)
            }
        } else {
            // (a.mant, 0) - (b_hi, b_lo) - sticky; a >= b so no underflow
            let (lo, borrow1) = 0u128.overflowing_sub(b_lo);
            let (lo, borrow2) = lo.overflowing_sub(sticky as u128);
            let hi = a.mant - b_hi - (borrow1 as u128) - (borrow2 as u128);
            if hi == 0 && lo == 0 && !sticky {
                return F128::zero(false);
            }
            F128::round_pack(a.neg, a.exp, hi, lo, sticky)
        }
    }

    #[cfg(test)]
    pub fn sub(self, other: F128) -> F128 {
        self.add(other.neg())
    }

    pub fn div_u32(self, j: u32) -> F128 {
        assert!(j > 0, "division by zero");
        if self.is_zero() {
            return self;
        }
        // long division in 32-bit digits keeps every step in a u64
        let j = j as u64;
        let m = self.mant;
        let mut digits = [0u32; 8];
        for (k, d) in digits[..4].iter_mut().enumerate() {
            *d = (m >> (96 - 32 * k)) as u32;
        }
        let mut rem: u64 = 0;
        for d in digits.iter_mut() {
            let cur = (rem << 32) | *d as u64;
            *d = (cur / j) as u32;
            rem = cur % j;
        }
        let pack = |ds: &[u32]| ds.iter().fold(0u128, |acc, &d| (acc << 32) | d as u128);
        let hi = pack(&digits[..4]);
        let lo = pack(&digits[4..]);
        F128::round_pack(self.neg, self.exp, hi, lo, rem != 0)
    }

    /// Total order on finite values with `-0 == +0`.
    pub fn partial_cmp(&self, other: &F128) -> Ordering {
        if self.is_zero() && other.is_zero() {
            return Ordering::Equal;
        }
        let sign = |v: &F128| if v.is_zero() { 0 } else if v.neg { -1 } else { 1 };
        match sign(self).cmp(&sign(other)) {
            Ordering::Equal => {
                let mag = self.cmp_abs(other);
                if self.neg {
                    mag.reverse()
                } else {
                    mag
                }
            }
            o => o,
        }
    }

    pub fn lt(&self, other: &F128) -> bool {
        self.partial_cmp(other) == Ordering::Less
    }

    /// Exact conversion from a finite 128-bit MPFR value.
    pub fn from_float(f: &Float) -> F128 {
        assert_eq!(f.prec(), BITS, "two-limb conversion needs a 128-bit value");
        assert!(f.is_finite(), "non-finite value in fixed-width kernel");
        let neg = f.is_sign_negative();
        if f.is_zero() {
            return F128::zero(neg);
        }
        // SAFETY: a finite, non-zero 128-bit MPFR value owns exactly two
        // initialized 64-bit limbs (checked by `supported`), least
        // significant first.
        unsafe {
            let raw = &*f.as_raw();
            let limbs = std::slice::from_raw_parts(raw.d.as_ptr(), 2);
            F128 {
                mant: ((limbs[1] as u128) << 64) | limbs[0] as u128,
                exp: raw.exp as i64,
                neg,
            }
        }
    }

    /// Exact conversion into a 128-bit MPFR value.
    pub fn write_to(&self, out: &mut Float) {
        assert_eq!(out.prec(), BITS, "two-limb conversion needs a 128-bit target");
        // SAFETY: `out` is a 128-bit MPFR value and therefore owns two
        // limbs; exponents produced here stay far inside MPFR's default
        // range (checked below) so the written value is a valid number.
        unsafe {
            let raw = out.as_raw_mut();
            if self.is_zero() {
                mpfr::set_zero(raw, if self.neg { -1 } else { 1 });
                return;
            }
            assert!(
                self.exp >= mpfr::get_emin() as i64 && self.exp <= mpfr::get_emax() as i64,
                "exponent outside MPFR range"
            );
            let limbs = std::slice::from_raw_parts_mut((*raw).d.as_ptr(), 2);
            limbs[0] = self.mant as u64;
            limbs[1] = (self.mant >> 64) as u64;
            (*raw).exp = self.exp as mpfr::exp_t;
            (*raw).sign = if self.neg { -1 } else { 1 };
        }
    }
}
