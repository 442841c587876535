//! Taylor coefficients of `X' = A X + Phi(X)` by the quadratic-convolution
//! recurrence
//!
//! ```text
//! U_j = (A U_{j-1} + Psi_{j-1}) / j,   psi_{i,p} = sum_{k=0..i} <Q_p U_k, U_{i-k}>
//! ```
//!
//! truncated at the first degree `i` with `‖U_i‖₁ |dt|^i < eps_pw`. A
//! coefficient that is exactly zero does not end the expansion on its own:
//! it does so only at an equilibrium or as the start of `n + 1` zeros.

use rug::{Assign, Float};

use crate::error::{Error, Result};
use crate::precision::Real;
use crate::limb128::{self, F128};
use crate::qsystem::{Kernel, QuadSystem};

/// Guard against runaway expansion when `eps_pw` is unreachable.
pub const DEFAULT_MAX_DEGREE: usize = 1000;

/// Coefficients `U_0..U_m` of a local expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesState {
    coeffs: Vec<Vec<Real>>,
}

impl SeriesState {
    pub fn coeffs(&self) -> &[Vec<Real>] {
        &self.coeffs
    }

    /// Truncation degree `m` (the local polynomial degree).
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Horner evaluation of `sum_i U_i t^i`, highest degree first.
    pub fn eval_poly(&self, t: &Real) -> Vec<Real> {
        let n = self.coeffs[0].len();
        let m = self.degree();
        (0..n)
            .map(|p| {
                let mut acc = self.coeffs[m][p].as_float().clone();
                for i in (0..m).rev() {
                    acc *= t.as_float();
                    acc += self.coeffs[i][p].as_float();
                }
                Real::from_float(acc)
            })
            .collect()
    }
}

/// `Psi_i` by the literal double sum over `<Q_p U_k, U_{i-k}>`.
pub fn convolution_term(sys: &QuadSystem, coeffs: &[Vec<Real>], i: usize) -> Vec<Real> {
    let n = sys.dim();
    let ctx = sys.context();
    (0..n)
        .map(|p| {
            let q = sys.quadratic(p);
            let mut acc = ctx.float();
            for k in 0..=i {
                let (u, v) = (&coeffs[k], &coeffs[i - k]);
                for r in 0..n {
                    let mut row = ctx.float();
                    for c in 0..n {
                        row += q.get(r, c).as_float() * v[c].as_float();
                    }
                    acc += row * u[r].as_float();
                }
            }
            Real::from_float(acc)
        })
        .collect()
}

/// `U_j` from `U_0..U_{j-1}`, with `j = coeffs.len()`.
pub fn next_coefficient(sys: &QuadSystem, coeffs: &[Vec<Real>]) -> Result<Vec<Real>> {
    let j = coeffs.len();
    if j == 0 {
        return Err(Error::invalid("at least the initial coefficient is required"));
    }
    for c in coeffs {
        if c.len() != sys.dim() {
            return Err(Error::DimensionMismatch {
                expected: sys.dim(),
                got: c.len(),
            });
        }
    }
    let mut ex = Expansion::new(sys);
    ex.load(coeffs);
    ex.push_next();
    Ok(ex.coefficient(j))
}

/// Expands at `x0` until `‖U_i‖₁ |dt|^i < eps_pw`.
pub fn truncate(
    sys: &QuadSystem,
    x0: &[Real],
    dt: &Real,
    eps_pw: &Real,
    max_degree: usize,
) -> Result<SeriesState> {
    if x0.len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            got: x0.len(),
        });
    }
    let mut ex = Expansion::new(sys);
    let x: Vec<Float> = x0.iter().map(|v| v.as_float().clone()).collect();
    ex.expand(&x, dt.as_float(), eps_pw.as_float(), max_degree)?;
    Ok(ex.to_state())
}

/// Scalar operations used by the expansion kernel. Each is a single
/// correctly rounded operation, so every implementation at the same
/// precision produces identical bits.
pub(crate) trait Scalar: Clone {
    fn load(src: &Float) -> Self;
    fn store(&self, out: &mut Float);
    fn set(&mut self, v: &Self);
    fn set_zero(&mut self);
    /// `self = a * b`
    fn set_mul(&mut self, a: &Self, b: &Self);
    fn add_assign(&mut self, v: &Self);
    fn mul_assign(&mut self, v: &Self);
    fn div_assign_u32(&mut self, j: u32);
    fn add_abs(&mut self, v: &Self);
    fn mul_abs(&mut self, v: &Self);
    fn less_than(&self, v: &Self) -> bool;
    fn is_zero(&self) -> bool;
}

impl Scalar for Float {
    fn load(src: &Float) -> Self {
        src.clone()
    }
    fn store(&self, out: &mut Float) {
        out.assign(self);
    }
    fn set(&mut self, v: &Self) {
        self.assign(v);
    }
    fn set_zero(&mut self) {
        self.assign(0);
    }
    fn set_mul(&mut self, a: &Self, b: &Self) {
        self.assign(a * b);
    }
    fn add_assign(&mut self, v: &Self) {
        *self += v;
    }
    fn mul_assign(&mut self, v: &Self) {
        *self *= v;
    }
    fn div_assign_u32(&mut self, j: u32) {
        *self /= j;
    }
    fn add_abs(&mut self, v: &Self) {
        *self += &*v.as_abs();
    }
    fn mul_abs(&mut self, v: &Self) {
        *self *= &*v.as_abs();
    }
    fn less_than(&self, v: &Self) -> bool {
        self < v
    }
    fn is_zero(&self) -> bool {
        Float::is_zero(self)
    }
}

impl Scalar for F128 {
    fn load(src: &Float) -> Self {
        F128::from_float(src)
    }
    fn store(&self, out: &mut Float) {
        self.write_to(out);
    }
    fn set(&mut self, v: &Self) {
        *self = *v;
    }
    fn set_zero(&mut self) {
        *self = F128::ZERO;
    }
    fn set_mul(&mut self, a: &Self, b: &Self) {
        *self = a.mul(*b);
    }
    fn add_assign(&mut self, v: &Self) {
        *self = self.add(*v);
    }
    fn mul_assign(&mut self, v: &Self) {
        *self = self.mul(*v);
    }
    fn div_assign_u32(&mut self, j: u32) {
        *self = self.div_u32(j);
    }
    fn add_abs(&mut self, v: &Self) {
        *self = self.add(v.abs());
    }
    fn mul_abs(&mut self, v: &Self) {
        *self = self.mul(v.abs());
    }
    fn less_than(&self, v: &Self) -> bool {
        self.lt(v)
    }
    fn is_zero(&self) -> bool {
        F128::is_zero(self)
    }
}

/// Coefficient workspace over one scalar type; allocation-free once warm.
#[derive(Debug, Clone)]
struct Core<S> {
    n: usize,
    linear: Vec<(usize, usize, S)>,
    pairs: Vec<(usize, usize)>,
    terms: Vec<(usize, usize, S)>,
    zero: S,
    one: S,
    /// Flat storage, coefficient `i` at `[i*n, (i+1)*n)`.
    coeffs: Vec<S>,
    len: usize,
    conv: Vec<S>,
    norm: S,
    dtpow: S,
    term: S,
    prod: S,
    dt: S,
    eps: S,
}

impl<S: Scalar> Core<S> {
    fn new(k: &Kernel, n: usize, zero: S, one: S) -> Self {
        Self {
            one,
            n,
            linear: k.linear.iter().map(|(r, c, v)| (*r, *c, S::load(v))).collect(),
            pairs: k.pairs.clone(),
            terms: k.terms.iter().map(|(p, i, v)| (*p, *i, S::load(v))).collect(),
            coeffs: Vec::new(),
            len: 0,
            conv: vec![zero.clone(); k.pairs.len()],
            norm: zero.clone(),
            dtpow: zero.clone(),
            term: zero.clone(),
            prod: zero.clone(),
            dt: zero.clone(),
            eps: zero.clone(),
            zero,
        }
    }

    fn reserve(&mut self, len: usize) {
        while self.coeffs.len() < len * self.n {
            self.coeffs.push(self.zero.clone());
        }
    }

    fn load(&mut self, coeffs: &[Vec<Real>]) {
        self.len = 0;
        for c in coeffs {
            self.reserve(self.len + 1);
            for (slot, v) in self.coeffs[self.len * self.n..].iter_mut().zip(c) {
                *slot = S::load(v.as_float());
            }
            self.len += 1;
        }
    }

    fn coefficient(&self, i: usize, prec: u32) -> Vec<Real> {
        self.coeffs[i * self.n..(i + 1) * self.n]
            .iter()
            .map(|v| {
                let mut f = Float::new(prec);
                v.store(&mut f);
                Real::from_float(f)
            })
            .collect()
    }

    /// Appends `U_len` computed from the stored coefficients.
    fn push_next(&mut self) {
        let n = self.n;
        let i = self.len - 1;
        for (slot, &(r, c)) in self.conv.iter_mut().zip(&self.pairs) {
            slot.set_zero();
            for j in 0..=i {
                let u = &self.coeffs[j * n + r];
                let v = &self.coeffs[(i - j) * n + c];
                self.prod.set_mul(u, v);
                slot.add_assign(&self.prod);
            }
        }
        self.reserve(self.len + 1);
        let (prev, next) = self.coeffs.split_at_mut(self.len * n);
        let prev = &prev[i * n..];
        let next = &mut next[..n];
        for slot in next.iter_mut() {
            slot.set_zero();
        }
        for (row, col, a) in &self.linear {
            self.prod.set_mul(a, &prev[*col]);
            next[*row].add_assign(&self.prod);
        }
        for (p, pair, q) in &self.terms {
            self.prod.set_mul(q, &self.conv[*pair]);
            next[*p].add_assign(&self.prod);
        }
        let j = self.len as u32;
        for slot in next.iter_mut() {
            slot.div_assign_u32(j);
        }
        self.len += 1;
    }

    fn expand(&mut self, x: &[Float], dt: &Float, eps_pw: &Float, max_degree: usize) -> Result<usize> {
        self.reserve(1);
        for (slot, v) in self.coeffs.iter_mut().zip(x) {
            *slot = S::load(v);
        }
        self.dt = S::load(dt);
        self.eps = S::load(eps_pw);
        self.len = 1;
        self.dtpow.set(&self.one);
        let mut zero_run = 0;
        loop {
            if self.len > max_degree {
                return Err(Error::Truncation {
                    max_degree,
                    dt: dt.to_string_radix(10, Some(12)),
                    eps_pw: eps_pw.to_string_radix(10, Some(6)),
                });
            }
            self.push_next();
            let i = self.len - 1;
            self.dtpow.mul_abs(&self.dt);
            self.norm.set_zero();
            for v in &self.coeffs[i * self.n..(i + 1) * self.n] {
                self.norm.add_abs(v);
            }
            if self.norm.is_zero() {
                // An exactly zero coefficient says nothing about the tail
                // (odd solutions vanish at every even degree). Accept it
                // only at an equilibrium (U_1 = 0 forces all later terms to
                // zero) or once `n + 1` consecutive coefficients vanish.
                zero_run += 1;
                if i == 1 || zero_run > self.n {
                    self.len -= zero_run - 1;
                    return Ok(i + 1 - zero_run);
                }
                continue;
            }
            zero_run = 0;
            self.term.set_mul(&self.norm, &self.dtpow);
            if self.term.less_than(&self.eps) {
                return Ok(i);
            }
        }
    }

    fn eval_into(&mut self, t: &Float, out: &mut [Float]) {
        let n = self.n;
        let m = self.len - 1;
        self.dt = S::load(t);
        for (p, slot) in out.iter_mut().enumerate() {
            self.prod.set(&self.coeffs[m * n + p]);
            for i in (0..m).rev() {
                self.prod.mul_assign(&self.dt);
                self.prod.add_assign(&self.coeffs[i * n + p]);
            }
            self.prod.store(slot);
        }
    }
}

#[derive(Debug, Clone)]
enum Backend {
    Mpfr(Core<Float>),
    Limb(Core<F128>),
}

macro_rules! dispatch {
    ($self:expr, $core:ident => $body:expr) => {
        match &mut $self.backend {
            Backend::Mpfr($core) => $body,
            Backend::Limb($core) => $body,
        }
    };
}

/// Reusable series workspace. At 128 bits it runs on the two-limb
/// [`F128`] kernel; otherwise on MPFR. Both give identical results.
#[derive(Debug, Clone)]
pub(crate) struct Expansion {
    prec: u32,
    backend: Backend,
}

impl Expansion {
    pub fn new(sys: &QuadSystem) -> Self {
        let prec = sys.context().mantissa_bits();
        Self::with_backend(sys, limb128::supported(prec))
    }

    pub(crate) fn with_backend(sys: &QuadSystem, fast: bool) -> Self {
        let prec = sys.context().mantissa_bits();
        let n = sys.dim();
        let backend = if fast && limb128::supported(prec) {
            Backend::Limb(Core::new(&sys.kernel, n, F128::ZERO, F128::load(&Float::with_val(prec, 1))))
        } else {
            Backend::Mpfr(Core::new(&sys.kernel, n, Float::new(prec), Float::with_val(prec, 1)))
        };
        Self { prec, backend }
    }

    pub fn load(&mut self, coeffs: &[Vec<Real>]) {
        dispatch!(self, c => c.load(coeffs))
    }

    pub fn degree(&self) -> usize {
        match &self.backend {
            Backend::Mpfr(c) => c.len - 1,
            Backend::Limb(c) => c.len - 1,
        }
    }

    pub fn coefficient(&self, i: usize) -> Vec<Real> {
        match &self.backend {
            Backend::Mpfr(c) => c.coefficient(i, self.prec),
            Backend::Limb(c) => c.coefficient(i, self.prec),
        }
    }

    pub fn to_state(&self) -> SeriesState {
        SeriesState {
            coeffs: (0..=self.degree()).map(|i| self.coefficient(i)).collect(),
        }
    }

    pub fn push_next(&mut self) {
        dispatch!(self, c => c.push_next())
    }

    /// Expands at `x` for a step `dt`, returning the truncation degree.
    pub fn expand(&mut self, x: &[Float], dt: &Float, eps_pw: &Float, max_degree: usize) -> Result<usize> {
        dispatch!(self, c => c.expand(x, dt, eps_pw, max_degree))
    }

    /// Horner evaluation at `t` into `out`.
    pub fn eval_into(&mut self, t: &Float, out: &mut [Float]) {
        dispatch!(self, c => c.eval_into(t, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precision::PrecisionContext;
    use crate::qsystem::{Matrix, TrappingBall};

    fn square(ctx: PrecisionContext) -> QuadSystem {
        let q = vec![Matrix::from_rows(vec![vec![ctx.one()]]).unwrap()];
        let ball = TrappingBall::new(vec![ctx.zero()], ctx.from_i64(100)).unwrap();
        QuadSystem::new(Matrix::zeros(ctx, 1), q, ball).unwrap()
    }

    fn linear2(ctx: PrecisionContext) -> QuadSystem {
        let a = Matrix::from_rows(vec![
            vec![ctx.parse("-0.5").unwrap(), ctx.from_i64(2)],
            vec![ctx.from_i64(-3), ctx.parse("0.25").unwrap()],
        ])
        .unwrap();
        let ball = TrappingBall::new(vec![ctx.zero(); 2], ctx.from_i64(100)).unwrap();
        QuadSystem::new(a, vec![Matrix::zeros(ctx, 2); 2], ball).unwrap()
    }

    #[test]
    fn geometric_coefficients_for_square() {
        let ctx = PrecisionContext::default();
        let sys = square(ctx);
        let mut coeffs = vec![vec![ctx.from_i64(2)]];
        for j in 1..=10 {
            let next = next_coefficient(&sys, &coeffs).unwrap();
            assert_eq!(next[0], ctx.from_i64(1 << (j + 1)), "degree {j}");
            coeffs.push(next);
        }
    }

    #[test]
    fn linear_system_gives_exponential_series() {
        let ctx = PrecisionContext::default();
        let sys = linear2(ctx);
        let x0 = ctx.parse_vector("1.5,-0.75").unwrap();
        let mut coeffs = vec![x0.clone()];
        // oracle: A^j x0 / j! by repeated matrix-vector products
        let mut power = x0;
        let mut fact = ctx.one();
        for j in 1..=12 {
            let a = sys.linear();
            power = (0..2)
                .map(|r| &(a.get(r, 0) * &power[0]) + &(a.get(r, 1) * &power[1]))
                .collect();
            fact = &fact * &ctx.from_i64(j);
            let next = next_coefficient(&sys, &coeffs).unwrap();
            for p in 0..2 {
                let expected = &power[p] / &fact;
                let err = (&next[p] - &expected).abs();
                let tol = &expected.abs() * &(&ctx.machine_epsilon() * &ctx.from_i64(64));
                assert!(err <= tol, "j={j} p={p}: {next:?} vs {expected:?}");
            }
            coeffs.push(next);
        }
    }

    #[test]
    fn zero_state_is_fixed() {
        let ctx = PrecisionContext::default();
        let sys = linear2(ctx);
        let zero = vec![ctx.zero(); 2];
        let state = truncate(&sys, &zero, &ctx.parse("0.1").unwrap(), &ctx.pow10(-20), 50).unwrap();
        assert_eq!(state.degree(), 1);
        assert!(state.coeffs()[1].iter().all(Real::is_zero));
    }

    #[test]
    fn square_truncation_degree() {
        let ctx = PrecisionContext::default();
        let sys = square(ctx);
        let x0 = [ctx.parse("0.5").unwrap()];
        let dt = ctx.parse("0.1").unwrap();
        let eps = ctx.pow10(-20);
        // oracle: first i with 0.5^(i+1) 0.1^i < 1e-20, scanned directly
        let mut expected = 0;
        for i in 1..100 {
            let term = &ctx.parse("0.5").unwrap().powi(i + 1) * &dt.powi(i);
            if term < eps {
                expected = i as usize;
                break;
            }
        }
        assert_eq!(expected, 16);
        let state = truncate(&sys, &x0, &dt, &eps, 1000).unwrap();
        assert_eq!(state.degree(), expected);

        let value = state.eval_poly(&dt);
        let exact = &ctx.from_i64(10) / &ctx.from_i64(19);
        assert!((&value[0] - &exact).abs() < ctx.pow10(-20));
        assert_eq!(state.eval_poly(&ctx.zero())[0], x0[0]);
    }

    /// `x' = 1 + x^2` written as `x' = c^2 + x^2, c' = 0`.
    fn tangent(ctx: PrecisionContext) -> QuadSystem {
        let q = vec![
            Matrix::from_rows(vec![vec![ctx.one(), ctx.zero()], vec![ctx.zero(), ctx.one()]]).unwrap(),
            Matrix::zeros(ctx, 2),
        ];
        let ball = TrappingBall::new(vec![ctx.zero(); 2], ctx.from_i64(100)).unwrap();
        QuadSystem::new(Matrix::zeros(ctx, 2), q, ball).unwrap()
    }

    #[test]
    fn zero_even_coefficients_do_not_stop_odd_series() {
        let ctx = PrecisionContext::default();
        let sys = tangent(ctx);
        let x0 = ctx.parse_vector("0,1").unwrap();
        let dt = ctx.parse("0.25").unwrap();
        let state = truncate(&sys, &x0, &dt, &ctx.pow10(-20), 1000).unwrap();
        assert!(state.degree() > 20, "degree {}", state.degree());
        assert!(state.coeffs()[2].iter().all(Real::is_zero));
        // tan(0.25)
        let exact = ctx.parse("0.25534192122103626650").unwrap();
        assert!((&state.eval_poly(&dt)[0] - &exact).abs() < ctx.pow10(-19));
    }

    #[test]
    fn polynomial_solution_ends_after_a_run_of_zeros() {
        let ctx = PrecisionContext::default();
        // x' = c^2 with c = 1: x = x0 + t
        let q = vec![
            Matrix::from_rows(vec![vec![ctx.zero(), ctx.zero()], vec![ctx.zero(), ctx.one()]]).unwrap(),
            Matrix::zeros(ctx, 2),
        ];
        let ball = TrappingBall::new(vec![ctx.zero(); 2], ctx.from_i64(100)).unwrap();
        let sys = QuadSystem::new(Matrix::zeros(ctx, 2), q, ball).unwrap();
        let x0 = ctx.parse_vector("0.5,1").unwrap();
        let state = truncate(&sys, &x0, &ctx.parse("0.1").unwrap(), &ctx.pow10(-20), 50).unwrap();
        assert_eq!(state.degree(), 2);
        assert_eq!(state.coeffs().len(), 3);
    }

    #[test]
    fn truncation_failure_reported() {
        let ctx = PrecisionContext::default();
        let sys = square(ctx);
        // outside the radius of convergence 1/x0 the terms grow
        let err = truncate(
            &sys,
            &[ctx.from_i64(2)],
            &ctx.one(),
            &ctx.pow10(-20),
            30,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Truncation { max_degree: 30, .. }));
    }

    #[test]
    fn first_coefficient_is_the_vector_field() {
        let ctx = PrecisionContext::default();
        let sys = crate::qsystem::QuadSystem::from_json_str(
            crate::qsystem::bundled::DONG2019,
            "dong",
            ctx,
        )
        .unwrap();
        let x0 = ctx.parse_vector("10,-27.2011,10,10").unwrap();
        let u1 = next_coefficient(&sys, &[x0.clone()]).unwrap();
        assert_eq!(u1, sys.eval_rhs(&x0).unwrap());
    }

    fn random_system(ctx: PrecisionContext, n: usize, rng: &mut impl rand::Rng) -> QuadSystem {
        let entry = |rng: &mut dyn rand::RngCore| ctx.from_f64(rand::Rng::gen_range(rng, -2.0..2.0));
        let matrix = |rng: &mut dyn rand::RngCore| {
            Matrix::from_rows((0..n).map(|_| (0..n).map(|_| entry(rng)).collect()).collect()).unwrap()
        };
        let a = matrix(rng);
        let q = (0..n).map(|_| matrix(rng)).collect();
        let ball = TrappingBall::new(vec![ctx.zero(); n], ctx.from_i64(1000)).unwrap();
        QuadSystem::new(a, q, ball).unwrap()
    }

    /// Brute force: multiply the truncated component polynomials in full at
    /// high precision and read off coefficient `i` of `Phi_p(U(t))`.
    fn poly_oracle(sys: &QuadSystem, coeffs: &[Vec<Real>], i: usize, prec: u32) -> (Vec<Float>, Vec<Float>) {
        let n = sys.dim();
        let d = coeffs.len() - 1;
        let poly = |c: usize| -> Vec<Float> {
            coeffs.iter().map(|u| Float::with_val(prec, u[c].as_float())).collect()
        };
        let mut value = vec![Float::new(prec); n];
        let mut scale = vec![Float::new(prec); n];
        for r in 0..n {
            for c in 0..n {
                let (ur, uc) = (poly(r), poly(c));
                let mut prod = vec![Float::new(prec); 2 * d + 1];
                let mut abs = vec![Float::new(prec); 2 * d + 1];
                for (k, x) in ur.iter().enumerate() {
                    for (l, y) in uc.iter().enumerate() {
                        prod[k + l] += Float::with_val(prec, x * y);
                        abs[k + l] += Float::with_val(prec, x * y).abs();
                    }
                }
                for p in 0..n {
                    let q = sys.quadratic(p).get(r, c).as_float();
                    value[p] += Float::with_val(prec, q * &prod[i]);
                    scale[p] += Float::with_val(prec, q * &abs[i]).abs();
                }
            }
        }
        (value, scale)
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn convolution_matches_polynomial_product(seed in proptest::prelude::any::<u64>(), n in 1usize..=3, deg in 0usize..=8) {
            use rand::SeedableRng;
            let ctx = PrecisionContext::default();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let sys = random_system(ctx, n, &mut rng);
            let coeffs: Vec<Vec<Real>> = (0..=deg)
                .map(|_| (0..n).map(|_| ctx.from_f64(rand::Rng::gen_range(&mut rng, -3.0..3.0))).collect())
                .collect();
            let tol = Float::with_val(1024, ctx.machine_epsilon().as_float() * 10u32);
            for i in 0..=deg {
                let psi = convolution_term(&sys, &coeffs, i);
                let (exact, scale) = poly_oracle(&sys, &coeffs, i, 1024);
                for p in 0..n {
                    let err = Float::with_val(1024, psi[p].as_float() - &exact[p]).abs();
                    let bound = Float::with_val(1024, &tol * &scale[p]);
                    proptest::prop_assert!(err <= bound, "i={} p={}: {} vs {}", i, p, psi[p].to_decimal(), exact[p]);
                }
            }
            // the fast kernel's next coefficient agrees with the literal recurrence
            let next = next_coefficient(&sys, &coeffs).unwrap();
            let psi = convolution_term(&sys, &coeffs, deg);
            let j = ctx.from_i64(deg as i64 + 1);
            for p in 0..n {
                let mut lin = ctx.zero();
                let mut scale = ctx.zero();
                for c in 0..n {
                    let t = sys.linear().get(p, c) * &coeffs[deg][c];
                    scale = &scale + &t.abs();
                    lin = &lin + &t;
                }
                let expected = &(&lin + &psi[p]) / &j;
                let (_, conv_scale) = poly_oracle(&sys, &coeffs, deg, 1024);
                let bound = Float::with_val(1024, scale.as_float() + &conv_scale[p]) * &tol * 2u32;
                let err = Float::with_val(1024, next[p].as_float() - expected.as_float()).abs();
                proptest::prop_assert!(err <= bound, "p={}", p);
            }
        }
    }

    fn assert_backends_agree(sys: &QuadSystem, x: &[Float], dt: &Float, eps: &Float) {
        let mut fast = Expansion::with_backend(sys, true);
        let mut slow = Expansion::with_backend(sys, false);
        assert!(matches!(fast.backend, Backend::Limb(_)));
        assert!(matches!(slow.backend, Backend::Mpfr(_)));
        let m = fast.expand(x, dt, eps, 400).unwrap();
        assert_eq!(m, slow.expand(x, dt, eps, 400).unwrap());
        assert_eq!(fast.to_state(), slow.to_state());
        let mut a = vec![Float::new(128); x.len()];
        let mut b = a.clone();
        for frac in [0.0, 0.3, 0.5, 1.0] {
            let t = Float::with_val(128, dt * Float::with_val(128, frac));
            fast.eval_into(&t, &mut a);
            slow.eval_into(&t, &mut b);
            assert_eq!(a, b);
            // bit patterns, not just values: signed zeros must match too
            for (u, v) in a.iter().zip(&b) {
                assert_eq!(u.is_sign_negative(), v.is_sign_negative());
            }
        }
    }

    #[test]
    fn limb_backend_is_bit_identical_on_dong() {
        let ctx = PrecisionContext::default();
        if !limb128::supported(ctx.mantissa_bits()) {
            return;
        }
        let sys = QuadSystem::from_json_str(crate::qsystem::bundled::DONG2019, "dong", ctx).unwrap();
        let x: Vec<Float> = ctx
            .parse_vector("10,-27.2011,10,10")
            .unwrap()
            .iter()
            .map(|v| v.as_float().clone())
            .collect();
        let bounds = sys.compute_bounds(&ctx.parse_vector("10,-27.2011,10,10").unwrap(), &ctx.pow10(-6)).unwrap();
        let dt = bounds.tau.as_float().clone();
        assert_backends_agree(&sys, &x, &dt, ctx.pow10(-30).as_float());
        let neg = Float::with_val(128, -&dt);
        assert_backends_agree(&sys, &x, &neg, ctx.pow10(-30).as_float());
    }

    #[test]
    fn limb_backend_is_bit_identical_on_random_systems() {
        use rand::SeedableRng;
        let ctx = PrecisionContext::default();
        if !limb128::supported(ctx.mantissa_bits()) {
            return;
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in 1..=4 {
            for _ in 0..10 {
                let sys = random_system(ctx, n, &mut rng);
                let x0: Vec<Real> = (0..n).map(|_| ctx.from_f64(rand::Rng::gen_range(&mut rng, -3.0..3.0))).collect();
                let x: Vec<Float> = x0.iter().map(|v| v.as_float().clone()).collect();
                let tau = sys.compute_bounds(&x0, &ctx.pow10(-6)).unwrap().tau;
                assert_backends_agree(&sys, &x, tau.as_float(), ctx.pow10(-35).as_float());
            }
        }
    }
}
