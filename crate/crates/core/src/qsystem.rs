//! Autonomous quadratic systems `X' = A X + Phi(X)` with
//! `phi_p(X) = <Q_p X, X>`.
//!
//! Besides the model itself this module computes the convergence-step
//! bounds of the power-series solution, builds the 2n-dimensional
//! variational extension used for Lyapunov exponents, and reads/writes the
//! JSON system-definition format.

use std::fs;
use std::path::Path;

use rug::{Assign, Float};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::precision::{PrecisionContext, Real};

/// Default `delta` in `tau = 1 / (h2 + delta)`.
pub const DEFAULT_DELTA: &str = "1e-3";

/// Radius added to the trapping ball of a variational extension. The
/// perturbation block is renormalized to unit length every macro-step.
pub const EXTENSION_BALL_MARGIN: i64 = 2;

/// Square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<Real>,
}

impl Matrix {
    pub fn zeros(ctx: PrecisionContext, n: usize) -> Self {
        Self {
            n,
            data: vec![ctx.zero(); n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<Real>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid(format!(
                    "matrix is not square: row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> &Real {
        &self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Real) {
        self.data[i * self.n + j] = v;
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Real]> {
        self.data.chunks(self.n.max(1))
    }

    /// Induced 1-norm: maximum absolute column sum.
    pub fn norm1(&self, ctx: PrecisionContext) -> Real {
        let mut best = ctx.zero();
        for j in 0..self.n {
            let mut col = ctx.float();
            for i in 0..self.n {
                col += &*self.get(i, j).as_float().as_abs();
            }
            let col = Real::from_float(col);
            if col > best {
                best = col;
            }
        }
        best
    }

    fn is_zero(&self) -> bool {
        self.data.iter().all(Real::is_zero)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrappingBall {
    center: Vec<Real>,
    radius: Real,
}

impl TrappingBall {
    pub fn new(center: Vec<Real>, radius: Real) -> Result<Self> {
        if radius.is_zero() || radius.is_sign_negative() {
            return Err(Error::invalid("trapping ball radius must be positive"));
        }
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> &[Real] {
        &self.center
    }

    pub fn radius(&self) -> &Real {
        &self.radius
    }

    pub fn contains(&self, x: &[Real]) -> bool {
        self.distance(x) <= self.radius
    }

    /// Euclidean distance from the center over the leading `x.len()`
    /// coordinates.
    pub fn distance(&self, x: &[Real]) -> Real {
        crate::precision::dist2(x, &self.center[..x.len()])
    }
}

/// Norms and step bound of the convergence theorem for one expansion point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceBounds {
    pub norm_a: Real,
    pub mu: Real,
    pub h1: Real,
    pub h2: Real,
    pub tau: Real,
    pub delta: Real,
}

/// Sparse form of `A` and the quadratic forms used by the series engine.
///
/// The Cauchy product `sum_j <Q_p U_j, U_{i-j}>` only depends on the
/// symmetric part of `Q_p`, so each unordered coordinate pair `(r, c)`,
/// `r <= c`, is convolved once and shared by every equation using it.
#[derive(Debug, Clone)]
pub(crate) struct Kernel {
    pub linear: Vec<(usize, usize, Float)>,
    pub pairs: Vec<(usize, usize)>,
    /// `(equation, pair index, coefficient)`.
    pub terms: Vec<(usize, usize, Float)>,
    pub norm_a: Float,
    pub mu: Float,
}

impl Kernel {
    fn build(ctx: PrecisionContext, a: &Matrix, q: &[Matrix]) -> Self {
        let n = a.dim();
        let mut linear = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let v = a.get(i, j);
                if !v.is_zero() {
                    linear.push((i, j, v.as_float().clone()));
                }
            }
        }
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut terms = Vec::new();
        for (p, qp) in q.iter().enumerate() {
            for r in 0..n {
                for c in r..n {
                    let mut coef = qp.get(r, c).as_float().clone();
                    if r != c {
                        coef += qp.get(c, r).as_float();
                    }
                    if coef.is_zero() {
                        continue;
                    }
                    let idx = match pairs.iter().position(|&pc| pc == (r, c)) {
                        Some(i) => i,
                        None => {
                            pairs.push((r, c));
                            pairs.len() - 1
                        }
                    };
                    terms.push((p, idx, coef));
                }
            }
        }
        let norm_a = a.norm1(ctx).0;
        let mut max_q = ctx.float();
        for qp in q {
            let v = qp.norm1(ctx).0;
            if v > max_q {
                max_q = v;
            }
        }
        let mu = max_q * n as u32;
        Self {
            linear,
            pairs,
            terms,
            norm_a,
            mu,
        }
    }

    /// Writes `h1 = ‖x‖₁`, `h2` and `tau = 1 / (h2 + delta)`.
    pub fn bounds_into(
        &self,
        x: &[Float],
        delta: &Float,
        h1: &mut Float,
        h2: &mut Float,
        tau: &mut Float,
    ) {
        h1.assign(0);
        for v in x {
            *h1 += &*v.as_abs();
        }
        if *h1 > 1 {
            // mu*h1^2 + (|A| + 2 mu) h1, evaluated as h1 * (mu*h1 + |A| + 2 mu)
            h2.assign(&self.mu * &*h1);
            *h2 += &self.norm_a;
            *h2 += &self.mu;
            *h2 += &self.mu;
            *h2 *= &*h1;
        } else {
            h2.assign(&self.norm_a + &self.mu);
        }
        tau.assign(&*h2 + delta);
        tau.recip_mut();
    }
}

#[derive(Debug, Clone)]
pub struct QuadSystem {
    ctx: PrecisionContext,
    name: Option<String>,
    params: Option<Value>,
    a: Matrix,
    q: Vec<Matrix>,
    ball: TrappingBall,
    pub(crate) kernel: Kernel,
}

impl PartialEq for QuadSystem {
    fn eq(&self, other: &Self) -> bool {
        self.ctx == other.ctx
            && self.name == other.name
            && self.params == other.params
            && self.a == other.a
            && self.q == other.q
            && self.ball == other.ball
    }
}

impl QuadSystem {
    pub fn new(a: Matrix, q: Vec<Matrix>, ball: TrappingBall) -> Result<Self> {
        let n = a.dim();
        if n == 0 {
            return Err(Error::invalid("system dimension must be positive"));
        }
        if q.len() != n {
            return Err(Error::invalid(format!(
                "expected {n} quadratic matrices for dimension {n}, found {}",
                q.len()
            )));
        }
        for (p, qp) in q.iter().enumerate() {
            if qp.dim() != n {
                return Err(Error::invalid(format!(
                    "Q[{p}] is {0}x{0}, expected {n}x{n}",
                    qp.dim()
                )));
            }
        }
        if ball.center.len() != n {
            return Err(Error::invalid(format!(
                "ball center has {} coordinates, expected {n}",
                ball.center.len()
            )));
        }
        let ctx = a.data[0].context();
        let all_same = a
            .data
            .iter()
            .chain(q.iter().flat_map(|m| m.data.iter()))
            .chain(ball.center.iter())
            .chain(std::iter::once(&ball.radius))
            .all(|v| v.precision() == ctx.mantissa_bits());
        if !all_same {
            return Err(Error::invalid(
                "system entries carry different precisions",
            ));
        }
        let kernel = Kernel::build(ctx, &a, &q);
        Ok(Self {
            ctx,
            name: None,
            params: None,
            a,
            q,
            ball,
            kernel,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_params(mut self, params: Value) -> Self {
        self.params = Some(params);
        self
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn context(&self) -> PrecisionContext {
        self.ctx
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn params(&self) -> Option<&Value> {
        self.params.as_ref()
    }

    pub fn linear(&self) -> &Matrix {
        &self.a
    }

    pub fn quadratic(&self, p: usize) -> &Matrix {
        &self.q[p]
    }

    pub fn quadratics(&self) -> &[Matrix] {
        &self.q
    }

    pub fn ball(&self) -> &TrappingBall {
        &self.ball
    }

    pub fn is_linear(&self) -> bool {
        self.q.iter().all(Matrix::is_zero)
    }

    /// `‖A‖₁`, the maximum absolute column sum.
    pub fn norm_a(&self) -> Real {
        Real::from_float(self.kernel.norm_a.clone())
    }

    /// `n * max_p ‖Q_p‖₁`.
    pub fn mu(&self) -> Real {
        Real::from_float(self.kernel.mu.clone())
    }

    /// Same system with every entry rounded to another precision.
    pub fn at_precision(&self, ctx: PrecisionContext) -> QuadSystem {
        let conv = |m: &Matrix| Matrix {
            n: m.n,
            data: m.data.iter().map(|v| ctx.adopt(v)).collect(),
        };
        let a = conv(&self.a);
        let q: Vec<Matrix> = self.q.iter().map(conv).collect();
        let ball = TrappingBall {
            center: self.ball.center.iter().map(|v| ctx.adopt(v)).collect(),
            radius: ctx.adopt(&self.ball.radius),
        };
        let kernel = Kernel::build(ctx, &a, &q);
        QuadSystem {
            ctx,
            name: self.name.clone(),
            params: self.params.clone(),
            a,
            q,
            ball,
            kernel,
        }
    }

    fn check_vector(&self, x: &[Real]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if let Some(v) = x.iter().find(|v| v.precision() != self.ctx.mantissa_bits()) {
            return Err(Error::PrecisionMismatch {
                left: self.ctx.mantissa_bits(),
                right: v.precision(),
            });
        }
        Ok(())
    }

    /// `A x + Phi(x)`.
    pub fn eval_rhs(&self, x: &[Real]) -> Result<Vec<Real>> {
        self.check_vector(x)?;
        let mut ex = crate::series::Expansion::new(self);
        ex.load(&[x.to_vec()]);
        ex.push_next();
        Ok(ex.coefficient(1))
    }

    pub fn compute_bounds(&self, x0: &[Real], delta: &Real) -> Result<ConvergenceBounds> {
        self.check_vector(x0)?;
        if delta.is_zero() || delta.is_sign_negative() {
            return Err(Error::invalid("delta must be positive"));
        }
        let delta = self.ctx.adopt(delta);
        let norm_a = self.norm_a();
        let mu = self.mu();
        let x: Vec<Float> = x0.iter().map(|v| v.as_float().clone()).collect();
        let (mut h1, mut h2, mut tau) = (self.ctx.float(), self.ctx.float(), self.ctx.float());
        self.kernel
            .bounds_into(&x, delta.as_float(), &mut h1, &mut h2, &mut tau);
        let (h1, h2, tau) = (Real::from_float(h1), Real::from_float(h2), Real::from_float(tau));
        Ok(ConvergenceBounds {
            norm_a,
            mu,
            h1,
            h2,
            tau,
            delta,
        })
    }

    /// The 2n-dimensional system whose last n coordinates obey the
    /// linearization along the first n.
    pub fn extend_variational(&self) -> QuadSystem {
        let n = self.dim();
        let m = 2 * n;
        let ctx = self.ctx;
        let mut a = Matrix::zeros(ctx, m);
        for i in 0..n {
            for j in 0..n {
                a.set(i, j, self.a.get(i, j).clone());
                a.set(i + n, j + n, self.a.get(i, j).clone());
            }
        }
        let mut q = Vec::with_capacity(m);
        for qp in &self.q {
            let mut ql = Matrix::zeros(ctx, m);
            for i in 0..n {
                for j in 0..n {
                    ql.set(i, j, qp.get(i, j).clone());
                }
            }
            q.push(ql);
        }
        for qp in &self.q {
            let mut ql = Matrix::zeros(ctx, m);
            for i in 0..n {
                for j in n..m {
                    ql.set(i, j, qp.get(i, j - n) + qp.get(j - n, i));
                }
            }
            q.push(ql);
        }
        let mut center = self.ball.center.clone();
        center.extend((0..n).map(|_| ctx.zero()));
        let radius = &self.ball.radius + &ctx.from_i64(EXTENSION_BALL_MARGIN);
        let ball = TrappingBall { center, radius };
        let kernel = Kernel::build(ctx, &a, &q);
        QuadSystem {
            ctx,
            name: self.name.as_ref().map(|s| format!("{s} (variational)")),
            params: self.params.clone(),
            a,
            q,
            ball,
            kernel,
        }
    }

    pub fn to_json(&self) -> Value {
        let mat = |m: &Matrix| -> Value {
            Value::Array(
                m.rows()
                    .map(|r| Value::Array(r.iter().map(|v| json!(v.to_decimal())).collect()))
                    .collect(),
            )
        };
        let mut obj = Map::new();
        if let Some(name) = &self.name {
            obj.insert("name".into(), json!(name));
        }
        obj.insert("n".into(), json!(self.dim()));
        obj.insert("A".into(), mat(&self.a));
        obj.insert("Q".into(), Value::Array(self.q.iter().map(mat).collect()));
        obj.insert(
            "ball".into(),
            json!({
                "center": self.ball.center.iter().map(|v| v.to_decimal()).collect::<Vec<_>>(),
                "radius": self.ball.radius.to_decimal(),
            }),
        );
        if let Some(p) = &self.params {
            obj.insert("params".into(), p.clone());
        }
        Value::Object(obj)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("system json");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str, origin: &str, ctx: PrecisionContext) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::SystemFormat {
            path: origin.to_string(),
            field: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        SystemReader { origin, ctx }.read(&value)
    }
}

/// Reads a system-definition file at the given precision.
pub fn load_system(path: impl AsRef<Path>, ctx: PrecisionContext) -> Result<QuadSystem> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    QuadSystem::from_json_str(&text, &path.display().to_string(), ctx)
}

pub fn save_system(sys: &QuadSystem, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    crate::manifest::write_atomic(path, sys.to_json_string().as_bytes()).map(|_| ())
}

/// Systems shipped with the toolkit, addressable by file name.
pub mod bundled {
    pub const DONG2019: &str = include_str!("../data/dong2019.json");
    pub const RICCATI: &str = include_str!("../data/riccati.json");

    pub fn lookup(name: &str) -> Option<&'static str> {
        let base = name.rsplit('/').next().unwrap_or(name);
        match base {
            "dong2019.json" | "dong2019" => Some(DONG2019),
            "riccati.json" | "riccati" => Some(RICCATI),
            _ => None,
        }
    }
}

struct SystemReader<'a> {
    origin: &'a str,
    ctx: PrecisionContext,
}

impl SystemReader<'_> {
    fn err(&self, field: &str, message: impl Into<String>) -> Error {
        Error::SystemFormat {
            path: self.origin.to_string(),
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn read(&self, v: &Value) -> Result<QuadSystem> {
        let obj = v
            .as_object()
            .ok_or_else(|| self.err("<root>", "expected a JSON object"))?;
        let n = obj
            .get("n")
            .ok_or_else(|| self.err("n", "missing field"))?
            .as_u64()
            .filter(|&n| n > 0)
            .ok_or_else(|| self.err("n", "expected a positive integer"))? as usize;
        let a = self.matrix(obj.get("A"), "A", n)?;
        let q_val = obj
            .get("Q")
            .ok_or_else(|| self.err("Q", "missing field"))?
            .as_array()
            .ok_or_else(|| self.err("Q", "expected an array of matrices"))?;
        if q_val.len() != n {
            return Err(self.err(
                "Q",
                format!("expected {n} matrices for n = {n}, found {}", q_val.len()),
            ));
        }
        let q = q_val
            .iter()
            .enumerate()
            .map(|(p, m)| self.matrix(Some(m), &format!("Q[{p}]"), n))
            .collect::<Result<Vec<_>>>()?;
        let ball = obj
            .get("ball")
            .ok_or_else(|| self.err("ball", "missing field"))?;
        let center = ball
            .get("center")
            .ok_or_else(|| self.err("ball.center", "missing field"))?
            .as_array()
            .ok_or_else(|| self.err("ball.center", "expected an array"))?;
        if center.len() != n {
            return Err(self.err(
                "ball.center",
                format!("expected {n} coordinates, found {}", center.len()),
            ));
        }
        let center = center
            .iter()
            .enumerate()
            .map(|(i, x)| self.number(x, &format!("ball.center[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let radius = self.number(
            ball.get("radius")
                .ok_or_else(|| self.err("ball.radius", "missing field"))?,
            "ball.radius",
        )?;
        let ball =
            TrappingBall::new(center, radius).map_err(|e| self.err("ball.radius", e.to_string()))?;
        let mut sys = QuadSystem::new(a, q, ball).map_err(|e| self.err("<root>", e.to_string()))?;
        if let Some(name) = obj.get("name") {
            let name = name
                .as_str()
                .ok_or_else(|| self.err("name", "expected a string"))?;
            sys = sys.with_name(name);
        }
        if let Some(params) = obj.get("params") {
            sys = sys.with_params(params.clone());
        }
        Ok(sys)
    }

    fn matrix(&self, v: Option<&Value>, field: &str, n: usize) -> Result<Matrix> {
        let rows = v
            .ok_or_else(|| self.err(field, "missing field"))?
            .as_array()
            .ok_or_else(|| self.err(field, "expected an array of rows"))?;
        if rows.len() != n {
            return Err(self.err(field, format!("expected {n} rows, found {}", rows.len())));
        }
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            let row = row
                .as_array()
                .ok_or_else(|| self.err(&format!("{field}[{i}]"), "expected an array"))?;
            if row.len() != n {
                return Err(self.err(
                    &format!("{field}[{i}]"),
                    format!("matrix is not square: expected {n} entries, found {}", row.len()),
                ));
            }
            for (j, x) in row.iter().enumerate() {
                data.push(self.number(x, &format!("{field}[{i}][{j}]"))?);
            }
        }
        Ok(Matrix { n, data })
    }

    fn number(&self, v: &Value, field: &str) -> Result<Real> {
        match v {
            Value::String(s) => self.ctx.parse(s).map_err(|e| self.err(field, e.to_string())),
            Value::Number(num) if num.is_i64() => Ok(self.ctx.from_i64(num.as_i64().unwrap())),
            Value::Number(_) => Err(self.err(
                field,
                "non-integer numbers must be written as decimal strings",
            )),
            _ => Err(self.err(field, "expected a decimal string")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn dong(ctx: PrecisionContext) -> QuadSystem {
        QuadSystem::from_json_str(bundled::DONG2019, "dong2019.json", ctx).unwrap()
    }

    fn scalar_square(ctx: PrecisionContext) -> QuadSystem {
        let a = Matrix::zeros(ctx, 1);
        let q = vec![Matrix::from_rows(vec![vec![ctx.one()]]).unwrap()];
        let ball = TrappingBall::new(vec![ctx.zero()], ctx.from_i64(100)).unwrap();
        QuadSystem::new(a, q, ball).unwrap()
    }

    #[test]
    fn dong_norms() {
        let ctx = PrecisionContext::default();
        let sys = dong(ctx);
        assert_eq!(sys.norm_a(), ctx.from_i64(57));
        assert_eq!(sys.mu(), ctx.from_i64(6));
        let small = ctx.parse_vector("0.25,-0.25,0.25,0.125").unwrap();
        let b = sys.compute_bounds(&small, &ctx.parse("1e-3").unwrap()).unwrap();
        assert_eq!(b.h2, ctx.from_i64(63));
    }

    #[test]
    fn bounds_reject_nonpositive_delta() {
        let ctx = PrecisionContext::default();
        let sys = dong(ctx);
        let x = vec![ctx.zero(); 4];
        assert!(sys.compute_bounds(&x, &ctx.zero()).is_err());
        assert!(sys.compute_bounds(&x, &ctx.from_i64(-1)).is_err());
    }

    #[test]
    fn rhs_at_initial_point() {
        let ctx = PrecisionContext::default();
        let sys = dong(ctx);
        let x = ctx.parse_vector("10,-27.2011,10,10").unwrap();
        let f = sys.eval_rhs(&x).unwrap();
        assert_eq!(f[2], ctx.parse("-302.011").unwrap());
        let zero = vec![ctx.zero(); 4];
        assert!(sys.eval_rhs(&zero).unwrap().iter().all(Real::is_zero));
        assert!(matches!(
            sys.eval_rhs(&zero[..3]),
            Err(Error::DimensionMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn square_rhs() {
        let ctx = PrecisionContext::default();
        let sys = scalar_square(ctx);
        assert_eq!(sys.eval_rhs(&[ctx.from_i64(2)]).unwrap()[0], ctx.from_i64(4));
    }

    #[test]
    fn scalar_extension() {
        let ctx = PrecisionContext::default();
        let ext = scalar_square(ctx).extend_variational();
        assert_eq!(ext.dim(), 2);
        assert_eq!(*ext.quadratic(0).get(0, 0), ctx.one());
        assert_eq!(*ext.quadratic(1).get(0, 1), ctx.from_i64(2));
        assert!(ext.linear().data.iter().all(Real::is_zero));
    }

    #[test]
    fn linear_extension_has_no_quadratic_part() {
        let ctx = PrecisionContext::default();
        let a = Matrix::from_rows(vec![
            vec![ctx.from_i64(-1), ctx.from_i64(2)],
            vec![ctx.from_i64(3), ctx.from_i64(-4)],
        ])
        .unwrap();
        let q = vec![Matrix::zeros(ctx, 2), Matrix::zeros(ctx, 2)];
        let ball = TrappingBall::new(vec![ctx.zero(); 2], ctx.one()).unwrap();
        let ext = QuadSystem::new(a, q, ball).unwrap().extend_variational();
        assert!(ext.is_linear());
        assert_eq!(*ext.linear().get(3, 2), ctx.from_i64(3));
        assert!(ext.linear().get(0, 2).is_zero());
        assert_eq!(*ext.ball().radius(), ctx.from_i64(3));
        assert_eq!(ext.ball().center().len(), 4);
    }

    #[test]
    fn constructor_validates_shapes() {
        let ctx = PrecisionContext::default();
        let a = Matrix::zeros(ctx, 2);
        let ball = TrappingBall::new(vec![ctx.zero(); 2], ctx.one()).unwrap();
        let three = vec![Matrix::zeros(ctx, 2); 3];
        let err = QuadSystem::new(a.clone(), three, ball.clone()).unwrap_err();
        assert!(err.to_string().contains("expected 2 quadratic matrices"));
        let wrong = vec![Matrix::zeros(ctx, 2), Matrix::zeros(ctx, 3)];
        assert!(QuadSystem::new(a, wrong, ball).is_err());
        assert!(TrappingBall::new(vec![ctx.zero()], ctx.zero()).is_err());
        assert!(Matrix::from_rows(vec![vec![ctx.one()], vec![]]).is_err());
    }

    #[test]
    fn parse_errors_name_the_field() {
        let ctx = PrecisionContext::default();
        let text = r#"{"n": 2, "A": [["0","0"],["0","0"]],
            "Q": [[["0","0"],["0","0"]], [["0","0"],["0","0"]], [["0","0"],["0","0"]]],
            "ball": {"center": ["0","0"], "radius": "1"}}"#;
        let err = QuadSystem::from_json_str(text, "bad.json", ctx).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.json") && msg.contains("Q") && msg.contains("found 3"), "{msg}");

        let text = r#"{"n": 2, "A": [["0","0"],["0"]], "Q": [], "ball": {"center": ["0","0"], "radius": "1"}}"#;
        let msg = QuadSystem::from_json_str(text, "x", ctx).unwrap_err().to_string();
        assert!(msg.contains("A[1]") && msg.contains("not square"), "{msg}");

        let text = r#"{"n": 1, "A": [["0"]], "Q": [[["1"]]]}"#;
        let msg = QuadSystem::from_json_str(text, "x", ctx).unwrap_err().to_string();
        assert!(msg.contains("ball") && msg.contains("missing"), "{msg}");

        let text = r#"{"n": 1, "A": [["zero"]], "Q": [[["1"]]], "ball": {"center": ["0"], "radius": "1"}}"#;
        let msg = QuadSystem::from_json_str(text, "x", ctx).unwrap_err().to_string();
        assert!(msg.contains("A[0][0]"), "{msg}");

        let text = "{\n\"n\": 1,\n oops }";
        let msg = QuadSystem::from_json_str(text, "x", ctx).unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");

        let text = r#"{"n": 1, "A": [[0.5]], "Q": [[["1"]]], "ball": {"center": ["0"], "radius": "1"}}"#;
        assert!(QuadSystem::from_json_str(text, "x", ctx).is_err());
    }

    #[test]
    fn bundled_dong_matches_published_parameters() {
        let ctx = PrecisionContext::default();
        let sys = dong(ctx);
        let p = sys.params().unwrap();
        for (k, v) in [("a", "7"), ("b", "50"), ("c", "3"), ("d", "10"), ("e", "5"), ("f", "5"), ("k", "1.5")] {
            assert_eq!(p[k], json!(v), "parameter {k}");
        }
        let (a, b, c, d, e, f, k) = (7, 50, 3, 10, 5, 5, ctx.parse("1.5").unwrap());
        let i = |v: i64| ctx.from_i64(v);
        let expected_a = [
            [-a, a, 0, -e],
            [b, -1, 0, -f],
            [0, 0, -c, 0],
            [0, 0, 0, -d],
        ];
        for (r, row) in expected_a.iter().enumerate() {
            for (cc, v) in row.iter().enumerate() {
                assert_eq!(*sys.linear().get(r, cc), i(*v));
            }
        }
        assert!(sys.quadratic(0).is_zero());
        assert_eq!(*sys.quadratic(1).get(0, 2), i(-1));
        assert_eq!(*sys.quadratic(2).get(0, 1), i(1));
        assert_eq!(*sys.quadratic(3).get(1, 2), k);
    }
}
