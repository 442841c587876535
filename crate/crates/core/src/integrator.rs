//! Forward/backward power-series integration with a certified step.
//!
//! Each step expands the solution at the current state, takes
//! `|dt| = tau(X) = 1 / (h2(X) + delta)` (clipped so the last step lands on
//! the horizon), and sums the local polynomial up to the first term below
//! `eps_pw`. After every step the state is tested against the trapping ball.
//!
//! [`Stepper`] exposes the loop one step at a time so callers can sample the
//! local polynomial (dense output) or run two integrations in lockstep
//! without storing whole arcs.

use rug::{Assign, Float};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, BALL_ESCAPE_ADVICE};
use crate::precision::{dist1, PrecisionContext, Real};
use crate::qsystem::{QuadSystem, DEFAULT_DELTA};
use crate::series::{Expansion, DEFAULT_MAX_DEGREE};

/// Minimum ratio `eps_pw / eps_m`.
pub const EPS_PW_MARGIN: i32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Way {
    Forward,
    Backward,
}

impl Way {
    pub fn sign(self) -> i32 {
        match self {
            Way::Forward => 1,
            Way::Backward => -1,
        }
    }

    pub fn from_sign(sign: i32) -> Result<Self> {
        match sign {
            1 => Ok(Way::Forward),
            -1 => Ok(Way::Backward),
            _ => Err(Error::invalid(format!("way must be +1 or -1, got {sign}"))),
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Way::Forward => Way::Backward,
            Way::Backward => Way::Forward,
        }
    }
}

/// Which coordinates the trapping-ball test looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BallCheck {
    All,
    /// Only the first `k` coordinates, against the matching slice of the
    /// ball center.
    Leading(usize),
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationConfig {
    pub context: PrecisionContext,
    pub eps_pw: Real,
    pub way: Way,
    pub horizon: Real,
    pub delta: Real,
    pub max_degree: usize,
    pub ball_check: BallCheck,
}

impl IntegrationConfig {
    /// Forward run with `delta = 1e-3` and the default degree cap.
    pub fn new(context: PrecisionContext, horizon: Real, eps_pw: Real) -> Self {
        Self {
            context,
            eps_pw: context.adopt(&eps_pw),
            way: Way::Forward,
            horizon: context.adopt(&horizon),
            delta: context.parse(DEFAULT_DELTA).expect("default delta"),
            max_degree: DEFAULT_MAX_DEGREE,
            ball_check: BallCheck::All,
        }
    }

    pub fn with_way(mut self, way: Way) -> Self {
        self.way = way;
        self
    }

    pub fn with_delta(mut self, delta: Real) -> Self {
        self.delta = self.context.adopt(&delta);
        self
    }

    pub fn with_max_degree(mut self, max_degree: usize) -> Self {
        self.max_degree = max_degree;
        self
    }

    pub fn with_eps_pw(mut self, eps_pw: Real) -> Self {
        self.eps_pw = self.context.adopt(&eps_pw);
        self
    }

    pub fn with_horizon(mut self, horizon: Real) -> Self {
        self.horizon = self.context.adopt(&horizon);
        self
    }

    pub fn with_ball_check(mut self, check: BallCheck) -> Self {
        self.ball_check = check;
        self
    }

    /// Smallest admissible `eps_pw` at this precision.
    pub fn min_eps_pw(&self) -> Real {
        &self.context.machine_epsilon() * &self.context.pow10(EPS_PW_MARGIN)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_pw < self.min_eps_pw() {
            return Err(Error::invalid(format!(
                "eps_pw = {} is too close to the machine epsilon {} of a {}-bit mantissa; \
                 raise the precision or eps_pw",
                self.eps_pw.to_decimal_digits(6),
                self.context.machine_epsilon().to_decimal_digits(6),
                self.context.mantissa_bits()
            )));
        }
        if self.horizon.is_sign_negative() {
            return Err(Error::invalid("horizon T must be non-negative"));
        }
        if self.delta.is_zero() || self.delta.is_sign_negative() {
            return Err(Error::invalid("delta must be positive"));
        }
        if self.max_degree == 0 {
            return Err(Error::invalid("max_degree must be positive"));
        }
        Ok(())
    }
}

/// Where and how far a trajectory left the trapping ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BallEscape {
    pub step: usize,
    pub time: Real,
    pub distance: Real,
    pub advice: &'static str,
}

impl BallEscape {
    pub fn to_error(&self) -> Error {
        Error::BallEscape {
            time: self.time.to_decimal_digits(12),
            distance: self.distance.to_decimal_digits(12),
            advice: self.advice.to_string(),
        }
    }
}

/// One step of an arc: interval `[t_start, t_end]` (signed times), signed
/// step `dt`, local polynomial degree and the state at `t_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub index: usize,
    pub t_start: Real,
    pub t_end: Real,
    pub dt: Real,
    pub degree: usize,
    pub state: Vec<Real>,
}

/// Step-configuration numbers of an arc. Indices are 1-based (0 for an
/// empty arc). `l_max`/`d_max` are the first steps attaining the maximum,
/// the `_last` fields the last ones; local degrees tie often, and a
/// backward arc meets the steps of its forward twin in reverse order.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcStats {
    pub steps: usize,
    pub n_max: usize,
    pub l_max: usize,
    pub t_at_nmax: Real,
    pub l_max_last: usize,
    pub t_at_nmax_last: Real,
    /// Largest `|dt|`.
    pub dt_max: Real,
    pub d_max: usize,
    pub t_at_dtmax: Real,
    pub d_max_last: usize,
    pub t_at_dtmax_last: Real,
}

impl ArcStats {
    fn empty(ctx: PrecisionContext) -> Self {
        Self {
            steps: 0,
            n_max: 0,
            l_max: 0,
            t_at_nmax: ctx.zero(),
            l_max_last: 0,
            t_at_nmax_last: ctx.zero(),
            dt_max: ctx.zero(),
            d_max: 0,
            t_at_dtmax: ctx.zero(),
            d_max_last: 0,
            t_at_dtmax_last: ctx.zero(),
        }
    }

    fn record(&mut self, index: usize, degree: usize, abs_dt: &Float, t_end: &Float) {
        self.steps = index;
        if degree > self.n_max {
            self.n_max = degree;
            self.l_max = index;
            self.t_at_nmax.0.assign(t_end);
        }
        if degree == self.n_max {
            self.l_max_last = index;
            self.t_at_nmax_last.0.assign(t_end);
        }
        if *abs_dt > self.dt_max.0 {
            self.dt_max.0.assign(abs_dt);
            self.d_max = index;
            self.t_at_dtmax.0.assign(t_end);
        }
        if *abs_dt == self.dt_max.0 {
            self.d_max_last = index;
            self.t_at_dtmax_last.0.assign(t_end);
        }
    }
}

/// Endpoint and statistics of an arc, without the per-step records.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcSummary {
    pub way: Way,
    pub horizon: Real,
    pub initial_state: Vec<Real>,
    pub final_time: Real,
    pub final_state: Vec<Real>,
    pub stats: ArcStats,
    pub escape: Option<BallEscape>,
}

impl ArcSummary {
    pub fn escaped_ball(&self) -> bool {
        self.escape.is_some()
    }

    /// Turns a ball escape into [`Error::BallEscape`].
    pub fn into_result(self) -> Result<Self> {
        match &self.escape {
            Some(e) => Err(e.to_error()),
            None => Ok(self),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryArc {
    pub way: Way,
    pub initial_state: Vec<Real>,
    pub steps: Vec<StepRecord>,
    pub escape: Option<BallEscape>,
    pub stats: ArcStats,
}

impl TrajectoryArc {
    pub fn escaped_ball(&self) -> bool {
        self.escape.is_some()
    }

    pub fn final_state(&self) -> &[Real] {
        self.steps
            .last()
            .map(|s| s.state.as_slice())
            .unwrap_or(&self.initial_state)
    }

    pub fn into_result(self) -> Result<Self> {
        match &self.escape {
            Some(e) => Err(e.to_error()),
            None => Ok(self),
        }
    }
}

/// The integration loop, one step per [`Stepper::advance`].
pub struct Stepper<'a> {
    sys: &'a QuadSystem,
    exp: Expansion,
    sign: i32,
    eps_pw: Float,
    delta: Float,
    horizon: Float,
    max_degree: usize,
    ball_dims: Option<usize>,
    ball_r2: Float,
    x: Vec<Float>,
    next_x: Vec<Float>,
    /// Unsigned elapsed time at the start and end of the current step.
    elapsed_start: Float,
    elapsed: Float,
    abs_dt: Float,
    dt: Float,
    h1: Float,
    h2: Float,
    tau: Float,
    scratch: Float,
    index: usize,
    degree: usize,
    finished: bool,
    escape: Option<BallEscape>,
    stats: ArcStats,
}

impl<'a> Stepper<'a> {
    pub fn new(sys: &'a QuadSystem, x0: &[Real], cfg: &IntegrationConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.context != sys.context() {
            return Err(Error::PrecisionMismatch {
                left: sys.context().mantissa_bits(),
                right: cfg.context.mantissa_bits(),
            });
        }
        if x0.len() != sys.dim() {
            return Err(Error::DimensionMismatch {
                expected: sys.dim(),
                got: x0.len(),
            });
        }
        let ctx = cfg.context;
        let x: Vec<Float> = x0.iter().map(|v| ctx.adopt(v).0).collect();
        let ball_dims = match cfg.ball_check {
            BallCheck::All => Some(sys.dim()),
            BallCheck::Leading(k) => Some(k.min(sys.dim())),
            BallCheck::Off => None,
        };
        let radius = sys.ball().radius().as_float();
        let mut stepper = Self {
            sys,
            exp: Expansion::new(sys),
            sign: cfg.way.sign(),
            eps_pw: cfg.eps_pw.0.clone(),
            delta: cfg.delta.0.clone(),
            horizon: cfg.horizon.0.clone(),
            max_degree: cfg.max_degree,
            ball_dims,
            ball_r2: Float::with_val(ctx.mantissa_bits(), radius * radius),
            next_x: x.clone(),
            x,
            elapsed_start: ctx.float(),
            elapsed: ctx.float(),
            abs_dt: ctx.float(),
            dt: ctx.float(),
            h1: ctx.float(),
            h2: ctx.float(),
            tau: ctx.float(),
            scratch: ctx.float(),
            index: 0,
            degree: 0,
            finished: false,
            escape: None,
            stats: ArcStats::empty(ctx),
        };
        if let Some(d) = stepper.ball_distance_if_outside() {
            return Err(Error::invalid(format!(
                "initial state lies outside the trapping ball (distance {})",
                d.to_decimal_digits(12)
            )));
        }
        Ok(stepper)
    }

    fn ball_distance_if_outside(&mut self) -> Option<Real> {
        let k = self.ball_dims?;
        self.h1.assign(0);
        for (x, c) in self.x[..k].iter().zip(self.sys.ball().center()) {
            self.scratch.assign(x - c.as_float());
            self.scratch.square_mut();
            self.h1 += &self.scratch;
        }
        if self.h1 > self.ball_r2 {
            Some(Real::from_float(self.h1.clone().sqrt()))
        } else {
            None
        }
    }

    /// Takes the next step. Returns `false` once the horizon has been
    /// reached or the trajectory has left the ball.
    pub fn advance(&mut self) -> Result<bool> {
        if self.finished || self.elapsed >= self.horizon {
            self.finished = true;
            return Ok(false);
        }
        self.sys.kernel.bounds_into(
            &self.x,
            &self.delta,
            &mut self.h1,
            &mut self.h2,
            &mut self.tau,
        );
        self.elapsed_start.assign(&self.elapsed);
        self.scratch.assign(&self.horizon - &self.elapsed);
        if self.tau >= self.scratch {
            self.abs_dt.assign(&self.scratch);
            self.elapsed.assign(&self.horizon);
        } else {
            // elapsed_new - elapsed is exact, so the recorded steps tile
            // [0, T]; step back one ulp if rounding overshot tau.
            self.elapsed += &self.tau;
            self.abs_dt.assign(&self.elapsed - &self.elapsed_start);
            if self.abs_dt > self.tau {
                self.elapsed.next_down();
                self.abs_dt.assign(&self.elapsed - &self.elapsed_start);
            }
        }
        self.dt.assign(&self.abs_dt * self.sign);
        self.degree = self.exp.expand(
            &self.x,
            &self.dt,
            &self.eps_pw,
            self.max_degree,
        )?;
        self.exp.eval_into(&self.dt, &mut self.next_x);
        std::mem::swap(&mut self.x, &mut self.next_x);
        self.index += 1;
        let outside = self.ball_distance_if_outside();
        self.scratch.assign(&self.elapsed * self.sign);
        self.stats
            .record(self.index, self.degree, &self.abs_dt, &self.scratch);
        if let Some(distance) = outside {
            self.escape = Some(BallEscape {
                step: self.index,
                time: Real::from_float(self.scratch.clone()),
                distance,
                advice: BALL_ESCAPE_ADVICE,
            });
            self.finished = true;
        } else if self.elapsed >= self.horizon {
            self.finished = true;
        }
        Ok(true)
    }

    /// Runs to the horizon (or ball escape).
    pub fn run(&mut self) -> Result<()> {
        while self.advance()? {}
        Ok(())
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// 1-based index of the current step (0 before the first step).
    pub fn step_index(&self) -> usize {
        self.index
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn escape(&self) -> Option<&BallEscape> {
        self.escape.as_ref()
    }

    pub fn stats(&self) -> &ArcStats {
        &self.stats
    }

    pub fn state(&self) -> Vec<Real> {
        self.x.iter().map(|v| Real::from_float(v.clone())).collect()
    }

    pub fn t_start(&self) -> Real {
        Real::from_float(Float::with_val(self.x_prec(), &self.elapsed_start * self.sign))
    }

    pub fn t_end(&self) -> Real {
        Real::from_float(Float::with_val(self.x_prec(), &self.elapsed * self.sign))
    }

    pub fn dt(&self) -> Real {
        Real::from_float(self.dt.clone())
    }

    fn x_prec(&self) -> u32 {
        self.h1.prec()
    }

    pub fn record(&self) -> StepRecord {
        StepRecord {
            index: self.index,
            t_start: self.t_start(),
            t_end: self.t_end(),
            dt: self.dt(),
            degree: self.degree,
            state: self.state(),
        }
    }

    pub(crate) fn state_floats(&self) -> &[Float] {
        &self.x
    }

    /// Unsigned elapsed time at the end of the current step.
    pub(crate) fn elapsed_end(&self) -> &Float {
        &self.elapsed
    }

    pub(crate) fn elapsed_begin(&self) -> &Float {
        &self.elapsed_start
    }

    /// Evaluates the current step's polynomial at unsigned offset `s` from
    /// the step start (`0 <= s <= |dt|`).
    pub(crate) fn eval_offset(&mut self, s: &Float, out: &mut [Float]) {
        self.scratch.assign(s * self.sign);
        self.exp.eval_into(&self.scratch, out);
    }

    pub fn summary(&self, initial_state: &[Real]) -> ArcSummary {
        ArcSummary {
            way: Way::from_sign(self.sign).expect("sign"),
            horizon: Real::from_float(self.horizon.clone()),
            initial_state: initial_state.to_vec(),
            final_time: self.t_end(),
            final_state: self.state(),
            stats: self.stats.clone(),
            escape: self.escape.clone(),
        }
    }
}

/// Integrates and keeps every step record.
pub fn integrate(sys: &QuadSystem, x0: &[Real], cfg: &IntegrationConfig) -> Result<TrajectoryArc> {
    let mut steps = Vec::new();
    let summary = integrate_with(sys, x0, cfg, |rec| steps.push(rec.clone()))?;
    Ok(TrajectoryArc {
        way: cfg.way,
        initial_state: summary.initial_state,
        steps,
        escape: summary.escape,
        stats: summary.stats,
    })
}

/// Integrates, handing each step record to `on_step` as it is produced.
pub fn integrate_with<F>(
    sys: &QuadSystem,
    x0: &[Real],
    cfg: &IntegrationConfig,
    mut on_step: F,
) -> Result<ArcSummary>
where
    F: FnMut(&StepRecord),
{
    let mut stepper = Stepper::new(sys, x0, cfg)?;
    while stepper.advance()? {
        on_step(&stepper.record());
    }
    Ok(stepper.summary(x0))
}

/// Integrates keeping only the endpoint and statistics.
pub fn integrate_summary(
    sys: &QuadSystem,
    x0: &[Real],
    cfg: &IntegrationConfig,
) -> Result<ArcSummary> {
    let mut stepper = Stepper::new(sys, x0, cfg)?;
    stepper.run()?;
    Ok(stepper.summary(x0))
}

/// Relative slack within which `span / dt` counts as an integer, so that
/// decimal inputs like `10 / 1e-4` give exactly 100000 intervals.
const GRID_COUNT_SLACK: f64 = 1e-9;

/// Number of whole `dt` intervals in `span`: the quotient rounded when it
/// is within a relative `1e-9` of an integer, floored otherwise.
pub fn grid_count(span: &Real, dt: &Real) -> Result<usize> {
    if dt.is_zero() || dt.is_sign_negative() {
        return Err(Error::invalid("grid spacing must be positive"));
    }
    let q = (span / dt).to_f64();
    let nearest = q.round();
    let n = if (q - nearest).abs() <= GRID_COUNT_SLACK * nearest {
        nearest
    } else {
        q.floor()
    };
    if !(0.0..=4e9).contains(&n) {
        return Err(Error::invalid(format!("grid of {q:e} points is out of range")));
    }
    Ok(n as usize)
}

/// Dense output on the uniform grid `t_k = way * k * dt`,
/// `k = 0..=grid_count(T, dt)`. Sampling stops at a ball escape, which is
/// left in the returned summary.
pub fn integrate_on_grid<F>(
    sys: &QuadSystem,
    x0: &[Real],
    cfg: &IntegrationConfig,
    dt: &Real,
    mut visit: F,
) -> Result<ArcSummary>
where
    F: FnMut(usize, &Real, &[Real]) -> Result<()>,
{
    let ctx = cfg.context;
    let count = grid_count(&cfg.horizon, dt)?;
    let dt = ctx.adopt(dt).0;
    let mut stepper = Stepper::new(sys, x0, cfg)?;
    let mut buf = vec![ctx.float(); sys.dim()];
    let mut s = ctx.float();
    let mut offset = ctx.float();
    let to_reals = |v: &[Float]| -> Vec<Real> { v.iter().map(|x| Real::from_float(x.clone())).collect() };
    visit(0, &ctx.zero(), &to_reals(stepper.state_floats()))?;
    for k in 1..=count {
        s.assign(&dt * &Float::with_val(64, k));
        if s > stepper.horizon {
            s.assign(&stepper.horizon);
        }
        while stepper.step_index() == 0 || *stepper.elapsed_end() < s {
            if !stepper.advance()? || stepper.escape().is_some() {
                return Ok(stepper.summary(x0));
            }
        }
        offset.assign(&s - stepper.elapsed_begin());
        stepper.eval_offset(&offset, &mut buf);
        let t = Real::from_float(Float::with_val(ctx.mantissa_bits(), &s * stepper.sign));
        visit(k, &t, &to_reals(&buf))?;
    }
    stepper.run()?;
    Ok(stepper.summary(x0))
}

/// Interior sample points per step when comparing two solutions.
pub const SAMPLES_PER_STEP: u32 = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCheck {
    pub passed: bool,
    /// Largest 1-norm distance between the two solutions on the sample grid.
    pub delta_a: Real,
    pub eps_a: Real,
    pub eps_pw: Real,
    pub eps_pw_fine: Real,
    pub samples: usize,
}

/// Tolerance of the higher-degree comparison run: the larger of
/// `eps_pw^2` and `eps_pw * 1e-5`, which must stay above `1e6 eps_m`.
pub fn tightened_tolerance(cfg: &IntegrationConfig) -> Result<Real> {
    let squared = &cfg.eps_pw * &cfg.eps_pw;
    let scaled = &cfg.eps_pw * &cfg.context.pow10(-5);
    let fine = squared.max(scaled);
    if fine < cfg.min_eps_pw() {
        return Err(Error::invalid(format!(
            "tightened tolerance {} is unreachable with a {}-bit mantissa; raise b_m",
            fine.to_decimal_digits(6),
            cfg.context.mantissa_bits()
        )));
    }
    Ok(fine)
}

/// Accuracy check at `way = +1`: rerun with a tighter series tolerance
/// (raising every local degree) and compare the two solutions at the step
/// endpoints of the first run plus interior points of each step.
pub fn verify_forward(
    sys: &QuadSystem,
    x0: &[Real],
    cfg: &IntegrationConfig,
    eps_a: &Real,
) -> Result<ForwardCheck> {
    let fine_eps = tightened_tolerance(cfg)?;
    verify_forward_against(sys, x0, cfg, eps_a, &fine_eps)
}

pub fn verify_forward_against(
    sys: &QuadSystem,
    x0: &[Real],
    cfg: &IntegrationConfig,
    eps_a: &Real,
    fine_eps: &Real,
) -> Result<ForwardCheck> {
    if cfg.way != Way::Forward {
        return Err(Error::invalid("accuracy check runs forward in time"));
    }
    let ctx = cfg.context;
    let fine_cfg = cfg.clone().with_eps_pw(fine_eps.clone());
    let mut coarse = Stepper::new(sys, x0, cfg)?;
    let mut fine = Stepper::new(sys, x0, &fine_cfg)?;
    let n = sys.dim();
    let mut a = vec![ctx.float(); n];
    let mut b = vec![ctx.float(); n];
    let mut s = ctx.float();
    let mut offset = ctx.float();
    let mut d = ctx.float();
    let mut acc = ctx.float();
    let mut worst = ctx.float();
    let mut samples = 1usize;
    while coarse.advance()? {
        if let Some(e) = coarse.escape() {
            return Err(e.to_error());
        }
        for k in 1..=SAMPLES_PER_STEP {
            offset.assign(&coarse.abs_dt * k);
            offset /= SAMPLES_PER_STEP;
            s.assign(coarse.elapsed_begin() + &offset);
            if k == SAMPLES_PER_STEP {
                s.assign(coarse.elapsed_end());
                for (slot, v) in a.iter_mut().zip(coarse.state_floats()) {
                    slot.assign(v);
                }
            } else {
                coarse.eval_offset(&offset, &mut a);
            }
            while fine.step_index() == 0 || (fine.elapsed_end() < &s && !fine.is_finished()) {
                if !fine.advance()? {
                    break;
                }
                if let Some(e) = fine.escape() {
                    return Err(e.to_error());
                }
            }
            offset.assign(&s - fine.elapsed_begin());
            fine.eval_offset(&offset, &mut b);
            acc.assign(0);
            for (x, y) in a.iter().zip(&b) {
                d.assign(x - y);
                acc += &*d.as_abs();
            }
            if acc > worst {
                worst.assign(&acc);
            }
            samples += 1;
        }
    }
    let delta_a = Real::from_float(worst);
    let eps_a = ctx.adopt(eps_a);
    Ok(ForwardCheck {
        passed: !eps_a.is_zero() && !eps_a.is_sign_negative() && delta_a <= eps_a,
        delta_a,
        eps_a,
        eps_pw: cfg.eps_pw.clone(),
        eps_pw_fine: fine_eps.clone(),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardCheck {
    pub passed: bool,
    /// 1-norm distance between the backward endpoint and the start point.
    pub return_distance: Real,
    pub eps_r: Real,
    pub forward: ArcSummary,
    pub backward: ArcSummary,
}

/// Integrates forward over `[0, T]`, then backward from the endpoint over
/// the same horizon, and measures how close the return lands to `x0`.
pub fn verify_backward(
    sys: &QuadSystem,
    x0: &[Real],
    cfg: &IntegrationConfig,
    eps_r: &Real,
) -> Result<BackwardCheck> {
    if cfg.way != Way::Forward {
        return Err(Error::invalid("round-trip check starts forward in time"));
    }
    let forward = integrate_summary(sys, x0, cfg)?.into_result()?;
    let back_cfg = cfg.clone().with_way(Way::Backward);
    let backward = integrate_summary(sys, &forward.final_state, &back_cfg)?;
    let x0: Vec<Real> = x0.iter().map(|v| cfg.context.adopt(v)).collect();
    let return_distance = dist1(&backward.final_state, &x0);
    let eps_r = cfg.context.adopt(eps_r);
    let passed = backward.escape.is_none() && return_distance < eps_r;
    Ok(BackwardCheck {
        passed,
        return_distance,
        eps_r,
        forward,
        backward,
    })
}

/// One line of the configuration comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigCheck {
    pub name: String,
    pub forward: String,
    pub backward: String,
    pub target: String,
    pub relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigurationReport {
    pub rel_tol: f64,
    pub checks: Vec<ConfigCheck>,
    /// The index form `d_max^{+1} + d_max^{-1} ≈ N`; off by the step-grid
    /// mismatch between the arcs, so it is reported but not part of
    /// `passed`.
    pub informational: ConfigCheck,
    pub passed: bool,
}

fn rel_diff(a: f64, b: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        if a == b {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a - b).abs() / scale
    }
}

/// Compares the step configurations of a forward arc and the backward arc
/// that retraces it. Locations of maxima pair the forward arc's first
/// occurrence with the backward arc's last, i.e. the same end of the
/// physical time interval, so ties do not break the comparison.
pub fn compare_configurations(
    forward: &ArcStats,
    backward: &ArcStats,
    horizon: &Real,
    rel_tol: f64,
) -> ConfigurationReport {
    let t = horizon.to_f64();
    let count_check = |name: &str, a: usize, b: usize| {
        let (a, b) = (a as f64, b as f64);
        let rel = rel_diff(a, b, a.max(b));
        ConfigCheck {
            name: name.to_string(),
            forward: format!("{a}"),
            backward: format!("{b}"),
            target: "equal".into(),
            relative_error: rel,
            passed: rel <= rel_tol,
        }
    };
    let time_check = |name: &str, a: &Real, b: &Real| {
        let sum = a.abs().to_f64() + b.abs().to_f64();
        let rel = rel_diff(sum, t, t);
        ConfigCheck {
            name: name.to_string(),
            forward: a.to_decimal_digits(12),
            backward: b.to_decimal_digits(12),
            target: format!("|t+| + |t-| = T = {}", horizon.to_decimal_digits(12)),
            relative_error: rel,
            passed: rel <= rel_tol,
        }
    };
    let checks = vec![
        count_check("step_count", forward.steps, backward.steps),
        count_check("max_degree", forward.n_max, backward.n_max),
        time_check("time_of_max_degree", &forward.t_at_nmax, &backward.t_at_nmax_last),
        time_check("time_of_max_step", &forward.t_at_dtmax, &backward.t_at_dtmax_last),
    ];
    let n = forward.steps as f64;
    let idx_sum = (forward.d_max + backward.d_max_last) as f64;
    let rel = rel_diff(idx_sum, n, n);
    let informational = ConfigCheck {
        name: "step_index_identity (informational): d_max(+1) + d_max(-1) ≈ N".into(),
        forward: forward.d_max.to_string(),
        backward: backward.d_max_last.to_string(),
        target: format!("N = {}", forward.steps),
        relative_error: rel,
        passed: rel <= rel_tol,
    };
    let passed = checks.iter().all(|c| c.passed);
    ConfigurationReport {
        rel_tol,
        checks,
        informational,
        passed,
    }
}
