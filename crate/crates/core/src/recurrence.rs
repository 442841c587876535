//! Poincaré recurrences: returns of a trajectory close to its start point.
//!
//! The trajectory is sampled on a uniform grid `t_k = k * dt_P` by
//! evaluating the local polynomial of whichever step contains `t_k`, so the
//! arc itself is the same one [`crate::integrate`] produces. A grid index
//! `k` is a *local rapprochement* when
//! `d[k-1] > d[k] < d[k+1]` and `d[k] < threshold`, with
//! `d[k] = |X_k - X_0|` the Euclidean distance.

use rug::{Assign, Float};

use crate::error::{Error, Result};
use crate::integrator::{grid_count, IntegrationConfig, Stepper, Way};
use crate::precision::{PrecisionContext, Real};
use crate::qsystem::QuadSystem;

/// Coefficient of variation below which returns count as periodic.
pub const REGULARITY_CV: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceScanConfig {
    pub dt_p: Real,
    pub t_p: Real,
    pub threshold: Real,
}

impl RecurrenceScanConfig {
    /// Scan with the default rapprochement threshold of 1.
    pub fn new(dt_p: Real, t_p: Real) -> Self {
        let threshold = dt_p.context().one();
        Self {
            dt_p,
            t_p,
            threshold,
        }
    }

    pub fn with_threshold(mut self, threshold: Real) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt_p.is_zero() || self.dt_p.is_sign_negative() {
            return Err(Error::invalid("dt_P must be positive"));
        }
        if self.t_p <= self.dt_p {
            return Err(Error::invalid("T_P must exceed dt_P"));
        }
        if self.threshold.is_zero() || self.threshold.is_sign_negative() {
            return Err(Error::invalid("recurrence threshold must be positive"));
        }
        Ok(())
    }

    /// Number of grid intervals `N_P`. A quotient within 1e-9 (relative) of
    /// an integer is rounded to it, so `T_P = 10, dt_P = 1e-4` gives exactly
    /// 100000 despite neither being a binary fraction.
    pub fn grid_len(&self) -> Result<usize> {
        self.validate()?;
        grid_count(&self.t_p, &self.dt_p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub k: usize,
    pub t: Real,
    pub state: Vec<Real>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceEvent {
    pub k_star: usize,
    pub t_star: Real,
    pub d_star: Real,
}

/// Feeds `(k, t_k, X_k)` for `k = 0..=N_P` to `visit`, integrating forward
/// just far enough to cover each grid time.
pub fn sample_grid_with<F>(
    sys: &QuadSystem,
    x0: &[Real],
    cfg: &IntegrationConfig,
    scan: &RecurrenceScanConfig,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, &Float, &[Float]) -> Result<()>,
{
    if cfg.way != Way::Forward {
        return Err(Error::invalid("grid sampling runs forward in time"));
    }
    let ctx = cfg.context;
    let n_p = scan.grid_len()?;
    let dt_p = ctx.adopt(&scan.dt_p).0;
    let mut t = ctx.float();
    let mut t_last = ctx.float();
    t_last.assign(&dt_p * &Float::with_val(64, n_p));
    let horizon = Real::from_float(t_last).max(ctx.adopt(&scan.t_p));
    let run_cfg = cfg.clone().with_horizon(horizon);
    let mut stepper = Stepper::new(sys, x0, &run_cfg)?;
    let mut buf = vec![ctx.float(); sys.dim()];
    let mut offset = ctx.float();
    for (slot, v) in buf.iter_mut().zip(stepper.state_floats()) {
        slot.assign(v);
    }
    visit(0, &t, &buf)?;
    let mut k_float = Float::new(64);
    for k in 1..=n_p {
        k_float.assign(k);
        t.assign(&dt_p * &k_float);
        while stepper.step_index() == 0 || *stepper.elapsed_end() < t {
            if !stepper.advance()? {
                return Err(Error::Degeneracy(format!(
                    "integration stopped before grid time {}",
                    t.to_string_radix(10, Some(12))
                )));
            }
            if let Some(e) = stepper.escape() {
                return Err(e.to_error());
            }
        }
        offset.assign(&t - stepper.elapsed_begin());
        stepper.eval_offset(&offset, &mut buf);
        visit(k, &t, &buf)?;
    }
    Ok(())
}

/// Materialized grid; for long scans prefer [`scan_trajectory`], which
/// keeps only three distances in memory.
pub fn sample_grid(
    sys: &QuadSystem,
    x0: &[Real],
    cfg: &IntegrationConfig,
    scan: &RecurrenceScanConfig,
) -> Result<Vec<GridRow>> {
    let mut rows = Vec::with_capacity(scan.grid_len()? + 1);
    sample_grid_with(sys, x0, cfg, scan, |k, t, x| {
        rows.push(GridRow {
            k,
            t: Real::from_float(t.clone()),
            state: x.iter().map(|v| Real::from_float(v.clone())).collect(),
        });
        Ok(())
    })?;
    Ok(rows)
}

/// Streaming detector over `(k, t_k, d_k)`.
struct Detector {
    threshold: Float,
    prev: Option<Float>,
    cur: Option<(usize, Float, Float)>,
    events: Vec<RecurrenceEvent>,
}

impl Detector {
    fn new(threshold: &Real) -> Self {
        Self {
            threshold: threshold.as_float().clone(),
            prev: None,
            cur: None,
            events: Vec::new(),
        }
    }

    fn push(&mut self, k: usize, t: &Float, d: Float) {
        if let (Some(prev), Some((kc, tc, dc))) = (&self.prev, &self.cur) {
            if *prev > *dc && *dc < d && *dc < self.threshold {
                self.events.push(RecurrenceEvent {
                    k_star: *kc,
                    t_star: Real::from_float(tc.clone()),
                    d_star: Real::from_float(dc.clone()),
                });
            }
        }
        self.prev = self.cur.take().map(|(_, _, d)| d);
        self.cur = Some((k, t.clone(), d));
    }
}

fn euclid(x: &[Float], x0: &[Float], scratch: &mut Float, out: &mut Float) {
    out.assign(0);
    for (a, b) in x.iter().zip(x0) {
        scratch.assign(a - b);
        scratch.square_mut();
        *out += &*scratch;
    }
    out.sqrt_mut();
}

/// Detects local rapprochements with the first row of `rows`.
pub fn scan_recurrences(rows: &[GridRow], threshold: &Real) -> Vec<RecurrenceEvent> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let prec = threshold.precision();
    let origin: Vec<Float> = first.state.iter().map(|v| v.as_float().clone()).collect();
    let mut det = Detector::new(threshold);
    let mut scratch = Float::new(prec);
    let mut x = vec![Float::new(prec); origin.len()];
    for row in rows {
        for (slot, v) in x.iter_mut().zip(&row.state) {
            slot.assign(v.as_float());
        }
        let mut d = Float::new(prec);
        euclid(&x, &origin, &mut scratch, &mut d);
        det.push(row.k, row.t.as_float(), d);
    }
    det.events
}

/// Samples and scans in one pass without storing the grid.
pub fn scan_trajectory(
    sys: &QuadSystem,
    x0: &[Real],
    cfg: &IntegrationConfig,
    scan: &RecurrenceScanConfig,
) -> Result<Vec<RecurrenceEvent>> {
    let ctx = cfg.context;
    let origin: Vec<Float> = x0.iter().map(|v| ctx.adopt(v).0).collect();
    let mut det = Detector::new(&ctx.adopt(&scan.threshold));
    let mut scratch = ctx.float();
    sample_grid_with(sys, x0, cfg, scan, |k, t, x| {
        let mut d = ctx.float();
        euclid(x, &origin, &mut scratch, &mut d);
        det.push(k, t, d);
        Ok(())
    })?;
    Ok(det.events)
}

/// One level of a refinement trail.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementLevel {
    pub dt_p: Real,
    pub events: usize,
    pub min_d_star: Option<Real>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnStats {
    pub events: Vec<RecurrenceEvent>,
    pub intervals: Vec<Real>,
    pub mean_interval: Option<Real>,
    /// Population standard deviation of the intervals.
    pub stddev_interval: Option<Real>,
    pub period_estimate: Option<Real>,
    pub refinement: Vec<RefinementLevel>,
    pub floor_reached: bool,
    pub note: Option<String>,
}

impl ReturnStats {
    pub fn min_d_star(&self) -> Option<&Real> {
        self.events
            .iter()
            .map(|e| &e.d_star)
            .min_by(|a, b| a.partial_cmp(b).expect("finite"))
    }

    pub fn coefficient_of_variation(&self) -> Option<f64> {
        let mean = self.mean_interval.as_ref()?;
        let sd = self.stddev_interval.as_ref()?;
        Some((sd / mean).to_f64())
    }
}

pub fn return_statistics(events: Vec<RecurrenceEvent>) -> ReturnStats {
    let intervals: Vec<Real> = events
        .windows(2)
        .map(|w| &w[1].t_star - &w[0].t_star)
        .collect();
    let mut stats = ReturnStats {
        events,
        intervals,
        mean_interval: None,
        stddev_interval: None,
        period_estimate: None,
        refinement: Vec::new(),
        floor_reached: false,
        note: None,
    };
    if stats.intervals.is_empty() {
        stats.note = Some(match stats.events.len() {
            0 => "no recurrences in the scan window".into(),
            _ => "a single recurrence; no return intervals".into(),
        });
        return stats;
    }
    let ctx = stats.intervals[0].context();
    let m = ctx.from_i64(stats.intervals.len() as i64);
    let mut sum = ctx.zero();
    for v in &stats.intervals {
        sum = &sum + v;
    }
    let mean = &sum / &m;
    let mut var = ctx.zero();
    for v in &stats.intervals {
        let d = v - &mean;
        var = &var + &(&d * &d);
    }
    let sd = (&var / &m).sqrt();
    let cv = (&sd / &mean).to_f64().abs();
    if cv < REGULARITY_CV {
        stats.period_estimate = Some(mean.clone());
    } else {
        stats.note = Some(format!(
            "irregular returns (coefficient of variation {cv:.3e}); no period"
        ));
    }
    stats.mean_interval = Some(mean);
    stats.stddev_interval = Some(sd);
    stats
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOptions {
    /// Divisor applied to `dt_P` at each level.
    pub factor: u32,
    /// Stop once the minimum `d_star` changes by less than this fraction.
    pub rel_change: f64,
    /// Smallest `dt_P` tried; raised to `10 eps_m T_P` if lower.
    pub min_dt: Option<Real>,
    pub max_levels: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            factor: 10,
            rel_change: 0.1,
            min_dt: None,
            max_levels: 4,
        }
    }
}

fn level_of(dt_p: &Real, events: &[RecurrenceEvent]) -> RefinementLevel {
    RefinementLevel {
        dt_p: dt_p.clone(),
        events: events.len(),
        min_d_star: events
            .iter()
            .map(|e| e.d_star.clone())
            .min_by(|a, b| a.partial_cmp(b).expect("finite")),
    }
}

/// Rescans at `dt_P`, `dt_P / factor`, ... until the closest approach
/// settles (or both levels are empty), the floor is reached, or
/// `max_levels` scans have run. Returns the statistics of the finest scan
/// with the trail attached.
pub fn refine_scan(
    sys: &QuadSystem,
    x0: &[Real],
    cfg: &IntegrationConfig,
    scan: &RecurrenceScanConfig,
    opts: &RefineOptions,
) -> Result<ReturnStats> {
    let ctx: PrecisionContext = cfg.context;
    if opts.factor < 2 || opts.max_levels == 0 {
        return Err(Error::invalid("refinement needs factor >= 2 and at least one level"));
    }
    let resolution = &(&ctx.machine_epsilon() * &ctx.from_i64(10)) * &ctx.adopt(&scan.t_p);
    let floor = match &opts.min_dt {
        Some(m) => ctx.adopt(m).max(resolution),
        None => resolution,
    };
    if scan.dt_p <= floor {
        return Err(Error::invalid(
            "dt_P is already at the working-precision time resolution",
        ));
    }
    let mut level_scan = scan.clone();
    let mut events = scan_trajectory(sys, x0, cfg, &level_scan)?;
    let mut trail = vec![level_of(&level_scan.dt_p, &events)];
    let mut floor_reached = false;
    while trail.len() < opts.max_levels {
        let next_dt = &level_scan.dt_p / &ctx.from_i64(opts.factor as i64);
        if next_dt < floor {
            floor_reached = true;
            break;
        }
        level_scan.dt_p = next_dt;
        let finer = scan_trajectory(sys, x0, cfg, &level_scan)?;
        let level = level_of(&level_scan.dt_p, &finer);
        let prev = trail.last().expect("non-empty").min_d_star.clone();
        events = finer;
        let settled = match (&prev, &level.min_d_star) {
            (None, None) => true,
            (Some(a), Some(b)) => ((a - b).abs() / a.clone()).to_f64() < opts.rel_change,
            _ => false,
        };
        trail.push(level);
        if settled {
            break;
        }
    }
    let mut stats = return_statistics(events);
    stats.refinement = trail;
    stats.floor_reached = floor_reached;
    if floor_reached {
        stats.note = Some("refinement floor reached".into());
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsystem::{Matrix, TrappingBall};

    fn ctx() -> PrecisionContext {
        PrecisionContext::default()
    }

    fn r(s: &str) -> Real {
        ctx().parse(s).unwrap()
    }

    fn decay() -> QuadSystem {
        let ctx = ctx();
        let a = Matrix::from_rows(vec![vec![ctx.from_i64(-1)]]).unwrap();
        let ball = TrappingBall::new(vec![ctx.zero()], ctx.from_i64(100)).unwrap();
        QuadSystem::new(a, vec![Matrix::zeros(ctx, 1)], ball).unwrap()
    }

    /// Linear center-like rotation damped by `-eps`: returns near the start
    /// every `2 pi` with slowly shrinking distance.
    fn rotation() -> QuadSystem {
        let ctx = ctx();
        let a = Matrix::from_rows(vec![
            vec![ctx.parse("-0.01").unwrap(), ctx.from_i64(-1)],
            vec![ctx.one(), ctx.parse("-0.01").unwrap()],
        ])
        .unwrap();
        let ball = TrappingBall::new(vec![ctx.zero(), ctx.zero()], ctx.from_i64(100)).unwrap();
        QuadSystem::new(a, vec![Matrix::zeros(ctx, 2), Matrix::zeros(ctx, 2)], ball).unwrap()
    }

    fn icfg() -> IntegrationConfig {
        IntegrationConfig::new(ctx(), ctx().one(), ctx().pow10(-20))
    }

    fn row(k: usize, d: &str) -> GridRow {
        GridRow {
            k,
            t: ctx().from_i64(k as i64),
            state: vec![r(d)],
        }
    }

    #[test]
    fn grid_len_rounds_decimal_quotients() {
        let s = RecurrenceScanConfig::new(r("1e-4"), r("10"));
        assert_eq!(s.grid_len().unwrap(), 100_000);
        let s = RecurrenceScanConfig::new(r("1e-6"), r("10"));
        assert_eq!(s.grid_len().unwrap(), 10_000_000);
        let s = RecurrenceScanConfig::new(r("0.3"), r("1"));
        assert_eq!(s.grid_len().unwrap(), 3);
        assert!(RecurrenceScanConfig::new(r("2"), r("1")).validate().is_err());
        assert!(RecurrenceScanConfig::new(r("0"), r("1")).validate().is_err());
    }

    #[test]
    fn grid_matches_exponential() {
        let sys = decay();
        let scan = RecurrenceScanConfig::new(r("0.1"), r("2"));
        let rows = sample_grid(&sys, &[ctx().one()], &icfg(), &scan).unwrap();
        assert_eq!(rows.len(), 21);
        assert_eq!(rows[0].state[0], ctx().one());
        for row in &rows {
            assert_eq!(row.t, &r("0.1") * &ctx().from_i64(row.k as i64));
            let exact = (-row.t.clone()).exp();
            assert!((&row.state[0] - &exact).abs() < ctx().pow10(-18), "k={}", row.k);
        }
    }

    #[test]
    fn predicate_on_hand_built_rows() {
        // distance from 0 equals |state|
        let rows = vec![row(0, "0"), row(1, "3"), row(2, "2"), row(3, "2.5"), row(4, "0.5"), row(5, "0.7"), row(6, "0.6")];
        let ev = scan_recurrences(&rows, &r("1"));
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].k_star, 4);
        assert_eq!(ev[0].d_star, r("0.5"));
        // plateau is not a strict minimum
        let rows = vec![row(0, "0"), row(1, "0.5"), row(2, "0.4"), row(3, "0.4"), row(4, "0.5")];
        assert!(scan_recurrences(&rows, &r("1")).is_empty());
        assert!(scan_recurrences(&rows[..2], &r("1")).is_empty());
        assert!(scan_recurrences(&[], &r("1")).is_empty());
    }

    #[test]
    fn monotone_departure_has_no_events() {
        let sys = decay();
        let scan = RecurrenceScanConfig::new(r("0.01"), r("3"));
        let ev = scan_trajectory(&sys, &[ctx().one()], &icfg(), &scan).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn streaming_and_materialized_scans_agree() {
        let sys = rotation();
        let x0 = [ctx().one(), ctx().zero()];
        let scan = RecurrenceScanConfig::new(r("0.01"), r("20"));
        let rows = sample_grid(&sys, &x0, &icfg(), &scan).unwrap();
        let a = scan_recurrences(&rows, &scan.threshold);
        let b = scan_trajectory(&sys, &x0, &icfg(), &scan).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        let stats = return_statistics(a);
        let period = stats.period_estimate.clone().expect("periodic");
        assert!((period.to_f64() - std::f64::consts::TAU).abs() < 0.011, "{period:?}");
    }

    #[test]
    fn statistics_shapes() {
        let ev = |t: i64| RecurrenceEvent {
            k_star: t as usize,
            t_star: ctx().from_i64(t),
            d_star: r("0.1"),
        };
        let s = return_statistics(vec![ev(1), ev(4), ev(9), ev(16)]);
        assert_eq!(s.intervals.len(), 3);
        assert!(s.coefficient_of_variation().unwrap() > 0.01);
        assert!(s.period_estimate.is_none());
        let s = return_statistics(vec![ev(2)]);
        assert!(s.intervals.is_empty() && s.period_estimate.is_none());
        let s = return_statistics(vec![ev(2), ev(5), ev(8)]);
        assert_eq!(s.period_estimate, Some(ctx().from_i64(3)));
        assert_eq!(s.stddev_interval, Some(ctx().zero()));
    }

    #[test]
    fn refinement_of_empty_scan_stays_empty() {
        let sys = decay();
        let scan = RecurrenceScanConfig::new(r("0.1"), r("1"));
        let s = refine_scan(&sys, &[ctx().one()], &icfg(), &scan, &RefineOptions::default()).unwrap();
        assert!(s.events.is_empty());
        assert_eq!(s.refinement.len(), 2);
        assert!(!s.floor_reached);
    }

    #[test]
    fn refinement_floor() {
        let sys = decay();
        let scan = RecurrenceScanConfig::new(r("0.1"), r("1"));
        let opts = RefineOptions {
            min_dt: Some(r("0.05")),
            ..RefineOptions::default()
        };
        let s = refine_scan(&sys, &[ctx().one()], &icfg(), &scan, &opts).unwrap();
        assert!(s.floor_reached);
        assert_eq!(s.note.as_deref(), Some("refinement floor reached"));
    }
}
