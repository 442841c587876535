//! Lyapunov spectrum by a Benettin-type scheme on the extended system.
//!
//! The base system is augmented with its linearization, which is again
//! quadratic (see [`QuadSystem::extend_variational`]), so every macro-step
//! is an ordinary certified integration of `(Y, Z_p)` for each perturbation
//! `p`, followed by classical Gram–Schmidt and accumulation of `ln |S|`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::integrator::{integrate_summary, BallCheck, IntegrationConfig};
use crate::precision::{norm2, PrecisionContext, Real};
use crate::qsystem::QuadSystem;

/// Residual norms below `10^6 eps_m` count as collapsed perturbations.
const DEGENERACY_MARGIN: i32 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct BenettinConfig {
    /// Total horizon `T`.
    pub horizon: Real,
    /// Number of macro-steps `M`.
    pub macro_steps: usize,
    pub seed: u64,
    /// Series tolerance, `delta`, degree cap and precision for each
    /// extended integration. Its horizon and way are ignored.
    pub integration: IntegrationConfig,
    /// Run the `n` propagations of a macro-step on separate threads.
    pub parallel: bool,
}

impl BenettinConfig {
    pub fn new(integration: IntegrationConfig, horizon: Real, macro_steps: usize, seed: u64) -> Self {
        Self {
            horizon: integration.context.adopt(&horizon),
            macro_steps,
            seed,
            integration,
            parallel: false,
        }
    }

    pub fn context(&self) -> PrecisionContext {
        self.integration.context
    }

    /// `tau_M = T / M`, rounded once.
    pub fn tau_m(&self) -> Real {
        &self.horizon / &self.context().from_i64(self.macro_steps as i64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.macro_steps == 0 {
            return Err(Error::invalid("M must be at least 1"));
        }
        if self.horizon.is_zero() || self.horizon.is_sign_negative() {
            return Err(Error::invalid("T must be positive"));
        }
        self.integration.validate()
    }
}

/// Running estimates after macro-step `k`: `sums / (k tau_M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub t: Real,
    pub running: Vec<Real>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// In production order `p = 1..n`.
    pub exponents: Vec<Real>,
    pub tau_m: Real,
    pub macro_steps: usize,
    pub seed: u64,
    pub final_state: Vec<Real>,
    pub trace: Vec<TraceRow>,
    /// Largest `|Y_p - Y_n|` (max norm) over all macro-steps and `p`; the
    /// `n` extended runs take different step sequences, so their `Y`
    /// blocks agree only to series accuracy.
    pub y_block_spread: Real,
    /// Largest `|<Z_p, Z_q> - delta_pq|` seen after any re-orthonormalization.
    pub max_orthonormality_error: Real,
}

impl Spectrum {
    /// Exponents in decreasing order.
    pub fn sorted(&self) -> Vec<Real> {
        let mut v = self.exponents.clone();
        v.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        v
    }

    pub fn sum(&self) -> Real {
        let ctx = self.tau_m.context();
        self.exponents.iter().fold(ctx.zero(), |acc, v| &acc + v)
    }
}

fn dot(a: &[Real], b: &[Real]) -> Real {
    let ctx = a[0].context();
    a.iter().zip(b).fold(ctx.zero(), |acc, (x, y)| &acc + &(x * y))
}

/// `max |<Z_p, Z_q> - delta_pq|`.
pub fn orthonormality_error(z: &[Vec<Real>]) -> Real {
    let ctx = z[0][0].context();
    let mut worst = ctx.zero();
    for p in 0..z.len() {
        for q in 0..=p {
            let mut g = dot(&z[p], &z[q]);
            if p == q {
                g = &g - &ctx.one();
            }
            worst = worst.max(g.abs());
        }
    }
    worst
}

/// Classical Gram–Schmidt in index order, with one reorthogonalization
/// pass per vector. Adds `ln |S_p|` to `sums[p]` and replaces `z[p]` by
/// `S_p / |S_p|`.
pub fn gram_schmidt_step(z: &mut [Vec<Real>], sums: &mut [Real]) -> Result<()> {
    if z.len() != sums.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            got: sums.len(),
        });
    }
    let Some(first) = z.first().and_then(|v| v.first()) else {
        return Ok(());
    };
    let ctx = first.context();
    let floor = &ctx.machine_epsilon() * &ctx.pow10(DEGENERACY_MARGIN);
    for p in 0..z.len() {
        let (done, rest) = z.split_at_mut(p);
        let zp = &mut rest[0];
        // The second pass removes what cancellation left of the first;
        // without it the basis drifts from orthonormal by eps_m times the
        // growth ratio of the perturbations over a macro-step.
        let mut s = zp.clone();
        for _ in 0..2 {
            let coeffs: Vec<Real> = done.iter().map(|zi| dot(&s, zi)).collect();
            for (c, zi) in coeffs.iter().zip(done.iter()) {
                for (sj, zij) in s.iter_mut().zip(zi) {
                    *sj = &*sj - &(c * zij);
                }
            }
        }
        let norm = norm2(&s);
        if norm < floor {
            return Err(Error::Degeneracy(format!(
                "perturbation {} collapsed (|S| = {}); increase b_m or shorten tau_M",
                p + 1,
                norm.to_decimal_digits(6)
            )));
        }
        sums[p] = &sums[p] + &norm.ln();
        for (dst, sj) in zp.iter_mut().zip(&s) {
            *dst = sj / &norm;
        }
    }
    Ok(())
}

/// `n` orthonormal vectors built from uniform `[0, 1)` draws of a seeded
/// ChaCha8 stream, orthonormalized by [`gram_schmidt_step`].
pub fn init_perturbations(n: usize, seed: u64, ctx: PrecisionContext) -> Result<Vec<Vec<Real>>> {
    if n == 0 {
        return Err(Error::invalid("need at least one perturbation"));
    }
    let attempt = |seed: u64| -> Result<Vec<Vec<Real>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // 106 random bits per component: two 53-bit draws, each exact in f64
        let mut draw = |scale: f64| ctx.from_f64((rng.next_u64() >> 11) as f64 * scale);
        let mut z: Vec<Vec<Real>> = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let hi = draw(2f64.powi(-53));
                        let lo = draw(2f64.powi(-106));
                        &hi + &lo
                    })
                    .collect()
            })
            .collect();
        let mut scratch = vec![ctx.zero(); n];
        gram_schmidt_step(&mut z, &mut scratch)?;
        Ok(z)
    };
    attempt(seed).or_else(|_| attempt(seed.wrapping_add(1)))
}

/// Integrates the extended system from `(y, z)` over `tau_m` and splits the
/// result. Only the `Y` block is tested against the trapping ball.
pub fn propagate_pair(
    ext: &QuadSystem,
    y: &[Real],
    z: &[Real],
    tau_m: &Real,
    cfg: &IntegrationConfig,
) -> Result<(Vec<Real>, Vec<Real>)> {
    let n = y.len();
    if z.len() != n || ext.dim() != 2 * n {
        return Err(Error::DimensionMismatch {
            expected: ext.dim(),
            got: y.len() + z.len(),
        });
    }
    let x0: Vec<Real> = y.iter().chain(z).cloned().collect();
    let run = cfg
        .clone()
        .with_horizon(tau_m.clone())
        .with_ball_check(BallCheck::Leading(n));
    let mut out = integrate_summary(ext, &x0, &run)?.into_result()?.final_state;
    let z_out = out.split_off(n);
    Ok((out, z_out))
}

/// Runs the full macro-step loop from `x_star`. `on_step` sees each trace
/// row as it is produced (the same rows end up in [`Spectrum::trace`]).
pub fn lyapunov_spectrum_with<F>(
    sys: &QuadSystem,
    x_star: &[Real],
    cfg: &BenettinConfig,
    mut on_step: F,
) -> Result<Spectrum>
where
    F: FnMut(&TraceRow),
{
    cfg.validate()?;
    let ctx = cfg.context();
    let n = sys.dim();
    if x_star.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x_star.len(),
        });
    }
    let ext = sys.extend_variational();
    let tau_m = cfg.tau_m();
    let mut y: Vec<Real> = x_star.iter().map(|v| ctx.adopt(v)).collect();
    let mut z = init_perturbations(n, cfg.seed, ctx)?;
    let mut sums = vec![ctx.zero(); n];
    let mut trace = Vec::with_capacity(cfg.macro_steps);
    let mut spread = ctx.zero();
    let mut ortho = orthonormality_error(&z);
    for k in 1..=cfg.macro_steps {
        let results = propagate_all(&ext, &y, &z, &tau_m, cfg)
            .map_err(|e| annotate(e, k))?;
        let (y_last, _) = results.last().expect("n >= 1");
        for (yp, _) in &results {
            for (a, b) in yp.iter().zip(y_last) {
                spread = spread.max((a - b).abs());
            }
        }
        y = y_last.clone();
        z = results.into_iter().map(|(_, zp)| zp).collect();
        gram_schmidt_step(&mut z, &mut sums).map_err(|e| annotate(e, k))?;
        ortho = ortho.max(orthonormality_error(&z));
        let t = &tau_m * &ctx.from_i64(k as i64);
        let row = TraceRow {
            k,
            running: sums.iter().map(|s| s / &t).collect(),
            t,
        };
        on_step(&row);
        trace.push(row);
    }
    let total = &tau_m * &ctx.from_i64(cfg.macro_steps as i64);
    Ok(Spectrum {
        exponents: sums.iter().map(|s| s / &total).collect(),
        tau_m,
        macro_steps: cfg.macro_steps,
        seed: cfg.seed,
        final_state: y,
        trace,
        y_block_spread: spread,
        max_orthonormality_error: ortho,
    })
}

pub fn lyapunov_spectrum(sys: &QuadSystem, x_star: &[Real], cfg: &BenettinConfig) -> Result<Spectrum> {
    lyapunov_spectrum_with(sys, x_star, cfg, |_| {})
}

fn annotate(e: Error, k: usize) -> Error {
    match e {
        Error::Degeneracy(msg) => Error::Degeneracy(format!("macro-step {k}: {msg}")),
        other => other,
    }
}

type Pair = (Vec<Real>, Vec<Real>);

fn propagate_all(
    ext: &QuadSystem,
    y: &[Real],
    z: &[Vec<Real>],
    tau_m: &Real,
    cfg: &BenettinConfig,
) -> Result<Vec<Pair>> {
    let icfg = &cfg.integration;
    if !cfg.parallel || z.len() == 1 {
        return z
            .iter()
            .map(|zp| propagate_pair(ext, y, zp, tau_m, icfg))
            .collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = z
            .iter()
            .map(|zp| s.spawn(move || propagate_pair(ext, y, zp, tau_m, icfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("propagation thread panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::integrate_summary;
    use crate::qsystem::{Matrix, TrappingBall};

    fn ctx() -> PrecisionContext {
        PrecisionContext::default()
    }

    fn decay() -> QuadSystem {
        let ctx = ctx();
        let a = Matrix::from_rows(vec![vec![ctx.from_i64(-1)]]).unwrap();
        let ball = TrappingBall::new(vec![ctx.zero()], ctx.from_i64(100)).unwrap();
        QuadSystem::new(a, vec![Matrix::zeros(ctx, 1)], ball).unwrap()
    }

    fn icfg() -> IntegrationConfig {
        IntegrationConfig::new(ctx(), ctx().one(), ctx().pow10(-20))
    }

    fn vecs(rows: &[&[&str]]) -> Vec<Vec<Real>> {
        rows.iter()
            .map(|r| r.iter().map(|s| ctx().parse(s).unwrap()).collect())
            .collect()
    }

    #[test]
    fn hand_gram_schmidt() {
        let mut z = vecs(&[&["2", "0"], &["1", "1"]]);
        let mut sums = vec![ctx().zero(), ctx().zero()];
        gram_schmidt_step(&mut z, &mut sums).unwrap();
        assert_eq!(z, vecs(&[&["1", "0"], &["0", "1"]]));
        assert_eq!(sums[0], ctx().from_i64(2).ln());
        assert!(sums[1].is_zero());
    }

    #[test]
    fn orthonormal_input_is_a_fixed_point() {
        let mut z = vecs(&[&["0", "1"], &["1", "0"]]);
        let before = z.clone();
        let mut sums = vec![ctx().zero(), ctx().zero()];
        gram_schmidt_step(&mut z, &mut sums).unwrap();
        assert_eq!(z, before);
        assert!(sums.iter().all(Real::is_zero));
    }

    #[test]
    fn dependent_vectors_are_degenerate() {
        let mut z = vecs(&[&["1", "2"], &["2", "4"]]);
        let mut sums = vec![ctx().zero(), ctx().zero()];
        let err = gram_schmidt_step(&mut z, &mut sums).unwrap_err();
        assert_eq!(err.exit_code(), 5);
    }

    #[test]
    fn random_bases_are_orthonormal_and_seeded() {
        let tol = &ctx().machine_epsilon() * &ctx().pow10(3);
        let a = init_perturbations(4, 7, ctx()).unwrap();
        assert!(orthonormality_error(&a) <= tol);
        assert_eq!(a, init_perturbations(4, 7, ctx()).unwrap());
        assert_ne!(a, init_perturbations(4, 8, ctx()).unwrap());
        assert_eq!(init_perturbations(1, 3, ctx()).unwrap(), vec![vec![ctx().one()]]);
    }

    #[test]
    fn zero_perturbation_tracks_base_flow() {
        let sys = decay();
        let ext = sys.extend_variational();
        let half = ctx().parse("0.5").unwrap();
        let (y, z) = propagate_pair(&ext, &[ctx().one()], &[ctx().zero()], &half, &icfg()).unwrap();
        assert!(z[0].is_zero());
        let plain = integrate_summary(&sys, &[ctx().one()], &icfg().with_horizon(half)).unwrap();
        let err = (&y[0] - &plain.final_state[0]).abs();
        assert!(err < ctx().pow10(-19));
    }

    #[test]
    fn linear_tangent_is_exponential() {
        let ext = decay().extend_variational();
        let half = ctx().parse("0.5").unwrap();
        let (_, z) = propagate_pair(&ext, &[ctx().one()], &[ctx().one()], &half, &icfg()).unwrap();
        let exact = ctx().parse("-0.5").unwrap().exp();
        assert!((&z[0] - &exact).abs() < ctx().pow10(-18));
    }

    #[test]
    fn decay_exponent_is_minus_one() {
        for (t, m) in [("1", 10), ("0.1", 10)] {
            let cfg = BenettinConfig::new(icfg(), ctx().parse(t).unwrap(), m, 1);
            let s = lyapunov_spectrum(&decay(), &[ctx().one()], &cfg).unwrap();
            let err = (&s.exponents[0] + &ctx().one()).abs();
            assert!(err < ctx().pow10(-15), "{err:?}");
            assert_eq!(s.trace.len(), m);
        }
    }

    #[test]
    fn config_errors() {
        let cfg = BenettinConfig::new(icfg(), ctx().one(), 0, 1);
        assert!(lyapunov_spectrum(&decay(), &[ctx().one()], &cfg).is_err());
        let cfg = BenettinConfig::new(icfg(), ctx().zero(), 3, 1);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn parallel_matches_sequential() {
        let ctx = ctx();
        let sys = QuadSystem::from_json_str(crate::qsystem::bundled::RICCATI, "riccati", ctx).unwrap();
        let x = vec![ctx.parse("0.1").unwrap(), ctx.parse("0.2").unwrap()];
        let mut cfg = BenettinConfig::new(icfg(), ctx.parse("0.2").unwrap(), 4, 3);
        let a = lyapunov_spectrum(&sys, &x, &cfg).unwrap();
        cfg.parallel = true;
        let b = lyapunov_spectrum(&sys, &x, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
