//! Zeroth-order minimisation of the boundary distance `g(θ)`.
//!
//! Each iteration averages `n_samples` forward-difference estimators
//! `(g(θ + βu) − g(θ)) / β · u` over Gaussian draws `u` (unit-norm by
//! default), then moves `θ ← θ − ηĝ` with a doubling/halving line search on
//! `η`. Probe searches bisect to `min(ε_g, probe_tolerance·β)` so the finite
//! differences resolve below the default search quantum. A step that finds no
//! descent divides `β` by 10 (down to `beta_min`), and an accepted step
//! restores it; a failure at the floor, or less than `plateau_tolerance`
//! relative progress over `plateau_window` iterations, ends the run.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::boundary::{evaluate_g, AttackGoal, BoundaryParams};
use crate::error::{Error, Result};
use crate::tensor::{BinaryMask, Direction, VideoTensor};
use crate::victim::{QueryPurpose, QuerySession};

/// Upper bound on successive step doublings in one line search.
const MAX_DOUBLINGS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Finite-difference smoothing parameter.
    pub beta: f64,
    /// Gaussian draws averaged per gradient estimate.
    pub n_samples: usize,
    pub eta0: f64,
    pub eta_min: f64,
    pub beta_min: f64,
    pub max_iterations: usize,
    /// Stop once the session counter reaches this value.
    pub query_budget: Option<u64>,
    /// Distribution of the random draws `u`.
    pub draw: DrawKind,
    /// Boundary searches inside the optimiser stop at
    /// `min(ε_g, probe_tolerance · β)`, so the finite differences stay well
    /// above the search resolution as `β` shrinks.
    pub probe_tolerance: f64,
    /// Every `plateau_window` iterations, stop unless `g` dropped by at least
    /// the fraction `plateau_tolerance` over the window; 0 disables the check.
    pub plateau_window: usize,
    pub plateau_tolerance: f64,
}

/// How the random draws `u` of the gradient estimator are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawKind {
    /// Raw standard Gaussian; `‖βu‖` grows with the square root of the
    /// support size.
    Gaussian,
    /// Standard Gaussian rescaled to unit norm, so `β` is a relative step
    /// whatever the dimension.
    UnitGaussian,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            beta: 0.005,
            n_samples: 20,
            eta0: 0.2,
            eta_min: 1e-4,
            beta_min: 5e-6,
            max_iterations: 1000,
            query_budget: None,
            draw: DrawKind::UnitGaussian,
            // β/500 on a 0–1 pixel scale, restated for 0–255
            probe_tolerance: 255.0 / 500.0,
            plateau_window: 50,
            plateau_tolerance: 1e-3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be > 0");
        }
        if !(self.beta_min > 0.0 && self.beta_min <= self.beta) {
            return bad("beta_min must lie in (0, beta]");
        }
        if self.n_samples == 0 {
            return bad("n_samples must be >= 1");
        }
        if !(self.eta_min > 0.0 && self.eta0 >= self.eta_min && self.eta0.is_finite()) {
            return bad("step sizes must satisfy eta0 >= eta_min > 0");
        }
        if !(self.probe_tolerance > 0.0) {
            return bad("probe_tolerance must be > 0");
        }
        if !(0.0..1.0).contains(&self.plateau_tolerance) {
            return bad("plateau_tolerance must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Best boundary distance after this iteration.
    pub g: f64,
    /// Session counter after this iteration.
    pub queries: u64,
    pub eta: f64,
    pub beta: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub records: Vec<TraceRecord>,
}

impl OptimizationTrace {
    pub fn best_g(&self) -> Option<f64> {
        self.records.iter().map(|r| r.g).reduce(f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    BudgetExhausted,
    /// The line search failed with `β` already at its floor.
    Converged,
    /// `g` improved by less than the plateau tolerance over a window.
    Plateau,
}

#[derive(Debug, Clone)]
pub struct Optimized {
    pub theta: Direction,
    pub g: f64,
    pub trace: OptimizationTrace,
    pub stop: StopReason,
}

/// Averaged forward-difference gradient estimate at `theta`.
///
/// `g_eval` returns `Ok(None)` when a perturbed direction never reaches the
/// boundary; such draws are dropped from the average. When `support` is
/// given, `u` is drawn only on its selected positions and is zero elsewhere.
pub fn estimate_gradient<F, R>(
    mut g_eval: F,
    theta: &VideoTensor,
    g_theta: f64,
    beta: f64,
    n_samples: usize,
    support: Option<&BinaryMask>,
    draw: DrawKind,
    rng: &mut R,
) -> Result<VideoTensor>
where
    F: FnMut(&VideoTensor) -> Result<Option<f64>>,
    R: Rng + ?Sized,
{
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter("beta must be > 0".into()));
    }
    if !g_theta.is_finite() {
        return Err(Error::InvalidParameter("g(theta) must be finite".into()));
    }
    let dims = theta.dims();
    let mut sum = vec![0.0; dims.len()];
    let mut used = 0usize;
    for _ in 0..n_samples {
        let mut u = gaussian_like(theta, support, rng)?;
        if draw == DrawKind::UnitGaussian {
            let norm = u.l2_norm();
            if norm == 0.0 {
                return Err(Error::EmptyMask);
            }
            u = u.scale(1.0 / norm);
        }
        let probe = theta.axpy(beta, &u)?;
        if let Some(g_probe) = g_eval(&probe)? {
            let weight = (g_probe - g_theta) / beta;
            sum.iter_mut().zip(u.as_slice()).for_each(|(s, ui)| *s += weight * ui);
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::AllDrawsFailed);
    }
    let inv = 1.0 / used as f64;
    VideoTensor::new(dims, sum.into_iter().map(|s| s * inv).collect())
}

fn gaussian_like<R: Rng + ?Sized>(
    like: &VideoTensor,
    support: Option<&BinaryMask>,
    rng: &mut R,
) -> Result<VideoTensor> {
    let dims = like.dims();
    let data = match support {
        None => (0..dims.len()).map(|_| rng.sample(StandardNormal)).collect(),
        Some(mask) => {
            if mask.dims() != dims {
                return Err(Error::ShapeMismatch { expected: dims, actual: mask.dims() });
            }
            mask.as_slice().iter().map(|&on| if on { rng.sample(StandardNormal) } else { 0.0 }).collect()
        }
    };
    VideoTensor::new(dims, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome {
    pub theta: VideoTensor,
    pub eta: f64,
    pub g: f64,
    pub accepted: bool,
}

/// One update `θ ← θ − ηĝ` with backtracking on `η`.
///
/// If the first trial improves on `g_current`, `η` keeps doubling while the
/// improvement continues and the best trial wins. Otherwise `η` is halved
/// until a trial improves or `η` drops below `eta_min`. `g_eval` receives the
/// candidate and the incumbent value as a warm-start hint.
pub fn line_search_step<F>(
    mut g_eval: F,
    theta: &VideoTensor,
    grad: &VideoTensor,
    eta: f64,
    g_current: f64,
    eta_min: f64,
) -> Result<LineSearchOutcome>
where
    F: FnMut(&VideoTensor, f64) -> Result<Option<f64>>,
{
    let rejected = || LineSearchOutcome { theta: theta.clone(), eta, g: g_current, accepted: false };
    if grad.is_zero() {
        return Ok(rejected());
    }
    let trial = |step: f64| theta.axpy(-step, grad);

    let first = trial(eta)?;
    match g_eval(&first, g_current)? {
        Some(g1) if g1 < g_current => {
            let (mut best_theta, mut best_g, mut best_eta) = (first, g1, eta);
            for _ in 0..MAX_DOUBLINGS {
                let step = best_eta * 2.0;
                let candidate = trial(step)?;
                match g_eval(&candidate, best_g)? {
                    Some(g2) if g2 < best_g => {
                        best_theta = candidate;
                        best_g = g2;
                        best_eta = step;
                    }
                    _ => break,
                }
            }
            Ok(LineSearchOutcome { theta: best_theta, eta: best_eta, g: best_g, accepted: true })
        }
        _ => {
            let mut step = eta;
            loop {
                step *= 0.5;
                if step < eta_min {
                    return Ok(rejected());
                }
                let candidate = trial(step)?;
                if let Some(g2) = g_eval(&candidate, g_current)? {
                    if g2 < g_current {
                        return Ok(LineSearchOutcome { theta: candidate, eta: step, g: g2, accepted: true });
                    }
                }
            }
        }
    }
}

/// Boundary distance of an arbitrary tensor, with non-viable directions
/// mapped to `None`.
fn g_of(
    session: &mut QuerySession<'_>,
    x: &VideoTensor,
    goal: AttackGoal,
    params: &BoundaryParams,
    theta: &VideoTensor,
    hint: f64,
) -> Result<Option<f64>> {
    let direction = match Direction::new(theta.clone()) {
        Ok(d) => d,
        Err(Error::ZeroDirection) => return Ok(None),
        Err(e) => return Err(e),
    };
    match evaluate_g(session, x, goal, &direction, Some(hint), params) {
        Ok(b) => Ok(Some(b.g)),
        Err(Error::NotAdversarialWithinCap { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Minimise `g` starting from `theta_init` whose boundary distance is
/// `g_init`. Returns the best direction seen; running out of budget is a
/// normal stop, reported through [`StopReason::BudgetExhausted`].
#[allow(clippy::too_many_arguments)]
pub fn optimize_direction<R: Rng + ?Sized>(
    session: &mut QuerySession<'_>,
    x: &VideoTensor,
    goal: AttackGoal,
    theta_init: &Direction,
    g_init: f64,
    config: &OptimizerConfig,
    params: &BoundaryParams,
    support: Option<&BinaryMask>,
    rng: &mut R,
) -> Result<Optimized> {
    config.validate()?;
    if !g_init.is_finite() {
        return Err(Error::InvalidParameter("initial boundary distance must be finite".into()));
    }
    let previous_limit = session.limit();
    if config.query_budget.is_some() {
        session.set_limit(config.query_budget);
    }
    let previous_purpose = session.purpose();
    let out = run(session, x, goal, theta_init, g_init, config, params, support, rng);
    session.set_limit(previous_limit);
    session.set_purpose(previous_purpose);
    out
}

#[allow(clippy::too_many_arguments)]
fn run<R: Rng + ?Sized>(
    session: &mut QuerySession<'_>,
    x: &VideoTensor,
    goal: AttackGoal,
    theta_init: &Direction,
    g_init: f64,
    config: &OptimizerConfig,
    params: &BoundaryParams,
    support: Option<&BinaryMask>,
    rng: &mut R,
) -> Result<Optimized> {
    let mut theta = theta_init.as_tensor().clone();
    let mut g = g_init;
    let mut beta = config.beta;
    let mut eta = config.eta0;
    let mut trace = OptimizationTrace::default();
    trace.records.push(TraceRecord {
        iteration: 0,
        g,
        queries: session.count(),
        eta,
        beta,
        accepted: true,
    });
    let mut stop = StopReason::MaxIterations;
    // search tolerance the incumbent `g` was measured at
    let mut resolution = params.tolerance;
    let mut window_start = g;

    for iteration in 1..=config.max_iterations {
        session.set_iteration(iteration as u32);
        let probe_params = BoundaryParams { tolerance: params.tolerance.min(config.probe_tolerance * beta), ..*params };

        session.set_purpose(QueryPurpose::Gradient);
        if probe_params.tolerance != resolution {
            // re-measure the incumbent so the finite differences share its resolution
            match g_of(session, x, goal, &probe_params, &theta, g) {
                Ok(Some(refined)) => g = refined,
                Ok(None) => {}
                Err(Error::BudgetExhausted { .. }) => {
                    stop = StopReason::BudgetExhausted;
                    break;
                }
                Err(e) => return Err(e),
            }
            resolution = probe_params.tolerance;
        }
        let grad = estimate_gradient(
            |probe| g_of(session, x, goal, &probe_params, probe, g),
            &theta,
            g,
            beta,
            config.n_samples,
            support,
            config.draw,
            rng,
        );
        let grad = match grad {
            Ok(grad) => Some(grad),
            Err(Error::AllDrawsFailed) => None,
            Err(Error::BudgetExhausted { .. }) => {
                stop = StopReason::BudgetExhausted;
                break;
            }
            Err(e) => return Err(e),
        };

        session.set_purpose(QueryPurpose::LineSearch);
        let step = match &grad {
            Some(grad) => line_search_step(
                |candidate, hint| g_of(session, x, goal, &probe_params, candidate, hint),
                &theta,
                grad,
                eta,
                g,
                config.eta_min,
            ),
            None => Ok(LineSearchOutcome { theta: theta.clone(), eta, g, accepted: false }),
        };
        let step = match step {
            Ok(s) => s,
            Err(Error::BudgetExhausted { .. }) => {
                stop = StopReason::BudgetExhausted;
                break;
            }
            Err(e) => return Err(e),
        };

        let accepted = step.accepted;
        let mut converged = false;
        if accepted {
            theta = step.theta;
            g = step.g;
            eta = step.eta;
            // β decays over consecutive rejections only
            beta = config.beta;
        } else if beta <= config.beta_min {
            converged = true;
        } else {
            beta = (beta * 0.1).max(config.beta_min);
            eta = config.eta0;
        }
        trace.records.push(TraceRecord { iteration, g, queries: session.count(), eta, beta, accepted });
        if converged {
            stop = StopReason::Converged;
            break;
        }
        if config.plateau_window > 0 && iteration % config.plateau_window == 0 {
            if g > window_start * (1.0 - config.plateau_tolerance) {
                stop = StopReason::Plateau;
                break;
            }
            window_start = g;
        }
    }

    Ok(Optimized { theta: Direction::new(theta)?, g, trace, stop })
}
