//! Distance to the decision boundary along a search direction.
//!
//! `g(θ)` is the smallest step `λ` along `θ̂ = θ/‖θ‖` such that `x + λθ̂`
//! meets the attack goal. It is located by a geometric bracket search
//! (factor 2) followed by bisection down to an absolute tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Direction, Label, VideoTensor};
use crate::victim::QuerySession;

/// What counts as a successful adversarial label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackGoal {
    /// Any label other than the true one.
    Untargeted { true_label: Label },
    /// Exactly the target label.
    Targeted { target: Label },
}

impl AttackGoal {
    pub fn is_success(&self, label: Label) -> bool {
        is_success(label, *self)
    }

    pub fn is_targeted(&self) -> bool {
        matches!(self, AttackGoal::Targeted { .. })
    }
}

pub fn is_success(label: Label, goal: AttackGoal) -> bool {
    match goal {
        AttackGoal::Untargeted { true_label } => label != true_label,
        AttackGoal::Targeted { target } => label == target,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryParams {
    /// Absolute bisection tolerance on the 0–255 scale.
    pub tolerance: f64,
    /// Largest step tried before giving up on a direction.
    pub lambda_max: f64,
    /// Without a hint the search starts at `‖θ‖ · initial_scale`.
    pub initial_scale: f64,
}

impl Default for BoundaryParams {
    fn default() -> Self {
        BoundaryParams { tolerance: 0.01, lambda_max: 1e4, initial_scale: 1.0 }
    }
}

impl BoundaryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidParameter(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        if !(self.lambda_max > self.tolerance && self.lambda_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda_max must exceed tolerance, got {}",
                self.lambda_max
            )));
        }
        if !(self.initial_scale > 0.0 && self.initial_scale.is_finite()) {
            return Err(Error::InvalidParameter("initial_scale must be > 0".into()));
        }
        Ok(())
    }
}

/// Result of one boundary search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDistance {
    /// Upper end of the final bracket; `x + g·θ̂` meets the goal.
    pub g: f64,
    pub queries_used: u64,
    /// `(λ_lo, λ_hi)`: the goal fails at `λ_lo` (or `λ_lo = 0`) and holds at `λ_hi`.
    pub bracket: (f64, f64),
}

/// Locate `g(θ)`. `hint` (the previous `g` when warm-starting) replaces the
/// default starting step.
pub fn evaluate_g(
    session: &mut QuerySession<'_>,
    x: &VideoTensor,
    goal: AttackGoal,
    theta: &Direction,
    hint: Option<f64>,
    params: &BoundaryParams,
) -> Result<BoundaryDistance> {
    params.validate()?;
    if let Some(h) = hint {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("hint must be > 0, got {h}")));
        }
    }
    let unit = theta.normalized();
    let unit = unit.as_tensor();
    let tol = params.tolerance;
    let start_count = session.count();

    let mut succeeds = |lambda: f64| -> Result<bool> {
        let point = x.axpy(lambda, unit)?;
        Ok(goal.is_success(session.query(&point)?.label))
    };

    let start = hint
        .unwrap_or(theta.norm() * params.initial_scale)
        .clamp(tol, params.lambda_max);

    let (mut lo, mut hi);
    if succeeds(start)? {
        hi = start;
        lo = 0.0;
        loop {
            let candidate = hi / 2.0;
            if candidate < tol {
                break;
            }
            if succeeds(candidate)? {
                hi = candidate;
            } else {
                lo = candidate;
                break;
            }
        }
    } else {
        lo = start;
        loop {
            if lo >= params.lambda_max {
                return Err(Error::NotAdversarialWithinCap { lambda_max: params.lambda_max });
            }
            let candidate = (lo * 2.0).min(params.lambda_max);
            if succeeds(candidate)? {
                hi = candidate;
                break;
            }
            lo = candidate;
        }
    }

    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if succeeds(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    Ok(BoundaryDistance { g: hi, queries_used: session.count() - start_count, bracket: (lo, hi) })
}
