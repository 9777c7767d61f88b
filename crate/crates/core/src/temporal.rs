//! Key-frame selection by leave-one-frame-out ranking and greedy pruning.
//!
//! Frames whose removal leaves the perturbation adversarial with high
//! probability matter least, so they are tried first for removal. A removal
//! is kept when the resulting mean absolute perturbation stays within the
//! bound `ω` (fewer key frames wins), or, above the bound, when it lowers
//! that perturbation.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::boundary::{evaluate_g, AttackGoal, BoundaryDistance, BoundaryParams};
use crate::error::{Error, Result};
use crate::tensor::{normalize, BinaryMask, Direction, VideoTensor};
use crate::victim::{QueryPurpose, QuerySession, VictimResponse};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedFrame {
    pub frame: usize,
    pub probability: f64,
}

/// Removable frames, least important first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameRanking {
    pub frames: Vec<RankedFrame>,
}

impl FrameRanking {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.frames.iter().map(|r| r.frame).collect()
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.frames.iter().any(|r| r.frame == frame)
    }
}

/// Mean-absolute-perturbation bound `ω` on the 0–255 scale. `+∞` is
/// allowed and serialises as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PruneBound(f64);

impl PruneBound {
    pub const UNBOUNDED: PruneBound = PruneBound(f64::INFINITY);

    pub fn new(omega: f64) -> Result<Self> {
        if omega.is_nan() || omega < 0.0 {
            return Err(Error::InvalidParameter(format!("omega must be >= 0, got {omega}")));
        }
        Ok(PruneBound(omega))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for PruneBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            self.0.fmt(f)
        }
    }
}

impl Serialize for PruneBound {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for PruneBound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        let value = match Raw::deserialize(d)? {
            Raw::Num(v) => v,
            Raw::Str(s) if matches!(s.as_str(), "inf" | "infinity" | "+inf") => f64::INFINITY,
            Raw::Str(s) => return Err(serde::de::Error::custom(format!("invalid omega {s:?}"))),
        };
        PruneBound::new(value).map_err(serde::de::Error::custom)
    }
}

/// Mean absolute perturbation of `g · θ̂` over every entry of the video.
pub fn perturbation_map(g: f64, unit: &Direction) -> f64 {
    let s = unit.as_tensor().as_slice();
    g * s.iter().map(|v| v.abs()).sum::<f64>() / s.len() as f64
}

/// One query at `x + p⊙m`; fails unless it meets the goal.
pub fn ensure_adversarial_start(
    session: &mut QuerySession<'_>,
    x: &VideoTensor,
    p: &VideoTensor,
    mask: &BinaryMask,
    goal: AttackGoal,
) -> Result<VictimResponse> {
    let previous = session.set_purpose(QueryPurpose::Start);
    let response = x.add(&p.apply_mask(mask)?).and_then(|point| session.query(&point));
    session.set_purpose(previous);
    let response = response?;
    if !goal.is_success(response.label) {
        return Err(Error::StartingDirectionNotAdversarial);
    }
    Ok(response)
}

/// Probe `x + p⊙del_frame(m, t)` for every frame (exactly `T` queries) and
/// keep the frames whose removal still meets the goal, sorted by probability
/// descending with ties broken by ascending frame index.
///
/// The caller guarantees that `x + p⊙m` itself meets the goal (see
/// [`ensure_adversarial_start`]).
pub fn rank_frames(
    session: &mut QuerySession<'_>,
    x: &VideoTensor,
    p: &VideoTensor,
    mask: &BinaryMask,
    goal: AttackGoal,
) -> Result<FrameRanking> {
    let previous = session.set_purpose(QueryPurpose::Ranking);
    let out = rank_inner(session, x, p, mask, goal);
    session.set_purpose(previous);
    out
}

fn rank_inner(
    session: &mut QuerySession<'_>,
    x: &VideoTensor,
    p: &VideoTensor,
    mask: &BinaryMask,
    goal: AttackGoal,
) -> Result<FrameRanking> {
    let mut frames = Vec::new();
    for t in 0..mask.dims().t {
        let probe = x.add(&p.apply_mask(&mask.del_frame(t)?)?)?;
        let r = session.query(&probe)?;
        if goal.is_success(r.label) {
            frames.push(RankedFrame { frame: t, probability: r.probability });
        }
    }
    frames.sort_by(|a, b| b.probability.total_cmp(&a.probability).then(a.frame.cmp(&b.frame)));
    Ok(FrameRanking { frames })
}

/// Which acceptance rule admitted a pruning step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneBranch {
    /// Perturbation within `ω` and fewer key frames.
    WithinBound,
    /// Perturbation above `ω` but lower than the incumbent's.
    Improvement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneStep {
    pub frame: usize,
    pub adversarial: bool,
    pub map: Option<f64>,
    pub accepted: Option<PruneBranch>,
    pub key_frames_after: usize,
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub mask: BinaryMask,
    /// Unit direction `p⊙mask / ‖p⊙mask‖`.
    pub theta: Direction,
    /// Boundary distance of `theta`, when pruning had to compute it.
    pub boundary: Option<BoundaryDistance>,
    pub steps: Vec<PruneStep>,
}

/// Greedy frame removal in ranking order. Removals accumulate on the
/// currently accepted mask. The incumbent's perturbation is computed at most
/// once and cached.
#[allow(clippy::too_many_arguments)]
pub fn prune_frames(
    session: &mut QuerySession<'_>,
    x: &VideoTensor,
    p: &VideoTensor,
    mask: &BinaryMask,
    ranking: &FrameRanking,
    bound: PruneBound,
    goal: AttackGoal,
    params: &BoundaryParams,
) -> Result<PruneOutcome> {
    let previous = session.set_purpose(QueryPurpose::Prune);
    let out = prune_inner(session, x, p, mask, ranking, bound, goal, params);
    session.set_purpose(previous);
    out
}

#[allow(clippy::too_many_arguments)]
fn prune_inner(
    session: &mut QuerySession<'_>,
    x: &VideoTensor,
    p: &VideoTensor,
    mask: &BinaryMask,
    ranking: &FrameRanking,
    bound: PruneBound,
    goal: AttackGoal,
    params: &BoundaryParams,
) -> Result<PruneOutcome> {
    let p_masked = p.apply_mask(mask)?;
    let mut current = mask.clone();
    let mut theta = normalize(&p_masked)?;
    let mut incumbent_hint = p_masked.l2_norm();
    // (boundary, map) of the incumbent, filled lazily
    let mut incumbent: Option<(Option<BoundaryDistance>, f64)> = None;
    let mut steps = Vec::with_capacity(ranking.len());

    for ranked in &ranking.frames {
        let t = ranked.frame;
        let candidate = current.del_frame(t)?;
        let p_hat = p.apply_mask(&candidate)?;
        let theta_hat = match normalize(&p_hat) {
            Ok(d) => d,
            Err(Error::ZeroDirection) => {
                steps.push(PruneStep {
                    frame: t,
                    adversarial: false,
                    map: None,
                    accepted: None,
                    key_frames_after: current.key_frame_count(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let response = session.query(&x.add(&p_hat)?)?;
        if !goal.is_success(response.label) {
            steps.push(PruneStep {
                frame: t,
                adversarial: false,
                map: None,
                accepted: None,
                key_frames_after: current.key_frame_count(),
            });
            continue;
        }
        let hint = p_hat.l2_norm();
        let boundary = evaluate_g(session, x, goal, &theta_hat, Some(hint), params)?;
        let map = perturbation_map(boundary.g, &theta_hat);

        let branch = if map <= bound.value() {
            (candidate.key_frame_count() < current.key_frame_count()).then_some(PruneBranch::WithinBound)
        } else {
            let incumbent_map = match incumbent {
                Some((_, m)) => m,
                None => {
                    let (b, m) = match evaluate_g(session, x, goal, &theta, Some(incumbent_hint), params) {
                        Ok(b) => (Some(b), perturbation_map(b.g, &theta)),
                        Err(Error::NotAdversarialWithinCap { .. }) => (None, f64::INFINITY),
                        Err(e) => return Err(e),
                    };
                    incumbent = Some((b, m));
                    m
                }
            };
            (map < incumbent_map).then_some(PruneBranch::Improvement)
        };

        if branch.is_some() {
            current = candidate;
            theta = theta_hat;
            incumbent_hint = hint;
            incumbent = Some((Some(boundary), map));
        }
        steps.push(PruneStep {
            frame: t,
            adversarial: true,
            map: Some(map),
            accepted: branch,
            key_frames_after: current.key_frame_count(),
        });
    }

    Ok(PruneOutcome { mask: current, theta, boundary: incumbent.and_then(|(b, _)| b), steps })
}
