//! End-to-end attack: candidate initialisation with spatial and temporal
//! masking, direction optimisation, and reconstruction of the adversarial
//! example.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boundary::{evaluate_g, AttackGoal, BoundaryParams};
use crate::error::{Error, Result};
use crate::metrics;
use crate::saliency::{spatial_mask, SalienceRatio};
use crate::temporal::{ensure_adversarial_start, prune_frames, rank_frames, PruneBound, PruneStep};
use crate::tensor::{normalize, BinaryMask, Dims, Direction, Label, VideoTensor};
use crate::victim::{QueryBreakdown, QueryPurpose, QuerySession};
use crate::zoo::{optimize_direction, OptimizationTrace, OptimizerConfig, StopReason};

/// A video with its ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVideo {
    pub id: String,
    pub label: Label,
    pub video: VideoTensor,
}

/// Samples sharing one geometry; source of starting directions.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    samples: Vec<LabeledVideo>,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledVideo>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let d = first.video.dims();
            if let Some(bad) = samples.iter().find(|s| s.video.dims() != d) {
                return Err(Error::ShapeMismatch { expected: d, actual: bad.video.dims() });
            }
        }
        Ok(Dataset { samples })
    }

    pub fn samples(&self) -> &[LabeledVideo] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dims(&self) -> Option<Dims> {
        self.samples.first().map(|s| s.video.dims())
    }

    /// One more than the largest label.
    pub fn num_classes(&self) -> usize {
        self.samples.iter().map(|s| s.label.0 + 1).max().unwrap_or(0)
    }
}

/// Goal family; the concrete [`AttackGoal`] depends on the sample's label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackMode {
    Untargeted,
    /// A fixed target, or `(y + 1) mod K` when absent.
    Targeted {
        #[serde(default)]
        target: Option<Label>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub mode: AttackMode,
    /// Key-frame bound; defaults to 3 (untargeted) or 30 (targeted).
    pub omega: Option<PruneBound>,
    /// Salient-area ratio; defaults to 0.6 (untargeted) or 0.8 (targeted).
    pub phi: Option<SalienceRatio>,
    pub optimizer: OptimizerConfig,
    pub boundary: BoundaryParams,
    pub n_init_candidates: usize,
    pub seed: u64,
    pub enable_temporal: bool,
    pub enable_spatial: bool,
    /// Also classify the adversarial example clamped to [0, 255] (audited,
    /// not counted).
    pub report_clamped: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            mode: AttackMode::Untargeted,
            omega: None,
            phi: None,
            optimizer: OptimizerConfig::default(),
            boundary: BoundaryParams::default(),
            n_init_candidates: 5,
            seed: 0,
            enable_temporal: true,
            enable_spatial: true,
            report_clamped: false,
        }
    }
}

impl AttackConfig {
    pub fn omega(&self) -> PruneBound {
        self.omega.unwrap_or_else(|| match self.mode {
            AttackMode::Untargeted => PruneBound::new(3.0).expect("valid"),
            AttackMode::Targeted { .. } => PruneBound::new(30.0).expect("valid"),
        })
    }

    pub fn phi(&self) -> SalienceRatio {
        self.phi.unwrap_or_else(|| match self.mode {
            AttackMode::Untargeted => SalienceRatio::new(0.6).expect("valid"),
            AttackMode::Targeted { .. } => SalienceRatio::new(0.8).expect("valid"),
        })
    }

    /// Plain boundary-distance attack: no masks, one candidate.
    pub fn baseline(mut self) -> Self {
        self.enable_spatial = false;
        self.enable_temporal = false;
        self
    }

    pub fn goal(&self, y: Label, num_classes: usize) -> Result<AttackGoal> {
        match self.mode {
            AttackMode::Untargeted => Ok(AttackGoal::Untargeted { true_label: y }),
            AttackMode::Targeted { target: Some(t) } if t == y => {
                Err(Error::InvalidParameter(format!("target {t} equals the true label")))
            }
            AttackMode::Targeted { target: Some(t) } => Ok(AttackGoal::Targeted { target: t }),
            AttackMode::Targeted { target: None } if num_classes < 2 => {
                Err(Error::InvalidParameter("targeted attack needs at least two classes".into()))
            }
            AttackMode::Targeted { target: None } => Ok(AttackGoal::Targeted { target: Label((y.0 + 1) % num_classes) }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_init_candidates == 0 {
            return Err(Error::InvalidParameter("n_init_candidates must be >= 1".into()));
        }
        self.optimizer.validate()?;
        self.boundary.validate()
    }
}

/// `n` distinct admissible samples (goal-satisfying label, different from
/// `x`), chosen with `rng`.
pub fn sample_candidates<'d, R: rand::Rng + ?Sized>(
    dataset: &'d Dataset,
    x: &VideoTensor,
    goal: AttackGoal,
    n: usize,
    rng: &mut R,
) -> Result<Vec<&'d LabeledVideo>> {
    let admissible: Vec<&LabeledVideo> =
        dataset.samples().iter().filter(|s| goal.is_success(s.label) && s.video != *x).collect();
    if admissible.len() < n {
        return Err(Error::InsufficientCandidates { requested: n, available: admissible.len() });
    }
    Ok(admissible.choose_multiple(rng, n).copied().collect())
}

/// Starting direction built from one candidate.
#[derive(Debug, Clone)]
pub struct Initialization {
    pub theta: Direction,
    pub mask: BinaryMask,
    pub g_init: f64,
    /// Queries spent on this candidate.
    pub queries: u64,
    pub prune_steps: Vec<PruneStep>,
}

/// Boundary parameters for a candidate at distance `distance`: the cap is
/// raised to ten times that distance when the configured cap is smaller.
pub fn candidate_params(base: &BoundaryParams, distance: f64) -> BoundaryParams {
    BoundaryParams { lambda_max: base.lambda_max.max(10.0 * distance), ..*base }
}

/// Mask and direction for candidate `x_hat`. `spatial` is the spatial mask
/// of `x` (all ones when spatial sparsity is off).
pub fn initialize_direction(
    session: &mut QuerySession<'_>,
    x: &VideoTensor,
    goal: AttackGoal,
    x_hat: &VideoTensor,
    config: &AttackConfig,
    spatial: &BinaryMask,
) -> Result<Initialization> {
    let start = session.count();
    let p = x_hat.sub(x)?;
    if p.is_zero() {
        return Err(Error::ZeroDirection);
    }
    let params = candidate_params(&config.boundary, p.l2_norm());
    let mut mask = spatial.clone();
    let mut known = None;
    let mut prune_steps = Vec::new();
    let mut theta = normalize(&p.apply_mask(&mask)?)?;

    if config.enable_temporal {
        ensure_adversarial_start(session, x, &p, &mask, goal)?;
        let ranking = rank_frames(session, x, &p, &mask, goal)?;
        let pruned = prune_frames(session, x, &p, &mask, &ranking, config.omega(), goal, &params)?;
        mask = pruned.mask;
        theta = pruned.theta;
        known = pruned.boundary.map(|b| b.g);
        prune_steps = pruned.steps;
    }

    let g_init = match known {
        Some(g) => g,
        None => {
            let previous = session.set_purpose(QueryPurpose::Init);
            let hint = p.apply_mask(&mask)?.l2_norm();
            let r = evaluate_g(session, x, goal, &theta, Some(hint), &params);
            session.set_purpose(previous);
            r?.g
        }
    };
    Ok(Initialization { theta, mask, g_init, queries: session.count() - start, prune_steps })
}

/// Outcome of one candidate's initialisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub id: String,
    pub g_init: Option<f64>,
    pub queries: u64,
    pub key_frames: Option<usize>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub success: bool,
    pub x_adv: VideoTensor,
    pub label: Label,
    pub queries: u64,
    pub map: f64,
    pub map_masked: f64,
    pub sparsity: f64,
    pub mask: BinaryMask,
    pub trace: OptimizationTrace,
    pub clamped_label: Option<Label>,
    pub goal: AttackGoal,
    pub g: f64,
    pub stop: StopReason,
    pub breakdown: QueryBreakdown,
    pub candidates: Vec<CandidateReport>,
    /// Index into `candidates` of the chosen start.
    pub chosen: usize,
}

/// Serializable summary of an [`AttackResult`] without the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackDetails {
    pub goal: AttackGoal,
    pub label: Label,
    pub g: f64,
    pub stop: StopReason,
    pub queries: u64,
    pub breakdown: QueryBreakdown,
    pub key_frames: Vec<usize>,
    pub clamped_label: Option<Label>,
    pub candidates: Vec<CandidateReport>,
    pub chosen: usize,
    pub trace: OptimizationTrace,
}

impl AttackResult {
    pub fn details(&self) -> AttackDetails {
        AttackDetails {
            goal: self.goal,
            label: self.label,
            g: self.g,
            stop: self.stop,
            queries: self.queries,
            breakdown: self.breakdown,
            key_frames: self.mask.key_frames(),
            clamped_label: self.clamped_label,
            candidates: self.candidates.clone(),
            chosen: self.chosen,
            trace: self.trace.clone(),
        }
    }

    pub fn metric_row(&self, id: impl Into<String>) -> metrics::MetricRow {
        metrics::MetricRow {
            id: id.into(),
            success: self.success,
            queries: self.queries,
            map: Some(self.map),
            map_masked: Some(self.map_masked),
            sparsity: Some(self.sparsity),
        }
    }

    pub fn perturbation(&self, x: &VideoTensor) -> Result<VideoTensor> {
        self.x_adv.sub(x)
    }
}

/// Attack `x` (true label `y`). Starting directions come from `dataset`.
pub fn attack(
    session: &mut QuerySession<'_>,
    x: &VideoTensor,
    y: Label,
    config: &AttackConfig,
    dataset: &Dataset,
) -> Result<AttackResult> {
    config.validate()?;
    let dims = session.dims();
    if x.dims() != dims {
        return Err(Error::ShapeMismatch { expected: dims, actual: x.dims() });
    }
    let goal = config.goal(y, dataset.num_classes().max(y.0 + 1))?;

    let previous = session.set_purpose(QueryPurpose::Clean);
    let clean = session.query(x);
    session.set_purpose(previous);
    let clean = clean?;
    if clean.label != y {
        return Err(Error::CleanSampleMisclassified { expected: y, got: clean.label });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let candidates = sample_candidates(dataset, x, goal, config.n_init_candidates, &mut rng)?;
    let spatial = if config.enable_spatial { spatial_mask(x, config.phi())? } else { BinaryMask::ones(dims) };

    let mut reports = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, Initialization, BoundaryParams)> = None;
    for cand in &candidates {
        let before = session.count();
        match initialize_direction(session, x, goal, &cand.video, config, &spatial) {
            Ok(init) => {
                reports.push(CandidateReport {
                    id: cand.id.clone(),
                    g_init: Some(init.g_init),
                    queries: init.queries,
                    key_frames: Some(init.mask.key_frame_count()),
                    failure: None,
                });
                if best.as_ref().is_none_or(|(_, b, _)| init.g_init < b.g_init) {
                    let params = candidate_params(&config.boundary, cand.video.sub(x)?.l2_norm());
                    best = Some((reports.len() - 1, init, params));
                }
            }
            Err(e @ (Error::StartingDirectionNotAdversarial
            | Error::NotAdversarialWithinCap { .. }
            | Error::ZeroDirection)) => reports.push(CandidateReport {
                id: cand.id.clone(),
                g_init: None,
                queries: session.count() - before,
                key_frames: None,
                failure: Some(e.to_string()),
            }),
            Err(e) => return Err(e),
        }
    }
    let (chosen, init, params) = best.ok_or(Error::NoViableInitialization)?;

    let support = (init.mask.count_ones() < init.mask.dims().len()).then_some(&init.mask);
    let optimized =
        optimize_direction(session, x, goal, &init.theta, init.g_init, &config.optimizer, &params, support, &mut rng)?;

    let unit = optimized.theta.normalized();
    let x_adv = x.axpy(optimized.g, unit.as_tensor())?;

    // The verification query is outside the optimisation budget.
    let limit = session.limit();
    session.set_limit(None);
    let previous = session.set_purpose(QueryPurpose::Verify);
    let verdict = session.query(&x_adv);
    session.set_purpose(previous);
    session.set_limit(limit);
    let verdict = verdict?;

    let clamped_label = if config.report_clamped {
        let mut audit = QuerySession::new(session.victim());
        Some(audit.query(&x_adv.clamp_pixels())?.label)
    } else {
        None
    };

    let perturbation = x_adv.sub(x)?;
    Ok(AttackResult {
        success: goal.is_success(verdict.label),
        label: verdict.label,
        queries: session.count(),
        map: metrics::map(&perturbation),
        map_masked: metrics::map_masked(&perturbation, &init.mask)?,
        sparsity: metrics::sparsity(&init.mask),
        mask: init.mask,
        trace: optimized.trace,
        clamped_label,
        goal,
        g: optimized.g,
        stop: optimized.stop,
        breakdown: session.breakdown(),
        candidates: reports,
        chosen,
        x_adv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::victim::LinearSoftmaxVictim;

    fn labelled(id: &str, label: usize, d: Dims, v: f64) -> LabeledVideo {
        LabeledVideo { id: id.into(), label: Label(label), video: VideoTensor::filled(d, v) }
    }

    #[test]
    fn candidate_sampling() {
        let d = Dims::new(1, 1, 1, 1).unwrap();
        let ds = Dataset::new(vec![
            labelled("a", 0, d, 1.0),
            labelled("b", 1, d, 2.0),
            labelled("c", 1, d, 3.0),
            labelled("d", 1, d, 4.0),
            labelled("e", 2, d, 5.0),
        ])
        .unwrap();
        let x = VideoTensor::filled(d, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = AttackGoal::Targeted { target: Label(1) };
        let mut got: Vec<&str> =
            sample_candidates(&ds, &x, t, 3, &mut rng).unwrap().iter().map(|s| s.id.as_str()).collect();
        got.sort();
        assert_eq!(got, vec!["b", "c", "d"]);
        let u = AttackGoal::Untargeted { true_label: Label(0) };
        let one = sample_candidates(&ds, &x, u, 1, &mut rng).unwrap();
        assert_ne!(one[0].label, Label(0));
        assert!(matches!(
            sample_candidates(&ds, &x, t, 4, &mut rng),
            Err(Error::InsufficientCandidates { requested: 4, available: 3 })
        ));
    }

    #[test]
    fn goal_from_mode() {
        let c = AttackConfig { mode: AttackMode::Targeted { target: None }, ..Default::default() };
        assert_eq!(c.goal(Label(2), 3).unwrap(), AttackGoal::Targeted { target: Label(0) });
        assert_eq!(c.omega().value(), 30.0);
        assert_eq!(c.phi().value(), 0.8);
        let u = AttackConfig::default();
        assert_eq!(u.omega().value(), 3.0);
        assert_eq!(u.phi().value(), 0.6);
        let bad = AttackConfig { mode: AttackMode::Targeted { target: Some(Label(1)) }, ..Default::default() };
        assert!(bad.goal(Label(1), 3).is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(serde_json::from_str::<AttackConfig>(r#"{"omgea": 3}"#).is_err());
        let c: AttackConfig = serde_json::from_str(r#"{"omega": "inf", "mode": {"kind": "untargeted"}}"#).unwrap();
        assert!(c.omega().value().is_infinite());
    }

    fn two_class(d: Dims) -> LinearSoftmaxVictim {
        let n = d.len() as f64;
        LinearSoftmaxVictim::new(vec![VideoTensor::zeros(d), VideoTensor::filled(d, 1.0 / n)], vec![0.0, -100.0], 1.0)
            .unwrap()
    }

    #[test]
    fn misclassified_clean_sample() {
        let d = Dims::new(1, 8, 8, 1).unwrap();
        let v = two_class(d);
        let mut s = QuerySession::new(&v);
        let ds = Dataset::new(vec![labelled("b", 1, d, 200.0)]).unwrap();
        let x = VideoTensor::filled(d, 150.0);
        let err = attack(&mut s, &x, Label(0), &AttackConfig::default(), &ds).unwrap_err();
        assert!(matches!(err, Error::CleanSampleMisclassified { .. }));
        assert_eq!(s.count(), 1);
    }
}
