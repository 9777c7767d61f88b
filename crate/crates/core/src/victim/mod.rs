//! The black-box classifier boundary.
//!
//! A [`Victim`] answers with a [`VictimResponse`] only: the top-1 label and
//! its probability. Attacks never hold a victim directly; they drive a
//! [`QuerySession`], which counts every forward evaluation.

mod linear;
mod remote;

use serde::{Deserialize, Serialize};

pub use linear::{FrameObliviousVictim, LinearSoftmaxVictim};
pub use remote::{serve_victim, ClassifyRequest, ClassifyResponse, RemoteVictim, VictimServer};

use crate::error::{Error, Result};
use crate::tensor::{Dims, Label, VideoTensor};

/// Top-1 class and its probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VictimResponse {
    pub label: Label,
    pub probability: f64,
}

/// A classifier over videos of fixed dims.
pub trait Victim: Send + Sync {
    fn dims(&self) -> Dims;

    /// One forward evaluation. Callers outside this module go through
    /// [`QuerySession::query`] so the evaluation is counted.
    fn classify(&self, x: &VideoTensor) -> Result<VictimResponse>;
}

impl<V: Victim + ?Sized> Victim for std::sync::Arc<V> {
    fn dims(&self) -> Dims {
        (**self).dims()
    }

    fn classify(&self, x: &VideoTensor) -> Result<VictimResponse> {
        (**self).classify(x)
    }
}

impl<V: Victim + ?Sized> Victim for Box<V> {
    fn dims(&self) -> Dims {
        (**self).dims()
    }

    fn classify(&self, x: &VideoTensor) -> Result<VictimResponse> {
        (**self).classify(x)
    }
}

/// Why a query was issued. Used for the per-purpose query breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryPurpose {
    /// Clean-sample gate.
    Clean,
    /// Adversarial check of a candidate's starting direction.
    Start,
    /// Leave-one-frame-out probes.
    Ranking,
    /// Frame pruning probes and their boundary searches.
    Prune,
    /// Boundary search for a candidate's initial direction.
    Init,
    /// Boundary searches inside gradient estimation.
    Gradient,
    /// Boundary searches inside the line search.
    LineSearch,
    /// Final verification of the adversarial example.
    Verify,
    Other,
}

impl QueryPurpose {
    pub const ALL: [QueryPurpose; 9] = [
        QueryPurpose::Clean,
        QueryPurpose::Start,
        QueryPurpose::Ranking,
        QueryPurpose::Prune,
        QueryPurpose::Init,
        QueryPurpose::Gradient,
        QueryPurpose::LineSearch,
        QueryPurpose::Verify,
        QueryPurpose::Other,
    ];

    fn slot(self) -> usize {
        self as usize
    }
}

/// Queries per purpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBreakdown {
    pub clean: u64,
    pub start: u64,
    pub ranking: u64,
    pub prune: u64,
    pub init: u64,
    pub gradient: u64,
    pub line_search: u64,
    pub verify: u64,
    pub other: u64,
}

impl QueryBreakdown {
    pub fn total(&self) -> u64 {
        self.clean
            + self.start
            + self.ranking
            + self.prune
            + self.init
            + self.gradient
            + self.line_search
            + self.verify
            + self.other
    }

    /// Queries spent choosing key frames (ranking plus pruning).
    pub fn key_frame_search(&self) -> u64 {
        self.ranking + self.prune
    }

    fn from_slots(s: &[u64; 9]) -> Self {
        QueryBreakdown {
            clean: s[0],
            start: s[1],
            ranking: s[2],
            prune: s[3],
            init: s[4],
            gradient: s[5],
            line_search: s[6],
            verify: s[7],
            other: s[8],
        }
    }
}

/// One logged query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub index: u64,
    pub iteration: u32,
    pub purpose: QueryPurpose,
    pub label: Label,
    pub probability: f64,
}

/// Exclusive query channel to a victim with exact accounting.
pub struct QuerySession<'v> {
    victim: &'v dyn Victim,
    count: u64,
    limit: Option<u64>,
    purpose: QueryPurpose,
    iteration: u32,
    by_purpose: [u64; 9],
    log: Option<Vec<QueryRecord>>,
}

impl<'v> QuerySession<'v> {
    pub fn new(victim: &'v dyn Victim) -> Self {
        QuerySession {
            victim,
            count: 0,
            limit: None,
            purpose: QueryPurpose::Other,
            iteration: 0,
            by_purpose: [0; 9],
            log: None,
        }
    }

    /// Record every query in an in-memory log.
    pub fn with_logging(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn victim(&self) -> &'v dyn Victim {
        self.victim
    }

    pub fn dims(&self) -> Dims {
        self.victim.dims()
    }

    /// Forward `x` to the victim. The counter moves by exactly one per
    /// successful evaluation; failed evaluations are not counted.
    pub fn query(&mut self, x: &VideoTensor) -> Result<VictimResponse> {
        if let Some(limit) = self.limit {
            if self.count >= limit {
                return Err(Error::BudgetExhausted { budget: limit });
            }
        }
        let expected = self.victim.dims();
        if x.dims() != expected {
            return Err(Error::ShapeMismatch { expected, actual: x.dims() });
        }
        let response = self.victim.classify(x)?;
        self.count += 1;
        self.by_purpose[self.purpose.slot()] += 1;
        if let Some(log) = self.log.as_mut() {
            log.push(QueryRecord {
                index: self.count,
                iteration: self.iteration,
                purpose: self.purpose,
                label: response.label,
                probability: response.probability,
            });
        }
        Ok(response)
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn reset_count(&mut self) {
        self.count = 0;
        self.by_purpose = [0; 9];
        if let Some(log) = self.log.as_mut() {
            log.clear();
        }
    }

    /// Refuse queries once the counter reaches `limit`.
    pub fn set_limit(&mut self, limit: Option<u64>) {
        self.limit = limit;
    }

    pub fn limit(&self) -> Option<u64> {
        self.limit
    }

    /// Tag subsequent queries; returns the previous tag.
    pub fn set_purpose(&mut self, purpose: QueryPurpose) -> QueryPurpose {
        std::mem::replace(&mut self.purpose, purpose)
    }

    pub fn purpose(&self) -> QueryPurpose {
        self.purpose
    }

    pub fn set_iteration(&mut self, iteration: u32) {
        self.iteration = iteration;
    }

    pub fn breakdown(&self) -> QueryBreakdown {
        QueryBreakdown::from_slots(&self.by_purpose)
    }

    pub fn log(&self) -> Option<&[QueryRecord]> {
        self.log.as_deref()
    }

    pub fn take_log(&mut self) -> Option<Vec<QueryRecord>> {
        self.log.as_mut().map(std::mem::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class(dims: Dims) -> LinearSoftmaxVictim {
        LinearSoftmaxVictim::new(
            vec![VideoTensor::filled(dims, 1.0), VideoTensor::filled(dims, -1.0)],
            vec![0.0, 0.0],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn counter_contract() {
        let d = Dims::new(2, 2, 2, 1).unwrap();
        let v = two_class(d);
        let mut s = QuerySession::new(&v);
        let x = VideoTensor::filled(d, 10.0);
        assert_eq!(s.count(), 0);
        for _ in 0..3 {
            s.query(&x).unwrap();
        }
        assert_eq!(s.count(), 3);
    }

    #[test]
    fn reset_count_cases() {
        let d = Dims::new(1, 2, 2, 1).unwrap();
        let v = two_class(d);
        let x = VideoTensor::filled(d, 1.0);

        let mut fresh = QuerySession::new(&v);
        fresh.reset_count();
        assert_eq!(fresh.count(), 0);

        let mut s = QuerySession::new(&v);
        for _ in 0..5 {
            s.query(&x).unwrap();
        }
        s.reset_count();
        assert_eq!(s.count(), 0);
        s.query(&x).unwrap();
        s.query(&x).unwrap();
        assert_eq!(s.count(), 2);
    }

    #[test]
    fn shape_mismatch_is_not_counted() {
        let d = Dims::new(1, 2, 2, 1).unwrap();
        let v = two_class(d);
        let mut s = QuerySession::new(&v);
        let wrong = VideoTensor::zeros(Dims::new(1, 2, 2, 3).unwrap());
        assert!(matches!(s.query(&wrong), Err(Error::ShapeMismatch { .. })));
        assert_eq!(s.count(), 0);
    }

    #[test]
    fn limit_refuses_without_counting() {
        let d = Dims::new(1, 1, 1, 1).unwrap();
        let v = two_class(d);
        let mut s = QuerySession::new(&v);
        s.set_limit(Some(2));
        let x = VideoTensor::zeros(d);
        s.query(&x).unwrap();
        s.query(&x).unwrap();
        assert!(matches!(s.query(&x), Err(Error::BudgetExhausted { budget: 2 })));
        assert_eq!(s.count(), 2);
    }

    #[test]
    fn purposes_and_log() {
        let d = Dims::new(1, 1, 1, 1).unwrap();
        let v = two_class(d);
        let mut s = QuerySession::new(&v).with_logging();
        let x = VideoTensor::zeros(d);
        s.set_purpose(QueryPurpose::Ranking);
        s.query(&x).unwrap();
        s.query(&x).unwrap();
        s.set_purpose(QueryPurpose::Verify);
        s.set_iteration(4);
        s.query(&x).unwrap();
        let b = s.breakdown();
        assert_eq!((b.ranking, b.verify, b.total()), (2, 1, 3));
        let log = s.log().unwrap();
        assert_eq!(log.len(), 3);
        assert_eq!(log[2].purpose, QueryPurpose::Verify);
        assert_eq!(log[2].iteration, 4);
        assert_eq!(log[2].index, 3);
    }
}
