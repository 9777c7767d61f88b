//! Hard-label black-box adversarial attacks on video classifiers.
//!
//! The victim exposes only its top-1 label and probability. Attacks search
//! for a direction `θ` minimising the distance `g(θ)` from the clean video to
//! the decision boundary, using zeroth-order gradient estimates, and restrict
//! the perturbation to a few key frames (temporal sparsity) and to salient
//! regions of each frame (spatial sparsity).

pub mod attack;
pub mod bench;
pub mod boundary;
pub mod config;
pub mod error;
pub mod metrics;
pub mod saliency;
pub mod synthetic;
pub mod temporal;
pub mod tensor;
pub mod vbt;
pub mod victim;
pub mod zoo;

pub use attack::{attack, AttackConfig, AttackMode, AttackResult, Dataset, LabeledVideo};
pub use boundary::{evaluate_g, AttackGoal, BoundaryParams};
pub use error::{Error, Result};
pub use tensor::{BinaryMask, Dims, Direction, Label, VideoTensor};
pub use victim::{QuerySession, Victim, VictimResponse};
