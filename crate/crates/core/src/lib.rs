//! Sequence-transducer distillation primitives.
//!
//! Everything in this crate is a pure function of its inputs and only needs
//! `alloc`: the transducer lattice loss with its analytic gradient,
//! node-wise KL distillation over the lattice, spectrogram augmentations
//! driven by an explicit seeded generator, and a small trainable transducer
//! with hand-written backpropagation.
//!
//! Conventions shared by every module:
//!
//! * class `0` of every lattice node is the blank symbol, labels live in
//!   `1..K`;
//! * all arithmetic is `f64`, lattice recursions run in the log domain with
//!   `-inf` marking unreachable nodes.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod augment;
pub mod distill;
mod error;
pub mod lattice;
pub mod math;
pub mod model;
pub mod oracle;
mod tensor;

pub use augment::{AugmentConfig, FeatureMatrix, MaskAxis, MaskRegion};
pub use distill::{DistillConfig, DistillMode, NodeDistribution};
pub use error::{Error, Result};
pub use lattice::{LabelSequence, LatticePosteriors, LogitLattice, LossResult};
pub use model::{Activation, OptimizerState, ParamGradients, ToyTransducerParams};
pub use tensor::Matrix;

/// The generator used for every random draw in this crate and its users.
///
/// ChaCha with 8 rounds, seeded through `SeedableRng::seed_from_u64`. Its
/// output stream is fixed across platforms and releases, which is what makes
/// augmented features and initial weights reproducible from a 64-bit seed.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds the generator for one independent unit of work (an utterance, an
/// epoch) so that parallel schedules cannot change the draws.
pub fn derived_rng(seed: u64, stream: u64) -> SeededRng {
    use rand::SeedableRng;
    let mut rng = SeededRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
