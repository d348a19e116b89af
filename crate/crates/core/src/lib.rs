//! Tanh-RNN and GRU sequence models with exact backpropagation through time.
//!
//! The crate covers the whole pipeline: dense numerics ([`numerics`]), cell
//! dynamics ([`cells`]), BPTT and clipping ([`engine`]), SGD training
//! ([`training`]), the delayed-sum memory benchmark ([`toytask`]), motion data
//! handling and free-running generation ([`motion`]), JSON checkpoints
//! ([`persistence`]) and SVG line charts ([`plot`]).

pub mod cells;
pub mod engine;
pub mod error;
pub mod motion;
pub mod numerics;
pub mod persistence;
pub mod plot;
pub mod toytask;
pub mod training;

pub use cells::{CellKind, Dims, GruParams, Params, StepCache, TanhParams};
pub use engine::{
    backward_sequence, clip_gradients, finite_difference_grads, forward_sequence, max_relative_error,
    ForwardTrace, Gradients,
};
pub use error::{Error, Result};
pub use motion::{seed_and_generate, GenerationRun, MotionDataset, NormStats};
pub use numerics::{l2_norm_all, DenseMatrix, DenseVector, Rng};
pub use persistence::{load_checkpoint, save_checkpoint, Checkpoint};
pub use toytask::{generate_toy_dataset, Sequence, SeriesDataset};
pub use training::{compare_cells, train, TrainConfig, TrainReport};
