//! Exercise recommendation pipeline: behavior-aware learning-progress
//! prediction, memory-augmented knowledge tracing, candidate filtering and
//! diversity-driven list selection via a hippopotamus-style metaheuristic.
//!
//! The crate is organized to mirror the pipeline stages:
//!
//! - [`corpus`]: exercise bank, concept coverage and interaction logs
//! - [`tape`]: the dense-tensor ops and reverse-mode gradients both models share
//! - [`progress`]: tri-directional mixing encoder producing the progress vector Q
//! - [`mastery`]: memory-augmented tracer producing mastery Z and difficulty D
//! - [`filter`]: Ω-score candidate selection
//! - [`hippo`]: sine-chaotic hippopotamus optimizer over candidate subsets
//! - [`eval`]: metrics, synthetic corpora and report emission

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod filter;
pub mod hippo;
pub mod mastery;
pub mod optim;
pub mod progress;
pub mod seed;
pub mod tape;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;
