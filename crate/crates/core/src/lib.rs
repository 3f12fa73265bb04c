//! Detection and explanation of multi-step attacks in continuous-time
//! dynamic heterogeneous event graphs.
//!
//! The crate is organized around a pipeline:
//!
//! 1. [`event_graph`] — event/stream data model, log adapters, temporal
//!    graph views, and a synthetic scenario generator.
//! 2. [`pattern`] — declarative attack-pattern graphs and their alignment
//!    against the event stream.
//! 3. [`augment`] — the erosion function: injects pattern-shaped events and
//!    perturbs the aligned region to manufacture labeled attack samples.
//! 4. [`encoder`] — temporal heterogeneous graph encoder with per-node
//!    memory, trained contrastively against eroded streams.
//! 5. [`detector`] — edge-classification head fine-tuned on labeled events.
//! 6. [`sniffer`] — relevance scorer over (candidate, target) event pairs.
//! 7. [`excavator`] — Monte Carlo tree search over event subsets returning
//!    the explanatory subset for a detection.
//! 8. [`eval`] — AUC, fidelity, sparsity, fidelity-sparsity curves, AUFSC,
//!    and trivial explainer baselines.
//!
//! All training is single-threaded and deterministic given the configured
//! seeds; gradients are computed by the reverse-mode tape in [`nn`].

pub mod augment;
pub mod detector;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod event_graph;
pub mod excavator;
pub mod model_io;
pub mod nn;
pub mod pattern;
pub mod sniffer;

pub use error::{Error, Result};
