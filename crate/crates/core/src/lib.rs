//! Text-to-3D-shape retrieval.
//!
//! Shapes are encoded from their point clouds and from rendered, posed views;
//! captions are encoded with a bidirectional GRU. Parts and words are matched
//! by entropic optimal transport, and training uses semi-hard negative mining
//! over batch score matrices. Everything trainable runs on the small
//! reverse-mode engine in [`diffcore`].
//!
//! The crate ships runnable programs under `examples/`, one per capability:
//!
//! ```bash
//! cargo run --release --example sinkhorn_transport
//! cargo run --release --example feature_propagation
//! cargo run --release --example render_views
//! cargo run --release --example view_encoder
//! cargo run --release --example text_encoder
//! cargo run --release --example semi_hard_mining
//! cargo run --release --example ranking_metrics
//! cargo run --release --example gradient_check
//! cargo run --release --example train_synthetic
//! cargo run --release --example retrieve
//! ```

pub mod diffcore;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod matching;
pub mod mining;
pub mod pipeline;

pub use error::{Error, Result};
