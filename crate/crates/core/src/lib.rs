//! Frame-wise skill segmentation for long-horizon, contact-rich manipulation
//! demonstrations.
//!
//! The pipeline runs tactile and third-person embeddings, force/torque and
//! TCP pose streams through
//!
//! 1. multi-rate synchronization onto a 50/3 Hz grid ([`recdata`]),
//! 2. trigger-artifact removal and wrench frame remapping ([`wrenchproc`]),
//! 3. normalization and per-frame fusion into 532-D vectors ([`featfuse`]),
//! 4. overlapping windows with an idle filter ([`windower`]),
//! 5. a BiLSTM, TCN or Transformer labeler ([`seqmodels`], [`trainer`]),
//! 6. soft voting across windows and frame-wise metrics ([`segmenter`]).
//!
//! [`synthgen`] produces labeled synthetic demonstrations with the same phase
//! structure, used for testing and desk-scale experiments.

pub mod error;
pub mod featfuse;
pub mod pipeline;
pub mod recdata;
pub mod segmenter;
pub mod synthgen;
pub mod seqmodels;
pub mod trainer;
pub mod tsm;
pub mod windower;
pub mod wrenchproc;

pub use error::{Error, Result};
