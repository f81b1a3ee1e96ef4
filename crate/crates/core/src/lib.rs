//! cotlab: a desk-scale laboratory for chain-of-thought compression.
//!
//! The crate bundles five subsystems around the k-parity task:
//!
//! * [`parity`] — instance sampling, the binary-tree step decomposition and
//!   the explicit/implicit token encodings.
//! * [`model`] / [`grad`] — a one-layer softmax-attention transformer with a
//!   quartic elementwise FFN, its closed-form attention gradient and a
//!   finite-difference oracle.
//! * [`gradlab`] — gradient signal/noise experiments: order-r contractions,
//!   Hoeffding concentration, scaling-law fits, sample-complexity probes and
//!   the two latent-token noise probes.
//! * [`train`] — SGD harness for explicit CoT, the two implicit baselines and
//!   the alignment-augmented objectives, plus the concealed-step sweep.
//! * [`natbool`] — the NatBool-DAG benchmark generator and verifier.
//! * [`metrics`] — PMI / synergy / interaction density-and-quality metrics
//!   over tokenized corpora.
//!
//! Every random choice flows from a user seed through [`seeding::substream`],
//! so all artifacts are reproducible byte-for-byte.

pub mod error;
pub mod gradlab;
pub mod grad;
pub mod metrics;
pub mod model;
pub mod natbool;
pub mod parity;
pub mod seeding;
pub mod train;

pub use error::{Error, Result};
