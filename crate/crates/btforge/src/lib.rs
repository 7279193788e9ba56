//! btforge: a behavior-tree policy toolkit for tabletop manipulation.
//!
//! The crate covers the whole symbolic pipeline around JSON-encoded
//! behavior trees:
//!
//! - [`model`] — tree/pose/specification types and the bit-exact JSON
//!   codec (two-stage parse and lowering, minified serialization).
//! - [`validate`] — static structural rules: flat hierarchy, reactive
//!   guarding, approach-offset discipline, vocabulary and grounding.
//! - [`metrics`] — per-tree structure metrics and corpus aggregates.
//! - [`scene`] / [`render`] — seeded tabletop scene generation and
//!   schematic SVG rendering.
//! - [`oracle`] — rule-based synthesis of instruction / tree / goal
//!   triples and dataset files.
//! - [`sim`] — a deterministic kinematic simulator with a reactive tick
//!   engine over the primitive library.
//! - [`eval`] — the batch pipeline scoring candidate trees against a
//!   dataset, plus controlled corpus mutations.

pub mod eval;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod render;
pub mod scene;
pub mod sim;
pub mod validate;
