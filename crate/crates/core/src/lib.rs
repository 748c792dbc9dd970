//! Defect life-cycle mining: reconstructs injected, opening, fixed and
//! affected versions of defects from issue exports and git history, labels
//! affected versions and defective classes with competing methods, and
//! evaluates those methods.

pub mod avlabel;
pub mod classlabel;
pub mod error;
pub mod evalstats;
pub mod features;
pub mod fselect;
pub mod harness;
pub mod ingest;
pub mod lifecycle;
pub mod szz;
pub mod vcs;

pub use error::{Error, Result};
