//! Simulation benchmark for unbiased learning to rank from clicks.
//!
//! Counterfactual learners (CF-RANK, CF-DCG) train on click logs collected by
//! a fixed production ranker; the online learner (PDGD) controls what it
//! displays and updates after every session. Both are exercised against
//! simulated users with configurable click noise, position bias and selection
//! bias, and evaluated with nDCG@10.

pub mod cltr;
pub mod error;
pub mod eval;
pub mod letor;
pub mod model;
pub mod oltr;
pub mod runner;
pub mod simulation;

pub use error::{Error, Result};
pub use letor::{DatasetSplit, Document, Query};
pub use model::{LinearModel, Ranking};
pub use simulation::{ClickVector, UserModel};
