//! Learning to navigate from disengagements in a simulated sidewalk world.
//!
//! * [`world`]: procedural sidewalks and terrain queries
//! * [`sim`]: kinematics, observations, the disengagement oracle and resets
//! * [`dataset`]: `(o, a, d)` records and training-window construction
//! * [`model`]: the action-conditioned disengagement predictor
//! * [`planner`]: sampling-based receding-horizon planner
//! * [`experiment`]: the collect/train loop, baselines and evaluation

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod model;
pub mod planner;
pub mod sim;
pub mod world;

pub use error::{Error, Result};
