//! Personalized invariant representation learning on synthetic multi-modal
//! phantoms: data generation, model, losses, training, metrics and harness.

pub mod error;
pub mod harness;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod seed;
pub mod trainer;
pub mod volume;

pub use error::{PuirError, Result};
pub use volume::{Grid, LabelMap, Mask, Volume};
