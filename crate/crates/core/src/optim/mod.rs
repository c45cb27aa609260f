//! Losses, the optimizer and the training loop.

mod adam;
mod losses;
mod train;

pub use adam::{Adam, AdamConfig};
pub use losses::*;
pub use train::*;
