//! Hybrid inverse rendering: neural intrinsic fields rendered volumetrically
//! for primary rays, shaded with Monte Carlo secondary rays traced against
//! an extracted mesh, and optimized end to end.

pub mod gradcore;
pub mod math;
pub mod image;
pub mod nfield;
pub mod rng;
pub mod volren;
pub mod geomesh;
pub mod sceneio;
pub mod shade;
pub mod optim;
pub mod manipulate;
