//! Ship collision-avoidance workbench: a multi-ship encounter simulator, a
//! DDPG trainer with a decomposed critic and an attention actor, and tools
//! that explain what the trained agent is paying attention to.
//!
//! Units are km, s and degrees. Headings are measured clockwise from north.

pub mod agent;
pub mod dynamics;
pub mod error;
pub mod explain;
pub mod neural;
pub mod observation;
pub mod reward;
pub mod scenario;

pub use error::{Error, Result};

// The guide's code blocks run as doctests, one module per chapter so a
// failure points at its chapter.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/encounters.md")]
    mod encounters {}
    #[doc = include_str!("../../../book/src/observations.md")]
    mod observations {}
    #[doc = include_str!("../../../book/src/rewards.md")]
    mod rewards {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/explaining.md")]
    mod explaining {}
}
