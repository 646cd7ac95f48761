//! Deterministic driving micro-simulator: sensors, road network, expert,
//! controller and benchmark metrics.

pub mod bev;
pub mod episode;
pub mod error;
pub mod geom;
pub mod metrics;
pub mod path;
pub mod pid;
pub mod render;
pub mod town;
pub mod vehicle;
pub mod world;

pub use error::{Result, SimError};
