//! Microscopic simulation of pedestrians and cars in shared spaces.
//!
//! Motion is driven by an extended social force model; complex pedestrian/car
//! conflicts are resolved by Stackelberg games. The crate also provides the
//! calibration workflow (genetic algorithm plus motion-pattern clustering) and the
//! trajectory metrics used to compare model variants.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix the scalar to `f64`.

pub mod calibration;
pub mod clustering;
pub mod force;
pub mod game;
pub mod geometry;
pub mod metrics;
pub mod params;
pub mod planner;
pub mod plot;
pub mod scalar;
pub mod scenario;
pub mod seeds;
pub mod sim;
pub mod synthetic;

pub use scalar::Scalar;

pub type Vec2f = geometry::Vec2<f64>;
pub type Scenario = scenario::Scenario<f64>;
pub type AgentTrack = scenario::AgentTrack<f64>;
pub type Obstacle = scenario::Obstacle<f64>;
pub type InputProfile = scenario::InputProfile<f64>;
