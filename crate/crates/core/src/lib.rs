//! Co-design of 2D truss-lattice robots.
//!
//! A robot is a grid of nodes joined by edges, each edge a soft mixture of
//! void, skeleton and actuator material. A small MLP drives the actuators
//! and a differentiable mass-spring simulator scores the gait. The
//! [`optimizer`] alternates MMA steps on the design with Adam steps on the
//! controller until the design snaps to a discrete one.

pub mod controller;
pub mod design;
pub mod error;
pub mod lattice;
pub mod optimizer;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
