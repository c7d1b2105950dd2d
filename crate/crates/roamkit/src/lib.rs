//! roamkit: finite-ball certificates for group geometry.
//!
//! The crate builds finite balls in Cayley graphs and coned-off Cayley
//! graphs of finitely presented groups, enumerates geodesics and
//! quasi-geodesics inside them, realizes avoidance neighborhoods and
//! roaming sets with disjoining sequences, and checks exact identities
//! for finitely supported group-algebra elements over the rationals.
//! Every verdict is scoped to the ball it was computed in and carries
//! certification flags instead of global claims.

#![forbid(unsafe_code)]

pub mod budget;
pub mod catalog;
pub mod error;
pub mod graph;
pub mod l2;
pub mod paths;
pub mod presentation;
pub mod report;
pub mod roaming;
pub mod topology;

mod util;

pub use budget::Budget;
pub use error::RoamkitError;
