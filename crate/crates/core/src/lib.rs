//! Random unconditional convex bodies, certified norm and support oracles,
//! concentration Monte Carlo, Banach-Mazur distance upper bounds, and exact
//! nets of completely symmetric bodies.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches the
//! file system, threads or the command line lives in the companion `bmcompact`
//! crate. Parallel work is expressed through the [`Runner`] trait so that the
//! numeric results never depend on how many workers execute the jobs.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod math;
mod runner;

pub mod bodies;
pub mod conclab;
pub mod csnet;
pub mod distance;
pub mod linalg;
pub mod randmodel;

pub use error::{Error, Result};
pub use runner::{Runner, Sequential};
