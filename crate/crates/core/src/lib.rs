//! Simulation of Markovian open bosonic dynamics in the Husimi Q
//! representation, with the Q function carried by a normalizing flow.
//!
//! Phase-space points use the layout `x = (q_1, …, q_M, p_1, …, p_M)` with
//! `α_m = q_m + i p_m`.

pub mod error;
pub mod evolve;
pub mod flow;
pub mod fock;
pub mod liouvillian;
pub mod metrics;
pub mod par;
pub mod pretrain;
pub mod reference;

pub use error::{Error, Result};
