//! Decentralized H2 state-feedback synthesis for sparse interconnected
//! linear systems.
//!
//! The convex restriction with block-diagonal Lyapunov variables is solved
//! either centrally ([`synth`]) or distributedly: the sparsity graph is made
//! chordal ([`graph`]), the coupled LMI is split over maximal cliques
//! ([`chordal`]) and consensus ADMM ([`admm`]) runs over clique agents and
//! overlap coordinators. [`netsim`] replays the same iteration as a
//! message-passing simulation and audits which model data each agent sees.

// `!(x > 0.0)` is used on purpose so NaN takes the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod admm;
pub mod bench;
pub mod chordal;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod netsim;
pub mod sdp;
pub mod stabilizability;
pub mod synth;
pub mod system;

pub use error::{Error, Result};
pub use linalg::{Mat, SymMat};
pub use system::{DecentralizedController, InterconnectedSystem};
