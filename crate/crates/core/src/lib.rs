//! Photon-routed controlled-phase gates on a ring of cavity-QED nodes.
//!
//! Each node holds two atoms encoding one qubit in a decoherence-free
//! subspace. A single photon enters the ring, bounces off the cavities of
//! the chosen nodes and is recombined at a central detector pair; a click on
//! `Dv` heralds a controlled-phase on the chosen qubits.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod qstate;
pub mod optics;
pub mod network;
pub mod logical;
pub mod oracle;
pub mod protocols;
pub mod noise_timing;
