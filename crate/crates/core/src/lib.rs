//! Embedded-epoch queue-length distributions for polling systems with
//! non-branching service disciplines.

mod fft;
pub mod lattice;
pub mod model;
pub mod pgf;
pub mod kernels;
pub mod amc;
pub mod iterate;
pub mod sim;
pub mod verify;
pub mod cli;
