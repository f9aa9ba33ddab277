//! Structure-exploiting NMPC: least-squares OCP transcription, a
//! fixed-iteration primal-dual interior-point solver built on block-sparse
//! MINRES, and models of the FPGA pipeline the matrix layout was designed for.

pub mod config;
pub mod error;
pub mod hwmodel;
pub mod ipm;
pub mod kkt;
pub mod minres;
pub mod model;
pub mod nlp;
pub mod ocp;
pub mod sched;
pub mod simloop;
pub mod transcription;

pub use error::{Error, Result};
