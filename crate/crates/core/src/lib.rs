pub mod classify;
pub mod connectivity;
pub mod error;
pub mod evaluate;
pub mod lattice;
pub mod linalg;
pub mod par;
pub mod parcellation;
pub mod pipeline;
pub mod provenance;
pub mod rng;
pub mod signal;
pub mod synthdata;
pub mod tables;

pub use error::{Error, Result};
