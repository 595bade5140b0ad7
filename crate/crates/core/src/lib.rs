//! Encrypted exact string matching with addition-only BFV, plus an
//! in-flash bitwise execution simulator and an analytical cost model.

pub mod bfv;
pub mod cost_model;
pub mod ifp_sim;
pub mod matcher;
pub mod packing;
pub mod ring;
