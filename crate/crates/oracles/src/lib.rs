//! Reference computations for tests.
//!
//! Each oracle recomputes a quantity by a different route from the library:
//! plain nested loops instead of the matrix type, first-order iterations
//! instead of active sets, brute-force grids, finite differences, or
//! re-simulation. Only input conversion touches library types.

pub mod barrier;
pub mod fd;
pub mod fixtures;
pub mod nets;
pub mod qp;
pub mod resim;
pub mod stats;
