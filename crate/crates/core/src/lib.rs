pub mod catalog;
pub mod einsteinweyl;
pub mod exprlang;
pub mod invariants;
pub mod io;
pub mod jets;
pub mod sampling;
pub mod scalar;
pub mod symmetry;
pub mod tensor;
