pub mod diophantine;
pub mod dynamics;
pub mod epp;
pub mod exact;
pub mod families;
pub mod geometry;
pub mod spectrum;
pub mod wavefunction;
