//! Simulation and analysis toolkit for two-particle (Hong–Ou–Mandel)
//! interference of twin atoms at a Bragg beam splitter.
//!
//! * [`fock`]: exact Fock-space states and passive linear transforms.
//! * [`correlators`]: closed-form visibility predictions.
//! * [`mc`]: Monte Carlo model of the experiment in velocity space.
//! * [`estimators`]: correlation estimators, dip fitting and calibration.
//! * [`exec`]: parallel / sequential execution switch.

pub mod correlators;
pub mod estimators;
pub mod exec;
pub mod fock;
pub mod mc;
