//! Joint compression and privacy for federated learning.
//!
//! The central object is a layered, rejection-sampled, dithered lattice
//! quantizer: the client transmits a trial index and an integer lattice
//! point, the server reconstructs from a shared pseudorandom stream, and the
//! reconstruction error follows the prescribed noise law (isotropic Gaussian
//! or scalar Laplace) exactly, independent of the input. Around that core sit
//! an entropy coder for the two message components, closed-form privacy
//! accounting with subsampling amplification, and a small federated-averaging
//! simulator used to compare the scheme against additive-noise baselines.

pub mod coding;
pub mod fl;
pub mod lattice;
pub mod layered_noise;
pub mod privacy;
pub mod quantizer;
pub mod rng;
pub mod stats;
