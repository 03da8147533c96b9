//! Variational search for periodic orbits of Hamiltonian flows on energy
//! levels close to a Bott-nondegenerate symplectic extremum.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs; IO, configuration files and the command line live
//! in the `orbitlab` companion crate.
//!
//! Pipeline, bottom to top:
//!
//! * [`system`] and [`geometry`]: the model system, symplectic frames at base
//!   points, Darboux charts and normal Hessians.
//! * [`rescale`]: fibre dilation, the limiting linear field and symplectic
//!   eigenvalues of the normal Hessian.
//! * [`loops`]: truncated Fourier loops with the `H^{1/2}` geometry.
//! * [`action`]: the modified Hamiltonian `h_m` and the action functional.
//! * [`minimax`]: linking sets, the descent flow and Newton polishing.
//! * [`orbits`]: conversion of critical loops into verified periodic orbits.
//!
//! Sign conventions are fixed once: `Omega(X_H, .) = dH` in ambient
//! coordinates, so `X_H = -Omega^{-1} grad H`; the compatible complex
//! structure satisfies `g_J = Omega(., J .)`.

#![no_std]

extern crate alloc;

pub mod action;
pub mod error;
pub mod field;
pub mod geometry;
pub mod linalg;
pub mod loops;
pub mod minimax;
pub mod orbits;
pub mod rescale;
pub mod sampling;
pub mod system;

pub use error::{Error, Result};
