//! Numerical laboratory for a supercritical reaction-diffusion equation and
//! its dual branching Brownian particle system.
//!
//! Two engines, one model: a spectral split-step solver for
//! `u_t = Laplace(u) - u + sum_k q_k u^k` on a periodic box, and an
//! event-driven Monte Carlo simulator of the branching particle system whose
//! expectations the solution encodes. Exact product identities tie the two
//! together, so each engine doubles as the other's test oracle. On top sit
//! long-time diagnostics (asymptotic mass, kernel profiles) and scalar-ODE
//! ground truths for the occupation-time limits.

pub mod field;
pub mod offspring;
pub mod oracle;
pub mod pde;
pub mod shapes;
pub mod asymptotics;
pub mod branching;
pub mod cli;
pub mod duality;
