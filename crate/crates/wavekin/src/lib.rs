//! Numerical and combinatorial workbench for the spatially inhomogeneous
//! 4-wave kinetic equation
//!
//! ```text
//! ∂_t f + v·∇_x f = C[f],
//! C[f] = ∫ δ(Σ) δ(Ω) (f₁f₂f₃ + f f₂f₃ − f f₁f₃ − f f₁f₂) dv₁ dv₂ dv₃,
//! ```
//!
//! and of its finite-order hierarchy truncations.
//!
//! Module map:
//!
//! - [`phase`]: phase-space fields, polynomial weights, weighted sup-norms,
//!   free transport and the binary grid format.
//! - [`resonance`]: the resonant manifold and its geometric identities.
//! - [`quadrature`]: sphere, box, time and improper line rules.
//! - [`collision`]: the gain/loss forms `L_0..L_3`, `C[f]`, weak-form averages.
//! - [`solver`]: the mild-solution Picard solver in the transported frame.
//! - [`bounds`]: explicit constants and numerical checks of the integral lemmas.
//! - [`hierarchy`]: marginals, hierarchy collision operators, mixtures.
//! - [`boardgame`]: collision-history maps, acceptable moves, echelon forms.
//! - [`cli`]: configuration and the command-line driver.

pub mod boardgame;
pub mod bounds;
pub mod cli;
pub mod collision;
mod error;
mod exec;
pub mod hierarchy;
pub mod phase;
pub mod quadrature;
pub mod resonance;
pub mod solver;

pub use error::{Error, Result};
pub use exec::Exec;
pub use phase::Vec3;
