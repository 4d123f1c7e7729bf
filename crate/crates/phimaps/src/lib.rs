//! Energy, variation and stability calculus for Φ₍₃₎-harmonic maps.
//!
//! A map `u : (M, g) → N ⊂ R^q` is sampled on a structured [`DomainGrid`]
//! and carries per-node jets (values and coordinate derivatives). From these
//! the crate evaluates the pullback metric `U = duᵀdu`, the energies
//! `∫ tr(U^k)/(2k)`, the tension field, the stress-energy tensor, the first
//! and second variations, SSU stability certificates, Liouville constants and
//! the conformal energy-shrinking homotopy on spheres.
//!
//! Every analytic identity has a finite-difference counterpart so that the
//! two can be compared on the same discrete object.

pub mod cli;
pub mod energy;
mod error;
pub mod flow;
pub mod liouville;
pub mod manifold;
pub mod maps;
pub mod numeric;
pub mod real;
pub mod ssu;
pub mod variation;

pub use energy::{MapField, PullbackMetric};
pub use error::{Error, Result};
pub use manifold::{
    CurvatureProfile, DomainGrid, EmbeddedTarget, GridModel, PrincipalCurvatures, Target,
};
pub use maps::{AmbientMap, AnalyticMap, DomainVectorField, MapSource};
pub use variation::{Mutation, StressTensor, VariationField};
