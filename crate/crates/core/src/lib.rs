//! Variable-exponent multi-phase operators on triangle meshes.
//!
//! The N-function `𝒯(x, t) = t^{p(x)} + μ₁(x) t^{q(x)} + μ₂(x) t^{r(x)}`
//! drives everything here: its modular and Luxemburg norm, the discrete
//! Dirichlet problem for `−div a(x, ∇u) = f`, first eigenvalues of the
//! `m`-Laplacian, and empirical probes of Caccioppoli, Sobolev–Poincaré and
//! reverse-Hölder inequalities on computed minimizers.

pub mod config;
pub mod error;
pub mod exponent;
pub mod expr;
pub mod fem;
pub mod field;
pub mod mesh;
pub mod modular;
pub mod operator;
pub mod quadrature;
pub mod regularity;
pub mod solver;
pub mod sparse;
pub mod sum;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use exponent::{ExponentTriple, HypothesisReport, SampledConstant, WeightPair};
pub use fem::FeFunction;
pub use field::{Domain2D, Point, ScalarField};
pub use mesh::{Ball, TriMesh};
pub use modular::{ModularReport, PhaseFunction, PropertyReport};
pub use operator::{FluxParams, MultiPhaseOperator};
pub use quadrature::{QuadratureMeasure, TriangleRule};
pub use regularity::{BallFamily, ProbeReport};
pub use solver::{PhaseProblem, SolveReport, SolverSettings, SourceTerm};
