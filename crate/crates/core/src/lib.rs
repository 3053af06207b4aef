//! Discontinuous Galerkin approximation of the stationary distribution of a
//! stochastic fluid-fluid process `{X_t, Y_t, φ_t}`.
//!
//! The pipeline runs bottom-up through the modules: a [`model::ModelSpec`] and
//! a [`stencil::BasisSet`] give per-phase generators ([`dg_core`]), which are
//! combined into the block operators `𝓑`, `𝓡` and `𝓓(s)`
//! ([`operator_assembly`]). The Riccati solve ([`riccati`]) yields `ψ`, and
//! [`stationary`] turns `ψ` into boundary masses, level densities and
//! marginals. [`montecarlo`] and [`analysis`] provide independent checks.

pub mod analysis;
pub mod dg_core;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod operator_assembly;
pub mod riccati;
pub mod scalar;
pub mod stationary;
pub mod stencil;

use thiserror::Error;

pub use scalar::{lit, Real, Scalar};

/// Any error raised by the library, tagged with the module it came from.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Stencil(#[from] stencil::StencilError),
    #[error(transparent)]
    Dg(#[from] dg_core::DgError),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error(transparent)]
    Assembly(#[from] operator_assembly::AssemblyError),
    #[error(transparent)]
    Riccati(#[from] riccati::RiccatiError),
    #[error(transparent)]
    Stationary(#[from] stationary::StationaryError),
    #[error(transparent)]
    MonteCarlo(#[from] montecarlo::SimulationError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Model(e) => e.code(),
            Error::Stencil(e) => e.code(),
            Error::Dg(e) => e.code(),
            Error::Linalg(e) => e.code(),
            Error::Assembly(e) => e.code(),
            Error::Riccati(e) => e.code(),
            Error::Stationary(e) => e.code(),
            Error::MonteCarlo(e) => e.code(),
            Error::Analysis(e) => e.code(),
        }
    }

    pub fn module(&self) -> &'static str {
        match self {
            Error::Model(_) => "model",
            Error::Stencil(_) => "stencil",
            Error::Dg(_) => "dg_core",
            Error::Linalg(_) => "linalg",
            Error::Assembly(_) => "operator_assembly",
            Error::Riccati(_) => "riccati",
            Error::Stationary(_) => "stationary",
            Error::MonteCarlo(_) => "montecarlo",
            Error::Analysis(_) => "analysis",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub type ModelSpecF64 = model::ModelSpec<f64>;
pub type StencilF64 = stencil::Stencil<f64>;
pub type BasisSetF64 = stencil::BasisSet<f64>;
pub type CoefficientVectorF64 = stencil::CoefficientVector<f64>;
pub type DiscretisationF64 = operator_assembly::Discretisation<f64>;
pub type PsiSolutionF64 = riccati::PsiSolution<f64>;
pub type StationarySolutionF64 = stationary::StationarySolution<f64>;
