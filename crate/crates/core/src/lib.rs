//! Removability of discrete real spectra under rank-one singular perturbations.
//!
//! The library is generic over the real scalar (`f32` or `f64`); the aliases at
//! the bottom of this file fix `f64`, which is what the command-line tool uses.

pub mod canonical_product;
pub mod contour;
pub mod error;
pub mod finite_section;
pub mod fit;
pub mod krein_diag;
pub mod model_funcs;
pub mod nustar;
pub mod perturb_synth;
pub mod scalar;
pub mod special;
pub mod spectra;
pub mod tails;

pub use error::{Error, Result};
pub use scalar::{Real, C};

pub type Spectrum64 = spectra::Spectrum<f64>;
pub type FamilySpec64 = spectra::FamilySpec<f64>;
pub type Family64 = spectra::Family<f64>;
pub type GeneratingFunction64 = canonical_product::GeneratingFunction<f64>;
pub type RemovabilityReport64 = krein_diag::RemovabilityReport<f64>;
pub type PerturbationData64 = perturb_synth::PerturbationData<f64>;
pub type ModelEvaluator64 = model_funcs::ModelEvaluator<f64>;
pub type FiniteSection64 = finite_section::FiniteSection<f64>;
pub type NuStar64 = nustar::NuStar<f64>;
