//! Random walks on `PSL(2,C)` acting on the Riemann sphere: Möbius
//! arithmetic, random-matrix measures, a discretised Fubini–Study calculus
//! on the sphere, the pull-back transfer operator on `(1,0)`-forms and the
//! limit theorems it controls.

pub mod error;
pub mod limits;
pub mod measures;
pub mod mobius;
pub mod regularity;
pub mod rng;
pub mod runner;
pub mod sphere;
pub mod stats;
pub mod transfer;

pub use error::{Error, Result};
pub use measures::{AtomicMeasure, ElementarityVerdict, MatrixMeasure, MomentSpec, SamplerMeasure};
pub use mobius::{GroupElement, MobiusClass, ProjPoint};
pub use sphere::{GridFunction, OneForm, SphereGrid, YoungFunction};
pub use transfer::EmpiricalMeasure;
