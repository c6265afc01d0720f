//! Trigonometric polynomials with constrained spectra, `A^p` norm engines and
//! the constructions that approximate targets by such polynomials: sparse
//! (slowly lacunary) spectra, almost-integer spectra and two-gap spectra.

pub mod almost_integer;
pub mod approx;
pub mod blocks;
pub mod check;
pub mod dilated;
pub mod flc;
pub mod norms;
pub mod report;
pub mod sparse;
pub mod trigpoly;

mod fft;
mod quad;

pub use num_complex::Complex64;
