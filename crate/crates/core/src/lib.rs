//! Toolkit for stochastic processes with separable covariance functions.
//!
//! The crate builds, samples, decomposes, and tests processes whose
//! covariance factorizes as a product of 1-D covariances: kernel algebra
//! and its closed-form consequences ([`kernel`]), numerical Mercer
//! eigendecomposition and Karhunen-Loeve sampling ([`spectral`]),
//! k-th-order uncorrelation checks and product-process construction
//! ([`second_order`]), Gaussian-process emulation with Kronecker-structured
//! grid solves ([`emulator`]), and experimental-design comparisons
//! ([`design`]). The `sepcov` binary exposes the batch front end.

pub mod checks;
pub mod cli;
pub mod design;
pub mod emulator;
pub mod error;
pub mod kernel;
pub mod quadrature;
pub mod rng;
pub mod second_order;
pub mod spectral;

pub use error::{Error, Result};

/// `n` evenly spaced values covering `[lo, hi]` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| lo + step * i as f64).collect()
        }
    }
}
