//! Sieve two-stage least squares for nonparametric instrumental-variable
//! regression with spectral features.
//!
//! The crate provides:
//! - a small dense linear algebra kernel ([`linalg`]),
//! - a conditional expectation operator with exactly known SVD ([`operator`]),
//! - a synthetic scenario generator with rejection sampling ([`synthetic`]),
//! - oracle and learned (MLP) feature maps ([`features`]),
//! - the spectral contrastive loss and its training loop ([`contrastive`]),
//! - the sieve 2SLS estimator ([`twostage`]),
//! - ill-posedness and alignment diagnostics ([`diagnostics`]),
//! - the experiment grid harness and CLI machinery ([`harness`]).
//!
//! All heavy inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and falls back to sequential
//! execution otherwise. Summations are chunked with a fixed chunk size so both
//! paths produce bit-identical results.

pub mod contrastive;
pub mod diagnostics;
pub mod features;
pub mod harness;
pub mod linalg;
pub mod operator;
pub mod par;
pub mod synthetic;
pub mod twostage;
