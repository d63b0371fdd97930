//! # vaelab
//!
//! A numerical laboratory for studying how variational autoencoders recover
//! low-dimensional nonlinear manifolds buried under sparse gross corruptions,
//! next to the classical baselines they generalize: probabilistic PCA in
//! closed form and convex robust PCA.
//!
//! The crate is organized as a library; each major capability has a runnable
//! example under `examples/`:
//!
//! - **`svd_shrinkage`** — dense SVD, soft thresholding, singular value
//!   shrinkage ([`numkit`]).
//! - **`gradient_check`** — exact reverse-mode gradients for the small MLPs
//!   used everywhere, verified against central differences ([`diffnet`]).
//! - **`ppca_closed_form`** — the affine-decoder collapse: closed-form
//!   optimum, posterior moments, and the rotation/permutation invariance
//!   suite ([`affine`]).
//! - **`rpca_recovery`** — augmented-Lagrangian robust PCA and the exact
//!   brute-force low-rank-plus-sparse oracle ([`rpca`]).
//! - **`ground_truth_manifold`** — the synthetic nonlinear-manifold pipeline
//!   with a certified inverse encoder ([`manifolds`]).
//! - **`train_vae`** — robust VAE / AE training on a corrupted manifold
//!   ([`models`]).
//! - **`latent_pruning`** — estimating intrinsic dimension from first-layer
//!   decoder column norms ([`probes`]).
//! - **`sigma_z_bifurcation`** — encoder-variance statistics and their
//!   zero/one split ([`probes`]).
//! - **`slope_law`** — the candidate-solution objective slope scan and the
//!   piecewise-linear memorization bound ([`probes`]).
//! - **`phase_cell`** — one cell of the phase-transition benchmark through
//!   the experiment harness ([`bench`]).
//!
//! Run any of them with `cargo run --release --example <name>`.
//!
//! A single thin binary (`vaelab`) exposes the experiment drivers as
//! subcommands (`phase`, `prune`, `covstats`, `mnist`, `selftest`); see the
//! README for the config-file keys.

pub mod affine;
pub mod bench;
pub mod diffnet;
pub mod error;
pub mod manifolds;
pub mod models;
pub mod numkit;
pub mod probes;
pub mod rpca;

pub use error::{Error, Result};
