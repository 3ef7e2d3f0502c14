//! Simulation core for studying the expressivity of emergent languages in
//! signalling games.
//!
//! The crate is organised around the lifecycle of an experiment:
//!
//! - [`space`]: structured attribute/value meaning spaces and distances,
//! - [`nn`]: a small reverse-mode autodiff engine with the layers the agents
//!   are built from,
//! - [`agents`]: speaker and listener networks plus the discrete channel with
//!   its Gumbel-Softmax relaxation,
//! - [`games`]: reconstruction and referential game losses (contrastive and
//!   conventional variants),
//! - [`trainer`]: the source-game training loop, language recording, and
//!   per-epoch diagnostics,
//! - [`transfer`]: the language-transfer experiment (fresh listeners trained
//!   on recorded languages) and its generalisation matrix,
//! - [`analysis`]: expressivity partial orders, degeneracy statistics, mutual
//!   information, degenerate-component structure, and collapse curves.
//!
//! Everything here is pure computation over in-memory data; file formats,
//! plotting, and the command-line front end live in the companion `emlang-cli`
//! crate. The crate is `no_std`-compatible (with `alloc`); the default `std`
//! feature only switches float intrinsics and enables dependencies' std
//! paths.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod agents;
pub mod analysis;
pub mod games;
pub mod gradcheck;
pub mod nn;
pub mod rng;
pub mod space;
pub mod trainer;
pub mod transfer;

mod fmath;

pub use nn::{Matrix, Tape, Var};
