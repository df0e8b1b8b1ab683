//! Random-forest variable selection and zero-inflated count regression.
//!
//! The crate is organised around the analysis pipeline:
//!
//! - [`dataset`]: typed tabular input, one-hot expansion, derived covariates.
//! - [`cart`]: fully grown variance-minimising regression trees.
//! - [`forest`]: bagged forests, out-of-bag error and permutation importance.
//! - [`varselect`]: elimination / interpretation / prediction selection, plus
//!   forward and exhaustive variants.
//! - [`zicount`]: zero-inflated Poisson and negative-binomial regression.
//! - [`simgen`]: simulation benchmark and synthetic count generators.
//! - [`report`], [`svg`]: tables, JSON documents and plots.

pub mod cart;
pub mod dataset;
pub mod error;
pub mod forest;
pub mod report;
pub mod rng;
pub mod simgen;
pub mod svg;
pub mod varselect;
pub mod zicount;

pub use error::{Error, Result};
