//! Zero-inflated Poisson and negative-binomial regression.

pub mod family;
pub mod fit;
pub mod gof;
pub mod model;
pub mod optim;
pub mod special;

pub use family::{ln_pmf, moments, pmf, Family};
pub use fit::{fit_mle, fit_mle_with, Coefficient, Component, Convergence, FitOptions, Prediction, ZIFit};
pub use gof::{chisq_from_table, gof_chisq, GofBin, GofResult};
pub use model::{link_eval, loglik, loglik_grad, Design, ThetaMode, ZIParams, ZISpec};
