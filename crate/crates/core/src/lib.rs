//! Split-IV ("npJIVE") nonparametric instrumental-variable estimation with many
//! weak instruments, debiased one-step inference for a novel arm's mean
//! long-term outcome, and exact finite-support oracles to test both.
//!
//! The pieces, in pipeline order:
//!
//! - [`data`]: historical and novel datasets, fold assignment, CSV I/O.
//! - [`kernel`]: Gaussian kernels and dictionary-coefficient functions.
//! - [`npjive`]: plug-in and cross-fold risks and their penalized fits.
//! - [`debias`]: exact- and approximate-identification debiasing nuisances.
//! - [`onestep`]: the one-step estimator and its Wald interval.
//! - [`simulate`], [`experiment`]: data-generating processes and Monte Carlo sweeps.
//! - [`oracle`]: population quantities computed exactly on discrete worlds.
//!
//! ```
//! use npjive::experiment::{estimate, Estimator};
//! use npjive::npjive::FitConfig;
//! use npjive::simulate::{Dgp, ExactIdDgpParams};
//!
//! let sim = Dgp::ExactId(ExactIdDgpParams { k: 30, n: 20, n_new: 100, ..Default::default() }).simulate()?;
//! let fit = FitConfig { lambda_floor: true, ..FitConfig::for_per_arm(20) };
//! let r = estimate(&sim.historical, &sim.novel, Estimator::Npjive, &fit, None, 0)?;
//! assert!(r.estimate.theta.is_finite());
//! # Ok::<(), npjive::Error>(())
//! ```
//!
//! The guide in `book/` walks through each stage; its code listings are
//! compiled and run as doc-tests of this crate.

pub mod data;
pub mod debias;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod npjive;
pub mod onestep;
pub mod oracle;
pub mod quad;
pub mod quadratic;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};

// Book chapters run as doc-tests so the guide cannot drift from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/npjive.md")]
    mod npjive {}
    #[doc = include_str!("../../../book/src/debiasing.md")]
    mod debiasing {}
    #[doc = include_str!("../../../book/src/one_step.md")]
    mod one_step {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
