//! Fractional factorial screening of compiler flags for energy and run time.
//!
//! [`design`] builds the experiment, [`orchestrate`] compiles and measures
//! it through a [`measure`] backend, [`stats`] estimates the effects and
//! [`report`] renders them. [`cli`] ties these to a TOML [`config`].

pub mod design;
pub mod stats;
pub mod measure;
pub mod orchestrate;
pub mod report;
pub mod config;
pub mod cli;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/designs.md")]
    mod designs {}
    #[doc = include_str!("../../../book/src/effects.md")]
    mod effects {}
    #[doc = include_str!("../../../book/src/significance.md")]
    mod significance {}
    #[doc = include_str!("../../../book/src/measurement.md")]
    mod measurement {}
    #[doc = include_str!("../../../book/src/campaigns.md")]
    mod campaigns {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/reports.md")]
    mod reports {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
