// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ambiguity;
pub mod degrade;
pub mod display;
pub mod error;
mod filter;
pub mod imgio;
pub mod metrics;
pub mod run;
pub mod stats;
pub mod vdp;

pub use error::{Error, Result};

// The book's code blocks run as doctests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/viewing-conditions.md")]
    mod viewing_conditions {}
    #[doc = include_str!("../../../book/src/ladders.md")]
    mod ladders {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/vdp.md")]
    mod vdp {}
    #[doc = include_str!("../../../book/src/ambiguity.md")]
    mod ambiguity {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/outputs.md")]
    mod outputs {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
