//! The book's code listings, compiled and run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/cases.md")]
pub mod cases {}
#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}
#[doc = include_str!("../../../book/src/estimation.md")]
pub mod estimation {}
#[doc = include_str!("../../../book/src/corrdet.md")]
pub mod corrdet {}
#[doc = include_str!("../../../book/src/fusion.md")]
pub mod fusion {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
