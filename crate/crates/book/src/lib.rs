//! The guide under `book/`, compiled so its snippets run as doc-tests.

#![doc = include_str!("../../../book/src/introduction.md")]

#[doc = include_str!("../../../book/src/clocks.md")]
pub mod clocks {}

#[doc = include_str!("../../../book/src/grants.md")]
pub mod grants {}

#[doc = include_str!("../../../book/src/bursts.md")]
pub mod bursts {}

#[doc = include_str!("../../../book/src/traffic.md")]
pub mod traffic {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/analytics.md")]
pub mod analytics {}

#[doc = include_str!("../../../book/src/blocking.md")]
pub mod blocking {}

#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
