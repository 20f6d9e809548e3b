//! Language-adherence evaluation for multilingual LLMs.
//!
//! The crate covers four workflows:
//!
//! * scoring closed-book QA generations against a parallel corpus
//!   ([`corpus`], [`matcher`], [`langid`]) and turning the resulting correct
//!   sets into adherence metrics ([`metrics`]);
//! * diffing two single-file tensor checkpoints per layer and module
//!   ([`checkpoint`]);
//! * deriving partial-training freeze plans from layer ranges or diff
//!   matrices ([`plan`]);
//! * rendering all of the above as Markdown, CSV, JSON and SVG ([`report`]).

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod lang;
pub mod langid;
pub mod matcher;
pub mod metrics;
pub mod plan;
pub mod report;

pub use error::{Error, Result};
pub use lang::LanguageCode;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
