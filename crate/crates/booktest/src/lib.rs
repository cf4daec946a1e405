//! Runs every code listing of the guide in `book/` as a doc-test.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/annotations.md")]
pub mod annotations {}
#[doc = include_str!("../../../book/src/detector.md")]
pub mod detector {}
#[doc = include_str!("../../../book/src/matching.md")]
pub mod matching {}
#[doc = include_str!("../../../book/src/refiner.md")]
pub mod refiner {}
#[doc = include_str!("../../../book/src/cascade.md")]
pub mod cascade {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
