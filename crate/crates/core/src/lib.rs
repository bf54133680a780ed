pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod geometry;
pub mod keypoints;
pub mod localization;
pub mod mask;
pub mod matching;
pub mod pipeline;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/keypoints.md")]
    mod keypoints {}
    #[doc = include_str!("../../../book/src/matching.md")]
    mod matching {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/localization.md")]
    mod localization {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
