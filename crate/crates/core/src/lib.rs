pub mod a3m;
pub mod aggcn;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoder;
pub mod dump;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod train;
pub mod verify;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/acceptance.md")]
    mod acceptance {}
}
