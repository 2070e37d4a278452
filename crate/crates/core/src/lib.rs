#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod config;
pub mod continuation;
pub mod dec;
pub mod error;
pub mod inner;
pub mod io;
pub mod mesh;
pub mod nonlinearity;
pub mod reduced;
pub mod saddle;
pub mod spectral;
pub mod whitney;

pub use error::{Error, Result};
