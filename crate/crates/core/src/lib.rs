pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod filter;
pub mod gibbs;
pub mod io;
pub mod knockoffs;
pub mod lasso;
pub mod model;
pub mod numeric;
pub mod sim;
pub mod statistics;

pub use error::{KnockoffError, Result};
