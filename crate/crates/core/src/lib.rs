//! Structured tensor algebra compiler.
//!
//! Tensor programs, their unique sets (sparsity) and redundancy maps
//! (symmetry / repetition) all live in one sum-of-products rule IR. The
//! pipeline is:
//!
//! 1. [`frontend`] translates structured linear algebra (or [`textio`]
//!    parses rules directly),
//! 2. [`inference`] propagates unique sets and redundancy maps through
//!    every rule,
//! 3. [`optimizer`] inlines intermediates and simplifies comparison
//!    products,
//! 4. [`loopgen`] builds loop nests over the compressed space plus
//!    reconstruction nests and renders them as C source.
//!
//! [`interp`] is a dense reference interpreter used as the oracle for all
//! of the above.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod frontend;
pub mod inference;
pub mod interp;
pub mod ir;
pub mod linear;
pub mod loopgen;
pub mod optimizer;
pub mod pipeline;

pub mod textio;

pub use error::{Error, Result};
