pub mod cfg;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod fl;
pub mod logmatch;
pub mod pipeline;
pub mod source;
pub mod trace;

#[cfg(test)]
pub(crate) mod testutil;
