//! Latent matching models for query-document search.
//!
//! Pipeline: click logs become term vectors and a cross-covariance matrix
//! ([`corpus`]); synonym and tag-term mining produce knowledge matrices
//! ([`knowledge`]); regularized bilinear mappings are trained by coordinate
//! descent or gradient descent ([`trainer`]); trained mappings score and rank
//! documents ([`scorer`]); rankings are judged by NDCG ([`eval`]).

pub mod corpus;
pub mod error;
pub mod eval;
pub mod knowledge;
pub mod linalg;
pub mod scorer;
pub mod trainer;

pub use error::{Error, Result};
