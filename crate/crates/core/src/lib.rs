//! Collaborative filtering toolkit: neighborhood recommenders, truncated SVD,
//! gradient-trained factor models (MF / PMF, NMF, EMF), evaluation metrics
//! and a MovieLens benchmark harness.

pub mod bench;
pub mod error;
pub mod factorization;
pub mod fixtures;
pub mod metrics;
pub mod neighborhood;
pub mod persist;
pub mod ratings;
pub mod recommender;
pub mod similarity;
pub mod svd;

pub use error::{Error, Result};
