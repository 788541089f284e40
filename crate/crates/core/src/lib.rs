//! Gradient-tracking consensus optimization over switching weight-balanced
//! networks whose links pass messages through sector-bounded nonlinearities.

pub mod corpus;
pub mod cost;
pub mod engine;
pub mod graph;
pub mod linalg;
pub mod nonlinear;
pub mod spectral;
pub mod svmlab;
