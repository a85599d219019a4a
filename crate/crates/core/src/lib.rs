//! Single-fault diagnostic models built from similarity networks.

pub mod api;
pub mod bundle;
pub mod decision;
pub mod fixtures;
pub mod inference;
pub mod model;
pub mod multihyp;
pub mod partitions;
pub mod session;
pub mod similarity;
pub mod synth;
