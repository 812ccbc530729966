pub mod error;
pub mod geometry;
pub mod ghost;
pub mod kernels;
pub mod morton;
pub mod operators;
pub mod scalar;
pub mod transport;
pub mod tree;
pub mod partition;
pub mod reference;
pub mod distributed;
pub mod accuracy;
pub mod input;
pub mod cli;
