//! Temporal-coherence representation learning: Markov-chain statistics of
//! frame sequences, the closed-form spectral embedding, small neural
//! networks, and the online unsupervised-learning (UL) layer that trains
//! them to be slow over time yet diverse across time.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod linalg;
pub mod markov;
pub mod models;
pub mod nn;
pub mod spectral;
pub mod ul;
