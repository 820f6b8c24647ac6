//! Parity-vector algebra for automorphisms of the rooted binary tree, exact
//! subgroup counting, and finite-field preimage trees of `z^2 + c`.

pub mod counting;
pub mod dynamics;
pub mod field;
pub mod homtest;
pub mod labeling;
pub mod parity;
pub mod pink;
pub mod probe;
pub mod tree;
