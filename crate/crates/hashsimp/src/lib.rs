//! Symbolic regression with hash-based inexact simplification.
//!
//! The crate evolves expression trees with a small genetic-programming
//! engine and keeps them compact by memoizing semantically equivalent
//! subtrees: every subtree's prediction vector on the training rows is
//! hashed with random hyperplane signs, and a table of equivalence classes
//! maps each hash bucket to the smallest expression seen for it. Subtrees
//! that land in a known bucket within tolerance are swapped for that
//! smallest representative while the population evolves.
//!
//! ```
//! use hashsimp::expr::{parse, FeatureMatrix};
//!
//! let tree = parse("add(square(x_0), 1.5)").unwrap();
//! let x = FeatureMatrix::from_columns(vec![vec![1.0, 2.0, 3.0]]);
//! let pred = hashsimp::expr::evaluate(&tree, &x).unwrap();
//! assert_eq!(pred, vec![2.5, 5.5, 10.5]);
//! ```

pub mod data;
pub mod expr;
pub mod gp;
pub mod harness;
pub mod lsh;
pub mod optimizer;
pub mod simplify;

// Every code block in the guide under book/ compiles and runs with the
// test suite, so the guide cannot drift from the library.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/expressions.md")]
    pub mod expressions {}
    #[doc = include_str!("../../../book/src/hashing.md")]
    pub mod hashing {}
    #[doc = include_str!("../../../book/src/simplification.md")]
    pub mod simplification {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    pub mod fitting {}
    #[doc = include_str!("../../../book/src/evolution.md")]
    pub mod evolution {}
    #[doc = include_str!("../../../book/src/harness.md")]
    pub mod harness {}
}
