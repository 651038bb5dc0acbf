//! Sparse linear regression with an l1 penalty plus a quadratic structure
//! penalty `mu * b'J'Jb`.
//!
//! Choosing `J` recovers several estimators in one framework: the plain
//! lasso (`J = 0`), the elastic net (`J = I`), a smooth variant that
//! penalizes squared successive differences (`J` = first differences), and
//! correlation-driven weighted fusion. The quadratic term folds into an
//! expanded least-squares problem, so a single l1 solver covers the whole
//! family. The crate also ships theoretically calibrated tuning rules,
//! cross-validation, restricted-eigenvalue diagnostics, a hard-thresholding
//! variable selector, and a replicated simulation harness.

pub mod diagnostics;
pub mod error;
pub mod numkernel;
pub mod seeding;
pub mod simulate;
pub mod solver;
pub mod structure;
pub mod tuning;

pub use error::{Error, Result};
