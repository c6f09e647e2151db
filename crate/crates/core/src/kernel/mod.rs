//! Generic inner solvers used by the subproblem modules.

pub mod convex;
pub mod lp;

pub use convex::{solve_convex, ConvexOutcome, ConvexProgram, ConvexSolution, SmoothFn};
pub use lp::{solve_lp, LinearProgram, LpOutcome, LpSolution};
