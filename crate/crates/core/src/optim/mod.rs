//! Embedded optimizers and matrix-equation solvers.

pub mod kkt;
mod place;
mod qp;
mod riccati;
mod sqp;

pub use kkt::{kkt_residuals, KktReport};
pub use place::{place_poles, place_real_poles};
pub use qp::{solve_qp, QpProblem, QpSolution, QpStatus};
pub use riccati::{kalman_gain, riccati_step, solve_dare, DARE_MAX_ITER, DARE_TOL};
pub use sqp::{solve_nlp, HessianInit, Nlp, NlpProblem, NlpSolution, NlpStatus, SqpOptions};
