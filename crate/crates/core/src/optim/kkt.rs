//! First-order optimality residuals of a QP candidate.

use nalgebra::DVector;

use super::qp::QpProblem;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktReport {
    /// ‖Hz + q + Aᵀλ + Aeqᵀμ‖∞
    pub stationarity: f64,
    /// Largest violation of `A z ≤ b` or `Aeq z = beq`.
    pub primal: f64,
    /// Largest negative inequality multiplier, as a positive number.
    pub dual: f64,
    /// max |λᵢ (aᵢᵀz − bᵢ)|
    pub complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

pub fn kkt_residuals(p: &QpProblem, z: &DVector<f64>, lambda: &DVector<f64>, lambda_eq: &DVector<f64>) -> KktReport {
    let mut grad = &p.h * z + &p.q;
    for i in 0..p.m() {
        if lambda[i] != 0.0 {
            grad += p.a_ineq.row(i).transpose() * lambda[i];
        }
    }
    if !lambda_eq.is_empty() {
        grad += p.a_eq.transpose() * lambda_eq;
    }
    let mut primal: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for i in 0..p.m() {
        if p.b_ineq[i] == f64::INFINITY {
            continue;
        }
        let slack = p.a_ineq.row(i).dot(&z.transpose()) - p.b_ineq[i];
        primal = primal.max(slack);
        complementarity = complementarity.max((lambda[i] * slack).abs());
    }
    if p.a_eq.nrows() > 0 {
        primal = primal.max((&p.a_eq * z - &p.b_eq).amax());
    }
    let dual = lambda.iter().fold(0.0f64, |acc, &l| acc.max(-l));
    KktReport {
        stationarity: grad.amax(),
        primal,
        dual,
        complementarity,
    }
}
