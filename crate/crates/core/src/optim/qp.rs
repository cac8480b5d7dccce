//! Dense dual active-set solver for strictly convex quadratic programs
//!
//! ```text
//! minimize    ½ zᵀ H z + qᵀ z
//! subject to  A z ≤ b,   Aeq z = beq
//! ```
//!
//! The iteration starts from the unconstrained minimizer and repeatedly adds
//! the most violated inequality, dropping active rows whose multiplier would
//! turn negative. Equalities are eliminated beforehand through a null-space
//! basis. Any active set can be passed as a warm start.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{cholesky_jitter, lstsq, symmetrize, CHOL_JITTER};

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, q: DVector<f64>, a_ineq: DMatrix<f64>, b_ineq: DVector<f64>) -> Result<Self> {
        let n = q.len();
        let p = QpProblem {
            h,
            q,
            a_ineq,
            b_ineq,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn unconstrained(h: DMatrix<f64>, q: DVector<f64>) -> Result<Self> {
        let n = q.len();
        Self::new(h, q, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn with_equalities(mut self, a_eq: DMatrix<f64>, b_eq: DVector<f64>) -> Result<Self> {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.b_ineq.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        check_len("H rows", n, self.h.nrows())?;
        check_len("H columns", n, self.h.ncols())?;
        check_len("A columns", n, self.a_ineq.ncols())?;
        check_len("b length", self.a_ineq.nrows(), self.b_ineq.len())?;
        check_len("Aeq columns", n, self.a_eq.ncols())?;
        check_len("beq length", self.a_eq.nrows(), self.b_eq.len())?;
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-12 * self.h.amax().max(1.0) {
            return Err(Error::InvalidArgument(format!("Hessian is not symmetric (max asymmetry {asym:e})")));
        }
        if self.h.iter().chain(self.q.iter()).chain(self.a_ineq.iter()).chain(self.a_eq.iter()).chain(self.b_eq.iter()).any(|v| !v.is_finite())
            || self.b_ineq.iter().any(|v| v.is_nan())
        {
            return Err(Error::NonFinite("QP data"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Multipliers of the inequality rows (zero for inactive rows).
    pub lambda: DVector<f64>,
    /// Multipliers of the equality rows.
    pub lambda_eq: DVector<f64>,
    pub status: QpStatus,
    /// Active inequality rows, ascending.
    pub active_set: Vec<usize>,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    fn failed(n: usize, m: usize, p: usize, status: QpStatus, iterations: usize) -> Self {
        QpSolution {
            z: DVector::from_element(n, f64::NAN),
            lambda: DVector::zeros(m),
            lambda_eq: DVector::zeros(p),
            status,
            active_set: Vec::new(),
            iterations,
        }
    }
}

/// Solves `p`, optionally warm-starting from a previous active set.
pub fn solve_qp(p: &QpProblem, warm: Option<&[usize]>) -> Result<QpSolution> {
    p.validate()?;
    let n = p.n();
    let m = p.m();
    let neq = p.b_eq.len();
    if neq == 0 {
        return solve_inequality(&p.h, &p.q, &p.a_ineq, &p.b_ineq, warm);
    }

    // z = zp + Z w with Aeq Z = 0.
    let (zp, _) = lstsq(&p.a_eq, &p.b_eq)?;
    let resid = (&p.a_eq * &zp - &p.b_eq).amax();
    if resid > 1e-9 * p.b_eq.amax().max(1.0) {
        return Ok(QpSolution::failed(n, m, neq, QpStatus::Infeasible, 0));
    }
    let ata = p.a_eq.transpose() * &p.a_eq;
    let eig = ata.symmetric_eigen();
    let emax = eig.eigenvalues.amax().max(1.0);
    let null_cols: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= 1e-10 * emax).collect();
    let mut basis = DMatrix::zeros(n, null_cols.len());
    for (k, &i) in null_cols.iter().enumerate() {
        basis.set_column(k, &eig.eigenvectors.column(i));
    }
    let mut hr = basis.transpose() * &p.h * &basis;
    symmetrize(&mut hr);
    let qr = basis.transpose() * (&p.h * &zp + &p.q);
    let ar = &p.a_ineq * &basis;
    let br = &p.b_ineq - &p.a_ineq * &zp;
    let mut sol = solve_inequality(&hr, &qr, &ar, &br, warm)?;
    if sol.status == QpStatus::Infeasible {
        return Ok(QpSolution::failed(n, m, neq, QpStatus::Infeasible, sol.iterations));
    }
    let z = &zp + &basis * &sol.z;
    let grad = &p.h * &z + &p.q + p.a_ineq.transpose() * &sol.lambda;
    let (mu, _) = lstsq(&p.a_eq.transpose(), &(-grad))?;
    sol.z = z;
    sol.lambda_eq = mu;
    Ok(sol)
}

struct Workspace<'a> {
    hinv: DMatrix<f64>,
    a: &'a DMatrix<f64>,
}

impl Workspace<'_> {
    fn normals(&self, active: &[usize]) -> DMatrix<f64> {
        let n = self.a.ncols();
        let mut nmat = DMatrix::zeros(n, active.len());
        for (k, &i) in active.iter().enumerate() {
            nmat.set_column(k, &self.a.row(i).transpose());
        }
        nmat
    }

    /// Returns `(dz, dλ)` for raising the multiplier of `row` by one unit while
    /// keeping `active` rows tight, or `None` if the active normals are
    /// numerically dependent.
    fn directions(&self, active: &[usize], row: usize) -> Option<(DVector<f64>, DVector<f64>)> {
        let ap = self.a.row(row).transpose();
        let hinv_ap = &self.hinv * &ap;
        if active.is_empty() {
            return Some((-hinv_ap, DVector::zeros(0)));
        }
        let nmat = self.normals(active);
        let hinv_n = &self.hinv * &nmat;
        let mut s = nmat.transpose() * &hinv_n;
        symmetrize(&mut s);
        let chol = s.cholesky()?;
        let dlambda = -chol.solve(&(nmat.transpose() * &hinv_ap));
        let dz = -(hinv_ap + hinv_n * &dlambda);
        Some((dz, dlambda))
    }
}

fn solve_inequality(
    h: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    warm: Option<&[usize]>,
) -> Result<QpSolution> {
    let n = q.len();
    let m = b.len();
    let chol = cholesky_jitter(h, CHOL_JITTER)
        .map_err(|_| Error::Solver("QP Hessian is not positive definite".into()))?;
    let mut hinv = chol.inverse();
    symmetrize(&mut hinv);
    let ws = Workspace { hinv, a };

    let row_norms: Vec<f64> = (0..m).map(|i| a.row(i).norm()).collect();
    let mut z = -(&ws.hinv * q);
    let mut lambda = DVector::zeros(m);
    let mut active: Vec<usize> = Vec::new();

    if let Some(w) = warm {
        if let Some((zw, lw, aw)) = warm_start(&ws, h, q, b, w) {
            z = zw;
            for (k, &i) in aw.iter().enumerate() {
                lambda[i] = lw[k];
            }
            active = aw;
        }
    }

    let max_iter = 10 * (n + m) + 50;
    let mut iterations = 0;
    loop {
        // Most violated row; ties keep the lowest index.
        let scale = z.amax().max(1.0);
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..m {
            if lambda[i] > 0.0 || active.contains(&i) || b[i] == f64::INFINITY {
                continue;
            }
            let viol = a.row(i).dot(&z.transpose()) - b[i];
            let tol = 1e-11 * (row_norms[i] * scale).max(b[i].abs()).max(1.0);
            if viol > tol && pick.is_none_or(|(_, best)| viol > best) {
                pick = Some((i, viol));
            }
        }
        let Some((row, _)) = pick else {
            active.sort_unstable();
            return Ok(QpSolution {
                z,
                lambda,
                lambda_eq: DVector::zeros(0),
                status: QpStatus::Optimal,
                active_set: active,
                iterations,
            });
        };

        // Raise the multiplier of `row` until it becomes tight.
        loop {
            iterations += 1;
            if iterations > max_iter {
                active.sort_unstable();
                return Ok(QpSolution {
                    z,
                    lambda,
                    lambda_eq: DVector::zeros(0),
                    status: QpStatus::MaxIterations,
                    active_set: active,
                    iterations,
                });
            }
            let (dz, dlambda) = match ws.directions(&active, row) {
                Some(d) => d,
                None => {
                    // Dependent active set: drop the most recently added row.
                    let j = active.pop().expect("non-empty active set");
                    lambda[j] = 0.0;
                    continue;
                }
            };
            let viol = a.row(row).dot(&z.transpose()) - b[row];
            let curvature = -a.row(row).dot(&dz.transpose());
            let full = if curvature > 1e-14 * row_norms[row].powi(2) * ws.hinv.amax().max(1e-300) {
                Some(viol / curvature)
            } else {
                None
            };
            let mut partial: Option<(f64, usize)> = None;
            for (k, &j) in active.iter().enumerate() {
                if dlambda[k] < 0.0 {
                    let t = lambda[j] / -dlambda[k];
                    if partial.is_none_or(|(best, _)| t < best) {
                        partial = Some((t, k));
                    }
                }
            }
            let t = match (full, partial) {
                (None, None) => {
                    return Ok(QpSolution::failed(n, m, 0, QpStatus::Infeasible, iterations));
                }
                (Some(tf), Some((tp, _))) => tf.min(tp),
                (Some(tf), None) => tf,
                (None, Some((tp, _))) => tp,
            };
            z += &dz * t;
            for (k, &j) in active.iter().enumerate() {
                lambda[j] = (lambda[j] + t * dlambda[k]).max(0.0);
            }
            lambda[row] += t;
            let took_full = matches!(full, Some(tf) if partial.is_none_or(|(tp, _)| tf <= tp));
            if took_full {
                active.push(row);
                break;
            }
            let (_, k) = partial.expect("partial step");
            let j = active.remove(k);
            lambda[j] = 0.0;
        }
    }
}

/// Equality-constrained solution on a candidate working set, dropping rows
/// with negative multipliers until the point is dual feasible.
fn warm_start(
    ws: &Workspace<'_>,
    h: &DMatrix<f64>,
    q: &DVector<f64>,
    b: &DVector<f64>,
    w: &[usize],
) -> Option<(DVector<f64>, DVector<f64>, Vec<usize>)> {
    let m = b.len();
    let mut active: Vec<usize> = Vec::new();
    for &i in w {
        if i < m && b[i].is_finite() && !active.contains(&i) {
            active.push(i);
        }
    }
    if active.len() > q.len() {
        return None;
    }
    let _ = h;
    while !active.is_empty() {
        let nmat = ws.normals(&active);
        let hinv_n = &ws.hinv * &nmat;
        let mut s = nmat.transpose() * &hinv_n;
        symmetrize(&mut s);
        let chol = s.cholesky()?;
        let z_free = -(&ws.hinv * q);
        let b_w = DVector::from_iterator(active.len(), active.iter().map(|&i| b[i]));
        // λ = S⁻¹ (Nᵀ z_free - b_W), z = z_free - H⁻¹ N λ
        let lam = chol.solve(&(nmat.transpose() * &z_free - b_w));
        let (kmin, lmin) = lam.iter().enumerate().fold((0, f64::INFINITY), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc });
        if lmin >= 0.0 {
            let z = z_free - hinv_n * &lam;
            return Some((z, lam, active));
        }
        active.remove(kmin);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::kkt::kkt_residuals;

    fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn vecd(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn unconstrained_minimum() {
        let p = QpProblem::unconstrained(mat(1, 1, &[1.0]), vecd(&[-1.0])).unwrap();
        let s = solve_qp(&p, None).unwrap();
        assert!(s.is_optimal());
        assert!((s.z[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn single_active_upper_bound() {
        let p = QpProblem::new(mat(1, 1, &[1.0]), vecd(&[-1.0]), mat(1, 1, &[1.0]), vecd(&[0.5])).unwrap();
        let s = solve_qp(&p, None).unwrap();
        assert!((s.z[0] - 0.5).abs() < 1e-14);
        assert!((s.lambda[0] - 0.5).abs() < 1e-14);
        assert_eq!(s.active_set, vec![0]);
    }

    #[test]
    fn symmetric_halfplane() {
        // z1 + z2 ≥ 2  ⇔  -z1 - z2 ≤ -2
        let p = QpProblem::new(DMatrix::identity(2, 2), vecd(&[0.0, 0.0]), mat(1, 2, &[-1.0, -1.0]), vecd(&[-2.0])).unwrap();
        let s = solve_qp(&p, None).unwrap();
        assert!((s.z[0] - 1.0).abs() < 1e-14 && (s.z[1] - 1.0).abs() < 1e-14);
        assert!((s.lambda[0] - 1.0).abs() < 1e-14);
        assert!(kkt_residuals(&p, &s.z, &s.lambda, &s.lambda_eq).max() < 1e-12);
    }

    #[test]
    fn detects_infeasibility() {
        let p = QpProblem::new(DMatrix::identity(1, 1), vecd(&[0.0]), mat(2, 1, &[1.0, -1.0]), vecd(&[-1.0, -1.0])).unwrap();
        let s = solve_qp(&p, None).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
    }

    #[test]
    fn infinite_bounds_are_ignored() {
        let p = QpProblem::new(mat(1, 1, &[2.0]), vecd(&[-4.0]), mat(1, 1, &[1.0]), vecd(&[f64::INFINITY])).unwrap();
        let s = solve_qp(&p, None).unwrap();
        assert!((s.z[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn equality_constraints_are_eliminated() {
        // min ½‖z‖² s.t. z1 + z2 + z3 = 3, z3 ≤ 0.5
        let p = QpProblem::new(DMatrix::identity(3, 3), DVector::zeros(3), mat(1, 3, &[0.0, 0.0, 1.0]), vecd(&[0.5]))
            .unwrap()
            .with_equalities(mat(1, 3, &[1.0, 1.0, 1.0]), vecd(&[3.0]))
            .unwrap();
        let s = solve_qp(&p, None).unwrap();
        assert!(s.is_optimal());
        assert!((s.z[2] - 0.5).abs() < 1e-12);
        assert!((s.z[0] - 1.25).abs() < 1e-12 && (s.z[1] - 1.25).abs() < 1e-12);
        assert!(kkt_residuals(&p, &s.z, &s.lambda, &s.lambda_eq).max() < 1e-10);
        let bad = p.clone().with_equalities(mat(2, 3, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]), vecd(&[3.0, 4.0])).unwrap();
        assert_eq!(solve_qp(&bad, None).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn warm_start_reproduces_cold_solution() {
        let h = mat(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let q = vecd(&[-8.0, -3.0, -3.0]);
        let a = mat(4, 3, &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, -1.0]);
        let b = vecd(&[2.0, 1.2, 0.0, 0.1]);
        let p = QpProblem::new(h, q, a, b).unwrap();
        let cold = solve_qp(&p, None).unwrap();
        let warm = solve_qp(&p, Some(&cold.active_set)).unwrap();
        assert!((cold.z.clone() - warm.z.clone()).amax() < 1e-12);
        assert!(warm.iterations <= cold.iterations);
        let bogus = solve_qp(&p, Some(&[2, 3, 17])).unwrap();
        assert!((cold.z - bogus.z).amax() < 1e-12);
    }

    #[test]
    fn rejects_asymmetric_hessian() {
        assert!(QpProblem::unconstrained(mat(2, 2, &[1.0, 0.5, 0.0, 1.0]), DVector::zeros(2)).is_err());
    }
}
