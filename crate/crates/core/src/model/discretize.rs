//! Continuous-to-discrete conversion and transfer-function realization.
//!
//! Manipulated inputs go through a zero-order hold. Measured disturbances go
//! through the bilinear (Tustin) transform on a separate copy of the
//! dynamics, and the resulting direct term is folded into `Dd`. The discrete
//! state is `[x_u; x_d]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::LinearModel;
use crate::error::{check_len, Error, Result};
use crate::linalg::{all_finite, block_diag};

/// Zero-order-hold discretization through the matrix exponential of
/// `[Ac Bc; 0 0]·Ts`.
fn zoh(ac: &DMatrix<f64>, bc: &DMatrix<f64>, ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = ac.nrows();
    let m = bc.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * ts));
    aug.view_mut((0, n), (n, m)).copy_from(&(bc * ts));
    let e = aug.exp();
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
}

struct Discrete {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

/// Bilinear transform. The discrete response at `z` equals the continuous
/// response at `s = (2/Ts)(z-1)/(z+1)`.
fn tustin(ac: &DMatrix<f64>, bc: &DMatrix<f64>, cc: &DMatrix<f64>, dc: &DMatrix<f64>, ts: f64) -> Result<Discrete> {
    let n = ac.nrows();
    let half = ts / 2.0;
    let eye = DMatrix::identity(n, n);
    let m = &eye - ac * half;
    let lu = m.clone().lu();
    if lu.determinant().abs() < 1e-12 * m.amax().max(1.0).powi(n as i32) {
        return Err(Error::Singular(
            "I - Ac·Ts/2 is singular; the Tustin transform is undefined (continuous pole at 2/Ts)".into(),
        ));
    }
    let minv = lu.try_inverse().ok_or_else(|| Error::Singular("I - Ac·Ts/2".into()))?;
    let a = &minv * (&eye + ac * half);
    let b = &minv * bc * ts;
    let c = cc * &minv;
    let d = dc + &c * bc * half;
    Ok(Discrete { a, b, c, d })
}

/// Discretizes `ẋ = Ac x + Buc u + Bdc d`, `y = C x + Ddc d` with sample time
/// `ts`.
pub fn discretize_continuous(
    ac: &DMatrix<f64>,
    buc: &DMatrix<f64>,
    bdc: &DMatrix<f64>,
    c: &DMatrix<f64>,
    ddc: &DMatrix<f64>,
    ts: f64,
) -> Result<LinearModel> {
    let n = ac.nrows();
    let ny = c.nrows();
    check_len("Ac columns", n, ac.ncols())?;
    check_len("Buc rows", n, buc.nrows())?;
    check_len("Bdc rows", n, bdc.nrows())?;
    check_len("C columns", n, c.ncols())?;
    check_len("Ddc rows", ny, ddc.nrows())?;
    check_len("Ddc columns", bdc.ncols(), ddc.ncols())?;
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(Error::InvalidArgument(format!("sample time must be positive, got {ts}")));
    }
    for (m, what) in [(ac, "Ac"), (buc, "Buc"), (bdc, "Bdc"), (c, "C"), (ddc, "Ddc")] {
        if !all_finite(m) {
            return Err(Error::NonFinite(what));
        }
    }
    let (au, bu) = zoh(ac, buc, ts);
    if bdc.ncols() == 0 {
        return LinearModel::without_disturbance(au, bu, c.clone(), ts);
    }
    let dsub = tustin(ac, bdc, c, ddc, ts)?;
    stack(au, bu, c.clone(), dsub, ts)
}

fn stack(au: DMatrix<f64>, bu: DMatrix<f64>, cu: DMatrix<f64>, dsub: Discrete, ts: f64) -> Result<LinearModel> {
    let (nxu, nxd) = (au.nrows(), dsub.a.nrows());
    let (nu, nd) = (bu.ncols(), dsub.b.ncols());
    let ny = cu.nrows().max(dsub.c.nrows());
    let a = block_diag(&[&au, &dsub.a]);
    let mut b_u = DMatrix::zeros(nxu + nxd, nu);
    b_u.view_mut((0, 0), (nxu, nu)).copy_from(&bu);
    let mut b_d = DMatrix::zeros(nxu + nxd, nd);
    b_d.view_mut((nxu, 0), (nxd, nd)).copy_from(&dsub.b);
    let mut c = DMatrix::zeros(ny, nxu + nxd);
    c.view_mut((0, 0), (ny, nxu)).copy_from(&cu);
    c.view_mut((0, nxu), (ny, nxd)).copy_from(&dsub.c);
    LinearModel::new(a, b_u, c, b_d, dsub.d, ts)
}

/// Rational transfer function with coefficients in descending powers of `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
    /// Input delay in seconds. Only zero is accepted.
    #[serde(default)]
    pub delay: f64,
}

impl TransferFunction {
    pub fn new(num: &[f64], den: &[f64]) -> Self {
        TransferFunction {
            num: num.to_vec(),
            den: den.to_vec(),
            delay: 0.0,
        }
    }

    fn is_zero(&self) -> bool {
        self.num.iter().all(|&v| v == 0.0)
    }
}

/// `ny × ncols` matrix of transfer functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferFunctionMatrix {
    pub entries: Vec<Vec<TransferFunction>>,
}

impl TransferFunctionMatrix {
    pub fn new(entries: Vec<Vec<TransferFunction>>) -> Result<Self> {
        let ncols = entries.first().map_or(0, |r| r.len());
        for r in &entries {
            check_len("transfer function row", ncols, r.len())?;
        }
        Ok(TransferFunctionMatrix { entries })
    }

    pub fn nrows(&self) -> usize {
        self.entries.len()
    }

    pub fn ncols(&self) -> usize {
        self.entries.first().map_or(0, |r| r.len())
    }
}

fn strip(p: &[f64]) -> Vec<f64> {
    let first = p.iter().position(|&v| v != 0.0).unwrap_or(p.len());
    p[first..].to_vec()
}

/// Continuous realization of the columns `cols`, one observable canonical
/// block per (row, distinct denominator).
struct Realization {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

fn realize(g: &TransferFunctionMatrix, cols: &[usize], allow_direct: bool) -> Result<Realization> {
    let ny = g.nrows();
    let m = cols.len();
    // (row, monic denominator tail, per-column numerator remainders)
    let mut blocks: Vec<(usize, Vec<f64>, Vec<Vec<f64>>)> = Vec::new();
    let mut d = DMatrix::zeros(ny, m);
    for (row, entries) in g.entries.iter().enumerate() {
        let first_block = blocks.len();
        for (k, &col) in cols.iter().enumerate() {
            let tf = &entries[col];
            if tf.delay != 0.0 {
                return Err(Error::ImproperTransferFunction {
                    row,
                    col,
                    reason: "time delays are not supported".into(),
                });
            }
            if tf.is_zero() {
                continue;
            }
            let den = strip(&tf.den);
            let num = strip(&tf.num);
            if den.is_empty() {
                return Err(Error::ImproperTransferFunction {
                    row,
                    col,
                    reason: "zero denominator".into(),
                });
            }
            if num.iter().chain(&den).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("transfer function coefficients"));
            }
            let n = den.len() - 1;
            if num.len() > den.len() {
                return Err(Error::ImproperTransferFunction {
                    row,
                    col,
                    reason: "numerator degree exceeds denominator degree".into(),
                });
            }
            let lead = den[0];
            let monic: Vec<f64> = den[1..].iter().map(|v| v / lead).collect();
            let mut b: Vec<f64> = vec![0.0; n + 1 - num.len()];
            b.extend(num.iter().map(|v| v / lead));
            let direct = b[0];
            if direct != 0.0 {
                if !allow_direct {
                    return Err(Error::ImproperTransferFunction {
                        row,
                        col,
                        reason: "manipulated-input channels must be strictly proper (no direct feedthrough)".into(),
                    });
                }
                d[(row, k)] += direct;
            }
            if n == 0 {
                continue;
            }
            let rem: Vec<f64> = (1..=n).map(|i| b[i] - direct * monic[i - 1]).collect();
            let found = blocks[first_block..].iter_mut().find(|(_, den, _)| {
                den.len() == monic.len()
                    && den.iter().zip(&monic).all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0))
            });
            match found {
                Some((_, _, bcols)) => bcols[k] = rem,
                None => {
                    let mut bcols = vec![vec![0.0; n]; m];
                    bcols[k] = rem;
                    blocks.push((row, monic, bcols));
                }
            }
        }
    }
    let nx: usize = blocks.iter().map(|(_, den, _)| den.len()).sum();
    let mut a = DMatrix::zeros(nx, nx);
    let mut b = DMatrix::zeros(nx, m);
    let mut c = DMatrix::zeros(ny, nx);
    let mut off = 0;
    for (row, den, bcols) in &blocks {
        let n = den.len();
        for i in 0..n {
            a[(off + i, off)] = -den[i];
            if i + 1 < n {
                a[(off + i, off + i + 1)] = 1.0;
            }
            for (k, bc) in bcols.iter().enumerate() {
                b[(off + i, k)] = bc[i];
            }
        }
        c[(*row, off)] = 1.0;
        off += n;
    }
    Ok(Realization { a, b, c, d })
}

/// Builds a discrete model from a transfer-function matrix. Columns listed in
/// `i_d` (zero-based) are measured disturbances, the others manipulated
/// inputs.
pub fn from_transfer_function(g: &TransferFunctionMatrix, ts: f64, i_d: &[usize]) -> Result<LinearModel> {
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(Error::InvalidArgument(format!("sample time must be positive, got {ts}")));
    }
    let ncols = g.ncols();
    if let Some(&bad) = i_d.iter().find(|&&j| j >= ncols) {
        return Err(Error::InvalidArgument(format!("disturbance column {bad} out of range")));
    }
    let u_cols: Vec<usize> = (0..ncols).filter(|j| !i_d.contains(j)).collect();
    let d_cols: Vec<usize> = (0..ncols).filter(|j| i_d.contains(j)).collect();
    let ru = realize(g, &u_cols, false)?;
    if ru.a.nrows() == 0 {
        return Err(Error::InvalidArgument(
            "the manipulated-input channels have no dynamics; static models are not supported".into(),
        ));
    }
    let (au, bu) = zoh(&ru.a, &ru.b, ts);
    if d_cols.is_empty() {
        return LinearModel::without_disturbance(au, bu, ru.c, ts);
    }
    let rd = realize(g, &d_cols, true)?;
    let dsub = tustin(&rd.a, &rd.b, &rd.c, &rd.d, ts)?;
    stack(au, bu, ru.c, dsub, ts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::solve;
    use crate::model::SimModel;
    use num_complex::Complex64;

    fn cstr_g() -> TransferFunctionMatrix {
        TransferFunctionMatrix::new(vec![
            vec![TransferFunction::new(&[1.90], &[18.0, 1.0]), TransferFunction::new(&[1.90], &[18.0, 1.0])],
            vec![TransferFunction::new(&[-0.74], &[8.0, 1.0]), TransferFunction::new(&[0.74], &[8.0, 1.0])],
        ])
        .unwrap()
    }

    #[test]
    fn scalar_first_order_lag() {
        let ac = DMatrix::from_element(1, 1, -1.0 / 18.0);
        let bc = DMatrix::from_element(1, 1, 1.90 / 18.0);
        let c = DMatrix::from_element(1, 1, 1.0);
        let m = discretize_continuous(&ac, &bc, &DMatrix::zeros(1, 0), &c, &DMatrix::zeros(1, 0), 2.0).unwrap();
        let expect = (-1.0f64 / 9.0).exp();
        assert!((m.a[(0, 0)] - expect).abs() < 1e-14);
        assert!((m.a[(0, 0)] - 0.89484).abs() < 1e-5);
        assert!((m.dc_gain_u().unwrap()[(0, 0)] - 1.90).abs() < 1e-12);
        assert!((m.bu[(0, 0)] - 1.90 * (1.0 - expect)).abs() < 1e-14);
    }

    #[test]
    fn pure_integrator() {
        let m = discretize_continuous(
            &DMatrix::zeros(2, 2),
            &DMatrix::identity(2, 2),
            &DMatrix::zeros(2, 0),
            &DMatrix::identity(2, 2),
            &DMatrix::zeros(2, 0),
            1.0,
        )
        .unwrap();
        assert!((m.a.clone() - DMatrix::identity(2, 2)).amax() < 1e-15);
        assert!((m.bu.clone() - DMatrix::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn cstr_transfer_function_has_two_states_and_expected_gains() {
        let m = from_transfer_function(&cstr_g(), 2.0, &[]).unwrap();
        assert_eq!((m.nu(), m.nx(), m.ny(), m.nd()), (2, 2, 2, 0));
        let k = m.dc_gain_u().unwrap();
        let expect = [[1.90, 1.90], [-0.74, 0.74]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((k[(i, j)] - expect[i][j]).abs() < 1e-9 * expect[i][j].abs());
            }
        }
        let m = m.with_operating_point(&[20.0, 20.0], &[50.0, 30.0], &[]).unwrap();
        assert_eq!(m.output(&[]).unwrap().as_slice(), &[50.0, 30.0]);
    }

    #[test]
    fn cstr_with_disturbance_column_has_four_states() {
        let mut g = cstr_g();
        for r in g.entries.iter_mut() {
            let last = r[1].clone();
            r.push(last);
        }
        let m = from_transfer_function(&g, 2.0, &[2]).unwrap();
        assert_eq!((m.nu(), m.nx(), m.ny(), m.nd()), (2, 4, 2, 1));
        let kd = m.dc_gain_d().unwrap();
        assert!((kd[(0, 0)] - 1.90).abs() < 1e-9);
        assert!((kd[(1, 0)] - 0.74).abs() < 1e-9);
    }

    #[test]
    fn first_order_transfer_function() {
        let g = TransferFunctionMatrix::new(vec![vec![TransferFunction::new(&[1.0], &[1.0, 1.0])]]).unwrap();
        let m = from_transfer_function(&g, 1.0, &[]).unwrap();
        assert_eq!(m.nx(), 1);
        assert!((m.a[(0, 0)] - (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn rejects_static_delayed_and_improper_entries() {
        let stat = TransferFunctionMatrix::new(vec![vec![TransferFunction::new(&[2.0], &[1.0])]]).unwrap();
        assert!(from_transfer_function(&stat, 1.0, &[]).is_err());
        let mut delayed = TransferFunction::new(&[1.0], &[1.0, 1.0]);
        delayed.delay = 0.5;
        let g = TransferFunctionMatrix::new(vec![vec![delayed]]).unwrap();
        assert!(matches!(
            from_transfer_function(&g, 1.0, &[]),
            Err(Error::ImproperTransferFunction { .. })
        ));
        let improper = TransferFunctionMatrix::new(vec![vec![TransferFunction::new(&[1.0, 0.0, 0.0], &[1.0, 1.0])]]).unwrap();
        assert!(from_transfer_function(&improper, 1.0, &[]).is_err());
        let biproper = TransferFunctionMatrix::new(vec![vec![TransferFunction::new(&[1.0, 0.0], &[1.0, 1.0])]]).unwrap();
        assert!(from_transfer_function(&biproper, 1.0, &[]).is_err());
    }

    #[test]
    fn static_disturbance_gain_becomes_feedthrough() {
        let g = TransferFunctionMatrix::new(vec![vec![
            TransferFunction::new(&[1.0], &[2.0, 1.0]),
            TransferFunction::new(&[2.0], &[1.0]),
        ]])
        .unwrap();
        let m = from_transfer_function(&g, 0.5, &[1]).unwrap();
        assert_eq!(m.nx(), 1);
        assert!((m.dd[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn tustin_singularity_is_reported() {
        let ts = 1.0;
        let ac = DMatrix::from_element(1, 1, 2.0 / ts);
        let one = DMatrix::from_element(1, 1, 1.0);
        let err = discretize_continuous(&ac, &one, &one, &one, &DMatrix::zeros(1, 1), ts).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
    }

    #[test]
    fn rejects_non_finite_entries() {
        let ac = DMatrix::from_element(1, 1, f64::NAN);
        let one = DMatrix::from_element(1, 1, 1.0);
        assert!(discretize_continuous(&ac, &one, &DMatrix::zeros(1, 0), &one, &DMatrix::zeros(1, 0), 1.0).is_err());
    }

    fn cmat(m: &DMatrix<f64>) -> nalgebra::DMatrix<Complex64> {
        m.map(|v| Complex64::new(v, 0.0))
    }

    /// Continuous response `C (sI - A)⁻¹ B + D` in complex arithmetic.
    fn freq(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>, s: Complex64) -> nalgebra::DMatrix<Complex64> {
        let n = a.nrows();
        let si = nalgebra::DMatrix::<Complex64>::identity(n, n) * s - cmat(a);
        let x = si.lu().solve(&cmat(b)).unwrap();
        cmat(c) * x + cmat(d)
    }

    #[test]
    fn disturbance_path_matches_bilinear_frequency_response() {
        let ac = DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -0.3, -1.2]);
        let buc = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let bdc = DMatrix::from_row_slice(2, 1, &[0.2, 0.7]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let ddc = DMatrix::from_element(1, 1, 0.1);
        let ts = 0.4;
        let m = discretize_continuous(&ac, &buc, &bdc, &c, &ddc, ts).unwrap();
        let omega = 1.3;
        let z = Complex64::from_polar(1.0, omega * ts);
        let s = (z - 1.0) / (z + 1.0) * (2.0 / ts);
        let gd = freq(&m.a, &m.bd, &m.c, &m.dd, z);
        let gc = freq(&ac, &bdc, &c, &ddc, s);
        assert!((gd[(0, 0)] - gc[(0, 0)]).norm() < 1e-12);
        let k_c = c.clone() * solve(&(-ac.clone()), &bdc, "A").unwrap() + &ddc;
        assert!((m.dc_gain_d().unwrap()[(0, 0)] - k_c[(0, 0)]).abs() < 1e-9 * k_c[(0, 0)].abs());
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn dc_gain_preserved_for_stable_models(
            poles in prop::collection::vec(0.05f64..3.0, 3),
            coupling in prop::collection::vec(-0.5f64..0.5, 3),
            b in prop::collection::vec(-2.0f64..2.0, 6),
            cc in prop::collection::vec(-2.0f64..2.0, 6),
            ts in 0.05f64..2.0,
        ) {
            let mut ac = DMatrix::zeros(3, 3);
            for i in 0..3 {
                ac[(i, i)] = -poles[i];
            }
            ac[(0, 1)] = coupling[0];
            ac[(1, 2)] = coupling[1];
            ac[(2, 0)] = coupling[2] * 0.1;
            prop_assume!(crate::linalg::spectral_radius(&(&ac * ts).exp()) < 0.999);
            let buc = DMatrix::from_row_slice(3, 1, &b[..3]);
            let bdc = DMatrix::from_row_slice(3, 1, &b[3..]);
            let c = DMatrix::from_row_slice(2, 3, &cc);
            let ddc = DMatrix::from_row_slice(2, 1, &[0.3, -0.1]);
            let m = discretize_continuous(&ac, &buc, &bdc, &c, &ddc, ts).unwrap();
            let neg = -ac.clone();
            let ku = &c * solve(&neg, &buc, "A").unwrap();
            let kd = &c * solve(&neg, &bdc, "A").unwrap() + &ddc;
            let du = m.dc_gain_u().unwrap();
            let dd = m.dc_gain_d().unwrap();
            for i in 0..2 {
                prop_assert!((du[(i, 0)] - ku[(i, 0)]).abs() <= 1e-9 * ku[(i, 0)].abs().max(1.0));
                prop_assert!((dd[(i, 0)] - kd[(i, 0)]).abs() <= 1e-9 * kd[(i, 0)].abs().max(1.0));
            }
        }
    }
}
