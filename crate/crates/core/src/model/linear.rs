use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Names, SimModel};
use crate::error::{check_len, Error, Result};
use crate::linalg::all_finite;

/// Discrete linear state-space model in deviation variables around an
/// operating point:
///
/// ```text
/// x0(k+1) = A x0(k) + Bu (u - uop) + Bd (d - dop) + fop - xop
/// y(k)    = C x0(k) + Dd (d - dop) + yop
/// ```
///
/// `xop` and `fop` are zero unless the model comes from a linearization, in
/// which case they hold the linearization state and its successor.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub bu: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub dd: DMatrix<f64>,
    pub ts: f64,
    pub uop: DVector<f64>,
    pub yop: DVector<f64>,
    pub dop: DVector<f64>,
    pub xop: DVector<f64>,
    pub fop: DVector<f64>,
    /// Deviation state `x - xop`.
    pub x0: DVector<f64>,
    pub names: Names,
}

impl LinearModel {
    pub fn new(
        a: DMatrix<f64>,
        bu: DMatrix<f64>,
        c: DMatrix<f64>,
        bd: DMatrix<f64>,
        dd: DMatrix<f64>,
        ts: f64,
    ) -> Result<Self> {
        let nx = a.nrows();
        let nu = bu.ncols();
        let ny = c.nrows();
        let nd = bd.ncols();
        if nx == 0 {
            return Err(Error::InvalidArgument("models without states are not supported".into()));
        }
        check_len("A columns", nx, a.ncols())?;
        check_len("Bu rows", nx, bu.nrows())?;
        check_len("Bd rows", nx, bd.nrows())?;
        check_len("C columns", nx, c.ncols())?;
        check_len("Dd rows", ny, dd.nrows())?;
        check_len("Dd columns", nd, dd.ncols())?;
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample time must be positive, got {ts}")));
        }
        for (m, what) in [(&a, "A"), (&bu, "Bu"), (&bd, "Bd"), (&c, "C"), (&dd, "Dd")] {
            if !all_finite(m) {
                return Err(Error::NonFinite(what));
            }
        }
        Ok(LinearModel {
            a,
            bu,
            bd,
            c,
            dd,
            ts,
            uop: DVector::zeros(nu),
            yop: DVector::zeros(ny),
            dop: DVector::zeros(nd),
            xop: DVector::zeros(nx),
            fop: DVector::zeros(nx),
            x0: DVector::zeros(nx),
            names: Names::defaults(nu, nx, ny, nd),
        })
    }

    /// Model without measured disturbances.
    pub fn without_disturbance(a: DMatrix<f64>, bu: DMatrix<f64>, c: DMatrix<f64>, ts: f64) -> Result<Self> {
        let (nx, ny) = (a.nrows(), c.nrows());
        Self::new(a, bu, c, DMatrix::zeros(nx, 0), DMatrix::zeros(ny, 0), ts)
    }

    pub fn with_operating_point(mut self, uop: &[f64], yop: &[f64], dop: &[f64]) -> Result<Self> {
        self.set_operating_point(uop, yop, dop)?;
        Ok(self)
    }

    pub fn set_operating_point(&mut self, uop: &[f64], yop: &[f64], dop: &[f64]) -> Result<()> {
        check_len("uop", self.bu.ncols(), uop.len())?;
        check_len("yop", self.c.nrows(), yop.len())?;
        check_len("dop", self.bd.ncols(), dop.len())?;
        self.uop = DVector::from_column_slice(uop);
        self.yop = DVector::from_column_slice(yop);
        self.dop = DVector::from_column_slice(dop);
        Ok(())
    }

    pub fn with_names(mut self, u: Option<&[&str]>, x: Option<&[&str]>, y: Option<&[&str]>, d: Option<&[&str]>) -> Result<Self> {
        self.names.update(u, x, y, d)?;
        Ok(self)
    }

    /// Next deviation state for given deviation state and absolute inputs.
    pub fn next_deviation_state(&self, x0: &DVector<f64>, u: &[f64], d: &[f64]) -> DVector<f64> {
        let du = DVector::from_column_slice(u) - &self.uop;
        let dd = DVector::from_column_slice(d) - &self.dop;
        &self.a * x0 + &self.bu * du + &self.bd * dd + &self.fop - &self.xop
    }

    pub fn output_from(&self, x0: &DVector<f64>, d: &[f64]) -> DVector<f64> {
        let dd = DVector::from_column_slice(d) - &self.dop;
        &self.c * x0 + &self.dd * dd + &self.yop
    }

    /// Static gain from `u` to `y`: `C (I - A)⁻¹ Bu`.
    pub fn dc_gain_u(&self) -> Result<DMatrix<f64>> {
        let n = self.a.nrows();
        let ia = DMatrix::identity(n, n) - &self.a;
        Ok(&self.c * crate::linalg::solve(&ia, &self.bu, "I - A")?)
    }

    /// Static gain from `d` to `y`: `C (I - A)⁻¹ Bd + Dd`.
    pub fn dc_gain_d(&self) -> Result<DMatrix<f64>> {
        let n = self.a.nrows();
        let ia = DMatrix::identity(n, n) - &self.a;
        Ok(&self.c * crate::linalg::solve(&ia, &self.bd, "I - A")? + &self.dd)
    }

    pub fn to_doc(&self) -> LinearModelDoc {
        LinearModelDoc {
            a: rows(&self.a),
            bu: rows(&self.bu),
            bd: rows(&self.bd),
            c: rows(&self.c),
            dd: rows(&self.dd),
            ts: self.ts,
            uop: self.uop.as_slice().to_vec(),
            yop: self.yop.as_slice().to_vec(),
            dop: self.dop.as_slice().to_vec(),
            xop: self.xop.as_slice().to_vec(),
            fop: self.fop.as_slice().to_vec(),
            x0: self.x0.as_slice().to_vec(),
            names: self.names.clone(),
        }
    }

    pub fn from_doc(doc: &LinearModelDoc) -> Result<Self> {
        let nx = doc.a.len();
        let ny = doc.c.len();
        let nu = doc.uop.len();
        let nd = doc.dop.len();
        let mut m = LinearModel::new(
            from_rows(&doc.a, nx, nx, "A")?,
            from_rows(&doc.bu, nx, nu, "Bu")?,
            from_rows(&doc.c, ny, nx, "C")?,
            from_rows(&doc.bd, nx, nd, "Bd")?,
            from_rows(&doc.dd, ny, nd, "Dd")?,
            doc.ts,
        )?;
        m.set_operating_point(&doc.uop, &doc.yop, &doc.dop)?;
        check_len("xop", nx, doc.xop.len())?;
        check_len("fop", nx, doc.fop.len())?;
        check_len("x0", nx, doc.x0.len())?;
        m.xop = DVector::from_column_slice(&doc.xop);
        m.fop = DVector::from_column_slice(&doc.fop);
        m.x0 = DVector::from_column_slice(&doc.x0);
        m.names = doc.names.clone();
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_doc(&serde_json::from_str(s)?)
    }
}

/// JSON document form of a [`LinearModel`], matrices stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModelDoc {
    pub a: Vec<Vec<f64>>,
    pub bu: Vec<Vec<f64>>,
    pub bd: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub dd: Vec<Vec<f64>>,
    pub ts: f64,
    pub uop: Vec<f64>,
    pub yop: Vec<f64>,
    pub dop: Vec<f64>,
    pub xop: Vec<f64>,
    pub fop: Vec<f64>,
    pub x0: Vec<f64>,
    pub names: Names,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], nrows: usize, ncols: usize, what: &'static str) -> Result<DMatrix<f64>> {
    check_len(what, nrows, r.len())?;
    let mut m = DMatrix::zeros(nrows, ncols);
    for (i, row) in r.iter().enumerate() {
        check_len(what, ncols, row.len())?;
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

impl SimModel for LinearModel {
    fn nu(&self) -> usize {
        self.bu.ncols()
    }
    fn nx(&self) -> usize {
        self.a.nrows()
    }
    fn ny(&self) -> usize {
        self.c.nrows()
    }
    fn nd(&self) -> usize {
        self.bd.ncols()
    }
    fn ts(&self) -> f64 {
        self.ts
    }
    fn uop(&self) -> &DVector<f64> {
        &self.uop
    }
    fn yop(&self) -> &DVector<f64> {
        &self.yop
    }
    fn dop(&self) -> &DVector<f64> {
        &self.dop
    }
    fn names(&self) -> &Names {
        &self.names
    }
    fn state(&self) -> DVector<f64> {
        &self.x0 + &self.xop
    }
    fn set_state(&mut self, x: &[f64]) -> Result<()> {
        check_len("x", self.nx(), x.len())?;
        self.x0 = DVector::from_column_slice(x) - &self.xop;
        Ok(())
    }
    fn step(&mut self, u: &[f64], d: &[f64]) -> Result<()> {
        check_len("u", self.nu(), u.len())?;
        check_len("d", self.nd(), d.len())?;
        let next = self.next_deviation_state(&self.x0, u, d);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationFailure);
        }
        self.x0 = next;
        Ok(())
    }
    fn output(&self, d: &[f64]) -> Result<DVector<f64>> {
        check_len("d", self.nd(), d.len())?;
        Ok(self.output_from(&self.x0, d))
    }
}
