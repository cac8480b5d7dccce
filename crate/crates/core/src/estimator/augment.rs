//! Plant models augmented with integrating disturbance states.
//!
//! The estimated state is `x̂ = [x; x_iu; x_iy]`. Each input integrator chain
//! adds its head state to the corresponding manipulated input, each output
//! chain adds its head to the corresponding measured output. For linear base
//! models `x` is the deviation state `x0`; for nonlinear ones it is absolute.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg::{observability_matrix, rank};
use crate::model::{LinearModel, Model, ModelScalar, SimModel};

/// Observability rank tolerance relative to the largest singular value.
pub const OBSERVABILITY_TOL: f64 = 1e-8;

/// Augmented matrices of a linear base model.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearAugmented {
    pub a: DMatrix<f64>,
    pub bu: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub dd: DMatrix<f64>,
    /// Constant term `fop - xop` of the deviation dynamics, padded with zeros.
    pub bias: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct Augmented {
    base: Model,
    nint_u: Vec<usize>,
    nint_ym: Vec<usize>,
    i_ym: Vec<usize>,
    /// Block-diagonal transition of all integrator chains.
    a_int: DMatrix<f64>,
    /// Maps input-chain states onto the inputs (nu × niu).
    su: DMatrix<f64>,
    /// Maps output-chain states onto all outputs (ny × niy).
    sy: DMatrix<f64>,
    lin: Option<LinearAugmented>,
    diagnostic: Option<String>,
}

fn chain(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::identity(n, n);
    for i in 0..n.saturating_sub(1) {
        m[(i, i + 1)] = 1.0;
    }
    m
}

/// Default output integrators: one per measured output, unless input
/// integrators were requested.
pub fn default_nint_ym(nint_u: &[usize], nym: usize) -> Vec<usize> {
    if nint_u.iter().all(|&n| n == 0) {
        vec![1; nym]
    } else {
        vec![0; nym]
    }
}

impl Augmented {
    /// Augments `base`. With `nint_ym = None` the default rule applies and
    /// falls back to no output integrators if they would break observability.
    pub fn new(base: Model, nint_u: Option<Vec<usize>>, nint_ym: Option<Vec<usize>>, i_ym: Option<Vec<usize>>) -> Result<Self> {
        let ny = base.ny();
        let nu = base.nu();
        let i_ym = i_ym.unwrap_or_else(|| (0..ny).collect());
        for (k, &i) in i_ym.iter().enumerate() {
            if i >= ny || i_ym[..k].contains(&i) {
                return Err(Error::InvalidArgument(format!("invalid measured output index {i}")));
            }
        }
        let nint_u = nint_u.unwrap_or_else(|| vec![0; nu]);
        check_len("nint_u", nu, nint_u.len())?;
        let explicit = nint_ym.is_some();
        let nint_ym = nint_ym.unwrap_or_else(|| default_nint_ym(&nint_u, i_ym.len()));
        check_len("nint_ym", i_ym.len(), nint_ym.len())?;
        let mut aug = Self::assemble(base.clone(), nint_u.clone(), nint_ym, i_ym.clone())?;
        if !aug.preserves_observability() {
            if explicit {
                return Err(Error::Unsupported(
                    "the requested integrating states make the augmented model unobservable".into(),
                ));
            }
            let msg = "default output integrators would break observability; none were added".to_string();
            log::warn!("{msg}");
            let zeros = vec![0; i_ym.len()];
            aug = Self::assemble(base, nint_u, zeros, i_ym)?;
            if !aug.preserves_observability() {
                return Err(Error::Unsupported("the augmented model is not observable".into()));
            }
            aug.diagnostic = Some(msg);
        }
        Ok(aug)
    }

    fn assemble(base: Model, nint_u: Vec<usize>, nint_ym: Vec<usize>, i_ym: Vec<usize>) -> Result<Self> {
        let nu = base.nu();
        let ny = base.ny();
        let niu: usize = nint_u.iter().sum();
        let niy: usize = nint_ym.iter().sum();
        let mut su = DMatrix::zeros(nu, niu);
        let mut blocks = Vec::new();
        let mut off = 0;
        for (i, &n) in nint_u.iter().enumerate() {
            if n > 0 {
                su[(i, off)] = 1.0;
                blocks.push(chain(n));
                off += n;
            }
        }
        let mut sy = DMatrix::zeros(ny, niy);
        let mut off = 0;
        for (k, &n) in nint_ym.iter().enumerate() {
            if n > 0 {
                sy[(i_ym[k], off)] = 1.0;
                blocks.push(chain(n));
                off += n;
            }
        }
        let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
        let a_int = crate::linalg::block_diag(&refs);
        let mut aug = Augmented {
            base,
            nint_u,
            nint_ym,
            i_ym,
            a_int,
            su,
            sy,
            lin: None,
            diagnostic: None,
        };
        aug.lin = aug.base.as_linear().map(|m| aug.linear_matrices(m));
        Ok(aug)
    }

    fn linear_matrices(&self, m: &LinearModel) -> LinearAugmented {
        let nx = m.nx();
        let niu = self.niu();
        let niy = self.niy();
        let n = nx + niu + niy;
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (nx, nx)).copy_from(&m.a);
        a.view_mut((0, nx), (nx, niu)).copy_from(&(&m.bu * &self.su));
        a.view_mut((nx, nx), (niu + niy, niu + niy)).copy_from(&self.a_int);
        let mut bu = DMatrix::zeros(n, m.nu());
        bu.view_mut((0, 0), (nx, m.nu())).copy_from(&m.bu);
        let mut bd = DMatrix::zeros(n, m.nd());
        bd.view_mut((0, 0), (nx, m.nd())).copy_from(&m.bd);
        let mut c = DMatrix::zeros(m.ny(), n);
        c.view_mut((0, 0), (m.ny(), nx)).copy_from(&m.c);
        c.view_mut((0, nx + niu), (m.ny(), niy)).copy_from(&self.sy);
        let mut bias = DVector::zeros(n);
        bias.rows_mut(0, nx).copy_from(&(&m.fop - &m.xop));
        LinearAugmented {
            a,
            bu,
            bd,
            c,
            dd: m.dd.clone(),
            bias,
        }
    }

    /// True when the integrators raise the observability rank by their count.
    /// Nonlinear models are not checked.
    pub fn preserves_observability(&self) -> bool {
        let (Some(lin), Some(base)) = (&self.lin, self.base.as_linear()) else {
            return true;
        };
        let cm_hat = select_rows(&lin.c, &self.i_ym);
        let cm = select_rows(&base.c, &self.i_ym);
        let r_aug = rank(&observability_matrix(&lin.a, &cm_hat), OBSERVABILITY_TOL);
        let r_base = rank(&observability_matrix(&base.a, &cm), OBSERVABILITY_TOL);
        r_aug == r_base + self.niu() + self.niy()
    }

    pub fn base(&self) -> &Model {
        &self.base
    }

    pub fn linear(&self) -> Option<&LinearAugmented> {
        self.lin.as_ref()
    }

    pub fn diagnostic(&self) -> Option<&str> {
        self.diagnostic.as_deref()
    }

    pub fn nint_u(&self) -> &[usize] {
        &self.nint_u
    }

    pub fn nint_ym(&self) -> &[usize] {
        &self.nint_ym
    }

    pub fn i_ym(&self) -> &[usize] {
        &self.i_ym
    }

    pub fn nu(&self) -> usize {
        self.base.nu()
    }

    pub fn nd(&self) -> usize {
        self.base.nd()
    }

    pub fn ny(&self) -> usize {
        self.base.ny()
    }

    pub fn nym(&self) -> usize {
        self.i_ym.len()
    }

    pub fn nx(&self) -> usize {
        self.base.nx()
    }

    pub fn niu(&self) -> usize {
        self.nint_u.iter().sum()
    }

    pub fn niy(&self) -> usize {
        self.nint_ym.iter().sum()
    }

    pub fn nx_hat(&self) -> usize {
        self.nx() + self.niu() + self.niy()
    }

    pub fn ts(&self) -> f64 {
        self.base.ts()
    }

    /// Replaces a linear base model of identical dimensions.
    pub fn set_base(&mut self, m: LinearModel) -> Result<()> {
        let old = self
            .base
            .as_linear()
            .ok_or_else(|| Error::Unsupported("only linear models can be swapped".into()))?;
        check_len("nu", old.nu(), m.nu())?;
        check_len("nx", old.nx(), m.nx())?;
        check_len("ny", old.ny(), m.ny())?;
        check_len("nd", old.nd(), m.nd())?;
        self.lin = Some(self.linear_matrices(&m));
        self.base = Model::Linear(m);
        Ok(())
    }

    /// Absolute augmented state from estimation coordinates.
    pub fn to_absolute(&self, xhat: &DVector<f64>) -> DVector<f64> {
        let mut x = xhat.clone();
        if let Some(m) = self.base.as_linear() {
            let nx = m.nx();
            x.rows_mut(0, nx).zip_apply(&m.xop, |a, b| *a += b);
        }
        x
    }

    pub fn from_absolute(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut xhat = x.clone();
        if let Some(m) = self.base.as_linear() {
            let nx = m.nx();
            xhat.rows_mut(0, nx).zip_apply(&m.xop, |a, b| *a -= b);
        }
        xhat
    }

    /// Next augmented state (estimation coordinates) for absolute `u`, `d`.
    pub fn f_hat<T: ModelScalar>(&self, out: &mut [T], x: &[T], u: &[T], d: &[T]) {
        match (&self.base, &self.lin) {
            (Model::Linear(m), Some(l)) => {
                let n = out.len();
                for i in 0..n {
                    let mut acc = T::from_f64(l.bias[i]);
                    for j in 0..n {
                        let a = l.a[(i, j)];
                        if a != 0.0 {
                            acc += x[j] * a;
                        }
                    }
                    for j in 0..u.len() {
                        let b = l.bu[(i, j)];
                        if b != 0.0 {
                            acc += (u[j] - m.uop[j]) * b;
                        }
                    }
                    for j in 0..d.len() {
                        let b = l.bd[(i, j)];
                        if b != 0.0 {
                            acc += (d[j] - m.dop[j]) * b;
                        }
                    }
                    out[i] = acc;
                }
            }
            (Model::Nonlinear(m), _) => {
                let nx = m.nx();
                let nu = u.len();
                let mut ueff: Vec<T> = u.to_vec();
                for (i, ue) in ueff.iter_mut().enumerate().take(nu) {
                    for k in 0..self.niu() {
                        if self.su[(i, k)] != 0.0 {
                            *ue += x[nx + k];
                        }
                    }
                }
                m.discrete_step(&mut out[..nx], &x[..nx], &ueff, d);
                self.integrators(out, x, nx);
            }
            (Model::Linear(_), None) => unreachable!("linear matrices are built with the model"),
        }
    }

    fn integrators<T: ModelScalar>(&self, out: &mut [T], x: &[T], nx: usize) {
        let ni = self.a_int.nrows();
        for i in 0..ni {
            let mut acc = T::zero();
            for j in 0..ni {
                let a = self.a_int[(i, j)];
                if a != 0.0 {
                    acc += x[nx + j] * a;
                }
            }
            out[nx + i] = acc;
        }
    }

    /// All model outputs (absolute) at augmented state `x`.
    pub fn h_hat<T: ModelScalar>(&self, out: &mut [T], x: &[T], d: &[T]) {
        match (&self.base, &self.lin) {
            (Model::Linear(m), Some(l)) => {
                for i in 0..out.len() {
                    let mut acc = T::from_f64(m.yop[i]);
                    for j in 0..x.len() {
                        let c = l.c[(i, j)];
                        if c != 0.0 {
                            acc += x[j] * c;
                        }
                    }
                    for j in 0..d.len() {
                        let v = l.dd[(i, j)];
                        if v != 0.0 {
                            acc += (d[j] - m.dop[j]) * v;
                        }
                    }
                    out[i] = acc;
                }
            }
            (Model::Nonlinear(m), _) => {
                let nx = m.nx();
                m.h(out, &x[..nx], d);
                let off = nx + self.niu();
                for i in 0..out.len() {
                    for k in 0..self.niy() {
                        if self.sy[(i, k)] != 0.0 {
                            out[i] += x[off + k];
                        }
                    }
                }
            }
            (Model::Linear(_), None) => unreachable!("linear matrices are built with the model"),
        }
    }

    pub fn f_hat_f64(&self, x: &DVector<f64>, u: &[f64], d: &[f64]) -> DVector<f64> {
        if let (Model::Linear(m), Some(l)) = (&self.base, &self.lin) {
            let du = DVector::from_column_slice(u) - &m.uop;
            let dd = DVector::from_column_slice(d) - &m.dop;
            return &l.a * x + &l.bu * du + &l.bd * dd + &l.bias;
        }
        let mut out = vec![0.0; x.len()];
        self.f_hat(&mut out, x.as_slice(), u, d);
        DVector::from_vec(out)
    }

    pub fn h_hat_f64(&self, x: &DVector<f64>, d: &[f64]) -> DVector<f64> {
        if let (Model::Linear(m), Some(l)) = (&self.base, &self.lin) {
            let dd = DVector::from_column_slice(d) - &m.dop;
            return &l.c * x + &l.dd * dd + &m.yop;
        }
        let mut out = vec![0.0; self.ny()];
        self.h_hat(&mut out, x.as_slice(), d);
        DVector::from_vec(out)
    }

    /// Measured outputs at augmented state `x`.
    pub fn hm_f64(&self, x: &DVector<f64>, d: &[f64]) -> DVector<f64> {
        let y = self.h_hat_f64(x, d);
        DVector::from_iterator(self.nym(), self.i_ym.iter().map(|&i| y[i]))
    }

    /// Measured-output rows of the augmented output matrix.
    pub fn cm(&self) -> Option<DMatrix<f64>> {
        self.lin.as_ref().map(|l| select_rows(&l.c, &self.i_ym))
    }

    /// Human-readable dimension summary.
    pub fn summary(&self) -> String {
        format!(
            "{} manipulated inputs u ({} integrating states)\n{} estimated states x̂\n{} measured outputs ym ({} integrating states)\n{} unmeasured outputs yu\n{} measured disturbances d",
            self.nu(),
            self.niu(),
            self.nx_hat(),
            self.nym(),
            self.niy(),
            self.ny() - self.nym(),
            self.nd()
        )
    }
}

pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}
