use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{LinearModel, Names, SimModel};
use crate::autodiff::{Dual8, HyperDual8, Real, CHUNK};
use crate::error::{check_len, Error, Result};

/// Continuous (or discrete) nonlinear dynamics and output functions.
///
/// Both functions must be pure and written against the generic [`Real`]
/// scalar so that they can be differentiated. `p` is the parameter vector
/// stored in the model.
pub trait Dynamics: Send + Sync {
    /// Writes `ẋ = f(x, u, d, p)` (or `x(k+1)` for discrete models) into `out`.
    fn state<T: Real>(&self, out: &mut [T], x: &[T], u: &[T], d: &[T], p: &[f64]);
    /// Writes `y = h(x, d, p)` into `out`.
    fn output<T: Real>(&self, out: &mut [T], x: &[T], d: &[T], p: &[f64]);
}

/// Object-safe form of [`Dynamics`], monomorphized for every scalar the
/// crate evaluates models with.
pub trait ErasedDynamics: Send + Sync {
    fn state_f64(&self, out: &mut [f64], x: &[f64], u: &[f64], d: &[f64], p: &[f64]);
    fn state_d8(&self, out: &mut [Dual8], x: &[Dual8], u: &[Dual8], d: &[Dual8], p: &[f64]);
    fn state_h8(&self, out: &mut [HyperDual8], x: &[HyperDual8], u: &[HyperDual8], d: &[HyperDual8], p: &[f64]);
    fn output_f64(&self, out: &mut [f64], x: &[f64], d: &[f64], p: &[f64]);
    fn output_d8(&self, out: &mut [Dual8], x: &[Dual8], d: &[Dual8], p: &[f64]);
    fn output_h8(&self, out: &mut [HyperDual8], x: &[HyperDual8], d: &[HyperDual8], p: &[f64]);
}

impl<D: Dynamics> ErasedDynamics for D {
    fn state_f64(&self, out: &mut [f64], x: &[f64], u: &[f64], d: &[f64], p: &[f64]) {
        self.state(out, x, u, d, p)
    }
    fn state_d8(&self, out: &mut [Dual8], x: &[Dual8], u: &[Dual8], d: &[Dual8], p: &[f64]) {
        self.state(out, x, u, d, p)
    }
    fn state_h8(&self, out: &mut [HyperDual8], x: &[HyperDual8], u: &[HyperDual8], d: &[HyperDual8], p: &[f64]) {
        self.state(out, x, u, d, p)
    }
    fn output_f64(&self, out: &mut [f64], x: &[f64], d: &[f64], p: &[f64]) {
        self.output(out, x, d, p)
    }
    fn output_d8(&self, out: &mut [Dual8], x: &[Dual8], d: &[Dual8], p: &[f64]) {
        self.output(out, x, d, p)
    }
    fn output_h8(&self, out: &mut [HyperDual8], x: &[HyperDual8], d: &[HyperDual8], p: &[f64]) {
        self.output(out, x, d, p)
    }
}

/// Scalars that can be pushed through an [`ErasedDynamics`] object.
pub trait ModelScalar: Real {
    fn eval_state(sys: &dyn ErasedDynamics, out: &mut [Self], x: &[Self], u: &[Self], d: &[Self], p: &[f64]);
    fn eval_output(sys: &dyn ErasedDynamics, out: &mut [Self], x: &[Self], d: &[Self], p: &[f64]);
}

macro_rules! model_scalar {
    ($t:ty, $s:ident, $o:ident) => {
        impl ModelScalar for $t {
            #[inline]
            fn eval_state(sys: &dyn ErasedDynamics, out: &mut [Self], x: &[Self], u: &[Self], d: &[Self], p: &[f64]) {
                sys.$s(out, x, u, d, p)
            }
            #[inline]
            fn eval_output(sys: &dyn ErasedDynamics, out: &mut [Self], x: &[Self], d: &[Self], p: &[f64]) {
                sys.$o(out, x, d, p)
            }
        }
    };
}
model_scalar!(f64, state_f64, output_f64);
model_scalar!(Dual8, state_d8, output_d8);
model_scalar!(HyperDual8, state_h8, output_h8);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntegratorMethod {
    RungeKutta4,
    /// `state` already returns `x(k+1)`.
    Discrete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IntegratorConfig {
    pub method: IntegratorMethod,
    /// Internal substeps per sample time.
    pub supersample: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: IntegratorMethod::RungeKutta4,
            supersample: 1,
        }
    }
}

/// `ẋ = A x + Bu u + Bd d`, `y = C x + Dd d` wrapped as [`Dynamics`].
#[derive(Clone, Debug)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub bu: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub dd: DMatrix<f64>,
}

impl Dynamics for LinearDynamics {
    fn state<T: Real>(&self, out: &mut [T], x: &[T], u: &[T], d: &[T], _p: &[f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (j, xj) in x.iter().enumerate() {
                acc += *xj * self.a[(i, j)];
            }
            for (j, uj) in u.iter().enumerate() {
                acc += *uj * self.bu[(i, j)];
            }
            for (j, dj) in d.iter().enumerate() {
                acc += *dj * self.bd[(i, j)];
            }
            *o = acc;
        }
    }

    fn output<T: Real>(&self, out: &mut [T], x: &[T], d: &[T], _p: &[f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (j, xj) in x.iter().enumerate() {
                acc += *xj * self.c[(i, j)];
            }
            for (j, dj) in d.iter().enumerate() {
                acc += *dj * self.dd[(i, j)];
            }
            *o = acc;
        }
    }
}

/// Nonlinear model `x(k+1) = f(x, u, d, p)`, `y = h(x, d, p)` in absolute
/// variables. Continuous dynamics are discretized by fixed-step RK4.
#[derive(Clone)]
pub struct NonlinearModel {
    sys: Arc<dyn ErasedDynamics>,
    pub p: Vec<f64>,
    pub ts: f64,
    nu: usize,
    nx: usize,
    ny: usize,
    nd: usize,
    pub solver: IntegratorConfig,
    pub uop: DVector<f64>,
    pub yop: DVector<f64>,
    pub dop: DVector<f64>,
    pub x: DVector<f64>,
    pub names: Names,
}

impl fmt::Debug for NonlinearModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearModel")
            .field("p", &self.p)
            .field("ts", &self.ts)
            .field("dims", &(self.nu, self.nx, self.ny, self.nd))
            .field("solver", &self.solver)
            .field("x", &self.x.as_slice())
            .finish()
    }
}

impl NonlinearModel {
    pub fn new<D: Dynamics + 'static>(
        sys: D,
        p: Vec<f64>,
        ts: f64,
        nu: usize,
        nx: usize,
        ny: usize,
        nd: usize,
    ) -> Result<Self> {
        Self::from_erased(Arc::new(sys), p, ts, nu, nx, ny, nd)
    }

    pub fn from_erased(
        sys: Arc<dyn ErasedDynamics>,
        p: Vec<f64>,
        ts: f64,
        nu: usize,
        nx: usize,
        ny: usize,
        nd: usize,
    ) -> Result<Self> {
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample time must be positive, got {ts}")));
        }
        if nx == 0 {
            return Err(Error::InvalidArgument("models without states are not supported".into()));
        }
        Ok(NonlinearModel {
            sys,
            p,
            ts,
            nu,
            nx,
            ny,
            nd,
            solver: IntegratorConfig::default(),
            uop: DVector::zeros(nu),
            yop: DVector::zeros(ny),
            dop: DVector::zeros(nd),
            x: DVector::zeros(nx),
            names: Names::defaults(nu, nx, ny, nd),
        })
    }

    pub fn with_solver(mut self, solver: IntegratorConfig) -> Result<Self> {
        if solver.supersample == 0 {
            return Err(Error::InvalidArgument("supersample must be at least 1".into()));
        }
        self.solver = solver;
        Ok(self)
    }

    pub fn with_params(mut self, p: Vec<f64>) -> Self {
        self.p = p;
        self
    }

    pub fn with_operating_point(mut self, uop: &[f64], yop: &[f64], dop: &[f64]) -> Result<Self> {
        check_len("uop", self.nu, uop.len())?;
        check_len("yop", self.ny, yop.len())?;
        check_len("dop", self.nd, dop.len())?;
        self.uop = DVector::from_column_slice(uop);
        self.yop = DVector::from_column_slice(yop);
        self.dop = DVector::from_column_slice(dop);
        Ok(self)
    }

    pub fn with_names(mut self, u: Option<&[&str]>, x: Option<&[&str]>, y: Option<&[&str]>, d: Option<&[&str]>) -> Result<Self> {
        self.names.update(u, x, y, d)?;
        Ok(self)
    }

    pub fn dynamics(&self) -> &dyn ErasedDynamics {
        self.sys.as_ref()
    }

    /// Continuous-time derivative (or discrete update) `f`.
    pub fn f<T: ModelScalar>(&self, out: &mut [T], x: &[T], u: &[T], d: &[T]) {
        T::eval_state(self.sys.as_ref(), out, x, u, d, &self.p)
    }

    /// Output function `h`.
    pub fn h<T: ModelScalar>(&self, out: &mut [T], x: &[T], d: &[T]) {
        T::eval_output(self.sys.as_ref(), out, x, d, &self.p)
    }

    /// One sample of the discretized map, written into `out`.
    pub fn discrete_step<T: ModelScalar>(&self, out: &mut [T], x: &[T], u: &[T], d: &[T]) {
        match self.solver.method {
            IntegratorMethod::Discrete => self.f(out, x, u, d),
            IntegratorMethod::RungeKutta4 => {
                let n = self.nx;
                let h = self.ts / self.solver.supersample as f64;
                let mut k1 = vec![T::zero(); n];
                let mut k2 = vec![T::zero(); n];
                let mut k3 = vec![T::zero(); n];
                let mut k4 = vec![T::zero(); n];
                let mut tmp = vec![T::zero(); n];
                out.copy_from_slice(x);
                for _ in 0..self.solver.supersample {
                    self.f(&mut k1, out, u, d);
                    for i in 0..n {
                        tmp[i] = out[i] + k1[i] * (0.5 * h);
                    }
                    self.f(&mut k2, &tmp, u, d);
                    for i in 0..n {
                        tmp[i] = out[i] + k2[i] * (0.5 * h);
                    }
                    self.f(&mut k3, &tmp, u, d);
                    for i in 0..n {
                        tmp[i] = out[i] + k3[i] * h;
                    }
                    self.f(&mut k4, &tmp, u, d);
                    for i in 0..n {
                        out[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (h / 6.0);
                    }
                }
            }
        }
    }
}

impl SimModel for NonlinearModel {
    fn nu(&self) -> usize {
        self.nu
    }
    fn nx(&self) -> usize {
        self.nx
    }
    fn ny(&self) -> usize {
        self.ny
    }
    fn nd(&self) -> usize {
        self.nd
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
        self.x.clone()
    }
    fn set_state(&mut self, x: &[f64]) -> Result<()> {
        check_len("x", self.nx, x.len())?;
        self.x.copy_from_slice(x);
        Ok(())
    }
    fn step(&mut self, u: &[f64], d: &[f64]) -> Result<()> {
        check_len("u", self.nu, u.len())?;
        check_len("d", self.nd, d.len())?;
        let mut next = vec![0.0; self.nx];
        self.discrete_step(&mut next, self.x.as_slice(), u, d);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationFailure);
        }
        self.x.copy_from_slice(&next);
        Ok(())
    }
    fn output(&self, d: &[f64]) -> Result<DVector<f64>> {
        check_len("d", self.nd, d.len())?;
        let mut y = vec![0.0; self.ny];
        self.h(&mut y, self.x.as_slice(), d);
        Ok(DVector::from_vec(y))
    }
}

/// Linearizes the discretized model at `(x, u, d)`.
///
/// The result reproduces the nonlinear step to first order around the point:
/// its operating points are `uop = u`, `dop = d`, `yop = h(x, d)`,
/// `xop = x`, `fop = f_discrete(x, u, d)`, and its deviation state is zero.
pub fn linearize(model: &NonlinearModel, x: &[f64], u: &[f64], d: &[f64]) -> Result<LinearModel> {
    let (nu, nx, ny, nd) = (model.nu, model.nx, model.ny, model.nd);
    let mut lin = LinearModel::new(
        DMatrix::zeros(nx, nx),
        DMatrix::zeros(nx, nu),
        DMatrix::zeros(ny, nx),
        DMatrix::zeros(nx, nd),
        DMatrix::zeros(ny, nd),
        model.ts,
    )?;
    lin.names = model.names.clone();
    linearize_into(&mut lin, model, x, u, d)?;
    Ok(lin)
}

/// In-place variant of [`linearize`] reusing an existing model's storage.
pub fn linearize_into(lin: &mut LinearModel, model: &NonlinearModel, x: &[f64], u: &[f64], d: &[f64]) -> Result<()> {
    let (nu, nx, ny, nd) = (model.nu, model.nx, model.ny, model.nd);
    check_len("x", nx, x.len())?;
    check_len("u", nu, u.len())?;
    check_len("d", nd, d.len())?;
    check_len("linear model states", nx, lin.a.nrows())?;
    check_len("linear model inputs", nu, lin.bu.ncols())?;
    check_len("linear model outputs", ny, lin.c.nrows())?;
    check_len("linear model disturbances", nd, lin.bd.ncols())?;

    let nin = nx + nu + nd;
    let point: Vec<f64> = x.iter().chain(u).chain(d).copied().collect();
    let mut seeded: Vec<Dual8> = point.iter().map(|&v| Dual8::from_f64(v)).collect();
    let mut fx = vec![Dual8::zero(); nx];
    let mut hy = vec![Dual8::zero(); ny];
    let mut fop = vec![0.0; nx];
    let mut yop = vec![0.0; ny];
    let mut start = 0;
    while start < nin {
        let width = CHUNK.min(nin - start);
        for (j, s) in seeded.iter_mut().enumerate() {
            *s = Dual8::from_f64(point[j]);
            if j >= start && j < start + width {
                s.eps[j - start] = 1.0;
            }
        }
        let (xs, rest) = seeded.split_at(nx);
        let (us, ds) = rest.split_at(nu);
        model.discrete_step(&mut fx, xs, us, ds);
        model.h(&mut hy, xs, ds);
        for k in 0..width {
            let col = start + k;
            for i in 0..nx {
                let v = fx[i].eps[k];
                if !v.is_finite() {
                    return Err(Error::NonFiniteDerivative { output: i, input: col });
                }
                if col < nx {
                    lin.a[(i, col)] = v;
                } else if col < nx + nu {
                    lin.bu[(i, col - nx)] = v;
                } else {
                    lin.bd[(i, col - nx - nu)] = v;
                }
            }
            for i in 0..ny {
                let v = hy[i].eps[k];
                if !v.is_finite() {
                    return Err(Error::NonFiniteDerivative { output: nx + i, input: col });
                }
                if col < nx {
                    lin.c[(i, col)] = v;
                } else if col >= nx + nu {
                    lin.dd[(i, col - nx - nu)] = v;
                }
            }
        }
        for i in 0..nx {
            fop[i] = fx[i].re;
        }
        for i in 0..ny {
            yop[i] = hy[i].re;
        }
        start += width;
    }
    if fop.iter().chain(&yop).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("linearization point"));
    }
    lin.ts = model.ts;
    lin.uop.copy_from_slice(u);
    lin.dop.copy_from_slice(d);
    lin.yop.copy_from_slice(&yop);
    lin.xop.copy_from_slice(x);
    lin.fop.copy_from_slice(&fop);
    lin.x0.fill(0.0);
    Ok(())
}
