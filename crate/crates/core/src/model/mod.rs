//! Discrete-time plant models.

mod discretize;
mod linear;
mod nonlinear;

pub use discretize::{discretize_continuous, from_transfer_function, TransferFunction, TransferFunctionMatrix};
pub use linear::{LinearModel, LinearModelDoc};
pub use nonlinear::{
    linearize, linearize_into, Dynamics, ErasedDynamics, IntegratorConfig, IntegratorMethod, LinearDynamics,
    ModelScalar, NonlinearModel,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

/// Axis labels used in logs and plots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Names {
    pub u: Vec<String>,
    pub x: Vec<String>,
    pub y: Vec<String>,
    pub d: Vec<String>,
}

impl Names {
    pub fn defaults(nu: usize, nx: usize, ny: usize, nd: usize) -> Self {
        let gen = |p: &str, n: usize| (1..=n).map(|i| format!("{p}{i}")).collect();
        Names {
            u: gen("u", nu),
            x: gen("x", nx),
            y: gen("y", ny),
            d: gen("d", nd),
        }
    }

    /// Replaces the provided label groups, checking their lengths.
    pub fn update(
        &mut self,
        u: Option<&[&str]>,
        x: Option<&[&str]>,
        y: Option<&[&str]>,
        d: Option<&[&str]>,
    ) -> Result<()> {
        let set = |dst: &mut Vec<String>, src: Option<&[&str]>, what| -> Result<()> {
            if let Some(src) = src {
                check_len(what, dst.len(), src.len())?;
                *dst = src.iter().map(|s| s.to_string()).collect();
            }
            Ok(())
        };
        set(&mut self.u, u, "u names")?;
        set(&mut self.x, x, "x names")?;
        set(&mut self.y, y, "y names")?;
        set(&mut self.d, d, "d names")
    }
}

/// Common surface of plant models used as simulators and as the basis of
/// estimators and controllers.
pub trait SimModel {
    fn nu(&self) -> usize;
    fn nx(&self) -> usize;
    fn ny(&self) -> usize;
    fn nd(&self) -> usize;
    fn ts(&self) -> f64;
    fn uop(&self) -> &DVector<f64>;
    fn yop(&self) -> &DVector<f64>;
    fn dop(&self) -> &DVector<f64>;
    fn names(&self) -> &Names;
    /// Absolute state.
    fn state(&self) -> DVector<f64>;
    fn set_state(&mut self, x: &[f64]) -> Result<()>;
    /// Advances the internal state one sample with absolute `u` and `d`.
    fn step(&mut self, u: &[f64], d: &[f64]) -> Result<()>;
    /// Absolute output at the stored state.
    fn output(&self, d: &[f64]) -> Result<DVector<f64>>;
}

/// Either model kind, for code that accepts both.
#[derive(Clone, Debug)]
pub enum Model {
    Linear(LinearModel),
    Nonlinear(NonlinearModel),
}

impl From<LinearModel> for Model {
    fn from(m: LinearModel) -> Self {
        Model::Linear(m)
    }
}

impl From<NonlinearModel> for Model {
    fn from(m: NonlinearModel) -> Self {
        Model::Nonlinear(m)
    }
}

impl Model {
    pub fn as_linear(&self) -> Option<&LinearModel> {
        match self {
            Model::Linear(m) => Some(m),
            Model::Nonlinear(_) => None,
        }
    }

    pub fn as_nonlinear(&self) -> Option<&NonlinearModel> {
        match self {
            Model::Linear(_) => None,
            Model::Nonlinear(m) => Some(m),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Model::Linear(_))
    }

    fn inner(&self) -> &dyn SimModel {
        match self {
            Model::Linear(m) => m,
            Model::Nonlinear(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn SimModel {
        match self {
            Model::Linear(m) => m,
            Model::Nonlinear(m) => m,
        }
    }
}

impl SimModel for Model {
    fn nu(&self) -> usize {
        self.inner().nu()
    }
    fn nx(&self) -> usize {
        self.inner().nx()
    }
    fn ny(&self) -> usize {
        self.inner().ny()
    }
    fn nd(&self) -> usize {
        self.inner().nd()
    }
    fn ts(&self) -> f64 {
        self.inner().ts()
    }
    fn uop(&self) -> &DVector<f64> {
        self.inner().uop()
    }
    fn yop(&self) -> &DVector<f64> {
        self.inner().yop()
    }
    fn dop(&self) -> &DVector<f64> {
        self.inner().dop()
    }
    fn names(&self) -> &Names {
        self.inner().names()
    }
    fn state(&self) -> DVector<f64> {
        self.inner().state()
    }
    fn set_state(&mut self, x: &[f64]) -> Result<()> {
        self.inner_mut().set_state(x)
    }
    fn step(&mut self, u: &[f64], d: &[f64]) -> Result<()> {
        self.inner_mut().step(u, d)
    }
    fn output(&self, d: &[f64]) -> Result<DVector<f64>> {
        self.inner().output(d)
    }
}
