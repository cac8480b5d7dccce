//! Bounds over the horizons with their softness.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Absolute bounds expanded over the horizons. Infinite entries add no rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MpcConstraints {
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub du_min: DVector<f64>,
    pub du_max: DVector<f64>,
    pub y_min: DVector<f64>,
    pub y_max: DVector<f64>,
    /// Terminal bounds on the augmented state.
    pub x_min: DVector<f64>,
    pub x_max: DVector<f64>,
    pub c_u_min: DVector<f64>,
    pub c_u_max: DVector<f64>,
    pub c_du_min: DVector<f64>,
    pub c_du_max: DVector<f64>,
    pub c_y_min: DVector<f64>,
    pub c_y_max: DVector<f64>,
    pub c_x_min: DVector<f64>,
    pub c_x_max: DVector<f64>,
}

/// Partial update for [`MpcConstraints`]. Each vector holds either one value
/// per channel (broadcast over the horizon) or one per channel and step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstraintSpec {
    pub u_min: Option<Vec<f64>>,
    pub u_max: Option<Vec<f64>>,
    pub du_min: Option<Vec<f64>>,
    pub du_max: Option<Vec<f64>>,
    pub y_min: Option<Vec<f64>>,
    pub y_max: Option<Vec<f64>>,
    pub x_min: Option<Vec<f64>>,
    pub x_max: Option<Vec<f64>>,
    pub c_u_min: Option<Vec<f64>>,
    pub c_u_max: Option<Vec<f64>>,
    pub c_du_min: Option<Vec<f64>>,
    pub c_du_max: Option<Vec<f64>>,
    pub c_y_min: Option<Vec<f64>>,
    pub c_y_max: Option<Vec<f64>>,
    pub c_x_min: Option<Vec<f64>>,
    pub c_x_max: Option<Vec<f64>>,
}

fn expand(name: &'static str, v: &[f64], per: usize, steps: usize) -> Result<DVector<f64>> {
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidArgument(format!("{name} contains NaN")));
    }
    if v.len() == per {
        Ok(DVector::from_iterator(per * steps, (0..steps).flat_map(|_| v.iter().copied())))
    } else if v.len() == per * steps {
        Ok(DVector::from_column_slice(v))
    } else {
        Err(Error::Dimension {
            what: name,
            expected: per,
            got: v.len(),
        })
    }
}

impl MpcConstraints {
    /// No bounds; softness is 0 for inputs and moves, 1 for outputs and the
    /// terminal state.
    pub fn unbounded(nu: usize, ny: usize, nx_hat: usize, hp: usize, hc: usize) -> Self {
        let inf = |n| DVector::from_element(n, f64::INFINITY);
        let ninf = |n| DVector::from_element(n, f64::NEG_INFINITY);
        MpcConstraints {
            u_min: ninf(nu * hp),
            u_max: inf(nu * hp),
            du_min: ninf(nu * hc),
            du_max: inf(nu * hc),
            y_min: ninf(ny * hp),
            y_max: inf(ny * hp),
            x_min: ninf(nx_hat),
            x_max: inf(nx_hat),
            c_u_min: DVector::zeros(nu * hp),
            c_u_max: DVector::zeros(nu * hp),
            c_du_min: DVector::zeros(nu * hc),
            c_du_max: DVector::zeros(nu * hc),
            c_y_min: DVector::from_element(ny * hp, 1.0),
            c_y_max: DVector::from_element(ny * hp, 1.0),
            c_x_min: DVector::from_element(nx_hat, 1.0),
            c_x_max: DVector::from_element(nx_hat, 1.0),
        }
    }

    pub fn is_unbounded(&self) -> bool {
        [&self.u_min, &self.u_max, &self.du_min, &self.du_max, &self.y_min, &self.y_max, &self.x_min, &self.x_max]
            .iter()
            .all(|v| v.iter().all(|x| x.is_infinite()))
    }

    /// Applies `spec` on a copy and validates the result.
    pub fn updated(&self, spec: &ConstraintSpec, nu: usize, ny: usize, nx_hat: usize, hp: usize, hc: usize) -> Result<Self> {
        let mut c = self.clone();
        let fields: [(&Option<Vec<f64>>, &mut DVector<f64>, usize, usize, &'static str); 16] = [
            (&spec.u_min, &mut c.u_min, nu, hp, "umin"),
            (&spec.u_max, &mut c.u_max, nu, hp, "umax"),
            (&spec.du_min, &mut c.du_min, nu, hc, "Δumin"),
            (&spec.du_max, &mut c.du_max, nu, hc, "Δumax"),
            (&spec.y_min, &mut c.y_min, ny, hp, "ymin"),
            (&spec.y_max, &mut c.y_max, ny, hp, "ymax"),
            (&spec.x_min, &mut c.x_min, nx_hat, 1, "x̂min"),
            (&spec.x_max, &mut c.x_max, nx_hat, 1, "x̂max"),
            (&spec.c_u_min, &mut c.c_u_min, nu, hp, "c_umin"),
            (&spec.c_u_max, &mut c.c_u_max, nu, hp, "c_umax"),
            (&spec.c_du_min, &mut c.c_du_min, nu, hc, "c_Δumin"),
            (&spec.c_du_max, &mut c.c_du_max, nu, hc, "c_Δumax"),
            (&spec.c_y_min, &mut c.c_y_min, ny, hp, "c_ymin"),
            (&spec.c_y_max, &mut c.c_y_max, ny, hp, "c_ymax"),
            (&spec.c_x_min, &mut c.c_x_min, nx_hat, 1, "c_x̂min"),
            (&spec.c_x_max, &mut c.c_x_max, nx_hat, 1, "c_x̂max"),
        ];
        for (src, dst, per, steps, name) in fields {
            if let Some(v) = src {
                *dst = expand(name, v, per, steps)?;
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (lo, hi, what) in [
            (&self.u_min, &self.u_max, "input"),
            (&self.du_min, &self.du_max, "input increment"),
            (&self.y_min, &self.y_max, "output"),
            (&self.x_min, &self.x_max, "terminal state"),
        ] {
            if lo.iter().zip(hi.iter()).any(|(a, b)| a > b) {
                return Err(Error::InvalidArgument(format!("{what} lower bound exceeds upper bound")));
            }
            if lo.iter().any(|&v| v == f64::INFINITY) || hi.iter().any(|&v| v == f64::NEG_INFINITY) {
                return Err(Error::InvalidArgument(format!("{what} bounds exclude every value")));
            }
        }
        let soft = [
            &self.c_u_min,
            &self.c_u_max,
            &self.c_du_min,
            &self.c_du_max,
            &self.c_y_min,
            &self.c_y_max,
            &self.c_x_min,
            &self.c_x_max,
        ];
        if soft.iter().any(|v| v.iter().any(|&c| !(c >= 0.0 && c.is_finite()))) {
            return Err(Error::InvalidArgument("softness values must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Number of finite output bound entries.
    pub fn finite_y_rows(&self) -> usize {
        self.y_min.iter().chain(self.y_max.iter()).filter(|v| v.is_finite()).count()
    }

    pub fn finite_u_rows(&self) -> usize {
        self.u_min.iter().chain(self.u_max.iter()).filter(|v| v.is_finite()).count()
    }
}
