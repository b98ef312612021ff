//! Generalized-capacitance field models.
//!
//! A field device is described in the reformulated shape
//!
//! ```text
//! x' = chi(x, i, v, t) + R_chi(i) i'
//! v' = g(x, i, v, t)
//! ```
//!
//! with internal state `x`, terminal voltage `v` and impressed current `i`.
//! `g` never sees `i'`; that is what makes the device well posed when driven
//! by a current and is enforced by the trait signature.

mod contract;
mod ladder;
mod lumped;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::netlist::FieldSpec;
use crate::solver::{newton, NewtonOptions};
use crate::waveform::Waveform;

pub use contract::{check_contract, ContractReport};
pub use ladder::LadderModel;
pub use lumped::LumpedCapacitor;

/// Relative step for finite-difference Jacobians.
const FD_STEP: f64 = 1e-7;

/// Derivatives of the stacked right-hand side `[chi; g]`.
#[derive(Debug, Clone)]
pub struct FieldJacobian {
    /// `d[chi; g] / d[x; v]`, square of size `state_dim + 1`.
    pub wrt_state: DMatrix<f64>,
    /// `d[chi; g] / di`.
    pub wrt_current: DVector<f64>,
}

/// Generalized-capacitance contract.
pub trait FieldModel: Send + Sync + fmt::Debug {
    /// Dimension of the internal state `x`.
    fn state_dim(&self) -> usize;

    fn chi(&self, x: &DVector<f64>, i: f64, v: f64, t: f64) -> DVector<f64>;

    /// Coefficient vector of `i'` in the `x` equation.
    fn r_chi(&self, i: f64) -> DVector<f64>;

    fn g(&self, x: &DVector<f64>, i: f64, v: f64, t: f64) -> f64;

    fn jacobian(&self, x: &DVector<f64>, i: f64, v: f64, t: f64) -> FieldJacobian {
        let n = self.state_dim();
        let rhs = |x: &DVector<f64>, i: f64, v: f64| {
            let mut out = DVector::zeros(n + 1);
            out.rows_mut(0, n).copy_from(&self.chi(x, i, v, t));
            out[n] = self.g(x, i, v, t);
            out
        };
        let base = rhs(x, i, v);
        let mut wrt_state = DMatrix::zeros(n + 1, n + 1);
        for j in 0..=n {
            let (mut xp, mut vp) = (x.clone(), v);
            let h = if j < n {
                let h = FD_STEP * x[j].abs().max(1.0);
                xp[j] += h;
                h
            } else {
                let h = FD_STEP * v.abs().max(1.0);
                vp += h;
                h
            };
            wrt_state.set_column(j, &((rhs(&xp, i, vp) - &base) / h));
        }
        let h = FD_STEP * i.abs().max(1.0);
        let wrt_current = (rhs(x, i + h, v) - base) / h;
        FieldJacobian {
            wrt_state,
            wrt_current,
        }
    }

    /// `dR_chi/di`.
    fn r_chi_derivative(&self, i: f64) -> DVector<f64> {
        let h = FD_STEP * i.abs().max(1.0);
        (self.r_chi(i + h) - self.r_chi(i - h)) / (2.0 * h)
    }

    fn state_names(&self) -> Vec<String> {
        (1..=self.state_dim()).map(|k| format!("x{k}")).collect()
    }
}

/// Build a field model from its netlist description.
pub fn from_spec(spec: &FieldSpec) -> Result<Box<dyn FieldModel>> {
    Ok(match *spec {
        FieldSpec::Lumped { capacitance } => Box::new(lumped_cap(capacitance)?),
        FieldSpec::Ladder {
            segments,
            capacitance,
            conductance,
        } => Box::new(ladder(segments, capacitance, conductance)?),
    })
}

/// Lumped linear capacitor `i = C v'`.
pub fn lumped_cap(capacitance: f64) -> Result<LumpedCapacitor> {
    LumpedCapacitor::new(capacitance)
}

/// Conductive-capacitive chain with `segments` internal nodes.
pub fn ladder(segments: usize, capacitance: f64, conductance: f64) -> Result<LadderModel> {
    LadderModel::new(segments, capacitance, conductance)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldState {
    pub x: DVector<f64>,
    pub v: f64,
    pub t: f64,
}

impl FieldState {
    pub fn zero(model: &dyn FieldModel, t: f64) -> Self {
        Self {
            x: DVector::zeros(model.state_dim()),
            v: 0.0,
            t,
        }
    }
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidWaveform("empty time grid".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidWaveform("time grid not strictly increasing".into()));
    }
    Ok(())
}

/// Residual and Jacobian of one implicit Euler step of the field equations in
/// the unknown `[x; v]`, for current `i` at the new time and step slope `di`.
pub(crate) fn euler_step_system(
    model: &dyn FieldModel,
    prev: &DVector<f64>,
    y: &DVector<f64>,
    i: f64,
    di: f64,
    t: f64,
    h: f64,
) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let n = model.state_dim();
    let x = y.rows(0, n).into_owned();
    let v = y[n];
    let mut rhs = DVector::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(&(model.chi(&x, i, v, t) + model.r_chi(i) * di));
    rhs[n] = model.g(&x, i, v, t);
    let residual = y - prev - rhs * h;
    let jac = model.jacobian(&x, i, v, t);
    let dy = DMatrix::identity(n + 1, n + 1) - jac.wrt_state * h;
    (residual, dy, jac.wrt_current)
}

/// Integrate the field over `grid` driven by `i_input` (implicit Euler).
///
/// `i'` on each step is the slope of the input between the step end points.
/// Returns the terminal voltage on the grid and the final state.
pub fn field_solve_window(
    model: &dyn FieldModel,
    initial: &FieldState,
    i_input: &Waveform,
    grid: &[f64],
) -> Result<(Waveform, FieldState)> {
    check_grid(grid)?;
    let current = i_input.sample(grid)?;
    let n = model.state_dim();
    let mut y = DVector::zeros(n + 1);
    y.rows_mut(0, n).copy_from(&initial.x);
    y[n] = initial.v;
    let mut v_out = Vec::with_capacity(grid.len());
    v_out.push(initial.v);
    for step in 0..grid.len() - 1 {
        let h = grid[step + 1] - grid[step];
        let i1 = current[step + 1];
        let di = (current[step + 1] - current[step]) / h;
        let t1 = grid[step + 1];
        let prev = y.clone();
        y = newton(y, NewtonOptions::default(), step + 1, |y| {
            let (r, j, _) = euler_step_system(model, &prev, y, i1, di, t1, h);
            (r, j)
        })?;
        v_out.push(y[n]);
    }
    let state = FieldState {
        x: y.rows(0, n).into_owned(),
        v: y[n],
        t: grid[grid.len() - 1],
    };
    Ok((Waveform::new(grid.to_vec(), v_out)?, state))
}
