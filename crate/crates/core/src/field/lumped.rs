use nalgebra::{DMatrix, DVector};

use super::{FieldJacobian, FieldModel};
use crate::error::{Error, Result};

/// `v' = i / C`; no internal state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LumpedCapacitor {
    capacitance: f64,
}

impl LumpedCapacitor {
    pub fn new(capacitance: f64) -> Result<Self> {
        if !(capacitance.is_finite() && capacitance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lumped capacitance must be positive, got {capacitance}"
            )));
        }
        Ok(Self { capacitance })
    }

    pub fn capacitance(&self) -> f64 {
        self.capacitance
    }
}

impl FieldModel for LumpedCapacitor {
    fn state_dim(&self) -> usize {
        0
    }

    fn chi(&self, _x: &DVector<f64>, _i: f64, _v: f64, _t: f64) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn r_chi(&self, _i: f64) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn g(&self, _x: &DVector<f64>, i: f64, _v: f64, _t: f64) -> f64 {
        i / self.capacitance
    }

    fn jacobian(&self, _x: &DVector<f64>, _i: f64, _v: f64, _t: f64) -> FieldJacobian {
        FieldJacobian {
            wrt_state: DMatrix::zeros(1, 1),
            wrt_current: DVector::from_element(1, 1.0 / self.capacitance),
        }
    }

    fn r_chi_derivative(&self, _i: f64) -> DVector<f64> {
        DVector::zeros(0)
    }
}
