//! Sampled smoothness checks for the generalized-capacitance contract.

use nalgebra::DVector;
use serde::Serialize;

use super::FieldModel;

/// Lipschitz estimates gathered on a sample box around the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractReport {
    pub chi_lipschitz: f64,
    pub g_lipschitz: f64,
    /// Largest finite-difference slope of `R_chi` seen on the box.
    pub r_chi_slope: f64,
    pub samples: usize,
}

impl ContractReport {
    pub fn is_finite(&self) -> bool {
        self.chi_lipschitz.is_finite() && self.g_lipschitz.is_finite() && self.r_chi_slope.is_finite()
    }
}

/// Deterministic low-discrepancy point in `[-1, 1]`.
fn halton(index: usize, base: usize) -> f64 {
    let (mut f, mut r, mut i) = (1.0, 0.0, index);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    2.0 * r - 1.0
}

const PRIMES: [usize; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Estimate Lipschitz constants of `chi` and `g` in `(x, i, v)` on the box
/// `|.| <= radius` from pairs of nearby sample points.
pub fn check_contract(model: &dyn FieldModel, radius: f64, samples: usize) -> ContractReport {
    let n = model.state_dim();
    let dims = n + 2;
    let point = |k: usize| -> Vec<f64> {
        (0..dims)
            .map(|d| radius * halton(k + 1, PRIMES[d % PRIMES.len()] + 40 * (d / PRIMES.len())))
            .collect()
    };
    let split = |p: &[f64]| (DVector::from_column_slice(&p[..n]), p[n], p[n + 1]);
    let mut report = ContractReport {
        chi_lipschitz: 0.0,
        g_lipschitz: 0.0,
        r_chi_slope: 0.0,
        samples,
    };
    let h = 1e-4 * radius.max(1e-12);
    for k in 0..samples {
        let p = point(k);
        for d in 0..dims {
            let mut q = p.clone();
            q[d] += h;
            let (xa, ia, va) = split(&p);
            let (xb, ib, vb) = split(&q);
            let dchi = (model.chi(&xb, ib, vb, 0.0) - model.chi(&xa, ia, va, 0.0)).amax();
            let dg = (model.g(&xb, ib, vb, 0.0) - model.g(&xa, ia, va, 0.0)).abs();
            report.chi_lipschitz = report.chi_lipschitz.max(dchi / h);
            report.g_lipschitz = report.g_lipschitz.max(dg / h);
        }
        let i = p[n];
        let slope = (model.r_chi(i + h) - model.r_chi(i)).amax() / h;
        report.r_chi_slope = report.r_chi_slope.max(slope);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ladder, lumped_cap};

    #[test]
    fn linear_models_have_bounded_constants() {
        let l = lumped_cap(0.5).unwrap();
        let r = check_contract(&l, 10.0, 64);
        assert!(r.is_finite());
        assert!((r.g_lipschitz - 2.0).abs() < 1e-6);
        assert_eq!(r.chi_lipschitz, 0.0);

        let m = ladder(4, 0.02, 10.0).unwrap();
        let r = check_contract(&m, 10.0, 64);
        assert!(r.is_finite());
        assert!(r.g_lipschitz > 0.0);
        assert_eq!(r.r_chi_slope, 0.0);
    }

    #[test]
    fn lipschitz_estimate_is_scale_invariant_for_linear_models() {
        let m = ladder(3, 1.0, 2.0).unwrap();
        let a = check_contract(&m, 1.0, 32);
        let b = check_contract(&m, 100.0, 32);
        assert!((a.g_lipschitz - b.g_lipschitz).abs() < 1e-4 * a.g_lipschitz);
    }
}
