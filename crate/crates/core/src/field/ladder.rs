use nalgebra::{Cholesky, DMatrix, DVector};

use super::{FieldJacobian, FieldModel};
use crate::error::{Error, Result};

/// Chain of `N+1` identical parallel C-G segments from the terminal node to
/// ground, with `N` internal nodes.
///
/// Each segment carries `(N+1)*Ctotal` and `(N+1)*Gtotal`, so the series
/// chain presents `Ctotal` and `Gtotal` at the terminal. Node potentials are
/// ordered `[v, x_1, .., x_N]` in the capacitance and conductance matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderModel {
    segments: usize,
    cap: DMatrix<f64>,
    cond: DMatrix<f64>,
    /// `-C^{-1} G` in `[v; x]` ordering.
    drift: DMatrix<f64>,
    /// `C^{-1} e_0`.
    input: DVector<f64>,
}

/// Weighted Laplacian of the grounded chain, terminal node first.
fn chain_matrix(nodes: usize, weight: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(nodes, nodes);
    for k in 0..nodes {
        // Terminal node touches one segment; the others touch two.
        m[(k, k)] = if k == 0 { weight } else { 2.0 * weight };
        if k + 1 < nodes {
            m[(k, k + 1)] = -weight;
            m[(k + 1, k)] = -weight;
        }
    }
    m
}

impl LadderModel {
    pub fn new(segments: usize, capacitance: f64, conductance: f64) -> Result<Self> {
        if segments == 0 {
            return Err(Error::InvalidParameter("ladder needs at least one internal node".into()));
        }
        if !(capacitance.is_finite() && capacitance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ladder capacitance must be positive, got {capacitance}"
            )));
        }
        if !(conductance.is_finite() && conductance >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ladder conductance must be non-negative, got {conductance}"
            )));
        }
        let nodes = segments + 1;
        let scale = nodes as f64;
        let cap = chain_matrix(nodes, scale * capacitance);
        let cond = chain_matrix(nodes, scale * conductance);

        let chol = Cholesky::new(cap.clone())
            .ok_or_else(|| Error::InvalidParameter("ladder capacitance matrix is not positive definite".into()))?;
        let eig = cond.clone().symmetric_eigen();
        if eig.eigenvalues.min() < -1e-12 * cond.amax().max(1.0) {
            return Err(Error::InvalidParameter(
                "ladder conductance matrix is not positive semidefinite".into(),
            ));
        }
        let mut e0 = DVector::zeros(nodes);
        e0[0] = 1.0;
        let input = chol.solve(&e0);
        let drift = -chol.solve(&cond);
        Ok(Self {
            segments,
            cap,
            cond,
            drift,
            input,
        })
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    /// Capacitance matrix in `[v, x]` ordering.
    pub fn cap_matrix(&self) -> &DMatrix<f64> {
        &self.cap
    }

    /// Conductance matrix in `[v, x]` ordering.
    pub fn cond_matrix(&self) -> &DMatrix<f64> {
        &self.cond
    }

    fn stacked(x: &DVector<f64>, v: f64) -> DVector<f64> {
        let mut y = DVector::zeros(x.len() + 1);
        y[0] = v;
        y.rows_mut(1, x.len()).copy_from(x);
        y
    }

    fn rate(&self, x: &DVector<f64>, i: f64, v: f64) -> DVector<f64> {
        &self.drift * Self::stacked(x, v) + &self.input * i
    }
}

impl FieldModel for LadderModel {
    fn state_dim(&self) -> usize {
        self.segments
    }

    fn chi(&self, x: &DVector<f64>, i: f64, v: f64, _t: f64) -> DVector<f64> {
        self.rate(x, i, v).rows(1, self.segments).into_owned()
    }

    fn r_chi(&self, _i: f64) -> DVector<f64> {
        DVector::zeros(self.segments)
    }

    fn g(&self, x: &DVector<f64>, i: f64, v: f64, _t: f64) -> f64 {
        self.rate(x, i, v)[0]
    }

    fn jacobian(&self, _x: &DVector<f64>, _i: f64, _v: f64, _t: f64) -> FieldJacobian {
        // Reorder [v, x] -> [x, v] on both axes.
        let n = self.segments;
        let perm = |k: usize| if k == n { 0 } else { k + 1 };
        let wrt_state = DMatrix::from_fn(n + 1, n + 1, |r, c| self.drift[(perm(r), perm(c))]);
        let wrt_current = DVector::from_fn(n + 1, |r, _| self.input[perm(r)]);
        FieldJacobian {
            wrt_state,
            wrt_current,
        }
    }

    fn r_chi_derivative(&self, _i: f64) -> DVector<f64> {
        DVector::zeros(self.segments)
    }
}
