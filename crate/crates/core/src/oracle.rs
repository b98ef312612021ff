//! Monolithic reference solver: circuit and field integrated as one system.
//!
//! The unknown per step is `[z; x; v]` where `z` already carries the coupling
//! current `i` as its last entry. Implicit Euler and Newton settings are the
//! same as in the subsystem solvers, so WR errors measured against this
//! solution contain no integrator mismatch.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::circuit::{assemble_mna, CircuitState, MnaSystem};
use crate::cosim::CoupledState;
use crate::error::{Error, Result};
use crate::field::{self, from_spec, FieldModel, FieldState};
use crate::netlist::{parse_netlist, CircuitGraph, ElementParams};
use crate::solver::{newton, NewtonOptions};
use crate::waveform::{uniform_grid, Waveform};

/// Tolerance on the algebraic constraints of a start state.
pub const CONSISTENCY_TOL: f64 = 1e-12;

#[derive(Debug)]
pub struct CoupledSystem {
    pub mna: MnaSystem,
    pub field: Box<dyn FieldModel>,
}

impl CoupledSystem {
    pub fn new(mna: MnaSystem, field: Box<dyn FieldModel>) -> Self {
        Self { mna, field }
    }

    pub fn from_graph(graph: &CircuitGraph) -> Result<Self> {
        let el = graph.field_element().ok_or(Error::NoFieldElement)?;
        let ElementParams::Field(spec) = &el.params else {
            unreachable!("field element carries field parameters")
        };
        Ok(Self::new(assemble_mna(graph)?, from_spec(spec)?))
    }

    pub fn from_netlist(text: &str) -> Result<Self> {
        Self::from_graph(&parse_netlist(text)?)
    }

    /// Size of the combined unknown `[z; x; v]`.
    pub fn dim(&self) -> usize {
        self.mna.dim() + self.field.state_dim() + 1
    }

    fn split(&self, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let m = self.mna.dim();
        (u.rows(0, m).into_owned(), u.rows(m, u.len() - m).into_owned())
    }

    fn join(&self, state: &CoupledState) -> DVector<f64> {
        let mut u = DVector::zeros(self.dim());
        let m = self.mna.dim();
        let n = self.field.state_dim();
        u.rows_mut(0, m).copy_from(&state.circuit.z);
        u.rows_mut(m, n).copy_from(&state.field.x);
        u[m + n] = state.field.v;
        u
    }

    /// Residual and Jacobian of one coupled implicit Euler step.
    fn step_system(&self, prev: &DVector<f64>, u: &DVector<f64>, t: f64, h: f64) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.mna.dim();
        let n = self.field.state_dim();
        let coupling = self.mna.layout().coupling;
        let (z_prev, y_prev) = self.split(prev);
        let (z, y) = self.split(u);
        let v = y[n];
        let i = z[coupling];
        let di = (i - z_prev[coupling]) / h;

        let mut r = DVector::zeros(m + n + 1);
        let mut jac = DMatrix::zeros(m + n + 1, m + n + 1);

        let (rc, jc) = self.mna.euler_step_system(&z_prev, &z, t, h, v);
        r.rows_mut(0, m).copy_from(&rc);
        jac.view_mut((0, 0), (m, m)).copy_from(&jc);
        jac[(coupling, m + n)] = -1.0;

        let (rf, jf, wrt_i) = field::euler_step_system(self.field.as_ref(), &y_prev, &y, i, di, t, h);
        r.rows_mut(m, n + 1).copy_from(&rf);
        jac.view_mut((m, m), (n + 1, n + 1)).copy_from(&jf);
        // d/di of -h (chi + R_chi(i) (i - i_prev) / h) and of -h g.
        let mut d_i = -wrt_i * h;
        let r_chi = self.field.r_chi(i);
        let r_chi_d = self.field.r_chi_derivative(i);
        for k in 0..n {
            d_i[k] -= r_chi[k] + h * r_chi_d[k] * di;
        }
        jac.view_mut((m, coupling), (n + 1, 1)).copy_from(&d_i);
        (r, jac)
    }
}

/// Monolithic trajectory sampled on the uniform grid.
#[derive(Debug, Clone)]
pub struct MonoSolution {
    pub v: Waveform,
    pub i: Waveform,
    pub z: Vec<DVector<f64>>,
    pub x: Vec<DVector<f64>>,
}

impl MonoSolution {
    pub fn times(&self) -> &[f64] {
        self.v.times()
    }

    /// Coupled state at grid index `k`.
    pub fn state_at(&self, k: usize) -> CoupledState {
        let t = self.times()[k];
        CoupledState {
            field: FieldState {
                x: self.x[k].clone(),
                v: self.v.values()[k],
                t,
            },
            circuit: CircuitState { z: self.z[k].clone(), t },
        }
    }

    /// Restriction of the coupling waveforms to grid indices `from..=to`.
    pub fn coupling_slice(&self, from: usize, to: usize) -> Result<(Waveform, Waveform)> {
        let times = self.times()[from..=to].to_vec();
        Ok((
            Waveform::new(times.clone(), self.v.values()[from..=to].to_vec())?,
            Waveform::new(times, self.i.values()[from..=to].to_vec())?,
        ))
    }
}

/// All-zero start, verified against the algebraic constraints at `t = 0`.
pub fn consistent_start(coupled: &CoupledSystem) -> Result<CoupledState> {
    let state = CoupledState {
        field: FieldState::zero(coupled.field.as_ref(), 0.0),
        circuit: CircuitState::zero(&coupled.mna, 0.0),
    };
    check_consistency(coupled, &state)?;
    Ok(state)
}

/// Largest violation of the algebraic constraints (KCL at capacitor-free
/// nodes, source equations, `P^T z = v`) at `state`; errors above
/// [`CONSISTENCY_TOL`].
///
/// The constraints are the projection of the circuit residual onto the left
/// null space of `E`.
pub fn check_consistency(coupled: &CoupledSystem, state: &CoupledState) -> Result<f64> {
    let mna = &coupled.mna;
    if state.circuit.z.len() != mna.dim() || state.field.x.len() != coupled.field.state_dim() {
        return Err(Error::InconsistentStart("state dimensions do not match the system".into()));
    }
    let (mut f, _) = mna.eval_f(state.circuit.t, &state.circuit.z);
    f[mna.layout().coupling] -= state.field.v;

    let et = mna.e_matrix().transpose();
    let svd = et.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let cutoff = 1e-12 * svd.singular_values.max().max(1.0);
    let mut worst = 0.0f64;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff {
            worst = worst.max(v_t.row(k).transpose().dot(&f).abs());
        }
    }
    if worst > CONSISTENCY_TOL {
        return Err(Error::InconsistentStart(format!(
            "algebraic constraints violated by {worst:.3e} at t = {}",
            state.circuit.t
        )));
    }
    Ok(worst)
}

/// Implicit Euler on the coupled system over `[0, t_end]` from the zero start.
pub fn monolithic_solve(coupled: &CoupledSystem, dt: f64, t_end: f64) -> Result<MonoSolution> {
    if !(dt > 0.0 && t_end >= dt) {
        return Err(Error::InvalidConfig("need 0 < dt <= t_end".into()));
    }
    let start = consistent_start(coupled).map_err(|_| {
        Error::InconsistentStart(format!(
            "sources must vanish at t = 0 for the zero start (max |source(0)| = {})",
            coupled.mna.max_source_value(0.0)
        ))
    })?;
    let steps = (t_end / dt).round() as usize;
    let grid = uniform_grid(0.0, dt, steps);
    let m = coupled.mna.dim();
    let n = coupled.field.state_dim();
    let coupling = coupled.mna.layout().coupling;

    let mut u = coupled.join(&start);
    let mut z = vec![start.circuit.z.clone()];
    let mut x = vec![start.field.x.clone()];
    let mut v = vec![start.field.v];
    let mut i = vec![start.circuit.z[coupling]];
    for step in 0..steps {
        let t1 = grid[step + 1];
        let prev = u.clone();
        u = newton(u, NewtonOptions::default(), step + 1, |u| coupled.step_system(&prev, u, t1, dt))?;
        z.push(u.rows(0, m).into_owned());
        x.push(u.rows(m, n).into_owned());
        v.push(u[m + n]);
        i.push(u[coupling]);
    }
    Ok(MonoSolution {
        v: Waveform::new(grid.clone(), v)?,
        i: Waveform::new(grid, i)?,
        z,
        x,
    })
}

/// CSV `t,v_mono,<z names>,<x names>,i`.
pub fn write_mono_csv(coupled: &CoupledSystem, sol: &MonoSolution, mut out: impl Write) -> Result<()> {
    let coupling = coupled.mna.layout().coupling;
    writeln!(
        out,
        "t,v_mono,{},{},i",
        coupled.mna.state_names().join(","),
        coupled.field.state_names().join(",")
    )?;
    for k in 0..sol.v.len() {
        write!(out, "{:?},{:?}", sol.times()[k], sol.v.values()[k])?;
        for (j, val) in sol.z[k].iter().enumerate() {
            if j != coupling {
                write!(out, ",{val:?}")?;
            }
        }
        for val in sol.x[k].iter() {
            write!(out, ",{val:?}")?;
        }
        writeln!(out, ",{:?}", sol.i.values()[k])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    #[test]
    fn zero_sources_keep_zero_solution() {
        let c = CoupledSystem::from_netlist("V1 1 0 dc 0\nR1 1 2 1\nF1 2 0 lumped 1\n").unwrap();
        let sol = monolithic_solve(&c, 1e-2, 1.0).unwrap();
        assert!(sol.v.max_abs() == 0.0 && sol.i.max_abs() == 0.0);
        assert!(sol.z.iter().all(|z| z.amax() == 0.0));
    }

    #[test]
    fn corpus_zero_start_is_consistent() {
        let c = CoupledSystem::from_netlist(corpus::CIRCUIT_A).unwrap();
        let s = consistent_start(&c).unwrap();
        assert!(s.circuit.z.amax() == 0.0);
    }

    #[test]
    fn dc_source_breaks_zero_start() {
        let text = corpus::CIRCUIT_A.replace("Vs 1 0 sin 1.0 1.0", "Vs 1 0 dc 1.0");
        let c = CoupledSystem::from_netlist(&text).unwrap();
        assert!(matches!(consistent_start(&c), Err(Error::InconsistentStart(_))));
        assert!(matches!(monolithic_solve(&c, 1e-2, 1.0), Err(Error::InconsistentStart(_))));
    }

    #[test]
    fn hand_built_nonzero_state_is_consistent() {
        // V1 = 1 across R1 into a field held at 0 V: e1 = 1, e2 = 0, i = 1.
        let c = CoupledSystem::from_netlist("V1 1 0 dc 1\nR1 1 2 1\nF1 2 0 lumped 1\n").unwrap();
        let state = CoupledState {
            field: FieldState::zero(c.field.as_ref(), 0.0),
            circuit: CircuitState {
                z: DVector::from_vec(vec![1.0, 0.0, -1.0, 1.0]),
                t: 0.0,
            },
        };
        assert!(check_consistency(&c, &state).unwrap() <= CONSISTENCY_TOL);
        let mut wrong = state.clone();
        wrong.circuit.z[3] = 0.5;
        assert!(check_consistency(&c, &wrong).is_err());
    }

    #[test]
    fn coupling_identities_hold_every_step() {
        let c = CoupledSystem::from_netlist(corpus::CIRCUIT_A).unwrap();
        let sol = monolithic_solve(&c, 1e-3, 1.0).unwrap();
        for k in 1..sol.v.len() {
            let z = &sol.z[k];
            assert!((c.mna.coupling_voltage(z) - sol.v.values()[k]).abs() <= 1e-9);
            let r = c.mna.kcl_residual(&sol.z[k - 1], z, sol.times()[k], 1e-3);
            assert!(r.amax() <= 1e-9);
        }
    }

    #[test]
    fn refining_dt_halves_self_difference() {
        let c = CoupledSystem::from_netlist(corpus::CIRCUIT_A).unwrap();
        let fine = monolithic_solve(&c, 2.5e-4, 1.0).unwrap();
        let diffs: Vec<f64> = [2e-3, 1e-3, 5e-4]
            .iter()
            .map(|&dt| {
                let coarse = monolithic_solve(&c, dt, 1.0).unwrap();
                let stride = (dt / 2.5e-4).round() as usize;
                coarse
                    .v
                    .values()
                    .iter()
                    .enumerate()
                    .fold(0.0f64, |m, (k, v)| m.max((v - fine.v.values()[k * stride]).abs()))
            })
            .collect();
        // Richardson: differences against a finer run shrink by (2 - 1/...) per halving.
        let r1 = diffs[0] / diffs[1];
        assert!(r1 > 1.7 && r1 < 2.6, "{diffs:?}");
    }

    #[test]
    fn csv_header_lists_all_unknowns() {
        let c = CoupledSystem::from_netlist(corpus::CIRCUIT_A).unwrap();
        let sol = monolithic_solve(&c, 1e-2, 0.1).unwrap();
        let mut buf = Vec::new();
        write_mono_csv(&c, &sol, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "t,v_mono,e1,e2,e3,e4,i_L1,i_L2,i_Vs,x1,x2,x3,x4,i"
        );
        assert_eq!(text.lines().count(), 12);
        assert!(text.lines().skip(1).all(|l| l.split(',').count() == 14));
    }
}
