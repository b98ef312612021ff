//! Modified nodal analysis of the circuit with the field replaced by an
//! imposed coupling voltage.
//!
//! Unknowns `z = [e, i_L, i_V, i]`: non-ground node potentials, inductor
//! currents, voltage-source currents and the coupling-branch current. The
//! rows are KCL per non-ground node, the inductor and source branch
//! equations, and the coupling constraint `P^T z = v`.

use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::check_grid;
use crate::netlist::{CircuitGraph, ElementKind, ElementParams, NodeId, SourceSpec};
use crate::solver::{newton, NewtonOptions};
use crate::waveform::Waveform;

/// Diode exponent above which the characteristic is continued linearly.
const DIODE_EXP_LIMIT: f64 = 80.0;

/// Floor on the perturbation norm in the gain estimate.
pub const GAIN_EPS: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ZLayout {
    pub potentials: Range<usize>,
    pub inductor_currents: Range<usize>,
    pub source_currents: Range<usize>,
    pub coupling: usize,
}

#[derive(Debug, Clone)]
struct Diode {
    plus: NodeId,
    minus: NodeId,
    saturation_current: f64,
    thermal_voltage: f64,
}

impl Diode {
    /// Current and conductance at branch voltage `v`.
    fn eval(&self, v: f64) -> (f64, f64) {
        let x = v / self.thermal_voltage;
        let is = self.saturation_current;
        if x > DIODE_EXP_LIMIT {
            let e = DIODE_EXP_LIMIT.exp();
            let g = is * e / self.thermal_voltage;
            (is * (e - 1.0) + g * (v - DIODE_EXP_LIMIT * self.thermal_voltage), g)
        } else {
            let e = x.exp();
            (is * (e - 1.0), is * e / self.thermal_voltage)
        }
    }
}

/// Assembled descriptor system `E z' + f(t, z) = 0` with the coupling row
/// `P^T z - v(t) = 0` as its last equation.
#[derive(Debug, Clone)]
pub struct MnaSystem {
    dim: usize,
    layout: ZLayout,
    e: DMatrix<f64>,
    linear: DMatrix<f64>,
    diodes: Vec<Diode>,
    current_sources: Vec<(NodeId, NodeId, SourceSpec)>,
    voltage_sources: Vec<SourceSpec>,
    coupling_terminals: (NodeId, NodeId),
    names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CircuitState {
    pub z: DVector<f64>,
    pub t: f64,
}

impl CircuitState {
    pub fn zero(sys: &MnaSystem, t: f64) -> Self {
        Self {
            z: DVector::zeros(sys.dim()),
            t,
        }
    }
}

/// Potential row of a node, `None` for ground.
fn row(node: NodeId) -> Option<usize> {
    node.checked_sub(1)
}

fn stamp_branch(m: &mut DMatrix<f64>, plus: NodeId, minus: NodeId, col: usize, branch_row: usize) {
    // KCL: branch current leaves n+ and enters n-; branch row: e+ - e-.
    if let Some(r) = row(plus) {
        m[(r, col)] += 1.0;
        m[(branch_row, r)] += 1.0;
    }
    if let Some(r) = row(minus) {
        m[(r, col)] -= 1.0;
        m[(branch_row, r)] -= 1.0;
    }
}

fn stamp_admittance(m: &mut DMatrix<f64>, plus: NodeId, minus: NodeId, value: f64) {
    let (a, b) = (row(plus), row(minus));
    if let Some(a) = a {
        m[(a, a)] += value;
    }
    if let Some(b) = b {
        m[(b, b)] += value;
    }
    if let (Some(a), Some(b)) = (a, b) {
        m[(a, b)] -= value;
        m[(b, a)] -= value;
    }
}

fn structural_checks(graph: &CircuitGraph) -> Result<()> {
    // Loops made of voltage sources alone over-determine the potentials.
    let mut parent: Vec<usize> = (0..graph.num_nodes()).collect();
    fn find(parent: &mut [usize], mut n: usize) -> usize {
        while parent[n] != n {
            parent[n] = parent[parent[n]];
            n = parent[n];
        }
        n
    }
    for e in graph.elements_of(ElementKind::VoltageSource) {
        let (a, b) = (find(&mut parent, e.node_plus), find(&mut parent, e.node_minus));
        if a == b {
            return Err(Error::StructurallySingular(format!(
                "voltage source '{}' closes a loop of voltage sources",
                e.name
            )));
        }
        parent[a] = b;
    }
    // Nodes reachable only through current sources make KCL unsolvable.
    if let Some(node) = graph.first_unreachable(|e| e.kind() != ElementKind::CurrentSource) {
        return Err(Error::StructurallySingular(format!(
            "node {node} is attached only through current sources"
        )));
    }
    Ok(())
}

/// Stamp the MNA system of `graph`; the field element becomes the coupling branch.
pub fn assemble_mna(graph: &CircuitGraph) -> Result<MnaSystem> {
    let field = graph.field_element().ok_or(Error::NoFieldElement)?;
    structural_checks(graph)?;

    let nodes = graph.num_nodes() - 1;
    let n_l = graph.elements_of(ElementKind::Inductor).count();
    let n_v = graph.elements_of(ElementKind::VoltageSource).count();
    let dim = nodes + n_l + n_v + 1;
    let layout = ZLayout {
        potentials: 0..nodes,
        inductor_currents: nodes..nodes + n_l,
        source_currents: nodes + n_l..nodes + n_l + n_v,
        coupling: dim - 1,
    };

    let mut e = DMatrix::zeros(dim, dim);
    let mut linear = DMatrix::zeros(dim, dim);
    let mut diodes = Vec::new();
    let mut current_sources = Vec::new();
    let mut voltage_sources = Vec::new();
    let mut names: Vec<String> = (1..=nodes).map(|k| format!("e{k}")).collect();
    let mut next_l = layout.inductor_currents.start;
    let mut next_v = layout.source_currents.start;

    for el in graph.elements() {
        let (p, m) = (el.node_plus, el.node_minus);
        match el.params {
            ElementParams::Resistance(r) => stamp_admittance(&mut linear, p, m, 1.0 / r),
            ElementParams::Capacitance(c) => stamp_admittance(&mut e, p, m, c),
            ElementParams::Inductance(l) => {
                // L i_L' - (e+ - e-) = 0
                stamp_branch(&mut linear, p, m, next_l, next_l);
                for c in 0..nodes {
                    linear[(next_l, c)] = -linear[(next_l, c)];
                }
                e[(next_l, next_l)] = l;
                next_l += 1;
            }
            ElementParams::Voltage(spec) => {
                stamp_branch(&mut linear, p, m, next_v, next_v);
                voltage_sources.push(spec);
                next_v += 1;
            }
            ElementParams::Current(spec) => current_sources.push((p, m, spec)),
            ElementParams::Diode {
                saturation_current,
                thermal_voltage,
            } => diodes.push(Diode {
                plus: p,
                minus: m,
                saturation_current,
                thermal_voltage,
            }),
            ElementParams::Field(_) => stamp_branch(&mut linear, p, m, layout.coupling, layout.coupling),
        }
    }

    for kind in [ElementKind::Inductor, ElementKind::VoltageSource] {
        names.extend(graph.elements_of(kind).map(|el| format!("i_{}", el.name)));
    }

    Ok(MnaSystem {
        dim,
        layout,
        e,
        linear,
        diodes,
        current_sources,
        voltage_sources,
        coupling_terminals: (field.node_plus, field.node_minus),
        names,
    })
}

impl MnaSystem {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layout(&self) -> &ZLayout {
        &self.layout
    }

    /// Names of the circuit unknowns, coupling current excluded.
    pub fn state_names(&self) -> &[String] {
        &self.names
    }

    /// Descriptor matrix `E` (constant: capacitors and inductors are linear).
    pub fn e_matrix(&self) -> &DMatrix<f64> {
        &self.e
    }

    /// Coupling extractor `P` with `P^T z` the voltage across the field terminals.
    pub fn p_matrix(&self) -> DVector<f64> {
        let mut p = DVector::zeros(self.dim);
        let (a, b) = self.coupling_terminals;
        if let Some(r) = row(a) {
            p[r] += 1.0;
        }
        if let Some(r) = row(b) {
            p[r] -= 1.0;
        }
        p
    }

    pub fn coupling_voltage(&self, z: &DVector<f64>) -> f64 {
        self.p_matrix().dot(z)
    }

    pub fn coupling_current(&self, z: &DVector<f64>) -> f64 {
        z[self.layout.coupling]
    }

    /// `f(t, z)` and `df/dz`; the coupling row holds `P^T z` without the imposed voltage.
    pub fn eval_f(&self, t: f64, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let mut f = &self.linear * z;
        let mut jac = self.linear.clone();
        let potential = |n: NodeId| row(n).map_or(0.0, |r| z[r]);
        for d in &self.diodes {
            let (i, g) = d.eval(potential(d.plus) - potential(d.minus));
            if let Some(r) = row(d.plus) {
                f[r] += i;
            }
            if let Some(r) = row(d.minus) {
                f[r] -= i;
            }
            stamp_admittance(&mut jac, d.plus, d.minus, g);
        }
        for &(p, m, spec) in &self.current_sources {
            let i = spec.value(t);
            if let Some(r) = row(p) {
                f[r] += i;
            }
            if let Some(r) = row(m) {
                f[r] -= i;
            }
        }
        for (k, spec) in self.voltage_sources.iter().enumerate() {
            f[self.layout.source_currents.start + k] -= spec.value(t);
        }
        (f, jac)
    }

    /// Largest independent-source magnitude at `t`.
    pub fn max_source_value(&self, t: f64) -> f64 {
        self.voltage_sources
            .iter()
            .chain(self.current_sources.iter().map(|(_, _, s)| s))
            .fold(0.0, |m, s| m.max(s.value(t).abs()))
    }

    /// Residual and Jacobian of one implicit Euler step with imposed voltage `v`.
    pub(crate) fn euler_step_system(
        &self,
        prev: &DVector<f64>,
        z: &DVector<f64>,
        t: f64,
        h: f64,
        v: f64,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let (mut r, jac) = self.eval_f(t, z);
        r += &self.e * ((z - prev) / h);
        r[self.layout.coupling] -= v;
        (r, jac + &self.e / h)
    }

    /// KCL row residuals of an implicit Euler step (sum of currents per node).
    pub fn kcl_residual(&self, prev: &DVector<f64>, z: &DVector<f64>, t: f64, h: f64) -> DVector<f64> {
        let (r, _) = self.euler_step_system(prev, z, t, h, 0.0);
        r.rows(0, self.layout.potentials.len()).into_owned()
    }
}

/// Integrate the circuit over `grid` with the coupling voltage `v_input`
/// imposed; returns the coupling-branch current and the full trajectory.
pub fn circuit_solve_window(
    sys: &MnaSystem,
    initial: &CircuitState,
    v_input: &Waveform,
    grid: &[f64],
) -> Result<(Waveform, Vec<CircuitState>)> {
    check_grid(grid)?;
    let voltage = v_input.sample(grid)?;
    let mut z = initial.z.clone();
    let mut current = Vec::with_capacity(grid.len());
    let mut trajectory = Vec::with_capacity(grid.len());
    current.push(sys.coupling_current(&z));
    trajectory.push(CircuitState { z: z.clone(), t: grid[0] });
    for step in 0..grid.len() - 1 {
        let (t1, h) = (grid[step + 1], grid[step + 1] - grid[step]);
        let prev = z.clone();
        z = newton(z, NewtonOptions::default(), step + 1, |z| {
            sys.euler_step_system(&prev, z, t1, h, voltage[step + 1])
        })?;
        current.push(sys.coupling_current(&z));
        trajectory.push(CircuitState { z: z.clone(), t: t1 });
    }
    Ok((Waveform::new(grid.to_vec(), current)?, trajectory))
}

/// Gain `max_t |Δ(z, i)(t)| / max(max_t |δ(t)|, eps)` of the circuit
/// response to a perturbation `delta` of the imposed voltage.
pub fn perturbed_response(
    sys: &MnaSystem,
    initial: &CircuitState,
    v_input: &Waveform,
    delta: &Waveform,
    grid: &[f64],
) -> Result<f64> {
    let (_, base) = circuit_solve_window(sys, initial, v_input, grid)?;
    let base_v = v_input.sample(grid)?;
    let shift = delta.sample(grid)?;
    let perturbed_v = Waveform::new(
        grid.to_vec(),
        base_v.iter().zip(&shift).map(|(v, d)| v + d).collect(),
    )?;
    let (_, perturbed) = circuit_solve_window(sys, initial, &perturbed_v, grid)?;
    let response = base
        .iter()
        .zip(&perturbed)
        .fold(0.0f64, |m, (a, b)| m.max((&a.z - &b.z).amax()));
    let size = shift.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    Ok(response / size.max(GAIN_EPS))
}

/// CSV with header `t,<z names>,i_coupling`.
pub fn write_trajectory_csv(sys: &MnaSystem, trajectory: &[CircuitState], mut out: impl Write) -> Result<()> {
    writeln!(out, "t,{},i_coupling", sys.state_names().join(","))?;
    for s in trajectory {
        write!(out, "{:?}", s.t)?;
        for v in s.z.iter() {
            write!(out, ",{v:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::netlist::parse_netlist;
    use crate::waveform::uniform_grid;

    fn system(text: &str) -> MnaSystem {
        assemble_mna(&parse_netlist(text).unwrap()).unwrap()
    }

    #[test]
    fn dimension_counts() {
        let sys = system("V1 1 0 dc 1\nR1 1 0 1\nF1 1 0 lumped 1\n.end");
        assert_eq!(sys.dim(), 3);
        // 4 potentials + 2 inductor currents + 1 source current + coupling current.
        let sys = system(corpus::CIRCUIT_A);
        assert_eq!(sys.dim(), 8);
        assert_eq!(sys.layout().inductor_currents, 4..6);
        assert_eq!(sys.state_names(), &["e1", "e2", "e3", "e4", "i_L1", "i_L2", "i_Vs"]);
    }

    #[test]
    fn missing_field_is_an_error() {
        let g = parse_netlist("V1 1 0 sin 1.0 1.0\nR1 1 0 1.0\n.end").unwrap();
        assert!(matches!(assemble_mna(&g), Err(Error::NoFieldElement)));
    }

    #[test]
    fn structural_singularities() {
        let g = parse_netlist("V1 1 0 dc 1\nV2 1 0 dc 2\nF1 1 0 lumped 1\n").unwrap();
        assert!(matches!(assemble_mna(&g), Err(Error::StructurallySingular(_))));
        let g = parse_netlist("R1 1 0 1\nF1 1 0 lumped 1\nI1 1 2 dc 1\nR2 2 3 1\nI2 3 0 dc 1\n").unwrap();
        assert!(matches!(assemble_mna(&g), Err(Error::StructurallySingular(_))));
    }

    #[test]
    fn descriptor_blocks() {
        let sys = system(corpus::CIRCUIT_A);
        let e = sys.e_matrix();
        // Capacitor C between nodes 2 and 1.
        assert_eq!(e[(0, 0)], 1.0);
        assert_eq!(e[(1, 1)], 1.0);
        assert_eq!(e[(0, 1)], -1.0);
        assert_eq!(e[(4, 4)], 5.0);
        assert_eq!(e[(5, 5)], 2.0);
        assert_eq!(e.rows(6, 2).amax(), 0.0);
        assert_eq!(e[(2, 2)], 0.0);
    }

    #[test]
    fn coupling_extractor_reads_field_voltage() {
        let sys = system(corpus::CIRCUIT_B);
        let z = DVector::from_fn(sys.dim(), |r, _| r as f64 + 1.0);
        // Field across node 2 and ground.
        assert_eq!(sys.coupling_voltage(&z), 2.0);
        let sys = system("R1 2 1 1\nR2 1 0 1\nF1 1 2 lumped 1\n");
        let z = DVector::from_vec(vec![3.0, 5.0, 0.0]);
        assert_eq!(sys.coupling_voltage(&z), -2.0);
    }

    #[test]
    fn ohms_law_with_imposed_voltage() {
        let sys = system("V1 1 0 dc 1\nR1 1 2 1\nF1 2 0 lumped 1\n");
        let grid = uniform_grid(0.0, 0.1, 10);
        // Start from the consistent state for v = 0: e1 = 1, e2 = 0, i = 1, i_V = -1.
        let init = CircuitState {
            z: DVector::from_vec(vec![1.0, 0.0, -1.0, 1.0]),
            t: 0.0,
        };
        for (v, expected) in [(0.0, 1.0), (0.5, 0.5)] {
            let vin = Waveform::constant(&grid, v).unwrap();
            let (i, traj) = circuit_solve_window(&sys, &init, &vin, &grid).unwrap();
            for &val in &i.values()[1..] {
                assert!((val - expected).abs() < 1e-12, "v={v}: i={val}");
            }
            assert!((traj[10].z[1] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn field_parallel_to_source_is_singular_in_window_solve() {
        let sys = system("V1 1 0 dc 1\nR1 1 0 1\nF1 1 0 lumped 1\n");
        let grid = uniform_grid(0.0, 0.1, 2);
        let vin = Waveform::constant(&grid, 1.0).unwrap();
        let err = circuit_solve_window(&sys, &CircuitState::zero(&sys, 0.0), &vin, &grid).unwrap_err();
        assert!(matches!(err, Error::SingularMatrix { step: 1 }));
    }

    #[test]
    fn series_rc_step_response_is_first_order() {
        // V -> R -> C -> ground, field in series with nothing driven: field across C with
        // imposed v would pin the capacitor, so put the field across a resistor instead.
        let text = "V1 1 0 dc 1\nR1 1 2 1\nC1 2 0 1\nR2 2 3 1000\nF1 3 0 lumped 1\n";
        let sys = system(text);
        let mut errs = Vec::new();
        for dt in [1e-2, 5e-3] {
            let grid = uniform_grid(0.0, dt, (1.0 / dt) as usize);
            // Consistent start: e1 = 1, capacitor uncharged, no current in R2.
            let mut z = DVector::zeros(sys.dim());
            z[0] = 1.0;
            z[3] = -1.0;
            let init = CircuitState { z, t: 0.0 };
            let vin = Waveform::constant(&grid, 0.0).unwrap();
            let (_, traj) = circuit_solve_window(&sys, &init, &vin, &grid).unwrap();
            // With R2 = 1000 loading C, the time constant is R1||R2 * C.
            let rp = 1000.0 / 1001.0;
            let vinf = 1000.0 / 1001.0;
            let err = traj
                .iter()
                .fold(0.0f64, |m, s| m.max((s.z[1] - vinf * (1.0 - (-s.t / rp).exp())).abs()));
            errs.push(err);
        }
        assert!(errs[0] < 0.01);
        let ratio = errs[0] / errs[1];
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn kcl_residual_is_small_on_every_step() {
        let sys = system(corpus::CIRCUIT_A);
        let grid = uniform_grid(0.0, 1e-3, 500);
        let vin = Waveform::from_fn(&grid, |t| (3.0 * t).sin() * 0.1).unwrap();
        let (_, traj) = circuit_solve_window(&sys, &CircuitState::zero(&sys, 0.0), &vin, &grid).unwrap();
        for w in traj.windows(2) {
            let r = sys.kcl_residual(&w[0].z, &w[1].z, w[1].t, w[1].t - w[0].t);
            assert!(r.amax() <= 1e-9);
        }
    }

    #[test]
    fn diode_newton_converges() {
        let sys = system("V1 1 0 sin 1.0 1.0\nR1 1 2 100\nD1 2 0 1e-14 0.025\nR2 2 3 1000\nF1 3 0 lumped 1\n");
        let grid = uniform_grid(0.0, 1e-3, 1000);
        let vin = Waveform::constant(&grid, 0.0).unwrap();
        let (i, traj) = circuit_solve_window(&sys, &CircuitState::zero(&sys, 0.0), &vin, &grid).unwrap();
        // Forward-biased diode clamps node 2 below ~0.75 V.
        let peak = traj.iter().fold(0.0f64, |m, s| m.max(s.z[1]));
        assert!(peak > 0.3 && peak < 0.75, "peak {peak}");
        assert!(i.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_perturbation_has_zero_gain() {
        let sys = system(corpus::CIRCUIT_A);
        let grid = uniform_grid(0.0, 1e-2, 100);
        let vin = Waveform::constant(&grid, 0.0).unwrap();
        let delta = Waveform::constant(&grid, 0.0).unwrap();
        let nu = perturbed_response(&sys, &CircuitState::zero(&sys, 0.0), &vin, &delta, &grid).unwrap();
        assert_eq!(nu, 0.0);
    }

    #[test]
    fn trajectory_csv_header() {
        let sys = system(corpus::CIRCUIT_A);
        let mut buf = Vec::new();
        write_trajectory_csv(&sys, &[CircuitState::zero(&sys, 0.0)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,e1,e2,e3,e4,i_L1,i_L2,i_Vs,i_coupling");
        assert_eq!(lines.next().unwrap().split(',').count(), 9);
    }
}
