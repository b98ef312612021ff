//! Waveform relaxation between the field and the circuit.
//!
//! The field is current driven (it consumes the coupling current and produces
//! the terminal voltage) and the circuit is voltage driven. Each window
//! `[t0, t0 + H]` is iterated until the coupling waveforms stop changing:
//!
//! * Gauss-Seidel: field with `i_{k-1}` gives `v_k`, then circuit with `v_k` gives `i_k`.
//! * Jacobi: field with `i_{k-1}` and circuit with `v_{k-1}`, independently.
//!
//! Windows run in sequence and hand their final states to the next one.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::circuit::{circuit_solve_window, CircuitState, MnaSystem};
use crate::error::{Error, Result};
use crate::field::{field_solve_window, FieldModel, FieldState};
use crate::waveform::Waveform;

pub use crate::waveform::uniform_grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    Jacobi,
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WrConfig {
    pub scheme: Scheme,
    /// Window length `H` in seconds.
    pub window: f64,
    pub dt: f64,
    pub k_max: usize,
    /// Threshold on `|v_k - v_{k-1}| + |i_k - i_{k-1}|` (max norms).
    pub tol: f64,
    pub divergence_factor: f64,
    pub t_end: f64,
    /// Worker threads for Jacobi sweeps; 1 is the sequential reference path.
    pub threads: usize,
}

impl Default for WrConfig {
    /// Corpus settings: Gauss-Seidel, `H = 0.5`, `dt = 1e-3`, 8 sweeps, 5 s.
    fn default() -> Self {
        Self {
            scheme: Scheme::GaussSeidel,
            window: 0.5,
            dt: 1e-3,
            k_max: 8,
            tol: 1e-8,
            divergence_factor: 1e6,
            t_end: 5.0,
            threads: 1,
        }
    }
}

impl WrConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.dt <= self.window && self.window <= self.t_end && self.t_end.is_finite()) {
            return bad("need 0 < dt <= H <= t_end");
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return bad("tol must be positive");
        }
        if self.k_max == 0 {
            return bad("k_max must be at least 1");
        }
        if self.divergence_factor.is_nan() || self.divergence_factor <= 1.0 {
            return bad("divergence factor must exceed 1");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        Ok(())
    }

    pub(crate) fn total_steps(&self) -> usize {
        ((self.t_end / self.dt).round() as usize).max(1)
    }

    pub(crate) fn steps_per_window(&self) -> usize {
        ((self.window / self.dt).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Converged,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowReport {
    pub window_index: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// `|v_k - v_{k-1}| + |i_k - i_{k-1}|` per sweep.
    pub iteration_errors: Vec<f64>,
    pub v_errors: Vec<f64>,
    pub i_errors: Vec<f64>,
    pub converged: bool,
    pub iterations_used: usize,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rates {
    /// Geometric mean of `e_{k+1} / e_k` over the tail.
    pub rho: f64,
    /// Geometric mean of `e_{k+2} / e_k` over the tail.
    pub two_step_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WrReport {
    pub scheme: Scheme,
    pub per_window: Vec<WindowReport>,
    pub measured_rates: Option<Rates>,
    pub verdict: Verdict,
}

impl WrReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Field and circuit states at a window boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub field: FieldState,
    pub circuit: CircuitState,
}

/// Result of relaxing one window.
#[derive(Debug, Clone)]
pub struct WindowOutcome {
    pub v: Waveform,
    pub i: Waveform,
    pub field_final: FieldState,
    pub circuit_trajectory: Vec<CircuitState>,
    /// `v_k` for `k = 1..=iterations_used`.
    pub v_iterates: Vec<Waveform>,
    pub report: WindowReport,
}

/// Field output with its final state, circuit output with its trajectory.
type SweepOutput = ((Waveform, FieldState), (Waveform, Vec<CircuitState>));

fn sweep(
    field: &dyn FieldModel,
    mna: &MnaSystem,
    initial: &CoupledState,
    grid: &[f64],
    cfg: &WrConfig,
    v_prev: &Waveform,
    i_prev: &Waveform,
) -> Result<SweepOutput> {
    match cfg.scheme {
        Scheme::GaussSeidel => {
            let (v, fs) = field_solve_window(field, &initial.field, i_prev, grid)?;
            let circuit = circuit_solve_window(mna, &initial.circuit, &v, grid)?;
            Ok(((v, fs), circuit))
        }
        Scheme::Jacobi if cfg.threads > 1 => std::thread::scope(|s| {
            let handle = s.spawn(|| field_solve_window(field, &initial.field, i_prev, grid));
            let circuit = circuit_solve_window(mna, &initial.circuit, v_prev, grid);
            let field = handle.join().expect("field solve panicked");
            Ok((field?, circuit?))
        }),
        Scheme::Jacobi => {
            let f = field_solve_window(field, &initial.field, i_prev, grid)?;
            let c = circuit_solve_window(mna, &initial.circuit, v_prev, grid)?;
            Ok((f, c))
        }
    }
}

/// Relax one window. `guess` supplies `(v_0, i_0)`; by default both are held
/// at their values in `initial`.
pub fn wr_window(
    field: &dyn FieldModel,
    mna: &MnaSystem,
    initial: &CoupledState,
    grid: &[f64],
    cfg: &WrConfig,
    guess: Option<(Waveform, Waveform)>,
) -> Result<WindowOutcome> {
    let (mut v_prev, mut i_prev) = match guess {
        Some(g) => g,
        None => (
            Waveform::constant(grid, initial.field.v)?,
            Waveform::constant(grid, mna.coupling_current(&initial.circuit.z))?,
        ),
    };
    let mut report = WindowReport {
        window_index: 0,
        t_start: grid[0],
        t_end: grid[grid.len() - 1],
        iteration_errors: Vec::new(),
        v_errors: Vec::new(),
        i_errors: Vec::new(),
        converged: false,
        iterations_used: 0,
        verdict: Verdict::MaxIterations,
    };
    let mut v_iterates = Vec::new();
    let mut field_final = initial.field.clone();
    let mut trajectory = vec![initial.circuit.clone()];
    let mut streak = 0;

    for k in 1..=cfg.k_max {
        let ((v, fs), (i, traj)) = sweep(field, mna, initial, grid, cfg, &v_prev, &i_prev)?;
        let ev = v.max_abs_diff(&v_prev)?;
        let ei = i.max_abs_diff(&i_prev)?;
        let err = ev + ei;
        report.v_errors.push(ev);
        report.i_errors.push(ei);
        report.iteration_errors.push(err);
        report.iterations_used = k;
        v_iterates.push(v.clone());
        (v_prev, i_prev, field_final, trajectory) = (v, i, fs, traj);

        if err <= cfg.tol {
            report.converged = true;
            report.verdict = Verdict::Converged;
            break;
        }
        let errs = &report.iteration_errors;
        if k >= 3 && err > errs[k - 2] {
            streak += 1;
        } else {
            streak = 0;
        }
        if !err.is_finite() || err > cfg.divergence_factor * errs[0] || streak >= 3 {
            report.verdict = Verdict::Diverged;
            break;
        }
    }

    Ok(WindowOutcome {
        v: v_prev,
        i: i_prev,
        field_final,
        circuit_trajectory: trajectory,
        v_iterates,
        report,
    })
}

/// Windowed waveform relaxation over `[0, t_end]`.
#[derive(Debug, Clone)]
pub struct WrSolution {
    pub v: Waveform,
    pub i: Waveform,
    pub z_trajectory: Vec<CircuitState>,
    /// Per window, `v_k` for each sweep.
    pub iterates: Vec<Vec<Waveform>>,
    pub report: WrReport,
}

/// Consistent all-zero start; requires every source to vanish at `t = 0`.
pub fn zero_start(field: &dyn FieldModel, mna: &MnaSystem) -> Result<CoupledState> {
    let s = mna.max_source_value(0.0);
    if s > 1e-12 {
        return Err(Error::InconsistentStart(format!(
            "sources must vanish at t = 0 for the zero start (max |source(0)| = {s})"
        )));
    }
    Ok(CoupledState {
        field: FieldState::zero(field, 0.0),
        circuit: CircuitState::zero(mna, 0.0),
    })
}

/// Run waveform relaxation window by window over `[0, cfg.t_end]`.
///
/// Stops at the first diverging window; its iterates are still reported.
pub fn wr_solve(field: &dyn FieldModel, mna: &MnaSystem, cfg: &WrConfig) -> Result<WrSolution> {
    cfg.validate()?;
    let mut state = zero_start(field, mna)?;
    let total = cfg.total_steps();
    let per_window = cfg.steps_per_window();
    let times = uniform_grid(0.0, cfg.dt, total);

    let mut v_all: Option<Waveform> = None;
    let mut i_all: Option<Waveform> = None;
    let mut z_all = vec![state.circuit.clone()];
    let mut iterates = Vec::new();
    let mut windows = Vec::new();
    let mut verdict = Verdict::Converged;

    let mut start = 0;
    while start < total {
        let end = (start + per_window).min(total);
        let grid = &times[start..=end];
        let index = windows.len();
        let outcome = wr_window(field, mna, &state, grid, cfg, None).map_err(|e| Error::Window {
            window: index,
            source: Box::new(e),
        })?;
        let mut report = outcome.report;
        report.window_index = index;
        match report.verdict {
            Verdict::Diverged => verdict = Verdict::Diverged,
            Verdict::MaxIterations if verdict == Verdict::Converged => verdict = Verdict::MaxIterations,
            _ => {}
        }
        match (&mut v_all, &mut i_all) {
            (Some(v), Some(i)) => {
                v.extend(&outcome.v);
                i.extend(&outcome.i);
            }
            _ => {
                v_all = Some(outcome.v.clone());
                i_all = Some(outcome.i.clone());
            }
        }
        z_all.extend(outcome.circuit_trajectory.iter().skip(1).cloned());
        iterates.push(outcome.v_iterates);
        let diverged = report.verdict == Verdict::Diverged;
        windows.push(report);
        if diverged {
            break;
        }
        state = CoupledState {
            field: outcome.field_final,
            circuit: outcome.circuit_trajectory.last().cloned().expect("non-empty trajectory"),
        };
        start = end;
    }

    let mut report = WrReport {
        scheme: cfg.scheme,
        per_window: windows,
        measured_rates: None,
        verdict,
    };
    report.measured_rates = estimate_rates(&report, cfg.scheme).ok();
    Ok(WrSolution {
        v: v_all.expect("at least one window"),
        i: i_all.expect("at least one window"),
        z_trajectory: z_all,
        iterates,
        report,
    })
}

fn geometric_mean_ratio(errors: &[f64], lag: usize) -> Option<f64> {
    let logs: Vec<f64> = errors
        .windows(lag + 1)
        .map(|w| (w[lag] / w[0]).ln())
        .collect();
    if logs.is_empty() || logs.iter().any(|l| !l.is_finite()) {
        return None;
    }
    Some((logs.iter().sum::<f64>() / logs.len() as f64).exp())
}

/// Contraction rates from the asymptotic tail of every window with at least
/// four sweeps; per-window rates are combined by geometric mean.
///
/// The tail is the last half of the sweeps (at least three errors).
pub fn estimate_rates(report: &WrReport, _scheme: Scheme) -> Result<Rates> {
    let mut one = Vec::new();
    let mut two = Vec::new();
    for w in &report.per_window {
        let e = &w.iteration_errors;
        if e.len() < 4 {
            continue;
        }
        let keep = (e.len() - e.len() / 2).max(3);
        let tail = &e[e.len() - keep..];
        if let (Some(r1), Some(r2)) = (geometric_mean_ratio(tail, 1), geometric_mean_ratio(tail, 2)) {
            one.push(r1.ln());
            two.push(r2.ln());
        }
    }
    if one.is_empty() {
        return Err(Error::InsufficientIterations);
    }
    let mean = |v: &[f64]| (v.iter().sum::<f64>() / v.len() as f64).exp();
    Ok(Rates {
        rho: mean(&one),
        two_step_rho: mean(&two),
    })
}

/// CSV `t,v_f_k1,...,v_f_kK`; windows that stopped early repeat their last iterate.
pub fn write_iterates_csv(solution: &WrSolution, mut out: impl Write) -> Result<()> {
    let k_max = solution.iterates.iter().map(Vec::len).max().unwrap_or(0);
    let header: Vec<String> = (1..=k_max).map(|k| format!("v_f_k{k}")).collect();
    writeln!(out, "t,{}", header.join(","))?;
    for (w, iterates) in solution.iterates.iter().enumerate() {
        let Some(first) = iterates.first() else { continue };
        let skip = usize::from(w > 0);
        for row in skip..first.len() {
            write!(out, "{:?}", first.times()[row])?;
            for k in 0..k_max {
                let it = &iterates[k.min(iterates.len() - 1)];
                write!(out, ",{:?}", it.values()[row])?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
