//! Numerical experiments on top of the relaxation engine: per-iteration
//! waveforms against the monolithic solution, the order-in-H sweep and the
//! perturbation-gain diagnostic of the circuit subsystem.

mod plot;

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::circuit::{perturbed_response, CircuitState};
use crate::cosim::{wr_solve, Verdict, WrConfig};
use crate::error::{Error, Result};
use crate::netlist::CircuitGraph;
use crate::oracle::{monolithic_solve, CoupledSystem, MonoSolution};
use crate::topology::{predict, CvVerdict};
use crate::waveform::{uniform_grid, Waveform};

pub use plot::{gnuplot_script, svg_line_plot, PlotOptions, Series};

/// Window lengths of the order sweep.
pub const ORDER_H_LIST: [f64; 5] = [0.5, 0.25, 0.125, 0.0625, 0.03125];

/// Step sizes of the gain diagnostic.
pub const LEMMA_DT_LIST: [f64; 4] = [4e-3, 2e-3, 1e-3, 5e-4];

/// Errors below this are treated as the WR-vs-oracle floor (ten Newton tolerances).
pub const ERROR_FLOOR: f64 = 1e-9;

/// Settings that reproduce the shipped experiments with `run circuit_a.net`.
pub fn corpus_config() -> WrConfig {
    WrConfig::default()
}

#[derive(Debug, Clone, Serialize)]
pub struct IterateStudy {
    pub prediction: CvVerdict,
    pub verdict: Verdict,
    /// Monolithic coupling voltage on the first window.
    #[serde(skip)]
    pub v_mono: Waveform,
    /// `v_f^k` on the first window, `k = 1..`.
    #[serde(skip)]
    pub iterates: Vec<Waveform>,
    /// `max_t |v_f^k - v_mono|` on the first window.
    pub errors_vs_mono: Vec<f64>,
}

impl IterateStudy {
    /// Errors shrink from sweep to sweep (from `k = 2` on).
    pub fn errors_decrease(&self) -> bool {
        self.errors_vs_mono.len() >= 2 && self.errors_vs_mono[1..].windows(2).all(|w| w[1] <= w[0])
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let names: Vec<String> = (1..=self.iterates.len()).map(|k| format!("v_f_k{k}")).collect();
        writeln!(out, "t,v_mono,{}", names.join(","))?;
        for (row, t) in self.v_mono.times().iter().enumerate() {
            write!(out, "{t:?},{:?}", self.v_mono.values()[row])?;
            for it in &self.iterates {
                write!(out, ",{:?}", it.values()[row])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Relax the first window and compare each iterate with the monolithic solution.
pub fn iterate_study(graph: &CircuitGraph, cfg: &WrConfig) -> Result<IterateStudy> {
    let prediction = predict(graph)?;
    let coupled = CoupledSystem::from_graph(graph)?;
    let sol = wr_solve(coupled.field.as_ref(), &coupled.mna, cfg)?;
    let iterates = sol.iterates.into_iter().next().unwrap_or_default();
    let first = iterates.first().ok_or(Error::InsufficientIterations)?;
    let last_index = first.len() - 1;
    let mono = monolithic_solve(&coupled, cfg.dt, first.end())?;
    let (v_mono, _) = mono.coupling_slice(0, last_index)?;
    let errors_vs_mono = iterates
        .iter()
        .map(|v| v.max_abs_diff(&v_mono))
        .collect::<Result<Vec<_>>>()?;
    Ok(IterateStudy {
        prediction,
        verdict: sol.report.verdict,
        v_mono,
        iterates,
        errors_vs_mono,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    /// Effective window length (a whole number of steps).
    pub h: f64,
    pub err_v: f64,
    pub err_i: f64,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    /// Sorted by decreasing `h`.
    pub rows: Vec<SweepRow>,
    pub fitted_slope: Option<f64>,
    pub warnings: Vec<String>,
}

impl SweepResult {
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "H,err_v,err_i")?;
        for r in &self.rows {
            writeln!(out, "{:?},{:?},{:?}", r.h, r.err_v, r.err_i)?;
        }
        Ok(())
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return None;
    }
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Fit the slope on the smaller-H half of `rows` (sorted by decreasing H).
fn fit_rows(rows: &[SweepRow]) -> (Option<f64>, Vec<String>) {
    let mut warnings = Vec::new();
    let keep = rows.len().div_ceil(2).max(2).min(rows.len());
    let tail = &rows[rows.len() - keep..];
    if tail.iter().any(|r| r.err_v <= ERROR_FLOOR) {
        warnings.push(format!(
            "errors at the discretization floor (<= {ERROR_FLOOR:e}); slope fit rejected"
        ));
        return (None, warnings);
    }
    let points = |rs: &[SweepRow]| rs.iter().map(|r| (r.h, r.err_v)).collect::<Vec<_>>();
    let slope = loglog_slope(&points(tail));
    if let (Some(s), Some(full)) = (slope, loglog_slope(&points(rows))) {
        if (s - full).abs() > 0.2 {
            warnings.push(format!(
                "preasymptotic rows: full-range slope {full:.3} vs small-H slope {s:.3}"
            ));
        }
    }
    (slope, warnings)
}

/// Windowed relaxation with `k` sweeps per window for each `H`, compared with
/// the monolithic solution over `[0, cfg.t_end]`.
///
/// Sweeps stop early only if the iteration increment drops below `cfg.tol`.
pub fn order_study(coupled: &CoupledSystem, h_list: &[f64], k: usize, cfg: &WrConfig) -> Result<SweepResult> {
    if h_list.len() < 2 {
        return Err(Error::InvalidConfig("order study needs at least two window lengths".into()));
    }
    let mono = monolithic_solve(coupled, cfg.dt, cfg.t_end)?;
    let row = |&h: &f64| -> Result<SweepRow> {
        let steps = ((h / cfg.dt).round() as usize).max(1);
        let run = WrConfig {
            window: steps as f64 * cfg.dt,
            k_max: k,
            threads: 1,
            ..*cfg
        };
        let sol = wr_solve(coupled.field.as_ref(), &coupled.mna, &run)?;
        if sol.report.verdict == Verdict::Diverged {
            return Err(Error::InvalidConfig(format!("relaxation diverged at H = {}", run.window)));
        }
        Ok(SweepRow {
            h: run.window,
            err_v: sol.v.max_abs_diff(&mono.v)?,
            err_i: sol.i.max_abs_diff(&mono.i)?,
            k,
        })
    };
    let mut rows = if cfg.threads > 1 {
        h_list.par_iter().map(row).collect::<Result<Vec<_>>>()?
    } else {
        h_list.iter().map(row).collect::<Result<Vec<_>>>()?
    };
    rows.sort_by(|a, b| b.h.total_cmp(&a.h));
    rows.dedup_by(|a, b| a.h == b.h);
    let (fitted_slope, warnings) = fit_rows(&rows);
    Ok(SweepResult {
        rows,
        fitted_slope,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Perturbation {
    /// `amplitude * sin(2 pi t)`.
    Smooth,
    /// Triangle of half-width `dt` on the grid point nearest the middle of the horizon.
    Hat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaConfig {
    pub shape: Perturbation,
    pub amplitude: f64,
    pub t_end: f64,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        Self {
            shape: Perturbation::Smooth,
            amplitude: 1e-3,
            t_end: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GainVerdict {
    /// Every halving ratio within `[0.8, 1.2]`.
    Bounded,
    /// Every halving ratio at least 1.5.
    Growing,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub config: LemmaConfig,
    /// `(dt, nu_hat)` sorted by decreasing `dt`.
    pub rows: Vec<(f64, f64)>,
    /// `nu_hat(dt_{j+1}) / nu_hat(dt_j)`.
    pub ratios: Vec<f64>,
    pub verdict: GainVerdict,
}

impl LemmaReport {
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "dt,nu_hat")?;
        for (dt, nu) in &self.rows {
            writeln!(out, "{dt:?},{nu:?}")?;
        }
        Ok(())
    }
}

fn perturbation(shape: Perturbation, amplitude: f64, grid: &[f64], dt: f64, t_end: f64) -> Result<Waveform> {
    match shape {
        Perturbation::Smooth => {
            Waveform::from_fn(grid, |t| amplitude * (2.0 * std::f64::consts::PI * t).sin())
        }
        Perturbation::Hat => {
            let centre = (0.5 * t_end / dt).round() as usize;
            let mut values = vec![0.0; grid.len()];
            values[centre.min(grid.len() - 1)] = amplitude;
            Waveform::new(grid.to_vec(), values)
        }
    }
}

/// Circuit gain `nu_hat(dt)` for a perturbation of the monolithic coupling voltage.
pub fn lemma_check(coupled: &CoupledSystem, dt_list: &[f64], cfg: &LemmaConfig) -> Result<LemmaReport> {
    let mut dts: Vec<f64> = dt_list.to_vec();
    dts.sort_by(|a, b| b.total_cmp(a));
    let mut rows = Vec::with_capacity(dts.len());
    for &dt in &dts {
        let mono: MonoSolution = monolithic_solve(coupled, dt, cfg.t_end)?;
        let steps = mono.v.len() - 1;
        let grid = uniform_grid(0.0, dt, steps);
        let delta = perturbation(cfg.shape, cfg.amplitude, &grid, dt, cfg.t_end)?;
        let start = CircuitState::zero(&coupled.mna, 0.0);
        rows.push((dt, perturbed_response(&coupled.mna, &start, &mono.v, &delta, &grid)?));
    }
    let ratios: Vec<f64> = rows
        .windows(2)
        .map(|w| if w[0].1 > 0.0 { w[1].1 / w[0].1 } else { 0.0 })
        .collect();
    let verdict = if ratios.is_empty() {
        GainVerdict::Inconclusive
    } else if ratios.iter().all(|r| (0.8..=1.2).contains(r)) {
        GainVerdict::Bounded
    } else if ratios.iter().all(|&r| r >= 1.5) {
        GainVerdict::Growing
    } else {
        GainVerdict::Inconclusive
    };
    Ok(LemmaReport {
        config: *cfg,
        rows,
        ratios,
        verdict,
    })
}
