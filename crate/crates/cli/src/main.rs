//! `wrcosim` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 solver failure,
//! 3 declared divergence (`run`). The last stdout line is always a JSON
//! object `{"verdict": .., "files": [..]}`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use wrcosim::cosim::write_iterates_csv;
use wrcosim::oracle::write_mono_csv;
use wrcosim::studies::{
    gnuplot_script, iterate_study, lemma_check, order_study, svg_line_plot, LemmaConfig, Perturbation, PlotOptions,
    Series, LEMMA_DT_LIST, ORDER_H_LIST,
};
use wrcosim::{
    monolithic_solve, parse_netlist, predict, wr_solve, CircuitGraph, CoupledSystem, Error, Scheme, Verdict,
    WrConfig,
};

#[derive(Parser, Debug)]
#[command(name = "wrcosim", version, about = "Waveform relaxation co-simulation of field/circuit couplings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decide CV-connectivity of the field terminals and print the prediction.
    Check {
        netlist: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run windowed waveform relaxation and write the iterates and report.
    Run {
        netlist: PathBuf,
        #[command(flatten)]
        opts: SolverOpts,
    },
    /// Solve the coupled system monolithically and write the trajectory.
    Mono {
        netlist: PathBuf,
        #[command(flatten)]
        opts: SolverOpts,
    },
    /// Error of k sweeps per window against the monolithic solution, over window lengths.
    Sweep {
        netlist: PathBuf,
        #[command(flatten)]
        opts: SolverOpts,
        /// Sweeps per window.
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Window lengths (comma separated).
        #[arg(long = "H-list", value_delimiter = ',', default_values_t = ORDER_H_LIST)]
        h_list: Vec<f64>,
    },
    /// Circuit gain under a perturbed coupling voltage, over step sizes.
    Lemma {
        netlist: PathBuf,
        #[command(flatten)]
        opts: SolverOpts,
        /// Step sizes (comma separated).
        #[arg(long = "dt-list", value_delimiter = ',', default_values_t = LEMMA_DT_LIST)]
        dt_list: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Shape::Smooth)]
        perturbation: Shape,
        #[arg(long, default_value_t = 1e-3)]
        amplitude: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemeArg {
    Gs,
    Jacobi,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Shape {
    Smooth,
    Hat,
}

#[derive(clap::Args, Debug)]
struct SolverOpts {
    #[arg(long, value_enum, default_value_t = SchemeArg::Gs)]
    scheme: SchemeArg,
    /// Window length in seconds.
    #[arg(long = "H", default_value_t = 0.5)]
    window: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 8)]
    kmax: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long = "t-end", default_value_t = 5.0)]
    t_end: f64,
    #[arg(long, default_value_t = 1e6)]
    divergence_factor: f64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Force the single-threaded reference path.
    #[arg(long)]
    deterministic: bool,
}

impl SolverOpts {
    fn config(&self) -> WrConfig {
        WrConfig {
            scheme: match self.scheme {
                SchemeArg::Gs => Scheme::GaussSeidel,
                SchemeArg::Jacobi => Scheme::Jacobi,
            },
            window: self.window,
            dt: self.dt,
            k_max: self.kmax,
            tol: self.tol,
            divergence_factor: self.divergence_factor,
            t_end: self.t_end,
            threads: if self.deterministic { 1 } else { self.threads },
        }
    }
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Netlist(_) | Error::InvalidConfig(_) | Error::InvalidParameter(_) | Error::NoFieldElement => 1,
            Error::InconsistentStart(_) | Error::UnknownNode(_) => 1,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

struct Outcome {
    verdict: String,
    files: Vec<PathBuf>,
    code: u8,
}

fn load(path: &Path) -> Result<CircuitGraph, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    parse_netlist(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

/// Collects written files.
struct Out {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Out {
    fn new(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, render: impl FnOnce(&mut Vec<u8>) -> wrcosim::Result<()>) -> Result<(), Failure> {
        let mut buf = Vec::new();
        render(&mut buf)?;
        let path = self.dir.join(name);
        fs::write(&path, buf).map_err(|e| Failure { code: 2, message: format!("{}: {e}", path.display()) })?;
        self.files.push(path);
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> Result<(), Failure> {
        self.write(name, |b| {
            b.extend_from_slice(text.as_bytes());
            Ok(())
        })
    }
}

fn series(label: &str, times: &[f64], values: &[f64]) -> Series {
    Series {
        label: label.to_string(),
        points: times.iter().copied().zip(values.iter().copied()).collect(),
    }
}

fn check(netlist: &Path, out_dir: &Path) -> Result<Outcome, Failure> {
    let graph = load(netlist)?;
    let verdict = predict(&graph)?;
    println!("{verdict}");
    println!("{}", verdict.to_json());
    let mut out = Out::new(out_dir)?;
    out.text("cv_verdict.json", &(verdict.to_json() + "\n"))?;
    Ok(Outcome { verdict: format!("{:?}", verdict.prediction), files: out.files, code: 0 })
}

fn run(netlist: &Path, opts: &SolverOpts) -> Result<Outcome, Failure> {
    let graph = load(netlist)?;
    let cfg = opts.config();
    cfg.validate()?;
    let coupled = CoupledSystem::from_graph(&graph)?;
    let sol = wr_solve(coupled.field.as_ref(), &coupled.mna, &cfg)?;
    let study = iterate_study(&graph, &cfg)?;
    let mut out = Out::new(&opts.out_dir)?;
    out.write("iterates.csv", |b| write_iterates_csv(&sol, b))?;
    out.text("report.json", &(sol.report.to_json() + "\n"))?;
    out.write("first_window.csv", |b| study.write_csv(b))?;
    let mut plot = vec![series("v_mono", study.v_mono.times(), study.v_mono.values())];
    for (k, it) in study.iterates.iter().enumerate() {
        plot.push(series(&format!("v_f k={}", k + 1), it.times(), it.values()));
    }
    let opts_plot = PlotOptions {
        title: format!("Coupling voltage iterates, first window ({:?})", sol.report.verdict),
        x_label: "t [s]".into(),
        y_label: "v [V]".into(),
        ..Default::default()
    };
    out.text("first_window.svg", &svg_line_plot(&plot, &opts_plot))?;
    out.text(
        "first_window.gp",
        &gnuplot_script("first_window.csv", study.iterates.len() + 2, &opts_plot),
    )?;

    for w in &sol.report.per_window {
        eprintln!(
            "window {} [{:.3}, {:.3}]: {} sweeps, last error {:.3e}, {:?}",
            w.window_index,
            w.t_start,
            w.t_end,
            w.iterations_used,
            w.iteration_errors.last().copied().unwrap_or(0.0),
            w.verdict
        );
    }
    let code = if sol.report.verdict == Verdict::Diverged { 3 } else { 0 };
    Ok(Outcome { verdict: format!("{:?}", sol.report.verdict), files: out.files, code })
}

fn mono(netlist: &Path, opts: &SolverOpts) -> Result<Outcome, Failure> {
    let coupled = CoupledSystem::from_graph(&load(netlist)?)?;
    let sol = monolithic_solve(&coupled, opts.dt, opts.t_end)?;
    let mut out = Out::new(&opts.out_dir)?;
    out.write("mono.csv", |b| write_mono_csv(&coupled, &sol, b))?;
    Ok(Outcome { verdict: "Solved".into(), files: out.files, code: 0 })
}

fn sweep(netlist: &Path, opts: &SolverOpts, k: usize, h_list: &[f64]) -> Result<Outcome, Failure> {
    let coupled = CoupledSystem::from_graph(&load(netlist)?)?;
    let cfg = WrConfig { window: opts.t_end, ..opts.config() };
    cfg.validate()?;
    if k == 0 || h_list.iter().any(|&h| !(h >= cfg.dt && h <= cfg.t_end)) {
        return Err(Failure::usage("need k >= 1 and dt <= H <= t_end for every window length"));
    }
    let result = order_study(&coupled, h_list, k, &cfg)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    for r in &result.rows {
        eprintln!("H = {:<8} err_v = {:.4e}  err_i = {:.4e}", r.h, r.err_v, r.err_i);
    }
    match result.fitted_slope {
        Some(s) => eprintln!("fitted slope (small-H half): {s:.3}"),
        None => eprintln!("fitted slope rejected"),
    }
    let mut out = Out::new(&opts.out_dir)?;
    out.write("order.csv", |b| result.write_csv(b))?;
    let h: Vec<f64> = result.rows.iter().map(|r| r.h).collect();
    let err: Vec<f64> = result.rows.iter().map(|r| r.err_v).collect();
    // Reference line O(H) through the smallest-H row.
    let last = result.rows.last().expect("at least two rows");
    let reference: Vec<f64> = h.iter().map(|x| last.err_v * x / last.h).collect();
    let plot_opts = PlotOptions {
        title: format!("Error after k={k} sweeps vs window length"),
        x_label: "H [s]".into(),
        y_label: "err_v [V]".into(),
        log_x: true,
        log_y: true,
    };
    let plot = [series("err_v", &h, &err), series("O(H)", &h, &reference)];
    out.text("order.svg", &svg_line_plot(&plot, &plot_opts))?;
    out.text("order.gp", &gnuplot_script("order.csv", 3, &plot_opts))?;
    out.text("order.json", &(serde_json::to_string_pretty(&result).expect("serializable") + "\n"))?;
    let verdict = match result.fitted_slope {
        Some(s) => format!("slope {s:.3}"),
        None => "slope rejected".into(),
    };
    Ok(Outcome { verdict, files: out.files, code: 0 })
}

fn lemma(netlist: &Path, opts: &SolverOpts, dt_list: &[f64], shape: Shape, amplitude: f64) -> Result<Outcome, Failure> {
    let coupled = CoupledSystem::from_graph(&load(netlist)?)?;
    if dt_list.is_empty() || dt_list.iter().any(|&dt| !(dt > 0.0 && dt <= opts.t_end)) {
        return Err(Failure::usage("need 0 < dt <= t_end for every step size"));
    }
    let cfg = LemmaConfig {
        shape: match shape {
            Shape::Smooth => Perturbation::Smooth,
            Shape::Hat => Perturbation::Hat,
        },
        amplitude,
        t_end: opts.t_end,
    };
    let report = lemma_check(&coupled, dt_list, &cfg)?;
    for (dt, nu) in &report.rows {
        eprintln!("dt = {dt:<8} nu_hat = {nu:.6e}");
    }
    let mut out = Out::new(&opts.out_dir)?;
    out.write("lemma.csv", |b| report.write_csv(b))?;
    out.text("lemma.json", &(serde_json::to_string_pretty(&report).expect("serializable") + "\n"))?;
    Ok(Outcome { verdict: format!("{:?}", report.verdict), files: out.files, code: 0 })
}

fn finish(verdict: &str, files: &[PathBuf], code: u8) -> ExitCode {
    let files: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
    println!("{}", json!({ "verdict": verdict, "files": files }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return finish(if code == 0 { "Help" } else { "UsageError" }, &[], code);
        }
    };
    let result = match &cli.command {
        Command::Check { netlist, out_dir } => check(netlist, out_dir),
        Command::Run { netlist, opts } => run(netlist, opts),
        Command::Mono { netlist, opts } => mono(netlist, opts),
        Command::Sweep { netlist, opts, k, h_list } => sweep(netlist, opts, *k, h_list),
        Command::Lemma {
            netlist,
            opts,
            dt_list,
            perturbation,
            amplitude,
        } => lemma(netlist, opts, dt_list, *perturbation, *amplitude),
    };
    match result {
        Ok(o) => finish(&o.verdict, &o.files, o.code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            finish(if f.code == 1 { "UsageError" } else { "SolverFailure" }, &[], f.code)
        }
    }
}
