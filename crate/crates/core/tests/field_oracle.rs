//! Field solvers checked against an independently assembled ladder and a
//! fine-step RK4 integrator.

use proptest::prelude::*;
use wrcosim::field::{check_contract, ladder, lumped_cap};
use wrcosim::waveform::uniform_grid;
use wrcosim::{field_solve_window, FieldModel, FieldState, Waveform};

/// Chain matrices built directly from the segment picture: segment `k` joins
/// node `k` to node `k+1`, the last one ends at ground.
fn chain(segments: usize, total_c: f64, total_g: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let nodes = segments + 1;
    let (cs, gs) = (nodes as f64 * total_c, nodes as f64 * total_g);
    let mut c = vec![vec![0.0; nodes]; nodes];
    let mut g = vec![vec![0.0; nodes]; nodes];
    for seg in 0..nodes {
        let (a, b) = (seg, seg + 1);
        for (m, w) in [(&mut c, cs), (&mut g, gs)] {
            m[a][a] += w;
            if b < nodes {
                m[b][b] += w;
                m[a][b] -= w;
                m[b][a] -= w;
            }
        }
    }
    (c, g)
}

/// Gaussian elimination with partial pivoting.
fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, p);
        b.swap(col, p);
        let pivot = a[col].clone();
        for r in col + 1..n {
            let f = a[r][col] / pivot[col];
            for (x, p) in a[r].iter_mut().zip(&pivot).skip(col) {
                *x -= f * p;
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// RK4 on `C y' = e0 i(t) - G y`, returning `y[0]` at every multiple of `every` steps.
fn rk4_terminal(
    segments: usize,
    total_c: f64,
    total_g: f64,
    i: impl Fn(f64) -> f64,
    dt: f64,
    steps: usize,
    every: usize,
) -> Vec<f64> {
    let (c, g) = chain(segments, total_c, total_g);
    let n = segments + 1;
    let rhs = |t: f64, y: &[f64]| {
        let mut b: Vec<f64> = (0..n).map(|r| -(0..n).map(|k| g[r][k] * y[k]).sum::<f64>()).collect();
        b[0] += i(t);
        gauss(c.clone(), b)
    };
    let mut y = vec![0.0; n];
    let mut out = vec![0.0];
    for s in 0..steps {
        let t = s as f64 * dt;
        let k1 = rhs(t, &y);
        let y2: Vec<f64> = (0..n).map(|r| y[r] + 0.5 * dt * k1[r]).collect();
        let k2 = rhs(t + 0.5 * dt, &y2);
        let y3: Vec<f64> = (0..n).map(|r| y[r] + 0.5 * dt * k2[r]).collect();
        let k3 = rhs(t + 0.5 * dt, &y3);
        let y4: Vec<f64> = (0..n).map(|r| y[r] + dt * k3[r]).collect();
        let k4 = rhs(t + dt, &y4);
        for r in 0..n {
            y[r] += dt / 6.0 * (k1[r] + 2.0 * k2[r] + 2.0 * k3[r] + k4[r]);
        }
        if (s + 1) % every == 0 {
            out.push(y[0]);
        }
    }
    out
}

fn solve(model: &dyn FieldModel, i: impl Fn(f64) -> f64, dt: f64, t_end: f64) -> Waveform {
    let grid = uniform_grid(0.0, dt, (t_end / dt).round() as usize);
    let input = Waveform::from_fn(&grid, i).unwrap();
    field_solve_window(model, &FieldState::zero(model, 0.0), &input, &grid).unwrap().0
}

#[test]
fn single_segment_pair_charges_linearly() {
    // Two 2 F segments in series: the terminal sees 1 F, so v(t) = t.
    let reference = rk4_terminal(1, 1.0, 0.0, |_| 1.0, 1e-6, 1_000_000, 10_000);
    for (k, v) in reference.iter().enumerate() {
        assert!((v - k as f64 * 0.01).abs() < 1e-9, "rk4 {v} at step {k}");
    }
    let m = ladder(1, 1.0, 0.0).unwrap();
    let v = solve(&m, |_| 1.0, 0.01, 1.0);
    for (t, v) in v.times().iter().zip(v.values()) {
        assert!((v - t).abs() <= 1e-12);
    }
}

#[test]
fn ladder_error_halves_with_dt() {
    let (n, c, g) = (3, 0.5, 2.0);
    let i = |t: f64| (2.0 * std::f64::consts::PI * t).sin();
    // Reference sampled every 5 ms.
    let reference = rk4_terminal(n, c, g, i, 1e-6, 1_000_000, 5_000);
    let m = ladder(n, c, g).unwrap();
    let errors: Vec<f64> = [5e-3, 2.5e-3, 1.25e-3]
        .iter()
        .map(|&dt| {
            let v = solve(&m, i, dt, 1.0);
            let stride = (5e-3 / dt).round() as usize;
            reference
                .iter()
                .enumerate()
                .fold(0.0f64, |e, (k, r)| e.max((v.values()[k * stride] - r).abs()))
        })
        .collect();
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.8..=2.2).contains(&ratio), "errors {errors:?}");
    }
}

#[test]
fn steady_state_matches_linear_solve() {
    let (n, c, g, i0) = (4, 0.02, 10.0, 0.3);
    let (_, gm) = chain(n, c, g);
    let mut rhs = vec![0.0; n + 1];
    rhs[0] = i0;
    let y = gauss(gm, rhs);
    assert!((y[0] - i0 / g).abs() < 1e-12);
    let m = ladder(n, c, g).unwrap();
    let v = solve(&m, |_| i0, 1e-3, 2.0);
    assert!((v.last_value() - y[0]).abs() < 1e-9, "{} vs {}", v.last_value(), y[0]);
}

#[test]
fn zero_current_keeps_ladder_at_rest() {
    let m = ladder(3, 1.0, 1.0).unwrap();
    let grid = uniform_grid(0.0, 1e-2, 100);
    let input = Waveform::constant(&grid, 0.0).unwrap();
    let (v, state) = field_solve_window(&m, &FieldState::zero(&m, 0.0), &input, &grid).unwrap();
    assert_eq!(v.max_abs(), 0.0);
    assert_eq!(state.x.amax(), 0.0);
}

#[test]
fn lumped_analytic_cases() {
    let c1 = lumped_cap(1.0).unwrap();
    let v = solve(&c1, |_| 1.0, 1e-3, 1.0);
    for (t, v) in v.times().iter().zip(v.values()) {
        assert!((v - t).abs() <= 1e-12);
    }
    // C=2, i=2t: v=t^2/2 up to the implicit Euler error dt*t/2.
    let c2 = lumped_cap(2.0).unwrap();
    let dt = 1e-3;
    let v = solve(&c2, |t| 2.0 * t, dt, 1.0);
    for (t, v) in v.times().iter().zip(v.values()) {
        assert!((v - t * t / 2.0 - dt * t / 2.0).abs() <= 1e-12);
    }
    let v = solve(&c1, |_| 0.0, dt, 1.0);
    assert_eq!(v.max_abs(), 0.0);
}

#[test]
fn contract_constants_are_finite() {
    for model in [
        Box::new(lumped_cap(0.5).unwrap()) as Box<dyn FieldModel>,
        Box::new(ladder(4, 0.02, 10.0).unwrap()),
    ] {
        let r = check_contract(model.as_ref(), 2.0, 64);
        assert!(r.is_finite());
        assert_eq!(r.r_chi_slope, 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lossless_ladder_balances_charge(
        n in 1usize..6,
        c in 0.01f64..10.0,
        amp in 0.1f64..5.0,
        freq in 0.1f64..5.0,
    ) {
        let m = ladder(n, c, 0.0).unwrap();
        let dt = 1e-2;
        let grid = uniform_grid(0.0, dt, 100);
        let i = Waveform::from_fn(&grid, |t| amp * (freq * t).sin()).unwrap();
        let mut state = FieldState::zero(&m, 0.0);
        let cap = m.cap_matrix().clone();
        for k in 0..100 {
            let step = &grid[k..=k + 1];
            let (_, next) = field_solve_window(&m, &state, &i, step).unwrap();
            let stack = |s: &FieldState| {
                let mut y = nalgebra::DVector::zeros(n + 1);
                y[0] = s.v;
                y.rows_mut(1, n).copy_from(&s.x);
                y
            };
            let flow = (&cap * (stack(&next) - stack(&state)) / dt)[0];
            let want = i.values()[k + 1];
            prop_assert!((flow - want).abs() <= 1e-12 * want.abs().max(amp));
            state = next;
        }
    }
}
