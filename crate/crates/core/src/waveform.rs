//! Sampled time functions exchanged between subsystems.

use serde::Serialize;

use crate::error::{Error, Result};

/// Relative slack for evaluating at the exact span boundaries.
const SPAN_SLACK: f64 = 1e-12;

/// Piecewise-linear time function on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Waveform {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl Waveform {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidWaveform("empty grid".into()));
        }
        if times.len() != values.len() {
            return Err(Error::InvalidWaveform(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidWaveform("grid not strictly increasing".into()));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidWaveform("non-finite entry".into()));
        }
        Ok(Self { times, values })
    }

    pub fn constant(times: &[f64], value: f64) -> Result<Self> {
        Self::new(times.to_vec(), vec![value; times.len()])
    }

    pub fn from_fn(times: &[f64], f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(times.to_vec(), times.iter().map(|&t| f(t)).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn last_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Linear interpolation; evaluation outside the span is an error.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let (start, end) = (self.start(), self.end());
        let slack = SPAN_SLACK * start.abs().max(end.abs()).max(1.0);
        if !(t >= start - slack && t <= end + slack) {
            return Err(Error::OutOfSpan { t, start, end });
        }
        if self.times.len() == 1 {
            return Ok(self.values[0]);
        }
        let k = match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(k) => return Ok(self.values[k]),
            Err(k) => k.clamp(1, self.times.len() - 1),
        };
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let (v0, v1) = (self.values[k - 1], self.values[k]);
        Ok(v0 + (v1 - v0) * (t - t0) / (t1 - t0))
    }

    /// Resample onto `grid` (which must lie inside the span).
    pub fn sample(&self, grid: &[f64]) -> Result<Vec<f64>> {
        if grid == self.times.as_slice() {
            return Ok(self.values.clone());
        }
        grid.iter().map(|&t| self.eval(t)).collect()
    }

    /// `max_t |self(t)|` over the samples.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |self - other|` over this waveform's samples.
    pub fn max_abs_diff(&self, other: &Waveform) -> Result<f64> {
        let theirs = other.sample(&self.times)?;
        Ok(self
            .values
            .iter()
            .zip(&theirs)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Restrict to samples with `t <= t_max`.
    pub fn truncate_to(&self, t_max: f64) -> Waveform {
        let n = self.times.partition_point(|&t| t <= t_max + SPAN_SLACK * t_max.abs().max(1.0));
        let n = n.max(1);
        Waveform {
            times: self.times[..n].to_vec(),
            values: self.values[..n].to_vec(),
        }
    }

    /// Append `other`, skipping its first sample when it repeats our last time.
    pub fn extend(&mut self, other: &Waveform) {
        let skip = usize::from(other.start() <= self.end());
        self.times.extend_from_slice(&other.times[skip..]);
        self.values.extend_from_slice(&other.values[skip..]);
    }
}

/// Uniform grid `t0 + n*dt`, `n = 0..=steps`.
pub fn uniform_grid(t0: f64, dt: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|n| t0 + n as f64 * dt).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(Waveform::new(vec![], vec![]).is_err());
        assert!(Waveform::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(Waveform::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn interpolates_linearly() {
        let w = Waveform::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 0.0]).unwrap();
        assert_eq!(w.eval(0.5).unwrap(), 1.0);
        assert_eq!(w.eval(2.0).unwrap(), 1.0);
        assert_eq!(w.eval(3.0).unwrap(), 0.0);
    }

    #[test]
    fn out_of_span_is_an_error() {
        let w = Waveform::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        assert!(matches!(w.eval(1.5), Err(Error::OutOfSpan { .. })));
        assert!(w.eval(-0.1).is_err());
    }

    #[test]
    fn extend_skips_shared_sample() {
        let mut a = Waveform::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        let b = Waveform::new(vec![1.0, 2.0], vec![1.0, 5.0]).unwrap();
        a.extend(&b);
        assert_eq!(a.times(), &[0.0, 1.0, 2.0]);
        assert_eq!(a.values(), &[0.0, 1.0, 5.0]);
    }
}
