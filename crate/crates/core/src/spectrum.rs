//! Ordered probe-energy grids and the spectra sampled on them.

use crate::error::{Error, Result};

/// Uniform probe grid, `points` samples from `start` to `stop` inclusive (ueV).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Grid {
    pub fn new(start: f64, stop: f64, points: usize) -> Result<Self> {
        if !(start.is_finite() && stop.is_finite()) {
            return Err(Error::Config(format!("grid bounds must be finite ({start}, {stop})")));
        }
        if points < 2 {
            return Err(Error::Config(format!("grid needs at least 2 points, got {points}")));
        }
        if stop <= start {
            return Err(Error::Config(format!("grid stop {stop} must exceed start {start}")));
        }
        Ok(Self { start, stop, points })
    }

    /// Symmetric window `center ± half_width`.
    pub fn centered(center: f64, half_width: f64, points: usize) -> Result<Self> {
        Self::new(center - half_width, center + half_width, points)
    }

    pub fn step(&self) -> f64 {
        (self.stop - self.start) / (self.points - 1) as f64
    }

    pub fn omegas(&self) -> Vec<f64> {
        let step = self.step();
        (0..self.points)
            .map(|i| {
                if i + 1 == self.points {
                    self.stop
                } else {
                    self.start + step * i as f64
                }
            })
            .collect()
    }
}

/// Values sampled on a strictly increasing energy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T = f64> {
    omega: Vec<f64>,
    values: Vec<T>,
}

impl<T> Spectrum<T> {
    pub fn new(omega: Vec<f64>, values: Vec<T>) -> Result<Self> {
        if omega.len() != values.len() {
            return Err(Error::InvalidSpectrum(format!(
                "{} energies but {} values",
                omega.len(),
                values.len()
            )));
        }
        if omega.len() < 2 {
            return Err(Error::InvalidSpectrum(format!(
                "need at least 2 points, got {}",
                omega.len()
            )));
        }
        if let Some(bad) = omega.iter().find(|w| !w.is_finite()) {
            return Err(Error::InvalidSpectrum(format!("non-finite energy {bad}")));
        }
        if let Some(i) = omega.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSpectrum(format!(
                "grid not strictly increasing at index {}: {} then {}",
                i + 1,
                omega[i],
                omega[i + 1]
            )));
        }
        Ok(Self { omega, values })
    }

    /// Evaluate `f` at every grid point.
    pub fn sample<F>(grid: &Grid, f: F) -> Result<Self>
    where
        F: FnMut(f64) -> Result<T>,
    {
        let omega = grid.omegas();
        let values = omega.iter().copied().map(f).collect::<Result<Vec<_>>>()?;
        Self::new(omega, values)
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &T)> {
        self.omega.iter().copied().zip(self.values.iter())
    }

    /// Apply `f` pointwise, keeping the grid.
    pub fn map<U, F: FnMut(f64, &T) -> U>(&self, mut f: F) -> Spectrum<U> {
        Spectrum {
            omega: self.omega.clone(),
            values: self.iter().map(|(w, v)| f(w, v)).collect(),
        }
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<T>) {
        (self.omega, self.values)
    }
}

impl Spectrum<f64> {
    /// Index and value of the smallest sample.
    pub fn min(&self) -> (usize, f64) {
        self.values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc })
    }

    /// Energies of strict local minima, refined by a parabola through each
    /// minimum and its two neighbours. Edge points are never reported.
    pub fn local_minima(&self) -> Vec<f64> {
        let (w, y) = (&self.omega, &self.values);
        (1..y.len().saturating_sub(1))
            .filter(|&i| y[i] < y[i - 1] && y[i] <= y[i + 1])
            .map(|i| parabolic_vertex([w[i - 1], w[i], w[i + 1]], [y[i - 1], y[i], y[i + 1]]))
            .collect()
    }
}

/// Abscissa of the vertex of the parabola through three points.
pub fn parabolic_vertex(x: [f64; 3], y: [f64; 3]) -> f64 {
    let d1 = (x[1] - x[0]) * (y[1] - y[2]);
    let d2 = (x[1] - x[2]) * (y[1] - y[0]);
    let den = d1 - d2;
    if den == 0.0 {
        return x[1];
    }
    let num = (x[1] - x[0]) * d1 - (x[1] - x[2]) * d2;
    let v = x[1] - 0.5 * num / den;
    v.clamp(x[0].min(x[2]), x[0].max(x[2]))
}
