//! Temperature tuning of the emitter through the cavity resonance.
//!
//! Both energies shift linearly with temperature; the emitter faster than the
//! cavity, so a temperature ramp sweeps the detuning through zero. The default
//! slopes are placeholders, not measured values for any particular sample.

use crate::error::{Error, Result};
use crate::interferometer::{measured_intensity_spectrum, BackgroundModel};
use crate::scattering::{QdState, SystemParams};
use crate::spectrum::{Grid, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningModel {
    /// ueV per kelvin.
    pub qd_slope: f64,
    pub cavity_slope: f64,
    /// Energies (ueV) at `t_ref`.
    pub qd_ref: f64,
    pub cavity_ref: f64,
    pub t_ref: f64,
    /// Temperatures outside this window only log a warning.
    pub validity: (f64, f64),
}

impl TuningModel {
    pub const DEFAULT_QD_SLOPE: f64 = -10.0;
    pub const DEFAULT_CAVITY_SLOPE: f64 = -3.0;

    pub fn new(qd_slope: f64, cavity_slope: f64, qd_ref: f64, cavity_ref: f64, t_ref: f64) -> Result<Self> {
        for (name, v) in [
            ("qd_slope", qd_slope),
            ("cavity_slope", cavity_slope),
            ("qd_ref", qd_ref),
            ("cavity_ref", cavity_ref),
            ("t_ref", t_ref),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    value: v,
                    reason: "must be finite",
                });
            }
        }
        if qd_slope.abs() <= cavity_slope.abs() {
            return Err(Error::InvalidParameter {
                name: "qd_slope",
                value: qd_slope,
                reason: "|qd_slope| must exceed |cavity_slope| for the emitter to cross the cavity",
            });
        }
        Ok(Self {
            qd_slope,
            cavity_slope,
            qd_ref,
            cavity_ref,
            t_ref,
            validity: (0.0, 300.0),
        })
    }

    /// Default slopes, emitter `detuning` ueV above the cavity at `t_ref`.
    pub fn with_default_slopes(cavity_ref: f64, detuning: f64, t_ref: f64) -> Result<Self> {
        Self::new(
            Self::DEFAULT_QD_SLOPE,
            Self::DEFAULT_CAVITY_SLOPE,
            cavity_ref + detuning,
            cavity_ref,
            t_ref,
        )
    }

    /// Temperature at which emitter and cavity are degenerate.
    pub fn crossing_temperature(&self) -> f64 {
        self.t_ref + (self.cavity_ref - self.qd_ref) / (self.qd_slope - self.cavity_slope)
    }

    /// Temperature at which `omega_qd - omega_c = detuning`.
    pub fn temperature_for_detuning(&self, detuning: f64) -> f64 {
        self.t_ref + (detuning - (self.qd_ref - self.cavity_ref)) / (self.qd_slope - self.cavity_slope)
    }
}

/// `(omega_qd, omega_c)` at temperature `t`.
pub fn energies_at(m: &TuningModel, t: f64) -> (f64, f64) {
    if t < m.validity.0 || t > m.validity.1 {
        log::warn!("temperature {t} K outside model window {:?}", m.validity);
    }
    let dt = t - m.t_ref;
    (m.qd_ref + m.qd_slope * dt, m.cavity_ref + m.cavity_slope * dt)
}

#[derive(Debug, Clone)]
pub struct TemperatureScan {
    pub temperatures: Vec<f64>,
    pub spectra: Vec<Spectrum>,
    pub params: SystemParams,
    pub tuning: TuningModel,
    pub background: BackgroundModel,
}

/// System and emitter state at one temperature.
pub fn tuned_state(p: &SystemParams, m: &TuningModel, t: f64) -> Result<(SystemParams, QdState)> {
    let (omega_qd, omega_c) = energies_at(m, t);
    Ok((p.with_omega_c(omega_c)?, QdState::coupled(omega_qd)?))
}

pub fn synthesize_scan(
    p: &SystemParams,
    m: &TuningModel,
    temperatures: &[f64],
    grid: &Grid,
    bg: &BackgroundModel,
) -> Result<TemperatureScan> {
    if temperatures.is_empty() {
        return Err(Error::Config("temperature list is empty".into()));
    }
    if let Some(bad) = temperatures.iter().find(|t| !t.is_finite()) {
        return Err(Error::Config(format!("non-finite temperature {bad}")));
    }
    if temperatures.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("temperatures must be strictly increasing".into()));
    }
    let spectra = temperatures
        .iter()
        .map(|&t| {
            let (sys, qd) = tuned_state(p, m, t)?;
            measured_intensity_spectrum(&sys, &qd, bg, grid)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TemperatureScan {
        temperatures: temperatures.to_vec(),
        spectra,
        params: *p,
        tuning: *m,
        background: *bg,
    })
}

/// Positions of the two deepest reflection minima at each temperature, low
/// energy first; `None` where fewer than two minima are resolved.
pub fn dip_tracks(scan: &TemperatureScan) -> Vec<Option<(f64, f64)>> {
    scan.spectra
        .iter()
        .map(|s| {
            let minima = s.local_minima();
            if minima.len() < 2 {
                return None;
            }
            let value_at = |w: f64| {
                let i = s.omega().partition_point(|x| *x < w).min(s.len() - 1);
                s.values()[i].min(s.values()[i.saturating_sub(1)])
            };
            let mut ranked = minima;
            ranked.sort_by(|a, b| value_at(*a).total_cmp(&value_at(*b)).then(a.total_cmp(b)));
            let (a, b) = (ranked[0], ranked[1]);
            Some((a.min(b), a.max(b)))
        })
        .collect()
}

/// Smallest separation of the two tracked dips over the scan.
pub fn anticrossing_gap(scan: &TemperatureScan) -> Result<f64> {
    dip_tracks(scan)
        .into_iter()
        .flatten()
        .map(|(lo, hi)| hi - lo)
        .min_by(f64::total_cmp)
        .ok_or(Error::UnresolvedSplitting(1))
}
