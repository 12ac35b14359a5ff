//! Conditional phase between a resonantly coupled and an empty cavity, and
//! sweeps of the top-mirror outcoupling rate.

use std::f64::consts::FRAC_PI_2;

use crate::error::Result;
use crate::interferometer::{apply_background, BackgroundModel};
use crate::scattering::{principal_phase, reflection_amplitude, reflectivity, unwrap_phase, QdState, SystemParams};
use crate::spectrum::{Grid, Spectrum};

/// Points in the coarse scan of [`max_conditional_phase`].
pub const SCAN_POINTS: usize = 10_001;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignPoint {
    pub params: SystemParams,
    /// Largest `|phi_d - phi_c|` over probe energy, wrapped into [0, pi].
    pub max_conditional_phase: f64,
    pub argmax_omega: f64,
    /// `|phi_d - phi_c|` at `omega = omega_qd = omega_c`.
    pub on_resonance_conditional_phase: f64,
    pub on_resonance_reflectivity: f64,
    pub feasible: bool,
    /// Advisory: `kappa / 4` within 25% of `g`.
    pub quarter_kappa_near_g: bool,
}

impl DesignPoint {
    pub fn kappa(&self) -> f64 {
        self.params.kappa_top()
    }
}

fn conditional(p: &SystemParams, coupled: &QdState, bg: &BackgroundModel, omega: f64) -> Result<f64> {
    let d = apply_background(reflection_amplitude(p, coupled, omega)?, bg);
    let c = apply_background(reflection_amplitude(p, &QdState::empty(), omega)?, bg);
    Ok(principal_phase(d * c.conj()))
}

/// Unwrapped coupled phase minus unwrapped empty-cavity phase at each grid point.
pub fn conditional_phase_spectrum(p: &SystemParams, omega_qd: f64, grid: &Grid) -> Result<Spectrum> {
    conditional_phase_spectrum_with(p, omega_qd, grid, &BackgroundModel::none())
}

pub fn conditional_phase_spectrum_with(
    p: &SystemParams,
    omega_qd: f64,
    grid: &Grid,
    bg: &BackgroundModel,
) -> Result<Spectrum> {
    let qd = QdState::coupled(omega_qd)?;
    let omega = grid.omegas();
    let mut coupled = Vec::with_capacity(omega.len());
    let mut empty = Vec::with_capacity(omega.len());
    for &w in &omega {
        coupled.push(principal_phase(apply_background(reflection_amplitude(p, &qd, w)?, bg)));
        empty.push(principal_phase(apply_background(
            reflection_amplitude(p, &QdState::empty(), w)?,
            bg,
        )));
    }
    let values = unwrap_phase(&coupled)
        .into_iter()
        .zip(unwrap_phase(&empty))
        .map(|(d, c)| d - c)
        .collect();
    Spectrum::new(omega, values)
}

/// Magnitude and location of the largest conditional phase.
pub fn max_conditional_phase(p: &SystemParams, omega_qd: f64) -> Result<(f64, f64)> {
    max_conditional_phase_with(p, omega_qd, &BackgroundModel::none())
}

/// Scan of `omega_c ± 5 (k + ks)` followed by golden-section refinement
/// between the neighbours of the best scan point.
pub fn max_conditional_phase_with(p: &SystemParams, omega_qd: f64, bg: &BackgroundModel) -> Result<(f64, f64)> {
    let qd = QdState::coupled(omega_qd)?;
    let grid = Grid::centered(p.omega_c(), 5.0 * p.kappa_total(), SCAN_POINTS)?;
    let omega = grid.omegas();
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, &w) in omega.iter().enumerate() {
        let v = conditional(p, &qd, bg, w)?.abs();
        if v > best.1 {
            best = (i, v);
        }
    }
    let (i, coarse) = best;
    let lo = omega[i.saturating_sub(1)];
    let hi = omega[(i + 1).min(omega.len() - 1)];
    let f = |w: f64| conditional(p, &qd, bg, w).map(f64::abs);
    let (w_star, v_star) = golden_section_max(f, lo, hi, 1e-9 * p.kappa_total())?;
    Ok(if v_star >= coarse {
        (v_star, w_star)
    } else {
        (coarse, omega[i])
    })
}

fn golden_section_max<F: Fn(f64) -> Result<f64>>(f: F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc >= fd { (c, fc) } else { (d, fd) })
}

/// Evaluate one design at zero emitter-cavity detuning.
pub fn evaluate_design(p: &SystemParams) -> Result<DesignPoint> {
    let qd = QdState::resonant(p);
    let (max_phase, argmax) = max_conditional_phase(p, p.omega_c())?;
    let on_res = conditional(p, &qd, &BackgroundModel::none(), p.omega_c())?.abs();
    let mut point = DesignPoint {
        params: *p,
        max_conditional_phase: max_phase,
        argmax_omega: argmax,
        on_resonance_conditional_phase: on_res,
        on_resonance_reflectivity: reflectivity(p, &qd, p.omega_c())?,
        feasible: false,
        quarter_kappa_near_g: (p.kappa_top() / 4.0 - p.g()).abs() <= 0.25 * p.g(),
    };
    point.feasible = interface_feasible(&point);
    Ok(point)
}

/// One design point per outcoupling rate, g, kappa_s, gamma and omega_c held
/// fixed; sorted by kappa.
pub fn sweep_kappa(base: &SystemParams, kappa_values: &[f64]) -> Result<Vec<DesignPoint>> {
    let mut points = kappa_values
        .iter()
        .map(|&k| evaluate_design(&base.with_kappa_top(k)?))
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.kappa().total_cmp(&b.kappa()));
    Ok(points)
}

/// Conditional phase beyond pi/2.
pub fn interface_feasible(point: &DesignPoint) -> bool {
    point.max_conditional_phase > FRAC_PI_2
}
