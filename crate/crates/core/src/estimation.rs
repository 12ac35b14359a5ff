//! Fitting the reflection model to measured spectra.
//!
//! The forward model for one probe energy is the background-diluted cavity
//! amplitude `m = sqrt(b) + sqrt(1 - b) r(w)`. Intensity points compare
//! `beta^2 |m|^2` (beta being the overall intensity normalization) and phase
//! points compare `arg m`.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::interferometer::{apply_background, dip_visibility, BackgroundModel};
use crate::lm::{self, LmConfig, LmOutcome, Termination};
use crate::scattering::{principal_phase, reflection_amplitude, QdState, SystemParams};
use crate::spectrum::Spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FitParam {
    G,
    KappaTop,
    KappaSide,
    Gamma,
    OmegaC,
    OmegaQd,
    Background,
    Beta,
}

impl FitParam {
    pub const ALL: [FitParam; 8] = [
        FitParam::G,
        FitParam::KappaTop,
        FitParam::KappaSide,
        FitParam::Gamma,
        FitParam::OmegaC,
        FitParam::OmegaQd,
        FitParam::Background,
        FitParam::Beta,
    ];

    /// The four rates the pillar is usually characterised by.
    pub const RATES: [FitParam; 4] = [FitParam::G, FitParam::KappaTop, FitParam::KappaSide, FitParam::Gamma];

    pub fn key(self) -> &'static str {
        match self {
            FitParam::G => "g",
            FitParam::KappaTop => "kappa_top",
            FitParam::KappaSide => "kappa_side",
            FitParam::Gamma => "gamma",
            FitParam::OmegaC => "omega_c",
            FitParam::OmegaQd => "omega_qd",
            FitParam::Background => "background",
            FitParam::Beta => "beta",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.key() == key)
    }

    fn is_energy(self) -> bool {
        matches!(self, FitParam::OmegaC | FitParam::OmegaQd)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for FitParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Full parameter vector of the measured-signal model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub g: f64,
    pub kappa_top: f64,
    pub kappa_side: f64,
    pub gamma: f64,
    pub omega_c: f64,
    pub omega_qd: f64,
    pub background: f64,
    pub beta: f64,
}

impl ModelParams {
    pub fn new(p: &SystemParams, omega_qd: f64, background: f64) -> Self {
        Self {
            g: p.g(),
            kappa_top: p.kappa_top(),
            kappa_side: p.kappa_side(),
            gamma: p.gamma(),
            omega_c: p.omega_c(),
            omega_qd,
            background,
            beta: 1.0,
        }
    }

    pub fn get(&self, which: FitParam) -> f64 {
        self.as_array()[which.index()]
    }

    pub fn set(&mut self, which: FitParam, value: f64) {
        let mut a = self.as_array();
        a[which.index()] = value;
        *self = Self::from_array(a);
    }

    fn as_array(&self) -> [f64; 8] {
        [
            self.g,
            self.kappa_top,
            self.kappa_side,
            self.gamma,
            self.omega_c,
            self.omega_qd,
            self.background,
            self.beta,
        ]
    }

    fn from_array(a: [f64; 8]) -> Self {
        Self {
            g: a[0],
            kappa_top: a[1],
            kappa_side: a[2],
            gamma: a[3],
            omega_c: a[4],
            omega_qd: a[5],
            background: a[6],
            beta: a[7],
        }
    }

    pub fn system(&self) -> Result<SystemParams> {
        SystemParams::new(self.g, self.kappa_top, self.kappa_side, self.gamma, self.omega_c)
    }
}

/// Evaluates the measured-signal model with energies taken relative to a
/// reference so that large absolute energies do not swamp small detunings.
struct ForwardModel {
    system: SystemParams,
    qd: QdState,
    background: BackgroundModel,
    beta: f64,
    reference: f64,
}

impl ForwardModel {
    fn new(params: &ModelParams, coupled: bool, reference: f64) -> Result<Self> {
        // shifted frame: cavity at omega_c - reference + OFFSET keeps omega_c > 0
        let system = SystemParams::new(
            params.g,
            params.kappa_top,
            params.kappa_side,
            params.gamma,
            params.omega_c - reference + FRAME_OFFSET,
        )?;
        let qd = if coupled {
            QdState::coupled(params.omega_qd - reference + FRAME_OFFSET)?
        } else {
            QdState::empty()
        };
        Ok(Self {
            system,
            qd,
            background: BackgroundModel::in_phase(params.background)?,
            beta: params.beta,
            reference,
        })
    }

    fn amplitude(&self, omega: f64) -> Result<num_complex::Complex64> {
        let w = omega - self.reference + FRAME_OFFSET;
        reflection_amplitude(&self.system, &self.qd, w).map(|r| apply_background(r, &self.background))
    }

    fn intensity(&self, omega: f64) -> Result<f64> {
        self.amplitude(omega).map(|m| self.beta * self.beta * m.norm_sqr())
    }

    fn phase(&self, omega: f64) -> Result<f64> {
        self.amplitude(omega).map(principal_phase)
    }
}

// Large enough that any physical detuning leaves the shifted energies positive.
const FRAME_OFFSET: f64 = 1e6;

fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * std::f64::consts::PI);
    if y > std::f64::consts::PI {
        y - 2.0 * std::f64::consts::PI
    } else {
        y
    }
}

#[derive(Debug, Clone)]
pub struct FitProblem {
    pub intensity: Option<Spectrum>,
    pub phase: Option<Spectrum>,
    pub intensity_weights: Vec<f64>,
    pub phase_weights: Vec<f64>,
    /// Whether the spectra were taken with the emitter present.
    pub coupled: bool,
    pub free: Vec<FitParam>,
    /// `[lo, hi]` per parameter, indexed like [`FitParam::ALL`].
    pub bounds: [(f64, f64); 8],
    pub initial_guess: ModelParams,
    pub config: LmConfig,
}

/// Rates in `[0, 1e3]` ueV (kappa strictly positive), energies inside the
/// scan window, background in `[0, 0.999]`, intensity normalization in `(0, 1]`.
pub fn default_bounds(window: (f64, f64)) -> [(f64, f64); 8] {
    [
        (0.0, 1e3),
        (1e-9, 1e3),
        (0.0, 1e3),
        (0.0, 1e3),
        window,
        window,
        (0.0, 0.999),
        (1e-6, 1.0),
    ]
}

/// `1 / range` of the observed values, so each block enters at comparable scale.
pub fn default_weights(s: &Spectrum) -> Vec<f64> {
    let (lo, hi) = s
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let w = 1.0 / (hi - lo).max(1e-6);
    vec![w; s.len()]
}

impl FitProblem {
    /// Intensity-only problem with default weights and bounds.
    pub fn intensity_only(observed: Spectrum, coupled: bool, free: Vec<FitParam>, initial_guess: ModelParams) -> Self {
        let window = (observed.omega()[0], *observed.omega().last().unwrap());
        Self {
            intensity_weights: default_weights(&observed),
            intensity: Some(observed),
            phase: None,
            phase_weights: Vec::new(),
            coupled,
            free,
            bounds: default_bounds(window),
            initial_guess,
            config: LmConfig::default(),
        }
    }

    pub fn with_phase(mut self, observed: Spectrum) -> Self {
        self.phase_weights = default_weights(&observed);
        let (lo, hi) = (observed.omega()[0], *observed.omega().last().unwrap());
        for p in [FitParam::OmegaC, FitParam::OmegaQd] {
            let b = &mut self.bounds[p.index()];
            *b = (b.0.min(lo), b.1.max(hi));
        }
        self.phase = Some(observed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.free.is_empty() {
            return Err(Error::InvalidProblem("no free parameters".into()));
        }
        if self.intensity.is_none() && self.phase.is_none() {
            return Err(Error::InvalidProblem("no observed spectra".into()));
        }
        let blocks = [
            (&self.intensity, &self.intensity_weights),
            (&self.phase, &self.phase_weights),
        ];
        let mut any_weight = false;
        for (s, w) in blocks {
            if let Some(s) = s {
                if w.len() != s.len() {
                    return Err(Error::InvalidProblem(format!(
                        "{} weights for {} points",
                        w.len(),
                        s.len()
                    )));
                }
                if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidProblem("weights must be finite and non-negative".into()));
                }
                any_weight |= w.iter().any(|v| *v > 0.0);
            }
        }
        if !any_weight {
            return Err(Error::InvalidProblem("all weights are zero".into()));
        }
        for p in FitParam::ALL {
            let (lo, hi) = self.bounds[p.index()];
            let v = self.initial_guess.get(p);
            if !(lo <= hi) {
                return Err(Error::InvalidProblem(format!("{p}: empty bounds [{lo}, {hi}]")));
            }
            if self.free.contains(&p) && !(lo..=hi).contains(&v) {
                return Err(Error::InvalidProblem(format!("{p}: guess {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    fn reference(&self) -> f64 {
        self.initial_guess.omega_c
    }

    fn free_sorted(&self) -> Vec<FitParam> {
        let mut f = self.free.clone();
        f.sort();
        f.dedup();
        f
    }

    // internal coordinates: energies relative to the reference
    fn to_internal(&self, p: FitParam, v: f64) -> f64 {
        if p.is_energy() {
            v - self.reference()
        } else {
            v
        }
    }

    fn params_at(&self, free: &[FitParam], x: &[f64]) -> ModelParams {
        let mut m = self.initial_guess;
        for (p, v) in free.iter().zip(x) {
            m.set(*p, if p.is_energy() { v + self.reference() } else { *v });
        }
        m
    }

    /// Number of residual entries.
    pub fn len(&self) -> usize {
        self.intensity.as_ref().map_or(0, Spectrum::len) + self.phase.as_ref().map_or(0, Spectrum::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Weighted `model - observed`, intensity block first, then phase.
pub fn residuals(params: &ModelParams, problem: &FitProblem) -> Result<Vec<f64>> {
    let model = ForwardModel::new(params, problem.coupled, problem.reference())?;
    let mut out = Vec::with_capacity(problem.len());
    if let Some(s) = &problem.intensity {
        for ((w, obs), wt) in s.iter().zip(&problem.intensity_weights) {
            out.push(if *wt == 0.0 {
                0.0
            } else {
                wt * (model.intensity(w)? - obs)
            });
        }
    }
    if let Some(s) = &problem.phase {
        for ((w, obs), wt) in s.iter().zip(&problem.phase_weights) {
            out.push(if *wt == 0.0 {
                0.0
            } else {
                wt * wrap(model.phase(w)? - obs)
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    /// Weighted sum of squared residuals.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    pub gradient_norm: f64,
    /// Per free parameter, in [`FitParam::ALL`] order; infinite at a bound.
    pub std_errors: Vec<(FitParam, f64)>,
    pub covariance_condition: f64,
    /// Objective after each accepted step.
    pub history: Vec<f64>,
}

impl FitResult {
    pub fn std_error(&self, p: FitParam) -> Option<f64> {
        self.std_errors.iter().find(|(q, _)| *q == p).map(|(_, e)| *e)
    }
}

pub fn fit(problem: &FitProblem) -> Result<FitResult> {
    problem.validate()?;
    let free = problem.free_sorted();
    let x0: Vec<f64> = free
        .iter()
        .map(|p| problem.to_internal(*p, problem.initial_guess.get(*p)))
        .collect();
    let lo: Vec<f64> = free
        .iter()
        .map(|p| problem.to_internal(*p, problem.bounds[p.index()].0))
        .collect();
    let hi: Vec<f64> = free
        .iter()
        .map(|p| problem.to_internal(*p, problem.bounds[p.index()].1))
        .collect();
    let objective = |x: &[f64]| residuals(&problem.params_at(&free, x), problem);
    let out = lm::minimize(objective, &x0, &lo, &hi, &problem.config)?;
    let (std_errors, covariance_condition) = standard_errors(&out, &free, &lo, &hi);
    Ok(FitResult {
        params: problem.params_at(&free, &out.x),
        residual_norm: out.objective,
        iterations: out.iterations,
        converged: out.converged(),
        termination: out.termination,
        gradient_norm: out.gradient_norm,
        std_errors: free.iter().copied().zip(std_errors).collect(),
        covariance_condition,
        history: out.history,
    })
}

fn standard_errors(out: &LmOutcome, free: &[FitParam], lo: &[f64], hi: &[f64]) -> (Vec<f64>, f64) {
    let n = free.len();
    let m = out.residuals.len();
    let dof = m.saturating_sub(n).max(1) as f64;
    let variance = out.objective / dof;
    let jtj = out.jacobian.tr_mul(&out.jacobian);
    let condition = condition_number(&jtj);
    let cov = damped_inverse(&jtj);
    let errors = (0..n)
        .map(|j| {
            if out.x[j] <= lo[j] || out.x[j] >= hi[j] {
                f64::INFINITY
            } else {
                (cov[(j, j)].max(0.0) * variance).sqrt()
            }
        })
        .collect();
    (errors, condition)
}

/// Inverse of `J'J` with a relative floor on the diagonal.
fn damped_inverse(jtj: &DMatrix<f64>) -> DMatrix<f64> {
    let n = jtj.nrows();
    let max_diag = (0..n).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
    let mut a = jtj.clone();
    for i in 0..n {
        a[(i, i)] += (max_diag * 1e-14).max(1e-300);
    }
    a.cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| DMatrix::from_element(n, n, f64::INFINITY))
}

/// Ratio of extreme eigenvalues of the column-scaled normal matrix.
fn condition_number(jtj: &DMatrix<f64>) -> f64 {
    let n = jtj.nrows();
    let d: Vec<f64> = (0..n).map(|i| jtj[(i, i)].sqrt()).collect();
    if d.contains(&0.0) {
        return f64::INFINITY;
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| jtj[(i, j)] / (d[i] * d[j]));
    let eig = SymmetricEigen::new(scaled).eigenvalues;
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Standard errors of a converged fit, recomputed at the fitted parameters.
pub fn uncertainty(result: &FitResult, problem: &FitProblem) -> Result<Vec<(FitParam, f64)>> {
    if !result.converged {
        return Err(Error::InvalidProblem("standard errors need a converged fit".into()));
    }
    problem.validate()?;
    let free = problem.free_sorted();
    let x: Vec<f64> = free
        .iter()
        .map(|p| problem.to_internal(*p, result.params.get(*p)))
        .collect();
    let lo: Vec<f64> = free
        .iter()
        .map(|p| problem.to_internal(*p, problem.bounds[p.index()].0))
        .collect();
    let hi: Vec<f64> = free
        .iter()
        .map(|p| problem.to_internal(*p, problem.bounds[p.index()].1))
        .collect();
    let f = |x: &[f64]| residuals(&problem.params_at(&free, x), problem);
    let r = f(&x)?;
    let jacobian = lm::numeric_jacobian(&f, &x, &lo, &hi, problem.config.rel_step, r.len())?;
    let out = LmOutcome {
        objective: r.iter().map(|v| v * v).sum(),
        x,
        residuals: r,
        jacobian,
        gradient_norm: 0.0,
        iterations: 0,
        termination: result.termination,
        history: Vec::new(),
    };
    let (errors, _) = standard_errors(&out, &free, &lo, &hi);
    Ok(free.into_iter().zip(errors).collect())
}

/// Fit from each guess in turn and keep the lowest residual norm.
pub fn fit_best_of(problem: &FitProblem, guesses: &[ModelParams]) -> Result<FitResult> {
    let mut best: Option<FitResult> = None;
    for guess in guesses {
        let mut p = problem.clone();
        p.initial_guess = *guess;
        let r = fit(&p)?;
        if best.as_ref().is_none_or(|b| r.residual_norm < b.residual_norm) {
            best = Some(r);
        }
    }
    best.ok_or_else(|| Error::InvalidProblem("no initial guesses".into()))
}

/// Fitted Lorentzian dip `baseline - depth / (1 + (2 (w - center) / fwhm)^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzianDip {
    pub center: f64,
    pub fwhm: f64,
    pub depth: f64,
    pub baseline: f64,
}

impl LorentzianDip {
    pub fn eval(&self, omega: f64) -> f64 {
        let x = 2.0 * (omega - self.center) / self.fwhm;
        self.baseline - self.depth / (1.0 + x * x)
    }

    pub fn q(&self) -> f64 {
        self.center / self.fwhm
    }
}

/// Four-parameter Lorentzian fit of a single dip.
pub fn fit_lorentzian_dip(s: &Spectrum, center_guess: f64) -> Result<LorentzianDip> {
    let omega = s.omega();
    let y = s.values();
    let visibility = dip_visibility(s)?;
    let (imin, ymin) = s.min();
    let baseline0 = ymin / (1.0 - visibility).max(1e-12);
    let depth0 = baseline0 - ymin;
    if !(depth0 > 0.0) {
        return Err(Error::NoDip {
            depth: depth0,
            scatter: 0.0,
        });
    }
    let half = baseline0 - depth0 / 2.0;
    let left = (0..imin).rev().find(|&i| y[i] > half).map_or(omega[0], |i| omega[i]);
    let right = (imin..y.len())
        .find(|&i| y[i] > half)
        .map_or(*omega.last().unwrap(), |i| omega[i]);
    let min_step = omega.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let fwhm0 = (right - left).max(2.0 * min_step);
    let span = omega.last().unwrap() - omega[0];

    // center fitted as an offset from the guess
    let model = |x: &[f64]| -> Result<Vec<f64>> {
        let dip = LorentzianDip {
            center: center_guess + x[0],
            fwhm: x[1],
            depth: x[2],
            baseline: x[3],
        };
        Ok(omega.iter().zip(y).map(|(w, v)| dip.eval(*w) - v).collect())
    };
    let x0 = [omega[imin] - center_guess, fwhm0, depth0, baseline0];
    // a dip narrower than the grid spacing is not a resolved linewidth
    let lo = [omega[0] - center_guess, min_step, 0.0, 0.0];
    let hi = [
        *omega.last().unwrap() - center_guess,
        10.0 * span,
        10.0 * baseline0,
        10.0 * baseline0,
    ];
    let out = lm::minimize(model, &x0, &lo, &hi, &LmConfig::default())?;
    let scatter = (out.objective / y.len() as f64).sqrt();
    let depth = out.x[2];
    if depth < 3.0 * scatter || depth <= 0.0 || out.x[1] < 3.0 * min_step {
        return Err(Error::NoDip { depth, scatter });
    }
    Ok(LorentzianDip {
        center: center_guess + out.x[0],
        fwhm: out.x[1],
        depth,
        baseline: out.x[3],
    })
}

pub fn estimate_q_from_linewidth(s: &Spectrum, omega_c_guess: f64) -> Result<f64> {
    fit_lorentzian_dip(s, omega_c_guess).map(|d| d.q())
}

/// Half the separation of the two deepest local minima.
pub fn estimate_g_from_splitting(s: &Spectrum) -> Result<f64> {
    let minima = s.local_minima();
    if minima.len() < 2 {
        return Err(Error::UnresolvedSplitting(minima.len()));
    }
    let depth_at = |w: f64| {
        let i = s.omega().partition_point(|x| *x < w).min(s.len() - 1);
        let j = i.saturating_sub(1);
        s.values()[i].min(s.values()[j])
    };
    let mut ranked: Vec<f64> = minima;
    ranked.sort_by(|a, b| depth_at(*a).total_cmp(&depth_at(*b)).then(a.total_cmp(b)));
    Ok((ranked[0] - ranked[1]).abs() / 2.0)
}
