//! Two-arm polarization interferometer: the H arm reflects from the pillar,
//! the V arm from planar material next to it. Intensities in the H/V basis
//! give |r|^2 and |beta|^2; the D/A difference carries the relative phase.
//!
//! Light that is not mode-matched to the cavity reflects without touching it
//! and adds a coherent, frequency-flat field to the collected signal.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scattering::{principal_phase, reflection_amplitude, ComplexAmplitude, QdState, SystemParams};
use crate::spectrum::{Grid, Spectrum};

/// Intensities in the four analysis channels at one probe energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRecord {
    pub omega: f64,
    pub h: f64,
    pub v: f64,
    pub d: f64,
    pub a: f64,
}

/// Reference reflection and compensator setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceArm {
    beta: Complex64,
    sb_offset: f64,
}

impl ReferenceArm {
    pub fn new(beta: Complex64, sb_offset: f64) -> Result<Self> {
        let m = beta.norm();
        if !(m.is_finite() && m > 0.0 && m <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "beta",
                value: m,
                reason: "|beta| must lie in (0, 1]",
            });
        }
        if !sb_offset.is_finite() {
            return Err(Error::InvalidParameter {
                name: "sb_offset",
                value: sb_offset,
                reason: "must be finite",
            });
        }
        Ok(Self { beta, sb_offset })
    }

    /// Compensator set so that D - A vanishes for an in-phase (far-detuned) signal.
    pub fn calibrated(beta: Complex64) -> Result<Self> {
        Self::new(beta, beta.arg() - FRAC_PI_2)
    }

    pub fn beta(&self) -> Complex64 {
        self.beta
    }

    pub fn sb_offset(&self) -> f64 {
        self.sb_offset
    }

    /// Phase that `asin((d - a) / 2 sqrt(hv))` reads for a zero-phase signal.
    pub fn bias(&self) -> f64 {
        self.sb_offset - self.beta.arg() + FRAC_PI_2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundModel {
    b: f64,
    background_phase: f64,
}

impl BackgroundModel {
    pub fn new(b: f64, background_phase: f64) -> Result<Self> {
        if !(b.is_finite() && (0.0..1.0).contains(&b)) {
            return Err(Error::InvalidParameter {
                name: "background",
                value: b,
                reason: "must lie in [0, 1)",
            });
        }
        if !background_phase.is_finite() {
            return Err(Error::InvalidParameter {
                name: "background_phase",
                value: background_phase,
                reason: "must be finite",
            });
        }
        Ok(Self { b, background_phase })
    }

    /// Zero-phase background of intensity fraction `b`.
    pub fn in_phase(b: f64) -> Result<Self> {
        Self::new(b, 0.0)
    }

    pub fn none() -> Self {
        Self {
            b: 0.0,
            background_phase: 0.0,
        }
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn background_phase(&self) -> f64 {
        self.background_phase
    }

    fn field(&self) -> Complex64 {
        Complex64::from_polar(self.b.sqrt(), self.background_phase)
    }
}

pub fn simulate_channels(omega: f64, r: ComplexAmplitude, reference: &ReferenceArm) -> ChannelRecord {
    let e_h = r * Complex64::from_polar(1.0, reference.sb_offset);
    let e_v = reference.beta;
    ChannelRecord {
        omega,
        h: e_h.norm_sqr(),
        v: e_v.norm_sqr(),
        d: (e_h + e_v).norm_sqr() / 2.0,
        a: (e_h - e_v).norm_sqr() / 2.0,
    }
}

/// Extracted phase, with `clamped` set when the normalized fringe exceeded 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseReading {
    pub phase: f64,
    pub clamped: bool,
}

const FRINGE_SLACK: f64 = 1e-9;

/// Phase from one record with a known compensator bias. Valid for true
/// phases in (-pi/2, pi/2).
pub fn extract_phase_with_bias(rec: &ChannelRecord, bias: f64) -> Result<PhaseReading> {
    if !(rec.h > 0.0 && rec.v > 0.0) {
        return Err(Error::InvalidSpectrum(format!(
            "channel record at {} needs h > 0 and v > 0 (h = {}, v = {})",
            rec.omega, rec.h, rec.v
        )));
    }
    let x = (rec.d - rec.a) / (2.0 * (rec.h * rec.v).sqrt());
    let clamped = x.abs() > 1.0 + FRINGE_SLACK;
    if clamped {
        log::warn!(
            "inconsistent channel record at {} ueV: normalized fringe {x}",
            rec.omega
        );
    }
    Ok(PhaseReading {
        phase: x.clamp(-1.0, 1.0).asin() - bias,
        clamped,
    })
}

pub fn extract_phase(rec: &ChannelRecord, reference: &ReferenceArm) -> Result<PhaseReading> {
    extract_phase_with_bias(rec, reference.bias())
}

/// Compensator bias estimated from the first and last records, where the
/// signal is taken to be far detuned (zero phase).
pub fn calibrate_bias(records: &[ChannelRecord]) -> Result<f64> {
    let (first, last) = match (records.first(), records.last()) {
        (Some(f), Some(l)) if records.len() >= 2 => (f, l),
        _ => return Err(Error::InvalidSpectrum("need at least 2 channel records".into())),
    };
    let lo = extract_phase_with_bias(first, 0.0)?.phase;
    let hi = extract_phase_with_bias(last, 0.0)?.phase;
    Ok((lo + hi) / 2.0)
}

pub fn apply_background(r: ComplexAmplitude, bg: &BackgroundModel) -> ComplexAmplitude {
    bg.field() + (1.0 - bg.b).sqrt() * r
}

const MAX_AMPLIFICATION: f64 = 1e6;

pub fn invert_background(m: ComplexAmplitude, bg: &BackgroundModel) -> Result<ComplexAmplitude> {
    let amplification = 1.0 / (1.0 - bg.b).sqrt();
    if !(amplification <= MAX_AMPLIFICATION) {
        return Err(Error::BackgroundNotInvertible { b: bg.b, amplification });
    }
    Ok((m - bg.field()) * amplification)
}

/// Measured amplitude: cavity reflection diluted by the background.
pub fn measured_amplitude(
    p: &SystemParams,
    qd: &QdState,
    bg: &BackgroundModel,
    omega: f64,
) -> Result<ComplexAmplitude> {
    reflection_amplitude(p, qd, omega).map(|r| apply_background(r, bg))
}

pub fn measured_intensity_spectrum(
    p: &SystemParams,
    qd: &QdState,
    bg: &BackgroundModel,
    grid: &Grid,
) -> Result<Spectrum> {
    Spectrum::sample(grid, |w| measured_amplitude(p, qd, bg, w).map(|m| m.norm_sqr()))
}

pub fn measured_phase_spectrum(p: &SystemParams, qd: &QdState, bg: &BackgroundModel, grid: &Grid) -> Result<Spectrum> {
    Spectrum::sample(grid, |w| measured_amplitude(p, qd, bg, w).map(principal_phase))
}

/// Channel table for the measured signal over `grid`.
pub fn channel_table(
    p: &SystemParams,
    qd: &QdState,
    bg: &BackgroundModel,
    reference: &ReferenceArm,
    grid: &Grid,
) -> Result<Vec<ChannelRecord>> {
    grid.omegas()
        .into_iter()
        .map(|w| measured_amplitude(p, qd, bg, w).map(|m| simulate_channels(w, m, reference)))
        .collect()
}

/// Per-row phases with the given bias, plus the number of clamped rows.
pub fn extract_phase_spectrum(records: &[ChannelRecord], bias: f64) -> Result<(Spectrum, usize)> {
    let mut clamped = 0;
    let mut omega = Vec::with_capacity(records.len());
    let mut phases = Vec::with_capacity(records.len());
    for rec in records {
        let reading = extract_phase_with_bias(rec, bias)?;
        clamped += reading.clamped as usize;
        omega.push(rec.omega);
        phases.push(reading.phase);
    }
    Ok((Spectrum::new(omega, phases)?, clamped))
}

/// Fractional dip depth `1 - min / baseline`, baseline being the median of the
/// outer 10% of points on each side of the grid.
pub fn dip_visibility(s: &Spectrum) -> Result<f64> {
    let n = s.len();
    if n < 5 {
        return Err(Error::InvalidSpectrum(format!(
            "visibility needs at least 5 points, got {n}"
        )));
    }
    let edge = n.div_ceil(10).max(1);
    let y = s.values();
    let mut outer: Vec<f64> = y[..edge].iter().chain(&y[n - edge..]).copied().collect();
    outer.sort_by(f64::total_cmp);
    let m = outer.len();
    let baseline = if m % 2 == 1 {
        outer[m / 2]
    } else {
        (outer[m / 2 - 1] + outer[m / 2]) / 2.0
    };
    if !(baseline > 0.0) {
        return Err(Error::NonPositiveBaseline(baseline));
    }
    Ok(1.0 - s.min().1 / baseline)
}

/// Default window for synthesized visibility: `omega_c ± 10 (k + ks)`.
pub fn visibility_grid(p: &SystemParams) -> Grid {
    let half = 10.0 * p.kappa_total();
    Grid::centered(p.omega_c(), half, 4001).expect("kappa_total > 0 gives a valid window")
}

pub fn infer_background_fraction(observed_visibility: f64, p: &SystemParams, qd: &QdState) -> Result<f64> {
    infer_background_fraction_on(observed_visibility, p, qd, &visibility_grid(p))
}

/// Background fraction `b` whose diluted spectrum has the observed visibility,
/// by bisection to 1e-6 in `b`.
pub fn infer_background_fraction_on(
    observed_visibility: f64,
    p: &SystemParams,
    qd: &QdState,
    grid: &Grid,
) -> Result<f64> {
    if !(observed_visibility > 0.0 && observed_visibility < 1.0) {
        return Err(Error::InvalidParameter {
            name: "observed_visibility",
            value: observed_visibility,
            reason: "must lie in (0, 1)",
        });
    }
    let amps = crate::scattering::amplitude_spectrum(p, qd, grid)?;
    let visibility = |b: f64| -> Result<f64> {
        let bg = BackgroundModel::in_phase(b)?;
        dip_visibility(&amps.map(|_, r| apply_background(*r, &bg).norm_sqr()))
    };
    let intrinsic = visibility(0.0)?;
    if intrinsic < observed_visibility {
        return Err(Error::NoBackgroundSolution {
            observed: observed_visibility,
            intrinsic,
        });
    }
    let (mut lo, mut hi) = (0.0, 1.0 - 1e-12);
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if visibility(mid)? > observed_visibility {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Multiply each value by `1 + sigma * N(0, 1)` using a seeded generator.
pub fn with_multiplicative_noise(s: &Spectrum, sigma: f64, seed: u64) -> Spectrum {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    s.map(|_, v| v * (1.0 + sigma * normal.sample(&mut rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn cal(beta: f64) -> ReferenceArm {
        ReferenceArm::calibrated(Complex64::new(beta, 0.0)).unwrap()
    }

    #[test]
    fn zero_phase_gives_balanced_diagonals() {
        let rec = simulate_channels(0.0, Complex64::new(0.8, 0.0), &cal(0.9));
        assert!((rec.d - rec.a).abs() < 1e-15);
        assert_eq!(extract_phase(&rec, &cal(0.9)).unwrap().phase, 0.0);
    }

    #[test]
    fn quadrature_fringe() {
        let s = 0.7;
        let r = Complex64::new(0.0, s);
        let beta = Complex64::new(s, 0.0);
        let rec = simulate_channels(0.0, r, &ReferenceArm::new(beta, 0.0).unwrap());
        assert!((rec.d - rec.a).abs() < 1e-15);
        // -pi/2 rotates r onto beta: all light exits D, d - a = 2 s^2 with d, a = |E_H +- E_V|^2 / 2
        let rec = simulate_channels(0.0, r, &ReferenceArm::new(beta, -FRAC_PI_2).unwrap());
        assert!((rec.d - rec.a - 2.0 * s * s).abs() < 1e-15);
        assert!(rec.a < 1e-15);
    }

    #[test]
    fn channel_table_matches_expanded_algebra() {
        let p = SystemParams::measured_pillar();
        let qd = QdState::resonant(&p);
        let grid = Grid::centered(p.omega_c(), 100.0, 2001).unwrap();
        let reference = cal(0.9);
        let table = channel_table(&p, &qd, &BackgroundModel::none(), &reference, &grid).unwrap();
        assert_eq!(table.len(), 2001);
        for rec in &table {
            let r = reflection_amplitude(&p, &qd, rec.omega).unwrap();
            // expanded: |x + y|^2 / 2 = (|x|^2 + |y|^2 + 2 Re(x conj y)) / 2 with x = r e^{i sb}
            let (c, s) = (reference.sb_offset().cos(), reference.sb_offset().sin());
            let (xr, xi) = (r.re * c - r.im * s, r.re * s + r.im * c);
            let h = xr * xr + xi * xi;
            let v = 0.81;
            let cross = xr * 0.9;
            assert!((rec.h - h).abs() < 1e-14);
            assert!((rec.v - v).abs() < 1e-14);
            assert!((rec.d - (h + v + 2.0 * cross) / 2.0).abs() < 1e-14);
            assert!((rec.a - (h + v - 2.0 * cross) / 2.0).abs() < 1e-14);
            assert!((rec.d + rec.a - rec.h - rec.v).abs() < 1e-12);
        }
    }

    #[test]
    fn first_order_sensitivity() {
        let mut rec = simulate_channels(0.0, Complex64::new(0.9, 0.0), &cal(0.9));
        rec.d += 0.01 * 2.0 * (rec.h * rec.v).sqrt();
        let err = extract_phase(&rec, &cal(0.9)).unwrap().phase;
        assert!(err > 0.0 && err <= 0.011, "{err}");
    }

    #[test]
    fn inconsistent_record_is_clamped_and_flagged() {
        let rec = ChannelRecord {
            omega: 0.0,
            h: 1.0,
            v: 1.0,
            d: 3.0,
            a: 0.0,
        };
        let reading = extract_phase_with_bias(&rec, 0.0).unwrap();
        assert!(reading.clamped);
        assert!((reading.phase - FRAC_PI_2).abs() < 1e-15);
        let dark = ChannelRecord { h: 0.0, ..rec };
        assert!(extract_phase_with_bias(&dark, 0.0).is_err());
    }

    #[test]
    fn bias_calibration_from_edges() {
        let p = SystemParams::measured_pillar();
        let qd = QdState::resonant(&p);
        let grid = Grid::centered(p.omega_c(), 2000.0, 501).unwrap();
        let reference = ReferenceArm::new(Complex64::new(0.9, 0.0), -FRAC_PI_2 + 0.3).unwrap();
        let table = channel_table(&p, &qd, &BackgroundModel::none(), &reference, &grid).unwrap();
        let bias = calibrate_bias(&table).unwrap();
        assert!((bias - 0.3).abs() < 1e-4, "{bias}");
    }

    #[test]
    fn background_limits() {
        let r = Complex64::new(0.3, -0.2);
        assert_eq!(apply_background(r, &BackgroundModel::none()), r);
        let bg = BackgroundModel::new(1.0 - 1e-12, 0.4).unwrap();
        let m = apply_background(r, &bg);
        assert!((m.norm() - 1.0).abs() < 1e-5);
        assert!((m.arg() - 0.4).abs() < 1e-5);
        assert!(BackgroundModel::in_phase(1.0).is_err());
        assert!(BackgroundModel::in_phase(-0.1).is_err());
    }

    #[test]
    fn background_dilutes_conditional_phase() {
        // intrinsic phase 0.12 with the fitted pillar's resonant |r|, seen through b = 0.7
        let p = SystemParams::measured_pillar();
        let modulus = reflection_amplitude(&p, &QdState::resonant(&p), p.omega_c())
            .unwrap()
            .norm();
        let r = Complex64::from_polar(modulus, 0.12);
        let measured = apply_background(r, &BackgroundModel::in_phase(0.7).unwrap()).arg();
        assert!((measured - 0.05).abs() < 0.02, "{measured}");
    }

    #[test]
    fn invert_refuses_huge_amplification() {
        let bg = BackgroundModel::in_phase(1.0 - 1e-13).unwrap();
        assert!(matches!(
            invert_background(Complex64::new(1.0, 0.0), &bg),
            Err(Error::BackgroundNotInvertible { .. })
        ));
        let r = Complex64::new(0.2, 0.1);
        assert_eq!(invert_background(r, &BackgroundModel::none()).unwrap(), r);
    }

    #[test]
    fn visibility_basics() {
        let flat = Spectrum::new((0..20).map(f64::from).collect(), vec![0.8; 20]).unwrap();
        assert_eq!(dip_visibility(&flat).unwrap(), 0.0);
        let short = Spectrum::new(vec![0.0, 1.0, 2.0, 3.0], vec![1.0; 4]).unwrap();
        assert!(dip_visibility(&short).is_err());
        let dark = Spectrum::new((0..10).map(f64::from).collect(), vec![0.0; 10]).unwrap();
        assert!(matches!(dip_visibility(&dark), Err(Error::NonPositiveBaseline(_))));
    }

    #[test]
    fn intrinsic_empty_cavity_visibility() {
        // 1 - 0.8233 on resonance, baseline a hair below 1 at +-10 (k + ks)
        let p = SystemParams::measured_pillar();
        let s =
            measured_intensity_spectrum(&p, &QdState::empty(), &BackgroundModel::none(), &visibility_grid(&p)).unwrap();
        let v = dip_visibility(&s).unwrap();
        assert!((v - (1.0 - 0.823_258_448_741_074_3)).abs() < 0.005, "{v}");
    }

    #[test]
    fn background_fraction_round_trip() {
        let p = SystemParams::measured_pillar();
        let qd = QdState::empty();
        let grid = visibility_grid(&p);
        let b = infer_background_fraction(0.15, &p, &qd).unwrap();
        let s = measured_intensity_spectrum(&p, &qd, &BackgroundModel::in_phase(b).unwrap(), &grid).unwrap();
        assert!((dip_visibility(&s).unwrap() - 0.15).abs() < 1e-5);
        // intrinsic visibility maps back to b = 0
        let v0 =
            dip_visibility(&measured_intensity_spectrum(&p, &qd, &BackgroundModel::none(), &grid).unwrap()).unwrap();
        assert!(infer_background_fraction(v0, &p, &qd).unwrap() < 1e-6);
        // deeper than intrinsic is impossible
        assert!(matches!(
            infer_background_fraction(0.45, &p, &qd),
            Err(Error::NoBackgroundSolution { .. })
        ));
    }

    #[test]
    fn deeper_dip_needs_less_background() {
        // kappa_s = 4 kappa at the fitted total rate, deep enough for both observations
        let p = SystemParams::new(9.4, 5.18, 20.72, 5.0, 1_333_596.0).unwrap();
        let qd = QdState::empty();
        let b45 = infer_background_fraction(0.45, &p, &qd).unwrap();
        let b15 = infer_background_fraction(0.15, &p, &qd).unwrap();
        assert!(b45 < b15, "{b45} {b15}");
    }

    #[test]
    fn noise_is_seeded() {
        let s = Spectrum::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 1.0]).unwrap();
        assert_eq!(
            with_multiplicative_noise(&s, 0.01, 7),
            with_multiplicative_noise(&s, 0.01, 7)
        );
        assert_ne!(
            with_multiplicative_noise(&s, 0.01, 7),
            with_multiplicative_noise(&s, 0.01, 8)
        );
    }

    fn amplitude() -> impl Strategy<Value = Complex64> {
        (1e-3..1.0f64, -FRAC_PI_2 + 1e-3..FRAC_PI_2 - 1e-3).prop_map(|(m, phi)| Complex64::from_polar(m, phi))
    }

    proptest! {
        #[test]
        fn phase_round_trip(r in amplitude(), beta in 0.05..1.0f64, beta_arg in -PI..PI) {
            let reference = ReferenceArm::calibrated(Complex64::from_polar(beta, beta_arg)).unwrap();
            let rec = simulate_channels(0.0, r, &reference);
            prop_assert!((rec.d + rec.a - rec.h - rec.v).abs() <= 1e-12);
            prop_assert!(rec.h >= 0.0 && rec.v >= 0.0 && rec.d >= 0.0 && rec.a >= 0.0);
            let got = extract_phase(&rec, &reference).unwrap();
            prop_assert!(!got.clamped);
            prop_assert!((got.phase - r.arg()).abs() < 1e-9);
        }

        #[test]
        fn background_round_trip(r in amplitude(), b in 0.0..0.99f64, theta in -PI..PI) {
            let bg = BackgroundModel::new(b, theta).unwrap();
            let back = invert_background(apply_background(r, &bg), &bg).unwrap();
            prop_assert!((back - r).norm() <= 1e-12);
        }

        #[test]
        fn background_shrinks_phase(r in amplitude(), b in 1e-6..0.999f64) {
            let m = apply_background(r, &BackgroundModel::in_phase(b).unwrap());
            prop_assert!(m.arg().abs() <= r.arg().abs() + 1e-15);
        }

    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn visibility_decreases_with_background(b1 in 0.0..0.95f64, db in 0.01..0.04f64, ratio in 0.05..0.5f64) {
            // undercoupled only: an overcoupled dip first deepens as the background cancels r < 0
            let p = SystemParams::new(0.0, 26.0 * ratio, 26.0 * (1.0 - ratio), 5.0, 1_000.0).unwrap();
            let grid = visibility_grid(&p);
            let vis = |b: f64| {
                let bg = BackgroundModel::in_phase(b).unwrap();
                dip_visibility(&measured_intensity_spectrum(&p, &QdState::empty(), &bg, &grid).unwrap()).unwrap()
            };
            prop_assert!(vis(b1 + db) <= vis(b1) + 1e-12);
        }

        #[test]
        fn visibility_to_background_is_monotone(v1 in 0.02..0.5f64, dv in 0.01..0.1f64) {
            let p = SystemParams::new(9.4, 5.18, 20.72, 5.0, 1_333_596.0).unwrap();
            let qd = QdState::empty();
            let lo = infer_background_fraction(v1, &p, &qd).unwrap();
            let hi = infer_background_fraction(v1 + dv, &p, &qd).unwrap();
            prop_assert!(hi < lo);
        }
    }
}
