//! Complex reflection amplitude of a two-level emitter coupled to a
//! one-sided cavity, and the quantities derived from it.
//!
//! All energies and rates are in ueV with hbar = 1, so energy and angular
//! frequency are interchangeable. The amplitude seen by a probe at `omega` is
//!
//! ```text
//! r(w) = 1 - k (i(wq - w) + y/2) / [ (i(wq - w) + y/2)(i(wc - w) + (k + ks)/2) + g^2 ]
//! ```
//!
//! with top-mirror rate `k`, other-loss rate `ks`, emitter linewidth `y`
//! (entered as `y/2`, exactly as written above) and coupling `g`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectrum::{Grid, Spectrum};

pub type ComplexAmplitude = Complex64;

const DENOMINATOR_FLOOR: f64 = 1e-300;

/// Coupling, loss rates and cavity energy of one pillar (ueV).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    g: f64,
    kappa_top: f64,
    kappa_side: f64,
    gamma: f64,
    omega_c: f64,
}

fn check(name: &'static str, value: f64, ok: bool, reason: &'static str) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be finite",
        });
    }
    if !ok {
        return Err(Error::InvalidParameter { name, value, reason });
    }
    Ok(())
}

impl SystemParams {
    pub fn new(g: f64, kappa_top: f64, kappa_side: f64, gamma: f64, omega_c: f64) -> Result<Self> {
        check("g", g, g >= 0.0, "must be >= 0")?;
        check("kappa_top", kappa_top, kappa_top > 0.0, "must be > 0")?;
        check("kappa_side", kappa_side, kappa_side >= 0.0, "must be >= 0")?;
        check("gamma", gamma, gamma >= 0.0, "must be >= 0")?;
        check("omega_c", omega_c, omega_c > 0.0, "must be > 0")?;
        Ok(Self {
            g,
            kappa_top,
            kappa_side,
            gamma,
            omega_c,
        })
    }

    /// The fitted pillar: g = 9.4, kappa = 1.2, kappa_s = 24.7, gamma = 5 ueV,
    /// cavity at 1333.596 meV.
    pub fn measured_pillar() -> Self {
        Self {
            g: 9.4,
            kappa_top: 1.2,
            kappa_side: 24.7,
            gamma: 5.0,
            omega_c: 1_333_596.0,
        }
    }

    pub fn g(&self) -> f64 {
        self.g
    }
    pub fn kappa_top(&self) -> f64 {
        self.kappa_top
    }
    pub fn kappa_side(&self) -> f64 {
        self.kappa_side
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn omega_c(&self) -> f64 {
        self.omega_c
    }

    /// Total cavity decay rate `kappa + kappa_s`.
    pub fn kappa_total(&self) -> f64 {
        self.kappa_top + self.kappa_side
    }

    pub fn with_g(self, g: f64) -> Result<Self> {
        Self::new(g, self.kappa_top, self.kappa_side, self.gamma, self.omega_c)
    }
    pub fn with_kappa_top(self, kappa_top: f64) -> Result<Self> {
        Self::new(self.g, kappa_top, self.kappa_side, self.gamma, self.omega_c)
    }
    pub fn with_kappa_side(self, kappa_side: f64) -> Result<Self> {
        Self::new(self.g, self.kappa_top, kappa_side, self.gamma, self.omega_c)
    }
    pub fn with_gamma(self, gamma: f64) -> Result<Self> {
        Self::new(self.g, self.kappa_top, self.kappa_side, gamma, self.omega_c)
    }
    pub fn with_omega_c(self, omega_c: f64) -> Result<Self> {
        Self::new(self.g, self.kappa_top, self.kappa_side, self.gamma, omega_c)
    }

    /// Multiply g and all three rates by `factor`, leaving omega_c alone.
    pub fn scale_rates(self, factor: f64) -> Result<Self> {
        Self::new(
            self.g * factor,
            self.kappa_top * factor,
            self.kappa_side * factor,
            self.gamma * factor,
            self.omega_c,
        )
    }
}

/// Emitter transition energy, or an empty cavity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QdState {
    pub omega_qd: f64,
    pub coupled: bool,
}

impl QdState {
    pub fn coupled(omega_qd: f64) -> Result<Self> {
        check("omega_qd", omega_qd, omega_qd > 0.0, "must be > 0")?;
        Ok(Self {
            omega_qd,
            coupled: true,
        })
    }

    /// Emitter resonant with the cavity.
    pub fn resonant(p: &SystemParams) -> Self {
        Self {
            omega_qd: p.omega_c,
            coupled: true,
        }
    }

    pub fn empty() -> Self {
        Self {
            omega_qd: 0.0,
            coupled: false,
        }
    }
}

pub fn reflection_amplitude(p: &SystemParams, qd: &QdState, omega: f64) -> Result<ComplexAmplitude> {
    let cavity = Complex64::new(p.kappa_total() / 2.0, p.omega_c - omega);
    let (num, den) = if qd.coupled {
        let dot = Complex64::new(p.gamma / 2.0, qd.omega_qd - omega);
        (dot * p.kappa_top, dot * cavity + p.g * p.g)
    } else {
        // g = 0: the emitter factor cancels between numerator and denominator.
        (Complex64::new(p.kappa_top, 0.0), cavity)
    };
    let modulus = den.norm();
    if modulus < DENOMINATOR_FLOOR || !modulus.is_finite() {
        return Err(Error::DegenerateDenominator { omega, modulus });
    }
    Ok(Complex64::new(1.0, 0.0) - num / den)
}

pub fn reflectivity(p: &SystemParams, qd: &QdState, omega: f64) -> Result<f64> {
    reflection_amplitude(p, qd, omega).map(|r| r.norm_sqr())
}

/// Argument in (-pi, pi]; a zero amplitude has phase 0.
pub fn principal_phase(r: ComplexAmplitude) -> f64 {
    if r.re == 0.0 && r.im == 0.0 {
        log::warn!("phase of a zero amplitude is undefined; reporting 0");
        return 0.0;
    }
    let a = r.arg();
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

pub fn phase(p: &SystemParams, qd: &QdState, omega: f64) -> Result<f64> {
    reflection_amplitude(p, qd, omega).map(principal_phase)
}

/// Remove 2pi jumps by picking, at each step, the branch nearest the previous value.
pub fn unwrap_phase(phases: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phases.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for &raw in phases {
        if let Some(last) = prev {
            let candidate = raw + offset;
            let k = ((last - candidate) / (2.0 * PI)).round();
            offset += 2.0 * PI * k;
        }
        let v = raw + offset;
        out.push(v);
        prev = Some(v);
    }
    out
}

pub fn amplitude_spectrum(p: &SystemParams, qd: &QdState, grid: &Grid) -> Result<Spectrum<ComplexAmplitude>> {
    Spectrum::sample(grid, |w| reflection_amplitude(p, qd, w))
}

pub fn reflectivity_spectrum(p: &SystemParams, qd: &QdState, grid: &Grid) -> Result<Spectrum> {
    Spectrum::sample(grid, |w| reflectivity(p, qd, w))
}

/// Unwrapped phase over the grid, continuous from the first point.
pub fn unwrapped_phase_spectrum(p: &SystemParams, qd: &QdState, grid: &Grid) -> Result<Spectrum> {
    let amps = amplitude_spectrum(p, qd, grid)?;
    let wrapped: Vec<f64> = amps.values().iter().copied().map(principal_phase).collect();
    Spectrum::new(amps.omega().to_vec(), unwrap_phase(&wrapped))
}

/// Complex energies of the dressed states, eigenvalues of
/// `[[wq - i y/2, g], [g, wc - i (k + ks)/2]]`, ordered by real part then
/// imaginary part.
pub fn polariton_eigenvalues(p: &SystemParams, qd: &QdState) -> [Complex64; 2] {
    polariton_offsets(p, qd).map(|z| z + p.omega_c)
}

/// [`polariton_eigenvalues`] measured from `omega_c`, free of the large
/// absolute energy.
pub fn polariton_offsets(p: &SystemParams, qd: &QdState) -> [Complex64; 2] {
    let (g, detuning) = if qd.coupled {
        (p.g, qd.omega_qd - p.omega_c)
    } else {
        (0.0, 0.0)
    };
    let dot = Complex64::new(detuning, -p.gamma / 2.0);
    let cavity = Complex64::new(0.0, -p.kappa_total() / 2.0);
    let mean = (dot + cavity) / 2.0;
    let half_diff = (dot - cavity) / 2.0;
    let root = (half_diff * half_diff + g * g).sqrt();
    let mut e = [mean - root, mean + root];
    e.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    e
}

/// Real-part separation of the dressed states at zero detuning; 0 in weak coupling.
pub fn rabi_splitting(p: &SystemParams) -> f64 {
    let [lo, hi] = polariton_offsets(p, &QdState::resonant(p));
    let gap = hi.re - lo.re;
    // below the exceptional point the root is purely imaginary up to rounding
    let disc = p.g * p.g - (p.kappa_total() - p.gamma).powi(2) / 16.0;
    if disc <= 0.0 {
        0.0
    } else {
        gap
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingRegime {
    Strong,
    Weak,
}

/// Strong iff `g > (k + ks + y) / 4`.
pub fn coupling_regime(p: &SystemParams) -> CouplingRegime {
    if p.g > (p.kappa_top + p.kappa_side + p.gamma) / 4.0 {
        CouplingRegime::Strong
    } else {
        CouplingRegime::Weak
    }
}

pub fn q_factor(p: &SystemParams) -> f64 {
    p.omega_c / p.kappa_total()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const WC: f64 = 1_333_596.0;

    fn fitted() -> SystemParams {
        SystemParams::measured_pillar()
    }

    /// Real-arithmetic expansion, written out independently of `Complex64`.
    fn oracle(g: f64, k: f64, ks: f64, y: f64, wc: f64, wq: f64, w: f64) -> (f64, f64) {
        let (ar, ai) = (y / 2.0, wq - w);
        let (cr, ci) = ((k + ks) / 2.0, wc - w);
        let dr = ar * cr - ai * ci + g * g;
        let di = ar * ci + ai * cr;
        let (nr, ni) = (k * ar, k * ai);
        let m = dr * dr + di * di;
        (1.0 - (nr * dr + ni * di) / m, -(ni * dr - nr * di) / m)
    }

    #[test]
    fn empty_cavity_on_resonance() {
        let p = fitted();
        let r = reflection_amplitude(&p, &QdState::empty(), WC).unwrap();
        assert!((r.re - 23.5 / 25.9).abs() < 1e-15);
        assert_eq!(r.im, 0.0);
        assert!((r.re - 0.9073).abs() < 1e-4);
        assert_eq!(phase(&p, &QdState::empty(), WC).unwrap(), 0.0);
        // squared: 0.823...
        let refl = reflectivity(&p, &QdState::empty(), WC).unwrap();
        assert!((refl - 0.823_258_448_741_074_3).abs() < 1e-12);
    }

    #[test]
    fn lossless_overcoupled_mirror_flips_sign() {
        let p = SystemParams::new(0.0, 3.0, 0.0, 1.0, WC).unwrap();
        let r = reflection_amplitude(&p, &QdState::empty(), WC).unwrap();
        assert!((r + 1.0).norm() < 1e-15);
        assert!((phase(&p, &QdState::empty(), WC).unwrap() - PI).abs() < 1e-15);
    }

    #[test]
    fn critically_coupled_is_dark() {
        let p = SystemParams::new(0.0, 7.0, 7.0, 1.0, WC).unwrap();
        assert!(reflectivity(&p, &QdState::empty(), WC).unwrap() < 1e-30);
    }

    #[test]
    fn fitted_pillar_resonant_value() {
        // frozen from the real-arithmetic oracle: 0.975152192818984
        let p = fitted();
        let r = reflection_amplitude(&p, &QdState::resonant(&p), WC).unwrap();
        let (or, oi) = oracle(9.4, 1.2, 24.7, 5.0, WC, WC, WC);
        assert!((r.re - or).abs() < 1e-15 && (r.im - oi).abs() < 1e-15);
        assert!((r.re - 0.975_152_192_818_983_7).abs() < 1e-12);
    }

    #[test]
    fn design_point_reflectivity() {
        let p = fitted().with_kappa_top(37.6).unwrap();
        let refl = reflectivity(&p, &QdState::resonant(&p), WC).unwrap();
        assert!((refl - 0.188_821_054_531_959_7).abs() < 1e-12);
        assert!((refl - 0.19).abs() < 0.03);
    }

    #[test]
    fn far_detuned_limit() {
        let p = fitted();
        for qd in [QdState::resonant(&p), QdState::empty()] {
            for w in [WC + 1e6, WC - 1e6] {
                let r = reflection_amplitude(&p, &qd, w).unwrap();
                assert!((r - 1.0).norm() < 1e-4);
                assert!(phase(&p, &qd, w).unwrap().abs() < 1e-4);
            }
        }
    }

    #[test]
    fn degenerate_denominator_is_an_error() {
        let p = SystemParams::new(0.0, 1.0, 0.0, 0.0, WC).unwrap();
        let err = reflection_amplitude(&p, &QdState::resonant(&p), WC).unwrap_err();
        assert!(matches!(err, Error::DegenerateDenominator { .. }));
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(SystemParams::new(-1.0, 1.0, 1.0, 1.0, WC).is_err());
        assert!(SystemParams::new(1.0, 0.0, 1.0, 1.0, WC).is_err());
        assert!(SystemParams::new(1.0, 1.0, -1.0, 1.0, WC).is_err());
        assert!(SystemParams::new(1.0, 1.0, 1.0, f64::NAN, WC).is_err());
        assert!(SystemParams::new(1.0, 1.0, 1.0, 1.0, f64::INFINITY).is_err());
        assert!(QdState::coupled(0.0).is_err());
    }

    #[test]
    fn zero_amplitude_phase_is_zero() {
        assert_eq!(principal_phase(Complex64::new(0.0, 0.0)), 0.0);
        assert_eq!(principal_phase(Complex64::new(-1.0, -0.0)), PI);
    }

    #[test]
    fn unwrap_removes_jumps() {
        let raw: Vec<f64> = (0..50)
            .map(|i| i as f64 * 0.5)
            .map(|x| (x.sin()).atan2(x.cos()))
            .collect();
        let u = unwrap_phase(&raw);
        for (i, v) in u.iter().enumerate() {
            assert!((v - i as f64 * 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_cavity_max_phase_dense_scan() {
        // 1e6-point scan oracle over wc +- 500 ueV; peak is at |delta| = sqrt(k ks)/... found numerically
        let p = fitted();
        let n = 1_000_000;
        let max = (0..n)
            .map(|i| WC - 500.0 + 1000.0 * i as f64 / (n - 1) as f64)
            .map(|w| phase(&p, &QdState::empty(), w).unwrap().abs())
            .fold(0.0, f64::max);
        assert!((max - 0.048_602_128).abs() < 1e-6, "{max}");
    }

    #[test]
    fn eigenvalues_bare_when_uncoupled() {
        let p = fitted().with_g(0.0).unwrap();
        let qd = QdState::coupled(WC + 30.0).unwrap();
        let e = polariton_eigenvalues(&p, &qd);
        assert!((e[0] - Complex64::new(WC, -12.95)).norm() < 1e-9);
        assert!((e[1] - Complex64::new(WC + 30.0, -2.5)).norm() < 1e-9);
    }

    #[test]
    fn resonant_splitting_matches_closed_form() {
        let p = fitted();
        let closed = 2.0 * (9.4f64.powi(2) - (20.9f64 / 4.0).powi(2)).sqrt();
        assert!((closed - 15.628_099_692_541).abs() < 1e-9);
        assert!((rabi_splitting(&p) - closed).abs() < 1e-9);
        // generic route: nalgebra eigen-decomposition of the real 4x4 embedding
        let e = polariton_eigenvalues(&p, &QdState::resonant(&p));
        let m = nalgebra::DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 2.5, 9.4, 0.0, //
                -2.5, 0.0, 0.0, 9.4, //
                9.4, 0.0, 0.0, 12.95, //
                0.0, 9.4, -12.95, 0.0,
            ],
        );
        let mut re: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        assert!((re[3] - re[0] - closed).abs() < 1e-9, "{re:?}");
        assert!(((e[1].re - WC) - re[3]).abs() < 1e-8);
    }

    #[test]
    fn weak_coupling_has_no_splitting() {
        let p = fitted().with_g(4.0).unwrap();
        assert_eq!(rabi_splitting(&p), 0.0);
    }

    #[test]
    fn large_detuning_recovers_bare_energies() {
        let p = fitted();
        for delta in [1e3, 1e4, -1e4] {
            let qd = QdState::coupled(WC + delta).unwrap();
            let e = polariton_eigenvalues(&p, &qd);
            let (lo, hi) = if delta > 0.0 {
                (WC, WC + delta)
            } else {
                (WC + delta, WC)
            };
            let bound = p.g() * p.g() / delta.abs() * 1.01;
            assert!((e[0].re - lo).abs() <= bound);
            assert!((e[1].re - hi).abs() <= bound);
        }
    }

    #[test]
    fn regime_boundaries() {
        let p = fitted();
        assert_eq!(coupling_regime(&p), CouplingRegime::Strong);
        assert_eq!(coupling_regime(&p.with_g(7.725).unwrap()), CouplingRegime::Weak);
        assert_eq!(coupling_regime(&p.with_g(7.7).unwrap()), CouplingRegime::Weak);
        assert_eq!(coupling_regime(&p.with_g(0.0).unwrap()), CouplingRegime::Weak);
    }

    #[test]
    fn q_factor_values() {
        let p = fitted();
        assert!((q_factor(&p) - 51_490.193_050_193_05).abs() < 1e-6);
        let unit = SystemParams::new(0.0, 1.0, 2.0, 0.0, 3.0).unwrap();
        assert_eq!(q_factor(&unit), 1.0);
        let doubled = p.with_kappa_top(2.4).unwrap().with_kappa_side(49.4).unwrap();
        assert!((q_factor(&doubled) * 2.0 - q_factor(&p)).abs() < 1e-9);
    }

    fn params() -> impl Strategy<Value = SystemParams> {
        (0.0..50.0f64, 1e-3..80.0f64, 0.0..80.0f64, 1e-3..40.0f64, 1e5..2e6f64)
            .prop_map(|(g, k, ks, y, wc)| SystemParams::new(g, k, ks, y, wc).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn passive(p in params(), dq in -200.0..200.0f64, dw in -1e3..1e3f64) {
            let qd = QdState::coupled(p.omega_c() + dq).unwrap();
            let r = reflection_amplitude(&p, &qd, p.omega_c() + dw).unwrap();
            prop_assert!(r.norm() <= 1.0 + 1e-12);
        }

        #[test]
        fn zero_g_matches_empty_cavity(p in params(), dq in -200.0..200.0f64, dw in -1e3..1e3f64) {
            let p = p.with_g(0.0).unwrap();
            let qd = QdState::coupled(p.omega_c() + dq).unwrap();
            let w = p.omega_c() + dw;
            let a = reflection_amplitude(&p, &qd, w).unwrap();
            let b = reflection_amplitude(&p, &QdState::empty(), w).unwrap();
            prop_assert!((a - b).norm() <= 1e-14);
        }

        #[test]
        fn far_tail_decays_as_inverse_detuning(p in params(), dq in -50.0..50.0f64) {
            let qd = QdState::coupled(p.omega_c() + dq).unwrap();
            // fit C from one far point, then check the bound further out
            let d0 = 1e4;
            let c = (reflection_amplitude(&p, &qd, p.omega_c() + d0).unwrap() - 1.0).norm() * d0 * 1.1;
            for d in [2e4, 5e4, -3e4, 1e5] {
                let r = reflection_amplitude(&p, &qd, p.omega_c() + d).unwrap();
                prop_assert!((r - 1.0).norm() <= c / d.abs() + 1e-15);
            }
        }

        #[test]
        fn conjugate_symmetric_about_resonance(p in params(), d in 0.0..500.0f64) {
            // dyadic offsets from an integer resonance keep omega_c +- d exact
            let p = p.with_omega_c(p.omega_c().round()).unwrap();
            let d = (d * 1024.0).round() / 1024.0;
            let qd = QdState::resonant(&p);
            let a = reflection_amplitude(&p, &qd, p.omega_c() + d).unwrap();
            let b = reflection_amplitude(&p, &qd, p.omega_c() - d).unwrap();
            prop_assert!((a - b.conj()).norm() <= 1e-12);
        }

        #[test]
        fn eigenvalues_solve_characteristic_polynomial(p in params(), dq in -100.0..100.0f64) {
            let qd = QdState::coupled(p.omega_c() + dq).unwrap();
            let a = Complex64::new(qd.omega_qd - p.omega_c(), -p.gamma() / 2.0);
            let d = Complex64::new(0.0, -p.kappa_total() / 2.0);
            let e = polariton_offsets(&p, &qd);
            for z in e {
                let res = (a - z) * (d - z) - p.g() * p.g();
                prop_assert!(res.norm() < 1e-10, "residual {}", res.norm());
            }
            prop_assert!(e[0].re <= e[1].re);
        }

        #[test]
        fn regime_scale_invariant(p in params(), s in 1e-3..1e3f64) {
            let q = p.scale_rates(s).unwrap();
            prop_assert_eq!(coupling_regime(&p), coupling_regime(&q));
        }

        #[test]
        fn matches_real_arithmetic_oracle(p in params(), dq in -200.0..200.0f64, dw in -1e3..1e3f64) {
            let qd = QdState::coupled(p.omega_c() + dq).unwrap();
            let w = p.omega_c() + dw;
            let r = reflection_amplitude(&p, &qd, w).unwrap();
            let (or, oi) = oracle(p.g(), p.kappa_top(), p.kappa_side(), p.gamma(), p.omega_c(), qd.omega_qd, w);
            let scale = r.norm().max(1e-300);
            prop_assert!(((r.re - or).powi(2) + (r.im - oi).powi(2)).sqrt() / scale < 1e-12);
        }
    }
}
