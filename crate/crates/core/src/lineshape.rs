//! Line-shape math: the Faddeeva function, Voigt and Lorentzian profiles,
//! FWHM conversions, the window-truncated Cauchy sampler and the
//! lifetime-limited linewidth.
//!
//! All frequencies are in MHz, relative to the window midpoint.

use std::f64::consts::{LN_2, PI, SQRT_2};
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// `2√(2 ln 2)`: Gaussian FWHM per unit σ.
pub const GAUSS_FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// A frequency sweep window divided into equal bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyWindow {
    pub lo: f64,
    pub hi: f64,
    pub bin_width: f64,
}

impl Default for FrequencyWindow {
    fn default() -> Self {
        Self {
            lo: -75.0,
            hi: 75.0,
            bin_width: 2.0,
        }
    }
}

impl FrequencyWindow {
    pub fn new(lo: f64, hi: f64, bin_width: f64) -> Result<Self> {
        let w = Self { lo, hi, bin_width };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.bin_width.is_finite()) {
            return Err(Error::InvalidParameter("window bounds must be finite".into()));
        }
        if self.hi <= self.lo {
            return Err(Error::InvalidParameter(format!(
                "window hi ({}) must exceed lo ({})",
                self.hi, self.lo
            )));
        }
        if self.bin_width <= 0.0 {
            return Err(Error::InvalidParameter("bin width must be positive".into()));
        }
        let ratio = (self.hi - self.lo) / self.bin_width;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) || ratio.round() < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "window span {} is not an integral number of {} MHz bins",
                self.hi - self.lo,
                self.bin_width
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        ((self.hi - self.lo) / self.bin_width).round() as usize
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn span(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.bin_width
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.n_bins()).map(|i| self.bin_center(i)).collect()
    }

    /// Bin holding frequency `x`; the upper edge belongs to the last bin.
    pub fn bin_index(&self, x: f64) -> usize {
        let n = self.n_bins();
        let i = ((x - self.lo) / self.bin_width).floor();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(n - 1)
        }
    }
}

/// Voigt profile parameters. `amplitude` is the line area (counts·MHz) and
/// `offset` a constant baseline in counts per bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoigtParams {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub offset: f64,
}

impl VoigtParams {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.amplitude, self.center, self.sigma, self.gamma, self.offset]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidParameter("Voigt parameters must be finite".into()));
        }
        if self.sigma < 0.0 || self.gamma < 0.0 {
            return Err(Error::InvalidParameter("σ and γ must be non-negative".into()));
        }
        if self.sigma == 0.0 && self.gamma == 0.0 {
            return Err(Error::InvalidParameter("σ and γ cannot both be zero".into()));
        }
        if self.amplitude < 0.0 {
            return Err(Error::InvalidParameter("amplitude must be non-negative".into()));
        }
        Ok(())
    }

    pub fn fwhm(&self) -> Result<f64> {
        voigt_fwhm(self.sigma, self.gamma)
    }
}

// Weideman's rational expansion of w(z) in the upper half plane, used for
// |z| < 20; beyond that the asymptotic series is cheaper.
const WEIDEMAN_N: usize = 32;
const ASYMPTOTIC_RADIUS_SQ: f64 = 400.0;

struct Weideman {
    l: f64,
    coeffs: [f64; WEIDEMAN_N],
}

fn weideman() -> &'static Weideman {
    static TABLE: OnceLock<Weideman> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = WEIDEMAN_N;
        let m = 2 * n;
        let l = (n as f64 / SQRT_2).sqrt();
        // h(k) = exp(-t²)(L² + t²) with t = L tan(kπ / 2M), k = -M+1..M-1.
        let samples: Vec<(f64, f64)> = (-(m as i64) + 1..m as i64)
            .map(|k| {
                let t = l * (k as f64 * PI / (2 * m) as f64).tan();
                (k as f64, (-t * t).exp() * (l * l + t * t))
            })
            .collect();
        let mut coeffs = [0.0; WEIDEMAN_N];
        for (j, c) in coeffs.iter_mut().enumerate() {
            // coefficient of Z^j is the (j+1)-th cosine moment
            let freq = (j + 1) as f64;
            let s: f64 = samples
                .iter()
                .map(|&(k, h)| h * (2.0 * PI * freq * k / (2 * m) as f64).cos())
                .sum();
            *c = s / (2 * m) as f64;
        }
        Weideman { l, coeffs }
    })
}

#[inline]
fn w_weideman(z: Complex64) -> Complex64 {
    let tab = weideman();
    let iz = Complex64::new(-z.im, z.re);
    let denom = Complex64::new(tab.l, 0.0) - iz;
    let zz = (Complex64::new(tab.l, 0.0) + iz) / denom;
    let mut p = Complex64::new(0.0, 0.0);
    for &a in tab.coeffs.iter().rev() {
        p = p * zz + a;
    }
    let inv = 1.0 / denom;
    2.0 * p * inv * inv + FRAC_1_SQRT_PI * inv
}

/// Asymptotic series `i/(√π z) Σ (2n-1)!!/(2z²)^n`, truncated after five
/// terms; relative error below 1e-11 for |z| ≥ 20.
#[inline]
fn w_asymptotic(z: Complex64) -> Complex64 {
    let q = 1.0 / (z * z);
    Complex64::new(0.0, FRAC_1_SQRT_PI) / z * (1.0 + q * (0.5 + q * (0.75 + q * (1.875 + q * 6.5625))))
}

/// Faddeeva function for finite `z` with `Im z ≥ 0`; no argument checks.
#[inline]
pub(crate) fn faddeeva_upper(z: Complex64) -> Complex64 {
    if z.norm_sqr() >= ASYMPTOTIC_RADIUS_SQ {
        w_asymptotic(z)
    } else {
        w_weideman(z)
    }
}

/// The Faddeeva function `w(z) = exp(-z²) erfc(-iz)`.
///
/// Relative error is below 1e-6 on the closed upper half plane. The lower
/// half plane is reached through `w(z) = 2 exp(-z²) - w(-z)`, which loses
/// relative accuracy (and eventually overflows) as `Im z` becomes very
/// negative.
pub fn faddeeva(z: Complex64) -> Result<Complex64> {
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::Domain(format!("faddeeva of non-finite argument {z}")));
    }
    if z.re == 0.0 && z.im == 0.0 {
        Ok(Complex64::new(1.0, 0.0))
    } else if z.im >= 0.0 {
        Ok(faddeeva_upper(z))
    } else {
        Ok(2.0 * (-z * z).exp() - faddeeva_upper(-z))
    }
}

/// Voigt profile `A Re[w(z)] / (σ√(2π)) + offset` with
/// `z = (x - μ + iγ) / (σ√2)`.
pub fn voigt_value(x: f64, p: &VoigtParams) -> Result<f64> {
    p.validate()?;
    if p.sigma == 0.0 {
        return Err(Error::DegenerateShape(
            "σ = 0: use lorentzian_value for the pure Lorentzian limit".into(),
        ));
    }
    Ok(voigt_unchecked(x, p))
}

#[inline]
pub(crate) fn voigt_unchecked(x: f64, p: &VoigtParams) -> f64 {
    let s = p.sigma * SQRT_2;
    let w = faddeeva_upper(Complex64::new((x - p.center) / s, p.gamma / s));
    p.amplitude * w.re / (p.sigma * SQRT_2PI) + p.offset
}

/// Voigt value and its partial derivatives with respect to
/// `(amplitude, center, sigma, gamma, offset)`.
#[inline]
pub(crate) fn voigt_with_gradient(x: f64, p: &VoigtParams) -> (f64, [f64; 5]) {
    let s = p.sigma * SQRT_2;
    let z = Complex64::new((x - p.center) / s, p.gamma / s);
    let w = faddeeva_upper(z);
    // w'(z) = -2 z w(z) + 2i/√π
    let dw = -2.0 * z * w + Complex64::new(0.0, 2.0 * FRAC_1_SQRT_PI);
    let norm = 1.0 / (p.sigma * SQRT_2PI);
    let scale = p.amplitude * norm;
    let d_amp = w.re * norm;
    let d_center = -scale * dw.re / s;
    let d_gamma = -scale * dw.im / s;
    let dz_dsigma = -z / p.sigma;
    let d_sigma = -p.amplitude * w.re * norm / p.sigma + scale * (dw * dz_dsigma).re;
    (scale * w.re + p.offset, [d_amp, d_center, d_sigma, d_gamma, 1.0])
}

/// Lorentzian `A γ / (π((x-μ)² + γ²)) + offset`, the σ → 0 limit of the Voigt.
pub fn lorentzian_value(x: f64, amplitude: f64, center: f64, gamma: f64, offset: f64) -> Result<f64> {
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(Error::InvalidParameter("Lorentzian γ must be positive".into()));
    }
    let d = x - center;
    Ok(amplitude * gamma / (PI * (d * d + gamma * gamma)) + offset)
}

/// Olivero–Longbothum estimate of the Voigt FWHM, with `f_L = 2γ` and
/// `f_G = 2√(2 ln 2) σ`. Worst-case relative error is about 2.4e-4.
pub fn olivero_fwhm(sigma: f64, gamma: f64) -> Result<f64> {
    check_widths(sigma, gamma)?;
    Ok(fwhm_approx(sigma, gamma))
}

/// Voigt FWHM: the Olivero–Longbothum estimate polished by Newton steps on
/// the half-maximum condition of the profile itself.
pub fn voigt_fwhm(sigma: f64, gamma: f64) -> Result<f64> {
    check_widths(sigma, gamma)?;
    Ok(fwhm_refined(sigma, gamma))
}

fn check_widths(sigma: f64, gamma: f64) -> Result<()> {
    if !(sigma.is_finite() && gamma.is_finite()) || sigma < 0.0 || gamma < 0.0 {
        return Err(Error::Domain(format!("voigt_fwhm({sigma}, {gamma})")));
    }
    if sigma == 0.0 && gamma == 0.0 {
        return Err(Error::Domain("voigt_fwhm: σ and γ are both zero".into()));
    }
    Ok(())
}

#[inline]
fn fwhm_approx(sigma: f64, gamma: f64) -> f64 {
    let fl = 2.0 * gamma;
    let fg = GAUSS_FWHM_PER_SIGMA * sigma;
    0.5346 * fl + (0.2166 * fl * fl + fg * fg).sqrt()
}

fn fwhm_refined(sigma: f64, gamma: f64) -> f64 {
    if sigma == 0.0 {
        return 2.0 * gamma;
    }
    if gamma == 0.0 {
        return GAUSS_FWHM_PER_SIGMA * sigma;
    }
    // Work in units of σ; the profile shape depends on γ/σ only.
    let p = VoigtParams {
        amplitude: 1.0,
        center: 0.0,
        sigma: 1.0,
        gamma: gamma / sigma,
        offset: 0.0,
    };
    let half = 0.5 * voigt_unchecked(0.0, &p);
    let mut x = 0.5 * fwhm_approx(1.0, p.gamma);
    for _ in 0..8 {
        let (v, g) = voigt_with_gradient(x, &p);
        // ∂V/∂x = -∂V/∂μ
        let slope = -g[1];
        if slope >= 0.0 {
            break;
        }
        let step = (v - half) / slope;
        x -= step;
        if step.abs() <= 1e-14 * x {
            break;
        }
    }
    2.0 * x * sigma
}

/// Gradient of [`voigt_fwhm`] with respect to `(sigma, gamma)`.
pub(crate) fn voigt_fwhm_gradient(sigma: f64, gamma: f64) -> (f64, f64) {
    let h = 1e-6 * (sigma + gamma);
    let d = |s0: f64, g0: f64, s1: f64, g1: f64, span: f64| (fwhm_refined(s1, g1) - fwhm_refined(s0, g0)) / span;
    let d_sigma = if sigma > h {
        d(sigma - h, gamma, sigma + h, gamma, 2.0 * h)
    } else {
        d(sigma, gamma, sigma + h, gamma, h)
    };
    let d_gamma = if gamma > h {
        d(sigma, gamma - h, sigma, gamma + h, 2.0 * h)
    } else {
        d(sigma, gamma, sigma, gamma + h, h)
    };
    (d_sigma, d_gamma)
}

/// FWHM of the tied (γ = σ) Voigt per unit σ, ≈ 3.6013.
pub fn tied_fwhm_per_sigma() -> f64 {
    static RATIO: OnceLock<f64> = OnceLock::new();
    *RATIO.get_or_init(|| fwhm_refined(1.0, 1.0))
}

/// Cauchy law with half-width `gamma`, centred on the window midpoint and
/// renormalised to the window.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedCauchy {
    center: f64,
    gamma: f64,
    lo: f64,
    hi: f64,
    atan_lo: f64,
    atan_span: f64,
}

impl TruncatedCauchy {
    pub fn new(gamma: f64, window: &FrequencyWindow) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Cauchy half-width must be positive, got {gamma}"
            )));
        }
        window.validate()?;
        let center = window.midpoint();
        let atan_lo = ((window.lo - center) / gamma).atan();
        let atan_hi = ((window.hi - center) / gamma).atan();
        Ok(Self {
            center,
            gamma,
            lo: window.lo,
            hi: window.hi,
            atan_lo,
            atan_span: atan_hi - atan_lo,
        })
    }

    /// Inverse CDF; `u` must lie in `[0, 1]`.
    #[inline]
    pub fn quantile_unchecked(&self, u: f64) -> f64 {
        let x = self.center + self.gamma * (self.atan_lo + u * self.atan_span).tan();
        x.clamp(self.lo, self.hi)
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain(format!("probability {u} outside [0, 1]")));
        }
        if u == 0.0 {
            return Ok(self.lo);
        }
        if u == 1.0 {
            return Ok(self.hi);
        }
        Ok(self.quantile_unchecked(u))
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        ((((x - self.center) / self.gamma).atan() - self.atan_lo) / self.atan_span).clamp(0.0, 1.0)
    }
}

/// Quantile of the window-truncated Cauchy law with half-width `gamma`.
pub fn truncated_cauchy_quantile(u: f64, gamma: f64, window: &FrequencyWindow) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain(format!("probability {u} outside [0, 1]")));
    }
    TruncatedCauchy::new(gamma, window)?.quantile(u)
}

/// Lifetime-limited linewidth `Δν = 1 / (2πτ)`; `tau_ns` in ns, result in MHz.
pub fn lifetime_to_linewidth(tau_ns: f64) -> Result<f64> {
    if !(tau_ns > 0.0 && tau_ns.is_finite()) {
        return Err(Error::Domain(format!("lifetime must be positive, got {tau_ns} ns")));
    }
    Ok(1.0e3 / (2.0 * PI * tau_ns))
}

/// Gaussian FWHM for a standard deviation σ.
pub fn gaussian_fwhm(sigma: f64) -> f64 {
    2.0 * (2.0 * LN_2).sqrt() * sigma
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values of w(x + iy) from 30-digit arithmetic (exp(-z²)·erfc(-iz)).
    const W_REFERENCE: [(f64, f64, f64, f64); 16] = [
        (0.0, 1.0, 4.27583576155806999e-01, 0.0),
        (0.5, 0.5, 5.33156707912174954e-01, 2.30488231384458397e-01),
        (1.5, 0.2, 1.56520584188795497e-01, 4.21075947361980729e-01),
        (3.0, 0.01, 9.08830706741580526e-04, 2.01146462540196413e-01),
        (5.0, 0.001, 2.40804639671034146e-05, 1.15245956674503727e-01),
        (0.1, 3.0, 1.78842429690193760e-01, 5.43274980885664633e-03),
        (7.0, 2.0, 2.18533966874382909e-02, 7.50096359354248121e-02),
        (12.0, 0.5, 1.97624367649480454e-03, 4.70975569622678128e-02),
        (-2.0, 0.7, 1.22574479055543945e-01, -2.59030893194229395e-01),
        (4.2, 4.2, 6.80742925027464779e-02, 6.61761757397860695e-02),
        (25.0, 0.05, 4.52437448290466182e-05, 2.25855902067555944e-02),
        (0.0, 0.0, 1.0, 0.0),
        (2.5, 0.0, 1.93045413622770930e-03, 2.51723024611857582e-01),
        (6.0, 0.0, 2.31952283024356963e-16, 9.53962089691107601e-02),
        (200.0, 3.0, 4.23062859012397600e-05, 2.82034856282583788e-03),
        (0.8, 12.0, 4.66503842263995688e-02, 3.08888377344292359e-03),
    ];

    // exp(x²) erfc(x) on x = 0, 0.5, .., 5.
    const ERFCX_REFERENCE: [f64; 11] = [
        1.0,
        6.15690344192925898e-01,
        4.27583576155806999e-01,
        3.21585416454317485e-01,
        2.55395676310505748e-01,
        2.10806364061143586e-01,
        1.79001151181389956e-01,
        1.55293655608894299e-01,
        1.36999457625061383e-01,
        1.22484804273841424e-01,
        1.10704637733068628e-01,
    ];

    fn rel_err(a: Complex64, b: Complex64) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn faddeeva_matches_reference_values() {
        for &(x, y, re, im) in &W_REFERENCE {
            let got = faddeeva(Complex64::new(x, y)).unwrap();
            let err = rel_err(got, Complex64::new(re, im));
            assert!(err < 1e-6, "w({x}+{y}i) = {got}, rel err {err:e}");
        }
    }

    #[test]
    fn faddeeva_at_origin_is_one() {
        assert_eq!(faddeeva(Complex64::new(0.0, 0.0)).unwrap().re, 1.0);
    }

    #[test]
    fn faddeeva_imaginary_axis_is_erfcx() {
        for (i, &expected) in ERFCX_REFERENCE.iter().enumerate() {
            let x = 0.5 * i as f64;
            let got = faddeeva(Complex64::new(0.0, x)).unwrap();
            assert!(((got.re - expected) / expected).abs() < 1e-6, "x = {x}");
            assert!(got.im.abs() < 1e-9);
        }
    }

    #[test]
    fn faddeeva_branches_agree_on_the_switch_circle() {
        for k in 0..=40 {
            let theta = PI * k as f64 / 40.0;
            let z = Complex64::from_polar(ASYMPTOTIC_RADIUS_SQ.sqrt(), theta);
            let err = rel_err(w_weideman(z), w_asymptotic(z));
            assert!(err < 1e-9, "θ = {theta}: {err:e}");
        }
    }

    #[test]
    fn faddeeva_reflection_symmetry() {
        for &(x, y) in &[(0.3, 0.2), (2.0, 1.0), (5.5, 0.1), (11.0, 3.0)] {
            let z = Complex64::new(x, y);
            let a = faddeeva(-z.conj()).unwrap();
            let b = faddeeva(z).unwrap().conj();
            assert!(rel_err(a, b) < 1e-12);
        }
    }

    #[test]
    fn faddeeva_rejects_non_finite() {
        assert!(faddeeva(Complex64::new(f64::NAN, 0.0)).is_err());
        assert!(faddeeva(Complex64::new(0.0, f64::INFINITY)).is_err());
    }

    fn params(a: f64, s: f64, g: f64) -> VoigtParams {
        VoigtParams {
            amplitude: a,
            center: 1.5,
            sigma: s,
            gamma: g,
            offset: 0.0,
        }
    }

    #[test]
    fn gaussian_peak_height() {
        let p = params(10.0, 2.0, 0.0);
        let v = voigt_value(1.5, &p).unwrap();
        assert!((v - 10.0 / (2.0 * SQRT_2PI)).abs() < 1e-12);
    }

    #[test]
    fn voigt_sigma_zero_is_degenerate() {
        let p = params(1.0, 0.0, 1.0);
        assert!(matches!(voigt_value(0.0, &p), Err(Error::DegenerateShape(_))));
    }

    #[test]
    fn voigt_area_equals_amplitude() {
        // Composite Simpson on [-L, L] plus the analytic Lorentzian tail
        // beyond L (the Gaussian part is negligible there).
        let p = VoigtParams {
            amplitude: 7.0,
            center: 0.0,
            sigma: 1.3,
            gamma: 0.8,
            offset: 0.0,
        };
        let l = 400.0;
        let n = 400_000;
        let h = 2.0 * l / n as f64;
        let mut sum = voigt_value(-l, &p).unwrap() + voigt_value(l, &p).unwrap();
        for i in 1..n {
            let x = -l + i as f64 * h;
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * voigt_value(x, &p).unwrap();
        }
        let core = sum * h / 3.0;
        let tail = 2.0 * p.amplitude / PI * (PI / 2.0 - (l / p.gamma).atan());
        let area = core + tail;
        assert!(((area - p.amplitude) / p.amplitude).abs() < 1e-4, "area {area}");
    }

    #[test]
    fn voigt_approaches_lorentzian() {
        let gamma = 3.0;
        let p = VoigtParams {
            amplitude: 5.0,
            center: 0.0,
            sigma: 0.01 * gamma,
            gamma,
            offset: 0.0,
        };
        for x in [0.0, gamma, -gamma] {
            let v = voigt_value(x, &p).unwrap();
            let l = lorentzian_value(x, 5.0, 0.0, gamma, 0.0).unwrap();
            assert!(((v - l) / l).abs() < 0.01, "x = {x}: {v} vs {l}");
        }
    }

    #[test]
    fn voigt_gradient_matches_finite_differences() {
        let p = VoigtParams {
            amplitude: 300.0,
            center: 1.2,
            sigma: 4.0,
            gamma: 6.0,
            offset: 0.4,
        };
        for x in [-30.0, -5.0, 0.0, 2.0, 17.0] {
            let (v, g) = voigt_with_gradient(x, &p);
            assert!((v - voigt_unchecked(x, &p)).abs() < 1e-12);
            let base = [p.amplitude, p.center, p.sigma, p.gamma, p.offset];
            for j in 0..5 {
                let h = 1e-6 * base[j].abs().max(1.0);
                let mut up = base;
                let mut dn = base;
                up[j] += h;
                dn[j] -= h;
                let mk = |b: [f64; 5]| VoigtParams {
                    amplitude: b[0],
                    center: b[1],
                    sigma: b[2],
                    gamma: b[3],
                    offset: b[4],
                };
                let fd = (voigt_unchecked(x, &mk(up)) - voigt_unchecked(x, &mk(dn))) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-6 * (1.0 + fd.abs()), "x {x} param {j}: {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn fwhm_limits_and_tied_value() {
        assert!((voigt_fwhm(1.0, 1.0).unwrap() - 3.6013).abs() < 1e-3);
        assert!((voigt_fwhm(1.0, 0.0).unwrap() - 2.3548).abs() < 1e-4);
        assert!((voigt_fwhm(0.0, 1.0).unwrap() - 2.0).abs() < 1e-4);
        assert!(voigt_fwhm(0.0, 0.0).is_err());
        assert!(voigt_fwhm(-1.0, 1.0).is_err());
        assert!((olivero_fwhm(1.0, 1.0).unwrap() - 3.6013).abs() < 1e-3);
    }

    #[test]
    fn fwhm_gradient_satisfies_euler_identity() {
        // FWHM is homogeneous of degree one in (σ, γ).
        for &(s, g) in &[(1.0, 1.0), (0.4, 3.0), (5.0, 0.2)] {
            let (ds, dg) = voigt_fwhm_gradient(s, g);
            let f = voigt_fwhm(s, g).unwrap();
            assert!(((s * ds + g * dg) - f).abs() < 1e-5 * f);
        }
    }

    /// Exact FWHM by bisection on the half-maximum of the Voigt profile.
    pub(crate) fn exact_fwhm(sigma: f64, gamma: f64) -> f64 {
        let p = VoigtParams {
            amplitude: 1.0,
            center: 0.0,
            sigma,
            gamma,
            offset: 0.0,
        };
        let half = 0.5 * voigt_value(0.0, &p).unwrap();
        let (mut a, mut b) = (0.0, 10.0 * (sigma + gamma));
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if voigt_value(m, &p).unwrap() > half {
                a = m;
            } else {
                b = m;
            }
        }
        a + b
    }

    #[test]
    fn fwhm_approximation_matches_bisection() {
        let axis = [0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0];
        for &s in &axis {
            for &g in &axis {
                let approx = voigt_fwhm(s, g).unwrap();
                let exact = exact_fwhm(s, g);
                let rel = ((approx - exact) / exact).abs();
                assert!(rel < 2e-4, "σ {s} γ {g}: {approx} vs {exact} ({rel:e})");
                assert!(approx >= (2.0 * g).max(GAUSS_FWHM_PER_SIGMA * s) - 1e-12);
            }
        }
    }

    #[test]
    fn voigt_is_symmetric() {
        let p = params(4.0, 1.7, 2.2);
        for d in [0.1, 1.0, 7.5, 40.0] {
            let a = voigt_value(1.5 + d, &p).unwrap();
            let b = voigt_value(1.5 - d, &p).unwrap();
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn cauchy_quantile_endpoints_and_midpoint() {
        let w = FrequencyWindow::default();
        assert_eq!(truncated_cauchy_quantile(0.0, 10.0, &w).unwrap(), -75.0);
        assert_eq!(truncated_cauchy_quantile(1.0, 10.0, &w).unwrap(), 75.0);
        assert!(truncated_cauchy_quantile(0.5, 10.0, &w).unwrap().abs() < 1e-12);
        assert!(truncated_cauchy_quantile(1.2, 10.0, &w).is_err());
        assert!(truncated_cauchy_quantile(-0.1, 10.0, &w).is_err());
    }

    #[test]
    fn cauchy_quantile_inverts_cdf() {
        let w = FrequencyWindow::new(-20.0, 60.0, 2.0).unwrap();
        let c = TruncatedCauchy::new(7.0, &w).unwrap();
        for i in 1..100 {
            let u = i as f64 / 100.0;
            let x = c.quantile(u).unwrap();
            assert!((c.cdf(x) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn lifetime_conversion() {
        assert!((lifetime_to_linewidth(10.57).unwrap() - 15.1).abs() < 0.05);
        assert!((lifetime_to_linewidth(1.0 / (2.0 * PI)).unwrap() - 1000.0).abs() < 1e-9);
        let a = lifetime_to_linewidth(3.0).unwrap();
        let b = lifetime_to_linewidth(30.0).unwrap();
        assert!((a / b - 10.0).abs() < 1e-12);
        assert!(lifetime_to_linewidth(0.0).is_err());
        assert!(lifetime_to_linewidth(-1.0).is_err());
    }

    #[test]
    fn window_validation() {
        assert!(FrequencyWindow::new(-75.0, 75.0, 2.0).is_ok());
        assert_eq!(FrequencyWindow::default().n_bins(), 75);
        assert!(FrequencyWindow::new(75.0, -75.0, 2.0).is_err());
        assert!(FrequencyWindow::new(-75.0, 75.0, 0.0).is_err());
        let w = FrequencyWindow::default();
        assert_eq!(w.bin_index(-75.0), 0);
        assert_eq!(w.bin_index(75.0), 74);
        assert_eq!(w.bin_index(0.0), 37);
    }

    mod prop {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quantile_is_monotone(u in 0.0f64..0.999, du in 1e-6f64..1e-3, g in 0.05f64..80.0) {
                let w = FrequencyWindow::default();
                let a = truncated_cauchy_quantile(u, g, &w).unwrap();
                let b = truncated_cauchy_quantile((u + du).min(1.0), g, &w).unwrap();
                prop_assert!(b > a);
            }

            #[test]
            fn voigt_symmetry(d in 0.0f64..100.0, s in 0.05f64..30.0, g in 0.0f64..30.0) {
                let p = VoigtParams { amplitude: 3.0, center: -2.0, sigma: s, gamma: g, offset: 0.1 };
                let a = voigt_value(-2.0 + d, &p).unwrap();
                let b = voigt_value(-2.0 - d, &p).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * a.abs());
                prop_assert!(a >= p.offset);
            }
        }
    }
}
