//! Fabry–Perot model of the mirror-coated waveguide resonator.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dispersion::WaveguideIndexModel;
use crate::error::{Error, Result};
use crate::units::{hz_to_wavelength_nm, wavelength_nm_to_hz, C};

/// Wavelength at which scalar cavity figures (finesse, FSR) are quoted.
pub const REFERENCE_WAVELENGTH_NM: f64 = 1560.0;

/// Measured mirror transmittance curve, linearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MirrorCurve {
    pub wavelengths_nm: Vec<f64>,
    pub transmittance: Vec<f64>,
}

impl MirrorCurve {
    /// Parses two whitespace- or comma-separated columns: wavelength (nm)
    /// and transmittance. Lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut wavelengths_nm = Vec::new();
        let mut transmittance = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            if cols.len() != 2 {
                return Err(Error::Parse(format!(
                    "mirror curve line {}: expected 2 columns, got {}",
                    lineno + 1,
                    cols.len()
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| {
                    Error::Parse(format!("mirror curve line {}: {e}", lineno + 1))
                })
            };
            wavelengths_nm.push(parse(cols[0])?);
            transmittance.push(parse(cols[1])?);
        }
        let curve = MirrorCurve {
            wavelengths_nm,
            transmittance,
        };
        curve.validate()?;
        Ok(curve)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.wavelengths_nm.len() < 2 || self.wavelengths_nm.len() != self.transmittance.len()
        {
            return Err(Error::Parse("mirror curve needs at least two points".into()));
        }
        if self.wavelengths_nm.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parse(
                "mirror curve wavelengths must be strictly increasing".into(),
            ));
        }
        if self.transmittance.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::Parse(
                "mirror transmittance must lie strictly inside (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Transmittance at `lambda_nm`, clamped to the end points outside the table.
    pub fn transmittance_at(&self, lambda_nm: f64) -> f64 {
        let x = &self.wavelengths_nm;
        let y = &self.transmittance;
        if lambda_nm <= x[0] {
            return y[0];
        }
        if lambda_nm >= x[x.len() - 1] {
            return y[y.len() - 1];
        }
        let i = x.partition_point(|&v| v <= lambda_nm);
        let (x0, x1, y0, y1) = (x[i - 1], x[i], y[i - 1], y[i]);
        y0 + (y1 - y0) * (lambda_nm - x0) / (x1 - x0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Mirror {
    Flat(f64),
    Curve(MirrorCurve),
}

impl Mirror {
    #[inline]
    pub fn reflectivity(&self, lambda_nm: f64) -> f64 {
        match self {
            Mirror::Flat(r) => *r,
            Mirror::Curve(c) => 1.0 - c.transmittance_at(lambda_nm),
        }
    }

    fn is_flat(&self) -> bool {
        matches!(self, Mirror::Flat(_))
    }
}

/// Physical identity of the waveguide resonator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonatorSpec {
    pub length_cm: f64,
    pub mirrors: [Mirror; 2],
    pub loss_db_per_cm: f64,
    pub index: WaveguideIndexModel,
}

impl ResonatorSpec {
    pub fn new(
        length_cm: f64,
        r1: f64,
        r2: f64,
        loss_db_per_cm: f64,
        index: WaveguideIndexModel,
    ) -> Result<Self> {
        let spec = ResonatorSpec {
            length_cm,
            mirrors: [Mirror::Flat(r1), Mirror::Flat(r2)],
            loss_db_per_cm,
            index,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 3.6 cm, R = 0.85 on both faces, loss fitted to a finesse of 15.4.
    pub fn ti_ppln() -> Self {
        let alpha = loss_from_finesse(15.4, 0.85, 0.85, 3.6).expect("feasible finesse");
        Self::new(3.6, 0.85, 0.85, alpha, WaveguideIndexModel::ti_ppln()).expect("valid spec")
    }

    /// Same resonator with the quoted propagation loss of 0.06 dB/cm.
    pub fn ti_ppln_quoted_loss() -> Self {
        Self::new(3.6, 0.85, 0.85, 0.06, WaveguideIndexModel::ti_ppln()).expect("valid spec")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_cm > 0.0) {
            return Err(Error::InvalidInput(format!(
                "resonator length must be positive, got {} cm",
                self.length_cm
            )));
        }
        if !(self.loss_db_per_cm >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "propagation loss must be non-negative, got {} dB/cm",
                self.loss_db_per_cm
            )));
        }
        for (i, m) in self.mirrors.iter().enumerate() {
            if let Mirror::Flat(r) = m {
                if !(*r > 0.0 && *r < 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "mirror {} reflectivity must lie in (0, 1), got {r}",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Single-pass power transmission 10^(−αL/10).
    pub fn single_pass_transmission(&self) -> f64 {
        10f64.powf(-self.loss_db_per_cm * self.length_cm / 10.0)
    }

    pub fn reflectivities(&self, lambda_nm: f64) -> (f64, f64) {
        (
            self.mirrors[0].reflectivity(lambda_nm),
            self.mirrors[1].reflectivity(lambda_nm),
        )
    }

    /// Round-trip field factor ρ = √(R1·R2)·t_pass.
    pub fn round_trip_factor(&self, lambda_nm: f64) -> f64 {
        let (r1, r2) = self.reflectivities(lambda_nm);
        (r1 * r2).sqrt() * self.single_pass_transmission()
    }

    pub fn has_flat_mirrors(&self) -> bool {
        self.mirrors.iter().all(Mirror::is_flat)
    }

    /// Round-trip phase 4π·ν·n_eff·L/c.
    #[inline]
    pub fn phase(&self, nu_hz: f64, temperature_c: f64) -> f64 {
        4.0 * std::f64::consts::PI * nu_hz * self.index.index_at_hz(nu_hz, temperature_c)
            * self.length_cm
            * 1e-2
            / C
    }

    pub fn check_frequency(&self, nu_hz: f64, temperature_c: f64) -> Result<()> {
        self.index.check(hz_to_wavelength_nm(nu_hz), temperature_c)
    }

    /// Local free spectral range c/(2·n_g·L).
    pub fn fsr_hz(&self, lambda_nm: f64, temperature_c: f64) -> Result<f64> {
        self.index.fsr_hz(self.length_cm, lambda_nm, temperature_c)
    }

    /// Analytic FWHM of a resonance, FSR/finesse.
    pub fn fwhm_hz(&self, lambda_nm: f64, temperature_c: f64) -> Result<f64> {
        Ok(self.fsr_hz(lambda_nm, temperature_c)? / finesse_from_rho(self.round_trip_factor(lambda_nm))?)
    }

    /// Peak-normalised Airy function 1/(1 + F·sin²(φ/2)), no range check.
    #[inline]
    pub fn airy_unchecked(&self, nu_hz: f64, temperature_c: f64) -> f64 {
        let rho = if self.has_flat_mirrors() {
            self.round_trip_factor(REFERENCE_WAVELENGTH_NM)
        } else {
            self.round_trip_factor(hz_to_wavelength_nm(nu_hz))
        };
        airy_normalised(rho, self.phase(nu_hz, temperature_c))
    }

    /// Intensity transmission without range check.
    #[inline]
    pub fn transmission_unchecked(&self, nu_hz: f64, temperature_c: f64) -> f64 {
        let lambda_nm = hz_to_wavelength_nm(nu_hz);
        let (r1, r2) = self.reflectivities(lambda_nm);
        let t = self.single_pass_transmission();
        let rho = (r1 * r2).sqrt() * t;
        let s = (0.5 * self.phase(nu_hz, temperature_c)).sin();
        (1.0 - r1) * (1.0 - r2) * t / ((1.0 - rho) * (1.0 - rho) + 4.0 * rho * s * s)
    }

    /// Exact split of the exit probability between the two faces for a
    /// photon born mid-cavity heading either way with equal probability.
    /// The two entries sum to 1 minus the absorbed fraction.
    pub fn exit_probabilities(&self) -> Result<(f64, f64)> {
        let (r1, r2) = self.reflectivities(REFERENCE_WAVELENGTH_NM);
        let t = self.single_pass_transmission();
        let denom = 1.0 - t * t * r1 * r2;
        if !(denom > 0.0) {
            return Err(Error::Model("round-trip gain is not supported".into()));
        }
        let half = t.sqrt();
        let p1 = 0.5 * half * (1.0 - r1) * (1.0 + t * r2) / denom;
        let p2 = 0.5 * half * (1.0 - r2) * (1.0 + t * r1) / denom;
        Ok((p1, p2))
    }
}

#[inline]
pub(crate) fn airy_normalised(rho: f64, phase: f64) -> f64 {
    let coef = 4.0 * rho / ((1.0 - rho) * (1.0 - rho));
    let s = (0.5 * phase).sin();
    1.0 / (1.0 + coef * s * s)
}

/// Fabry–Perot intensity transmission at frequency `nu_hz` and temperature `temperature_c`.
pub fn transmission(spec: &ResonatorSpec, nu_hz: f64, temperature_c: f64) -> Result<f64> {
    spec.check_frequency(nu_hz, temperature_c)?;
    Ok(spec.transmission_unchecked(nu_hz, temperature_c))
}

fn finesse_from_rho(rho: f64) -> Result<f64> {
    if !(rho < 1.0) {
        return Err(Error::Model(format!(
            "round-trip factor {rho} ≥ 1: gain is not supported"
        )));
    }
    if !(rho > 0.0) {
        return Err(Error::Model(format!("round-trip factor {rho} must be positive")));
    }
    Ok(std::f64::consts::PI * rho.sqrt() / (1.0 - rho))
}

/// Airy finesse π√ρ/(1−ρ) with ρ = √(R1·R2)·t_pass at 1560 nm.
pub fn finesse(spec: &ResonatorSpec) -> Result<f64> {
    spec.validate()?;
    finesse_from_rho(spec.round_trip_factor(REFERENCE_WAVELENGTH_NM))
}

/// Propagation loss (dB/cm) that yields finesse `f` with the given mirrors.
pub fn loss_from_finesse(f: f64, r1: f64, r2: f64, length_cm: f64) -> Result<f64> {
    if !(f > 0.0) || !(length_cm > 0.0) || !(r1 > 0.0 && r1 < 1.0) || !(r2 > 0.0 && r2 < 1.0) {
        return Err(Error::InvalidInput(format!(
            "loss_from_finesse needs F > 0, L > 0 and R in (0, 1); got F={f}, R1={r1}, R2={r2}, L={length_cm}"
        )));
    }
    // π·x = F·(1 − x²) with x = √ρ
    let x = (-std::f64::consts::PI + (std::f64::consts::PI.powi(2) + 4.0 * f * f).sqrt())
        / (2.0 * f);
    let rho = x * x;
    let mirrors = (r1 * r2).sqrt();
    let t = rho / mirrors;
    if t > 1.0 + 1e-12 {
        let max_f = finesse_from_rho(mirrors)?;
        return Err(Error::Infeasible(format!(
            "finesse {f} exceeds the lossless limit {max_f:.4} for R1={r1}, R2={r2}"
        )));
    }
    Ok((-10.0 * t.min(1.0).log10() / length_cm).max(0.0))
}

/// Probability that a resonant photon born mid-cavity leaves through a face
/// of reflectivity `r`: √t·(1−R)/(1−(t·R)²), where `t_pass` is the
/// single-pass power transmission.
pub fn escape_probability(t_pass: f64, r: f64) -> Result<f64> {
    if !(t_pass > 0.0 && t_pass <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "single-pass transmission must lie in (0, 1], got {t_pass}"
        )));
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidInput(format!(
            "reflectivity must lie in (0, 1), got {r}"
        )));
    }
    let tr = t_pass * r;
    if tr >= 1.0 {
        return Err(Error::Model("t_pass·R ≥ 1".into()));
    }
    Ok(t_pass.sqrt() * (1.0 - r) / (1.0 - tr * tr))
}

/// Resonance frequencies of the cavity in a wavelength band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeComb {
    pub frequencies_hz: Vec<f64>,
    /// Spacing between consecutive modes (len = modes − 1).
    pub fsr_hz: Vec<f64>,
    pub fwhm_hz: f64,
    pub temperature_c: f64,
}

impl ModeComb {
    pub fn len(&self) -> usize {
        self.frequencies_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies_hz.is_empty()
    }

    /// Index and frequency of the mode closest to `nu_hz`.
    pub fn nearest(&self, nu_hz: f64) -> Option<(usize, f64)> {
        let f = &self.frequencies_hz;
        if f.is_empty() {
            return None;
        }
        let i = f.partition_point(|&v| v < nu_hz);
        let best = match i {
            0 => 0,
            i if i == f.len() => f.len() - 1,
            i if (f[i] - nu_hz).abs() < (nu_hz - f[i - 1]).abs() => i,
            i => i - 1,
        };
        Some((best, f[best]))
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Golden-section maximisation of `f` on `[a, b]` down to width `tol`.
pub(crate) fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// All transmission maxima inside `band_nm`, located to better than 1 kHz.
pub fn mode_comb(spec: &ResonatorSpec, temperature_c: f64, band_nm: (f64, f64)) -> Result<ModeComb> {
    spec.validate()?;
    let (lo_nm, hi_nm) = (band_nm.0.min(band_nm.1), band_nm.0.max(band_nm.1));
    spec.index.check(lo_nm, temperature_c)?;
    spec.index.check(hi_nm, temperature_c)?;
    let centre = 0.5 * (lo_nm + hi_nm);
    let fwhm = spec.fwhm_hz(centre.clamp(lo_nm, hi_nm), temperature_c)?;
    if hi_nm <= lo_nm {
        return Ok(ModeComb {
            frequencies_hz: Vec::new(),
            fsr_hz: Vec::new(),
            fwhm_hz: fwhm,
            temperature_c,
        });
    }
    let (nu_lo, nu_hi) = (wavelength_nm_to_hz(hi_nm), wavelength_nm_to_hz(lo_nm));
    let fsr = spec.fsr_hz(centre, temperature_c)?;
    let step = fsr / 20.0;
    let n = ((nu_hi - nu_lo) / step).ceil() as usize + 1;
    let t = |nu: f64| spec.transmission_unchecked(nu, temperature_c);
    // Pad by one step so that peaks near the edges are bracketed.
    let grid: Vec<f64> = (0..n + 2).map(|i| nu_lo + (i as f64 - 1.0) * step).collect();
    let values: Vec<f64> = grid.iter().map(|&nu| t(nu)).collect();
    let mut modes = Vec::new();
    for i in 1..grid.len() - 1 {
        if values[i] > values[i - 1] && values[i] >= values[i + 1] {
            let peak = golden_max(t, grid[i - 1], grid[i + 1], 1e3);
            if peak >= nu_lo && peak <= nu_hi {
                modes.push(peak);
            }
        }
    }
    let fsr_hz = modes.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(ModeComb {
        frequencies_hz: modes,
        fsr_hz,
        fwhm_hz: fwhm,
        temperature_c,
    })
}

/// Resonance of longitudinal order `order`, solved from φ(ν) = 2π·order by
/// Newton iteration starting at `guess_hz`.
pub fn resonance_of_order(spec: &ResonatorSpec, order: f64, temperature_c: f64, guess_hz: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut nu = guess_hz;
    for _ in 0..30 {
        let phi = spec.phase(nu, temperature_c);
        let h = 1e6;
        let dphi = (spec.phase(nu + h, temperature_c) - spec.phase(nu - h, temperature_c)) / (2.0 * h);
        let step = (phi - two_pi * order) / dphi;
        nu -= step;
        if step.abs() < 1e-3 {
            break;
        }
    }
    nu
}

/// Longitudinal order of the resonance nearest to `nu_hz`.
pub fn nearest_order(spec: &ResonatorSpec, nu_hz: f64, temperature_c: f64) -> f64 {
    (spec.phase(nu_hz, temperature_c) / (2.0 * std::f64::consts::PI)).round()
}

/// Resonance nearest to `nu_hz`.
pub fn nearest_resonance(spec: &ResonatorSpec, nu_hz: f64, temperature_c: f64) -> f64 {
    resonance_of_order(spec, nearest_order(spec, nu_hz, temperature_c), temperature_c, nu_hz)
}
