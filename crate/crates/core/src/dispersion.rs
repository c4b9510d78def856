//! Extraordinary-ray refractive index of the Ti:PPLN channel waveguide.
//!
//! The bulk index comes from a temperature-dependent Sellmeier fit for
//! congruent lithium niobate. Two constants map it onto the guided mode:
//! an additive effective-index offset (fixes the group index, hence the
//! cavity free spectral range) and a scale on the temperature dependence
//! (fixes the resonance tuning rate, which also absorbs thermal expansion).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{wavelength_nm_to_hz, C};

/// Temperature-dependent Sellmeier equation of the form
///
/// n² = a1 + b1·f + (a2 + b2·f)/(λ² − (a3 + b3·f)²) + (a4 + b4·f)/(λ² − a5²) − a6·λ²
///
/// with f = (T − t0)(T + t1), λ in µm and T in °C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SellmeierModel {
    pub name: String,
    /// `[a1, a2, a3, a4, a5, a6, b1, b2, b3, b4]`
    pub coefficients: Vec<f64>,
    /// `[t0, t1]` of the temperature parameter f.
    #[serde(default = "default_temperature_offsets")]
    pub temperature_offsets: [f64; 2],
    pub wavelength_range_um: [f64; 2],
    pub temperature_range_c: [f64; 2],
}

fn default_temperature_offsets() -> [f64; 2] {
    [24.5, 570.82]
}

impl SellmeierModel {
    /// Congruent LiNbO3, extraordinary ray (Jundt, 1997).
    pub fn congruent_ln_extraordinary() -> Self {
        SellmeierModel {
            name: "congruent LiNbO3 n_e (Jundt 1997)".to_string(),
            coefficients: vec![
                5.35583, 0.100473, 0.20692, 100.0, 11.34927, 1.5334e-2, 4.629e-7, 3.862e-8,
                -0.89e-8, 2.657e-5,
            ],
            temperature_offsets: default_temperature_offsets(),
            wavelength_range_um: [0.4, 5.0],
            temperature_range_c: [20.0, 250.0],
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let model: SellmeierModel =
            toml::from_str(text).map_err(|e| Error::Parse(format!("sellmeier file: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coefficients.len() != 10 {
            return Err(Error::Config(format!(
                "sellmeier model '{}' needs 10 coefficients, got {}",
                self.name,
                self.coefficients.len()
            )));
        }
        let [lo, hi] = self.wavelength_range_um;
        let [tlo, thi] = self.temperature_range_c;
        if !(lo > 0.0 && hi > lo && thi > tlo) {
            return Err(Error::Config(format!(
                "sellmeier model '{}' has an empty validity range",
                self.name
            )));
        }
        Ok(())
    }

    pub fn wavelength_range_nm(&self) -> (f64, f64) {
        let [lo, hi] = self.wavelength_range_um;
        (lo * 1e3, hi * 1e3)
    }

    pub fn temperature_range(&self) -> (f64, f64) {
        let [lo, hi] = self.temperature_range_c;
        (lo, hi)
    }

    pub fn check(&self, lambda_nm: f64, temperature_c: f64) -> Result<()> {
        let wl = self.wavelength_range_nm();
        if !(lambda_nm >= wl.0 && lambda_nm <= wl.1) {
            return Err(Error::domain("wavelength", lambda_nm, wl, "nm"));
        }
        let tr = self.temperature_range();
        if !(temperature_c >= tr.0 && temperature_c <= tr.1) {
            return Err(Error::domain("temperature", temperature_c, tr, "°C"));
        }
        Ok(())
    }

    /// Bulk index without range checks; λ in µm.
    #[inline]
    pub fn index_um(&self, lambda_um: f64, temperature_c: f64) -> f64 {
        let c = &self.coefficients;
        let [t0, t1] = self.temperature_offsets;
        let f = (temperature_c - t0) * (temperature_c + t1);
        let l2 = lambda_um * lambda_um;
        let uv = c[2] + c[8] * f;
        let n2 = c[0] + c[6] * f + (c[1] + c[7] * f) / (l2 - uv * uv)
            + (c[3] + c[9] * f) / (l2 - c[4] * c[4])
            - c[5] * l2;
        n2.sqrt()
    }

    pub fn index(&self, lambda_nm: f64, temperature_c: f64) -> Result<f64> {
        self.check(lambda_nm, temperature_c)?;
        Ok(self.index_um(lambda_nm * 1e-3, temperature_c))
    }
}

/// Additive correction δn(λ) between the bulk index and the guided mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IndexOffset {
    Constant { value: f64 },
    /// δn(λ) = value + slope_per_nm·(λ − reference_nm)
    Linear {
        value: f64,
        slope_per_nm: f64,
        reference_nm: f64,
    },
}

impl IndexOffset {
    #[inline]
    pub fn at(&self, lambda_nm: f64) -> f64 {
        match *self {
            IndexOffset::Constant { value } => value,
            IndexOffset::Linear {
                value,
                slope_per_nm,
                reference_nm,
            } => value + slope_per_nm * (lambda_nm - reference_nm),
        }
    }

    fn slope_per_nm(&self) -> f64 {
        match *self {
            IndexOffset::Constant { .. } => 0.0,
            IndexOffset::Linear { slope_per_nm, .. } => slope_per_nm,
        }
    }
}

/// Observables the waveguide model is pinned to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub wavelength_nm: f64,
    pub temperature_c: f64,
    pub cavity_length_cm: f64,
    pub fsr_hz: f64,
    pub tuning_pm_per_c: f64,
    /// Optional dδn/dλ (per nm); 0 keeps the offset constant.
    pub offset_slope_per_nm: f64,
}

impl CalibrationTarget {
    /// 3.6 cm resonator, FSR 1.8 GHz and 44.5 pm/°C at 1560 nm, 128.6 °C.
    pub fn ti_ppln_resonator() -> Self {
        CalibrationTarget {
            wavelength_nm: 1560.0,
            temperature_c: 128.6,
            cavity_length_cm: 3.6,
            fsr_hz: 1.8e9,
            tuning_pm_per_c: 44.5,
            offset_slope_per_nm: 0.0,
        }
    }

    /// Group index implied by the FSR target, c/(2·L·FSR).
    pub fn group_index(&self) -> f64 {
        C / (2.0 * self.cavity_length_cm * 1e-2 * self.fsr_hz)
    }
}

/// Effective index of the guided extraordinary mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveguideIndexModel {
    pub bulk: SellmeierModel,
    pub offset: IndexOffset,
    /// Scale applied to temperature excursions from `reference_temperature_c`.
    pub thermo_scale: f64,
    pub reference_temperature_c: f64,
    pub target: CalibrationTarget,
}

impl WaveguideIndexModel {
    /// Fits the index offset and the thermo-optic scale to `target`.
    pub fn calibrate(bulk: SellmeierModel, target: CalibrationTarget) -> Result<Self> {
        bulk.validate()?;
        let mut model = WaveguideIndexModel {
            bulk,
            offset: IndexOffset::Constant { value: 0.0 },
            thermo_scale: 1.0,
            reference_temperature_c: target.temperature_c,
            target,
        };
        let lambda = target.wavelength_nm;
        let t = target.temperature_c;
        // n_g is linear in the offset: n_g = n_g,bulk + δn − λ·dδn/dλ.
        let bulk_ng = model.group_index(lambda, t)?;
        let slope = target.offset_slope_per_nm;
        let value = target.group_index() - bulk_ng + lambda * slope;
        model.offset = if slope == 0.0 {
            IndexOffset::Constant { value }
        } else {
            IndexOffset::Linear {
                value,
                slope_per_nm: slope,
                reference_nm: lambda,
            }
        };
        // The tuning rate is linear in the scale at the reference temperature.
        let unit_rate = model.tuning_rate_pm_per_c(lambda, t)?;
        if !(unit_rate > 0.0) {
            return Err(Error::Model(format!(
                "bulk model gives non-positive resonance tuning ({unit_rate} pm/°C)"
            )));
        }
        model.thermo_scale = target.tuning_pm_per_c / unit_rate;
        Ok(model)
    }

    pub fn ti_ppln() -> Self {
        Self::calibrate(
            SellmeierModel::congruent_ln_extraordinary(),
            CalibrationTarget::ti_ppln_resonator(),
        )
        .expect("built-in calibration is feasible")
    }

    pub fn check(&self, lambda_nm: f64, temperature_c: f64) -> Result<()> {
        self.bulk.check(lambda_nm, temperature_c)
    }

    #[inline]
    fn scaled_temperature(&self, temperature_c: f64) -> f64 {
        self.reference_temperature_c
            + self.thermo_scale * (temperature_c - self.reference_temperature_c)
    }

    /// Effective index without range checks.
    #[inline]
    pub fn index_unchecked(&self, lambda_nm: f64, temperature_c: f64) -> f64 {
        self.bulk
            .index_um(lambda_nm * 1e-3, self.scaled_temperature(temperature_c))
            + self.offset.at(lambda_nm)
    }

    /// Effective index at an optical frequency, without range checks.
    #[inline]
    pub fn index_at_hz(&self, nu_hz: f64, temperature_c: f64) -> f64 {
        self.index_unchecked(C / nu_hz * 1e9, temperature_c)
    }

    /// n_eff(λ, T) = n_bulk(λ, T') + δn(λ).
    pub fn index(&self, lambda_nm: f64, temperature_c: f64) -> Result<f64> {
        self.check(lambda_nm, temperature_c)?;
        Ok(self.index_unchecked(lambda_nm, temperature_c))
    }

    fn derivative_step(lambda_nm: f64) -> f64 {
        lambda_nm * 1e-4
    }

    /// dn/dλ (per nm) by a Richardson-extrapolated central difference.
    pub fn dn_dlambda(&self, lambda_nm: f64, temperature_c: f64) -> Result<f64> {
        let h = Self::derivative_step(lambda_nm);
        let (lo, hi) = self.bulk.wavelength_range_nm();
        if lambda_nm - h < lo || lambda_nm + h > hi {
            return Err(Error::domain(
                "wavelength (needs a ±λ·1e-4 neighbourhood)",
                lambda_nm,
                (lo + h, hi - h),
                "nm",
            ));
        }
        self.check(lambda_nm, temperature_c)?;
        let d = |step: f64| {
            (self.index_unchecked(lambda_nm + step, temperature_c)
                - self.index_unchecked(lambda_nm - step, temperature_c))
                / (2.0 * step)
        };
        Ok((4.0 * d(h / 2.0) - d(h)) / 3.0)
    }

    /// Group index n_g = n − λ·dn/dλ.
    pub fn group_index(&self, lambda_nm: f64, temperature_c: f64) -> Result<f64> {
        let n = self.index(lambda_nm, temperature_c)?;
        Ok(n - lambda_nm * self.dn_dlambda(lambda_nm, temperature_c)?)
    }

    /// ∂n/∂T (per °C) at fixed wavelength.
    pub fn dn_dtemperature(&self, lambda_nm: f64, temperature_c: f64) -> Result<f64> {
        self.check(lambda_nm, temperature_c)?;
        let h = 1e-2;
        let n = |t: f64| self.index_unchecked(lambda_nm, t);
        let d = |s: f64| (n(temperature_c + s) - n(temperature_c - s)) / (2.0 * s);
        Ok((4.0 * d(h / 2.0) - d(h)) / 3.0)
    }

    /// Drift of a fixed-order cavity resonance, dλ/dT = λ·(∂n/∂T)/n_g, in pm/°C.
    pub fn tuning_rate_pm_per_c(&self, lambda_nm: f64, temperature_c: f64) -> Result<f64> {
        let ng = self.group_index(lambda_nm, temperature_c)?;
        Ok(lambda_nm * 1e3 * self.dn_dtemperature(lambda_nm, temperature_c)? / ng)
    }

    /// Free spectral range c/(2·n_g·L) of a cavity of length `length_cm`.
    pub fn fsr_hz(&self, length_cm: f64, lambda_nm: f64, temperature_c: f64) -> Result<f64> {
        Ok(C / (2.0 * self.group_index(lambda_nm, temperature_c)? * length_cm * 1e-2))
    }

    /// Offset slope in use (per nm).
    pub fn offset_slope_per_nm(&self) -> f64 {
        self.offset.slope_per_nm()
    }

    /// Frequency validity range of the underlying bulk model.
    pub fn frequency_range_hz(&self) -> (f64, f64) {
        let (lo, hi) = self.bulk.wavelength_range_nm();
        (wavelength_nm_to_hz(hi), wavelength_nm_to_hz(lo))
    }
}

/// Bulk index, for callers that do not need the waveguide correction.
pub fn index(model: &WaveguideIndexModel, lambda_nm: f64, temperature_c: f64) -> Result<f64> {
    model.index(lambda_nm, temperature_c)
}

pub fn group_index(model: &WaveguideIndexModel, lambda_nm: f64, temperature_c: f64) -> Result<f64> {
    model.group_index(lambda_nm, temperature_c)
}

#[cfg(test)]
mod tests {
    use super::*;

    const T_QPM: f64 = 128.6;

    #[test]
    fn bulk_index_matches_reference_script() {
        // Independent numpy evaluation of the same coefficients.
        let bulk = SellmeierModel::congruent_ln_extraordinary();
        let n = bulk.index(1560.0, T_QPM).unwrap();
        assert!((n - 2.142_146_672_434_946).abs() < 1e-12, "{n}");
        assert!((bulk.index(1550.0, 24.5).unwrap() - 2.13786).abs() < 1e-4);
    }

    #[test]
    fn effective_index_in_expected_bracket() {
        let model = WaveguideIndexModel::ti_ppln();
        let n = model.index(1560.0, T_QPM).unwrap();
        assert!(n > 2.1 && n < 2.3, "{n}");
        assert_eq!(n, model.index(1560.0, T_QPM).unwrap());
    }

    #[test]
    fn out_of_range_inputs_name_the_range() {
        let model = WaveguideIndexModel::ti_ppln();
        let err = model.index(350.0, T_QPM).unwrap_err().to_string();
        assert!(err.contains("wavelength") && err.contains("400"), "{err}");
        let err = model.index(1560.0, 300.0).unwrap_err().to_string();
        assert!(err.contains("temperature"), "{err}");
        assert!(model.group_index(400.01, T_QPM).is_err());
    }

    #[test]
    fn group_index_is_calibrated_to_fsr() {
        let model = WaveguideIndexModel::ti_ppln();
        let ng = model.group_index(1560.0, T_QPM).unwrap();
        // c / (2 × 3.6 cm × 1.8 GHz)
        assert!((ng - 2.315).abs() < 0.012, "{ng}");
        assert!((ng - 2.313_213_410_493_8).abs() < 1e-9, "{ng}");
        let n = model.index(1560.0, T_QPM).unwrap();
        assert!(ng > n);
        assert_eq!(ng, model.group_index(1560.0, T_QPM).unwrap());
        let fsr = model.fsr_hz(3.6, 1560.0, T_QPM).unwrap();
        assert!(((fsr - 1.8e9) / 1.8e9).abs() < 0.005);
    }

    #[test]
    fn group_index_derivative_agrees_with_reference_step() {
        // Oracle: plain central difference with a much smaller step.
        let model = WaveguideIndexModel::ti_ppln();
        let h = 1e-3;
        let fd = (model.index(1560.0 + h, T_QPM).unwrap() - model.index(1560.0 - h, T_QPM).unwrap())
            / (2.0 * h);
        let ours = model.dn_dlambda(1560.0, T_QPM).unwrap();
        assert!(((ours - fd) / fd).abs() < 1e-6, "{ours} vs {fd}");
    }

    #[test]
    fn thermo_scale_matches_reference_script() {
        let model = WaveguideIndexModel::ti_ppln();
        assert!((model.thermo_scale - 1.309_216).abs() < 1e-4, "{}", model.thermo_scale);
        let rate = model.tuning_rate_pm_per_c(1560.0, T_QPM).unwrap();
        assert!((rate - 44.5).abs() < 1e-6, "{rate}");
    }

    #[test]
    fn linear_offset_keeps_group_index_target() {
        let mut target = CalibrationTarget::ti_ppln_resonator();
        target.offset_slope_per_nm = 2e-5;
        let model =
            WaveguideIndexModel::calibrate(SellmeierModel::congruent_ln_extraordinary(), target)
                .unwrap();
        let ng = model.group_index(1560.0, T_QPM).unwrap();
        assert!((ng - target.group_index()).abs() < 1e-9);
        assert!((model.tuning_rate_pm_per_c(1560.0, T_QPM).unwrap() - 44.5).abs() < 1e-6);
    }

    #[test]
    fn sellmeier_file_round_trip() {
        let text = r#"
            name = "test"
            coefficients = [5.35583, 0.100473, 0.20692, 100.0, 11.34927, 1.5334e-2, 4.629e-7, 3.862e-8, -0.89e-8, 2.657e-5]
            wavelength_range_um = [0.4, 5.0]
            temperature_range_c = [20.0, 250.0]
        "#;
        let model = SellmeierModel::from_toml_str(text).unwrap();
        let builtin = SellmeierModel::congruent_ln_extraordinary();
        assert_eq!(
            model.index(1560.0, 100.0).unwrap(),
            builtin.index(1560.0, 100.0).unwrap()
        );
        assert!(SellmeierModel::from_toml_str("name = 'x'\ncoefficients = [1.0]\nwavelength_range_um=[0.4,5.0]\ntemperature_range_c=[20.0,30.0]").is_err());
    }

    proptest::proptest! {
        #[test]
        fn index_is_finite_and_above_one(lambda in 400.0f64..5000.0, t in 20.0f64..250.0) {
            let n = WaveguideIndexModel::ti_ppln().index(lambda, t).unwrap();
            proptest::prop_assert!(n.is_finite() && n > 1.0);
        }
    }
}
