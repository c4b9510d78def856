//! Run configuration shared by the command-line tool and the reproduction
//! harness. Every field has a default, so an empty file is a complete
//! configuration of the Ti:PPLN source and its detection setup.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::DEFAULT_BIN_PS;
use crate::cavity::{loss_from_finesse, Mirror, MirrorCurve, ResonatorSpec};
use crate::dispersion::{CalibrationTarget, SellmeierModel, WaveguideIndexModel};
use crate::error::{Error, Result};
use crate::montecarlo::{DetectorSpec, FransonConfig, OpticalChain, SimConfig};
use crate::spdc::{FilterSpec, PidGains, PumpSpec, QpmSpec, SpdcModel, ThermalPlant, LOCK_FRACTION};

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "WGOPO_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CavityConfig {
    pub length_cm: f64,
    pub reflectivity: [f64; 2],
    /// Propagation loss; when absent it is fitted to `finesse`.
    pub loss_db_per_cm: Option<f64>,
    pub finesse: f64,
    /// Optional two-column (nm, transmittance) tables replacing the flat
    /// reflectivities.
    pub mirror_curve_1: Option<PathBuf>,
    pub mirror_curve_2: Option<PathBuf>,
}

impl Default for CavityConfig {
    fn default() -> Self {
        CavityConfig {
            length_cm: 3.6,
            reflectivity: [0.85, 0.85],
            loss_db_per_cm: None,
            finesse: 15.4,
            mirror_curve_1: None,
            mirror_curve_2: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DispersionConfig {
    pub fsr_ghz: f64,
    pub tuning_pm_per_c: f64,
    pub calibration_wavelength_nm: f64,
    pub reference_temperature_c: f64,
    /// TOML file with alternative Sellmeier coefficients.
    pub sellmeier_file: Option<PathBuf>,
}

impl Default for DispersionConfig {
    fn default() -> Self {
        let t = CalibrationTarget::ti_ppln_resonator();
        DispersionConfig {
            fsr_ghz: t.fsr_hz * 1e-9,
            tuning_pm_per_c: t.tuning_pm_per_c,
            calibration_wavelength_nm: t.wavelength_nm,
            reference_temperature_c: t.temperature_c,
            sellmeier_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpmConfig {
    pub poling_period_um: f64,
    pub phase_match_temperature_c: f64,
}

impl Default for QpmConfig {
    fn default() -> Self {
        let q = QpmSpec::ti_ppln();
        QpmConfig {
            poling_period_um: q.poling_period_um,
            phase_match_temperature_c: q.phase_match_temperature_c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Signal filter centre; when absent it is placed on the cavity mode
    /// doubly resonant nearest `operating_temperature_c`.
    pub signal_nm: Option<f64>,
    pub idler_nm: f64,
    pub fwhm_pm: f64,
    pub operating_temperature_c: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let f = FilterSpec::fiber_bragg();
        FilterConfig {
            signal_nm: None,
            idler_nm: f.idler_nm,
            fwhm_pm: f.fwhm_pm,
            operating_temperature_c: 128.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    /// When absent, the temperature at which the filter mode is doubly
    /// resonant, nearest the filter's operating temperature.
    pub temperature_c: Option<f64>,
    pub band_nm: [f64; 2],
    /// Keep every n-th grid point in CSV output.
    pub csv_stride: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            temperature_c: None,
            band_nm: [1500.0, 1625.0],
            csv_stride: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub t_min_c: f64,
    pub t_max_c: f64,
    pub step_c: f64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            t_min_c: 128.2,
            t_max_c: 129.0,
            step_c: 0.002,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LockConfig {
    pub duration_s: f64,
    pub settle_s: f64,
    pub t_near_c: f64,
    pub gains: PidGains,
    pub time_constant_s: f64,
    pub drift_c_per_min: f64,
    /// Locked count rate; the peak rate is this divided by the lock fraction.
    pub locked_cps: f64,
    pub dt_s: f64,
    pub initial_offset_c: f64,
}

impl Default for LockConfig {
    fn default() -> Self {
        let p = ThermalPlant::default();
        LockConfig {
            duration_s: 1200.0,
            settle_s: 200.0,
            t_near_c: 128.58,
            gains: PidGains::default(),
            time_constant_s: p.time_constant_s,
            drift_c_per_min: p.drift_c_per_min,
            locked_cps: 3400.0,
            dt_s: p.dt_s,
            initial_offset_c: p.initial_offset_c,
        }
    }
}

impl LockConfig {
    pub fn plant(&self) -> ThermalPlant {
        ThermalPlant {
            time_constant_s: self.time_constant_s,
            drift_c_per_min: self.drift_c_per_min,
            peak_cps: self.locked_cps / LOCK_FRACTION,
            dt_s: self.dt_s,
            initial_offset_c: self.initial_offset_c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub pair_rate_hz: f64,
    pub linewidth_mhz: f64,
    pub duration_s: f64,
    pub escape_probability: f64,
    pub slab_s: f64,
    pub chain: OpticalChain,
    pub detectors: [DetectorSpec; 2],
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let s = SimConfig::default();
        SimulationConfig {
            pair_rate_hz: s.pair_rate_hz,
            linewidth_mhz: s.linewidth_mhz,
            duration_s: s.duration_s,
            escape_probability: s.escape_probability,
            slab_s: s.slab_s,
            chain: s.chain,
            detectors: s.detectors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FransonSection {
    pub arm_delay_ns: f64,
    pub visibility: f64,
    pub split: f64,
    pub phase_points: usize,
    pub integration_s: f64,
    pub window_ns: f64,
}

impl Default for FransonSection {
    fn default() -> Self {
        let f = FransonConfig::reference(0.0);
        FransonSection {
            arm_delay_ns: f.arm_delay_ns,
            visibility: f.visibility,
            split: f.split,
            phase_points: 12,
            integration_s: 100.0,
            window_ns: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub bin_width_ps: f64,
    /// Histograms cover ±span around zero delay.
    pub span_ns: f64,
    /// Seeds used by the G² round-trip statistics.
    pub g2_trials: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bin_width_ps: DEFAULT_BIN_PS,
            span_ns: 20.0,
            g2_trials: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub cavity: CavityConfig,
    pub dispersion: DispersionConfig,
    pub qpm: QpmConfig,
    pub pump: PumpSpec,
    pub filter: FilterConfig,
    pub spectrum: SpectrumConfig,
    pub tune: TuneConfig,
    pub lock: LockConfig,
    pub simulation: SimulationConfig,
    pub franson: FransonSection,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            cavity: CavityConfig::default(),
            dispersion: DispersionConfig::default(),
            qpm: QpmConfig::default(),
            pump: PumpSpec::rb_locked(),
            filter: FilterConfig::default(),
            spectrum: SpectrumConfig::default(),
            tune: TuneConfig::default(),
            lock: LockConfig::default(),
            simulation: SimulationConfig::default(),
            franson: FransonSection::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

/// Parses a `value` given on the command line as a TOML literal, falling
/// back to a bare string.
fn parse_literal(value: &str) -> toml::Value {
    let wrapped = format!("v = {value}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => {
                return Err(Error::Config(format!(
                    "override `{key}`: `{part}` is not a section"
                )))
            }
        };
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text`, then applies `key.path=value` overrides before the
    /// defaults are filled in, so overrides are type-checked like file
    /// entries.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            set_path(&mut table, k.trim(), parse_literal(v.trim()))?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    /// Explicit path, then the environment variable, then built-in defaults.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            Some(p) => Self::load(p, overrides),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p), overrides),
                _ => Self::from_toml_with_overrides("", overrides),
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.sim_config()?.validate()?;
        let s = &self.spectrum;
        if !(s.band_nm[1] > s.band_nm[0]) || s.csv_stride == 0 {
            return Err(Error::Config("spectrum band must be increasing and stride ≥ 1".into()));
        }
        let t = &self.tune;
        if !(t.t_max_c > t.t_min_c) || !(t.step_c > 0.0) {
            return Err(Error::Config("tune range must be increasing with a positive step".into()));
        }
        if !(self.analysis.bin_width_ps > 0.0) || !(self.analysis.span_ns > 0.0) {
            return Err(Error::Config("analysis bin width and span must be positive".into()));
        }
        if self.franson.phase_points == 0 || !(self.franson.window_ns > 0.0) {
            return Err(Error::Config("Franson scan needs points and a positive window".into()));
        }
        Ok(())
    }

    pub fn resonator(&self) -> Result<ResonatorSpec> {
        let c = &self.cavity;
        let d = &self.dispersion;
        let bulk = match &d.sellmeier_file {
            Some(p) => SellmeierModel::load(p)?,
            None => SellmeierModel::congruent_ln_extraordinary(),
        };
        let target = CalibrationTarget {
            wavelength_nm: d.calibration_wavelength_nm,
            temperature_c: d.reference_temperature_c,
            cavity_length_cm: c.length_cm,
            fsr_hz: d.fsr_ghz * 1e9,
            tuning_pm_per_c: d.tuning_pm_per_c,
            offset_slope_per_nm: 0.0,
        };
        let index = WaveguideIndexModel::calibrate(bulk, target)?;
        let alpha = match c.loss_db_per_cm {
            Some(a) => a,
            None => loss_from_finesse(c.finesse, c.reflectivity[0], c.reflectivity[1], c.length_cm)?,
        };
        let mut spec = ResonatorSpec::new(c.length_cm, c.reflectivity[0], c.reflectivity[1], alpha, index)?;
        for (k, curve) in [&c.mirror_curve_1, &c.mirror_curve_2].into_iter().enumerate() {
            if let Some(p) = curve {
                spec.mirrors[k] = Mirror::Curve(MirrorCurve::load(p)?);
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn spdc_model(&self) -> Result<SpdcModel> {
        let qpm = QpmSpec {
            poling_period_um: self.qpm.poling_period_um,
            phase_match_temperature_c: self.qpm.phase_match_temperature_c,
            length_cm: self.cavity.length_cm,
            ..QpmSpec::ti_ppln()
        };
        let f = &self.filter;
        let filter = FilterSpec {
            signal_nm: f.signal_nm.unwrap_or(FilterSpec::fiber_bragg().signal_nm),
            idler_nm: f.idler_nm,
            fwhm_pm: f.fwhm_pm,
        };
        let mut model = SpdcModel::new(self.resonator()?, qpm, self.pump.clone(), filter)?;
        if f.signal_nm.is_none() {
            model.snap_signal_filter(f.operating_temperature_c)?;
        }
        Ok(model)
    }

    pub fn spectrum_temperature(&self, model: &SpdcModel) -> Result<f64> {
        match self.spectrum.temperature_c {
            Some(t) => Ok(t),
            None => model.pair_resonance_temperature(
                model.filter.signal_nm,
                self.filter.operating_temperature_c,
            ),
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let s = &self.simulation;
        Ok(SimConfig {
            pair_rate_hz: s.pair_rate_hz,
            linewidth_mhz: s.linewidth_mhz,
            duration_s: s.duration_s,
            seed: self.seed,
            chain: s.chain.clone(),
            escape_probability: s.escape_probability,
            detectors: s.detectors.clone(),
            franson: None,
            slab_s: s.slab_s,
        })
    }

    /// Simulation with the folded interferometer at total phase `phase`.
    pub fn franson_sim(&self, phase_rad: f64) -> Result<SimConfig> {
        let f = &self.franson;
        let fc = FransonConfig {
            arm_delay_ns: f.arm_delay_ns,
            visibility: f.visibility,
            phase_rad,
            split: f.split,
        };
        fc.validate(self.simulation.linewidth_mhz, self.pump.coherence_time_s())?;
        Ok(SimConfig {
            franson: Some(fc),
            duration_s: f.integration_s,
            ..self.sim_config()?
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.sim_config().unwrap(), SimConfig::default());
    }

    #[test]
    fn round_trip_and_overrides() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let o = RunConfig::from_toml_with_overrides(
            "seed = 1\n[simulation]\nduration_s = 5.0\n",
            &[
                "seed=7".into(),
                "simulation.pair_rate_hz=1e6".into(),
                "lock.gains.kp = 0.5".into(),
            ],
        )
        .unwrap();
        assert_eq!(o.seed, 7);
        assert_eq!(o.simulation.duration_s, 5.0);
        assert_eq!(o.simulation.pair_rate_hz, 1e6);
        assert_eq!(o.lock.gains.kp, 0.5);
    }

    #[test]
    fn bad_input_rejected() {
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
        assert!(RunConfig::from_toml_str("[simulation]\nduration_s = \"long\"").is_err());
        assert!(RunConfig::from_toml_with_overrides("", &["seed".into()]).is_err());
        assert!(RunConfig::from_toml_with_overrides("", &["seed.x=1".into()]).is_err());
        assert!(RunConfig::from_toml_with_overrides("", &["simulation.duration_s=-1".into()]).is_err());
    }

    #[test]
    fn builds_models() {
        let c = RunConfig::default();
        let m = c.spdc_model().unwrap();
        assert!((m.filter.signal_nm - 1559.4989).abs() < 1e-3, "{}", m.filter.signal_nm);
        let f = c.franson_sim(0.3).unwrap();
        assert_eq!(f.franson.unwrap().phase_rad, 0.3);
    }
}
