//! Quasi-phase-matched down-conversion inside the doubly resonant cavity:
//! phase-matching envelope, cluster spectrum, Giordmaine–Miller pairing and
//! the temperature search for double resonance.

mod lock;

pub use lock::{
    lock_step, simulate_lock, LockState, LockTrace, PidGains, ThermalPlant, LOCK_FRACTION,
};

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cavity::{
    airy_normalised, golden_max, mode_comb, nearest_order, resonance_of_order, ModeComb,
    ResonatorSpec, REFERENCE_WAVELENGTH_NM,
};
use crate::error::{Error, Result};
use crate::units::{bandwidth_pm_to_mhz, hz_to_wavelength_nm, wavelength_nm_to_hz, C};

/// Default signal band for spectra, roughly symmetric about degeneracy.
pub const DEFAULT_BAND_NM: (f64, f64) = (1500.0, 1625.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpmSpec {
    pub poling_period_um: f64,
    pub interaction: String,
    pub phase_match_temperature_c: f64,
    pub length_cm: f64,
    /// Constant subtracted from the bare mismatch so that it vanishes at
    /// degeneracy and the phase-match temperature. Set by [`SpdcModel::new`].
    #[serde(default)]
    pub mismatch_offset_per_m: f64,
}

impl QpmSpec {
    pub fn ti_ppln() -> Self {
        QpmSpec {
            poling_period_um: 16.6,
            interaction: "type-I eee".into(),
            phase_match_temperature_c: 128.6,
            length_cm: 3.6,
            mismatch_offset_per_m: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.poling_period_um > 0.0) || !(self.length_cm > 0.0) {
            return Err(Error::InvalidInput(format!(
                "poling period and length must be positive (Λ = {} µm, L = {} cm)",
                self.poling_period_um, self.length_cm
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PumpSpec {
    pub wavelength_nm: f64,
    pub power_mw: f64,
    pub linewidth_hz: f64,
}

impl Default for PumpSpec {
    fn default() -> Self {
        Self::rb_locked()
    }
}

impl PumpSpec {
    pub fn rb_locked() -> Self {
        PumpSpec {
            wavelength_nm: 780.027,
            power_mw: 1.6,
            linewidth_hz: 1e6,
        }
    }

    pub fn frequency_hz(&self) -> f64 {
        wavelength_nm_to_hz(self.wavelength_nm)
    }

    /// Pump coherence time 1/(π·linewidth), in seconds.
    pub fn coherence_time_s(&self) -> f64 {
        1.0 / (PI * self.linewidth_hz)
    }

    fn validate(&self) -> Result<()> {
        if !(self.wavelength_nm > 0.0) || !(self.power_mw >= 0.0) || !(self.linewidth_hz > 0.0) {
            return Err(Error::InvalidInput(format!(
                "pump needs λ > 0, P ≥ 0 and linewidth > 0 (got {} nm, {} mW, {} Hz)",
                self.wavelength_nm, self.power_mw, self.linewidth_hz
            )));
        }
        Ok(())
    }
}

/// Lorentzian band-pass filters in front of the two detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub signal_nm: f64,
    pub idler_nm: f64,
    pub fwhm_pm: f64,
}

impl FilterSpec {
    pub fn fiber_bragg() -> Self {
        FilterSpec {
            signal_nm: 1559.5,
            idler_nm: 1561.5,
            fwhm_pm: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdcModel {
    pub resonator: ResonatorSpec,
    pub qpm: QpmSpec,
    pub pump: PumpSpec,
    pub filter: FilterSpec,
    /// Cluster edge as a fraction of the in-band maximum weight.
    pub cluster_threshold: f64,
    /// Sampling step of cluster spectra.
    pub grid_step_hz: f64,
}

/// Doubly resonant emission weight sampled on a signal-frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpectrum {
    pub frequencies_hz: Vec<f64>,
    pub weight: Vec<f64>,
    /// Sliding maximum of `weight` over ±FSR/2: the envelope of the comb.
    pub peak_hold: Vec<f64>,
    pub temperature_c: f64,
    /// Absolute weight at the cluster edge.
    pub threshold: f64,
    pub clusters: Vec<Cluster>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub start_hz: f64,
    pub end_hz: f64,
    pub peak_hz: f64,
    pub peak_weight: f64,
}

impl Cluster {
    pub fn contains_hz(&self, nu_hz: f64) -> bool {
        nu_hz >= self.start_hz && nu_hz <= self.end_hz
    }

    /// (short, long) wavelength edges in nm.
    pub fn wavelength_range_nm(&self) -> (f64, f64) {
        (hz_to_wavelength_nm(self.end_hz), hz_to_wavelength_nm(self.start_hz))
    }
}

impl ClusterSpectrum {
    pub fn max_weight(&self) -> f64 {
        self.weight.iter().cloned().fold(0.0, f64::max)
    }

    pub fn cluster_containing_nm(&self, lambda_nm: f64) -> Option<&Cluster> {
        let nu = wavelength_nm_to_hz(lambda_nm);
        self.clusters.iter().find(|c| c.contains_hz(nu))
    }

    /// Envelope value at the grid point nearest `lambda_nm`.
    pub fn peak_hold_at_nm(&self, lambda_nm: f64) -> Option<f64> {
        let nu = wavelength_nm_to_hz(lambda_nm);
        let f = &self.frequencies_hz;
        if f.is_empty() || nu < f[0] || nu > f[f.len() - 1] {
            return None;
        }
        let i = f.partition_point(|&v| v < nu).min(f.len() - 1);
        Some(self.peak_hold[i])
    }

    /// CSV with every `stride`-th grid point; the envelope column keeps the
    /// maximum over the skipped points so no resonance is lost.
    pub fn to_csv(&self, stride: usize) -> String {
        let stride = stride.max(1);
        let mut out = String::from("frequency_thz,wavelength_nm,weight,envelope\n");
        for (start, chunk) in self.weight.chunks(stride).enumerate() {
            let i = start * stride;
            let env = self.peak_hold[i..i + chunk.len()]
                .iter()
                .cloned()
                .fold(0.0, f64::max);
            let nu = self.frequencies_hz[i];
            let _ = writeln!(
                out,
                "{:.9},{:.6},{:.6e},{:.6e}",
                nu * 1e-12,
                hz_to_wavelength_nm(nu),
                self.weight[i],
                env
            );
        }
        out
    }

    pub fn clusters_csv(&self) -> String {
        let mut out =
            String::from("start_nm,end_nm,peak_nm,peak_weight\n");
        for c in &self.clusters {
            let (lo, hi) = c.wavelength_range_nm();
            let _ = writeln!(
                out,
                "{:.4},{:.4},{:.4},{:.6}",
                lo,
                hi,
                hz_to_wavelength_nm(c.peak_hz),
                c.peak_weight
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModePair {
    pub signal_order: f64,
    pub signal_hz: f64,
    pub idler_order: f64,
    pub idler_hz: f64,
    /// ν_s + ν_i − ν_p.
    pub detuning_hz: f64,
}

/// Signal comb against the idler comb mirrored through ν_p − ν.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmDiagram {
    pub signal: ModeComb,
    pub idler: ModeComb,
    /// One entry per signal mode, paired with its nearest idler mode.
    pub pairs: Vec<ModePair>,
    /// Per idler mode: (ν_p − ν_s,nearest) − ν_i, i.e. the same mismatch
    /// read on the idler axis.
    pub idler_detuning_hz: Vec<f64>,
    pub fwhm_hz: f64,
    pub pump_hz: f64,
    pub temperature_c: f64,
}

impl GmDiagram {
    pub fn resonant_pairs(&self) -> impl Iterator<Item = &ModePair> {
        let half = 0.5 * self.fwhm_hz;
        self.pairs.iter().filter(move |p| p.detuning_hz.abs() <= half)
    }

    pub fn pair_nearest_nm(&self, lambda_nm: f64) -> Option<&ModePair> {
        let nu = wavelength_nm_to_hz(lambda_nm);
        self.pairs.iter().min_by(|a, b| {
            (a.signal_hz - nu)
                .abs()
                .partial_cmp(&(b.signal_hz - nu).abs())
                .unwrap()
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "signal_order,signal_nm,idler_order,idler_nm,detuning_mhz,doubly_resonant\n",
        );
        let half = 0.5 * self.fwhm_hz;
        for p in &self.pairs {
            let _ = writeln!(
                out,
                "{},{:.6},{},{:.6},{:.4},{}",
                p.signal_order,
                hz_to_wavelength_nm(p.signal_hz),
                p.idler_order,
                hz_to_wavelength_nm(p.idler_hz),
                p.detuning_hz * 1e-6,
                u8::from(p.detuning_hz.abs() <= half)
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleResonance {
    pub temperature_c: f64,
    pub weight: f64,
}

impl SpdcModel {
    /// Assembles a model and fixes the QPM offset so that the mismatch is zero
    /// at degeneracy and the phase-match temperature.
    pub fn new(
        resonator: ResonatorSpec,
        mut qpm: QpmSpec,
        pump: PumpSpec,
        filter: FilterSpec,
    ) -> Result<Self> {
        resonator.validate()?;
        qpm.validate()?;
        pump.validate()?;
        if !(filter.fwhm_pm > 0.0) {
            return Err(Error::InvalidInput(format!(
                "filter width must be positive, got {} pm",
                filter.fwhm_pm
            )));
        }
        qpm.mismatch_offset_per_m = 0.0;
        let mut model = SpdcModel {
            resonator,
            qpm,
            pump,
            filter,
            cluster_threshold: 0.5,
            grid_step_hz: 10e6,
        };
        let t = model.qpm.phase_match_temperature_c;
        model.check_pair(model.pump_hz() / 2.0, t)?;
        model.qpm.mismatch_offset_per_m = model.raw_mismatch(model.pump_hz() / 2.0, t);
        Ok(model)
    }

    /// The monolithic Ti:PPLN source with its signal filter centred on the
    /// cavity mode that is doubly resonant closest to 128.6 °C.
    pub fn ti_ppln() -> Self {
        let mut model = Self::new(
            ResonatorSpec::ti_ppln(),
            QpmSpec::ti_ppln(),
            PumpSpec::rb_locked(),
            FilterSpec::fiber_bragg(),
        )
        .expect("built-in parameters are valid");
        model
            .snap_signal_filter(128.6)
            .expect("a double resonance exists near the phase-match temperature");
        model
    }

    #[inline]
    pub fn pump_hz(&self) -> f64 {
        self.pump.frequency_hz()
    }

    pub fn degeneracy_nm(&self) -> f64 {
        2.0 * self.pump.wavelength_nm
    }

    fn check_pair(&self, nu_s: f64, temperature_c: f64) -> Result<()> {
        let idx = &self.resonator.index;
        idx.check(self.pump.wavelength_nm, temperature_c)?;
        idx.check(hz_to_wavelength_nm(nu_s), temperature_c)?;
        let nu_i = self.pump_hz() - nu_s;
        if !(nu_i > 0.0) {
            return Err(Error::InvalidInput(format!(
                "signal at {:.3} nm leaves no energy for the idler",
                hz_to_wavelength_nm(nu_s)
            )));
        }
        idx.check(hz_to_wavelength_nm(nu_i), temperature_c)
    }

    #[inline]
    fn raw_mismatch(&self, nu_s: f64, temperature_c: f64) -> f64 {
        let idx = &self.resonator.index;
        let k = |nu: f64| idx.index_at_hz(nu, temperature_c) * nu / C;
        let nu_p = self.pump_hz();
        let nu_i = nu_p - nu_s;
        2.0 * PI * (k(nu_p) - (k(nu_s) + k(nu_i)) - 1e6 / self.qpm.poling_period_um)
    }

    /// Δβ in rad/m, without range checks.
    #[inline]
    pub fn phase_mismatch_at_hz(&self, nu_s: f64, temperature_c: f64) -> f64 {
        self.raw_mismatch(nu_s, temperature_c) - self.qpm.mismatch_offset_per_m
    }

    /// Δβ = β_p − β_s − β_i − 2π/Λ (rad/m), idler from energy conservation.
    pub fn phase_mismatch(&self, signal_nm: f64, temperature_c: f64) -> Result<f64> {
        let nu_s = wavelength_nm_to_hz(signal_nm);
        self.check_pair(nu_s, temperature_c)?;
        Ok(self.phase_mismatch_at_hz(nu_s, temperature_c))
    }

    #[inline]
    pub fn envelope_at_hz(&self, nu_s: f64, temperature_c: f64) -> f64 {
        let x = 0.5 * self.phase_mismatch_at_hz(nu_s, temperature_c) * self.qpm.length_cm * 1e-2;
        if x == 0.0 {
            1.0
        } else {
            let s = x.sin() / x;
            s * s
        }
    }

    /// sinc²(Δβ·L/2).
    pub fn envelope(&self, signal_nm: f64, temperature_c: f64) -> Result<f64> {
        let nu_s = wavelength_nm_to_hz(signal_nm);
        self.check_pair(nu_s, temperature_c)?;
        Ok(self.envelope_at_hz(nu_s, temperature_c))
    }

    #[inline]
    fn round_trip_factor(&self) -> f64 {
        self.resonator.round_trip_factor(REFERENCE_WAVELENGTH_NM)
    }

    /// envelope(ν_s) · Airy(ν_s) · Airy(ν_p − ν_s), without range checks.
    #[inline]
    pub fn weight_at_hz(&self, nu_s: f64, temperature_c: f64) -> f64 {
        let nu_i = self.pump_hz() - nu_s;
        if self.resonator.has_flat_mirrors() {
            let rho = self.round_trip_factor();
            self.envelope_at_hz(nu_s, temperature_c)
                * airy_normalised(rho, self.resonator.phase(nu_s, temperature_c))
                * airy_normalised(rho, self.resonator.phase(nu_i, temperature_c))
        } else {
            self.envelope_at_hz(nu_s, temperature_c)
                * self.resonator.airy_unchecked(nu_s, temperature_c)
                * self.resonator.airy_unchecked(nu_i, temperature_c)
        }
    }

    fn band_hz(&self, band_nm: (f64, f64), temperature_c: f64) -> Result<(f64, f64)> {
        let (lo_nm, hi_nm) = (band_nm.0.min(band_nm.1), band_nm.0.max(band_nm.1));
        let (nu_lo, nu_hi) = (wavelength_nm_to_hz(hi_nm), wavelength_nm_to_hz(lo_nm));
        self.check_pair(nu_lo, temperature_c)?;
        self.check_pair(nu_hi, temperature_c)?;
        Ok((nu_lo, nu_hi))
    }

    /// Emission weight over `band_nm` on a grid anchored at ν_p/2, with
    /// clusters extracted from the comb envelope.
    pub fn cluster_spectrum(&self, temperature_c: f64, band_nm: (f64, f64)) -> Result<ClusterSpectrum> {
        let (nu_lo, nu_hi) = self.band_hz(band_nm, temperature_c)?;
        if !(self.grid_step_hz > 0.0) {
            return Err(Error::InvalidInput("grid step must be positive".into()));
        }
        let centre = 0.5 * self.pump_hz();
        let step = self.grid_step_hz;
        let j_lo = ((nu_lo - centre) / step).ceil() as i64;
        let j_hi = ((nu_hi - centre) / step).floor() as i64;
        let frequencies_hz: Vec<f64> = (j_lo..=j_hi).map(|j| centre + j as f64 * step).collect();
        let weight: Vec<f64> = frequencies_hz
            .par_iter()
            .map(|&nu| self.weight_at_hz(nu, temperature_c))
            .collect();
        let mid = hz_to_wavelength_nm(0.5 * (nu_lo + nu_hi));
        let fsr = self.resonator.fsr_hz(mid, temperature_c)?;
        let half_window = ((0.5 * fsr / step).round() as usize).max(1);
        let peak_hold = sliding_max(&weight, half_window);
        let max = weight.iter().cloned().fold(0.0, f64::max);
        let threshold = self.cluster_threshold * max;
        let clusters = if max > 0.0 {
            extract_clusters(&frequencies_hz, &weight, &peak_hold, threshold)
        } else {
            Vec::new()
        };
        Ok(ClusterSpectrum {
            frequencies_hz,
            weight,
            peak_hold,
            temperature_c,
            threshold,
            clusters,
        })
    }

    /// Signal and idler combs with each signal mode paired to the idler mode
    /// nearest to ν_p − ν_s.
    pub fn gm_diagram(&self, temperature_c: f64, band_nm: (f64, f64)) -> Result<GmDiagram> {
        let (nu_lo, nu_hi) = self.band_hz(band_nm, temperature_c)?;
        let nu_p = self.pump_hz();
        let signal = mode_comb(
            &self.resonator,
            temperature_c,
            (hz_to_wavelength_nm(nu_hi), hz_to_wavelength_nm(nu_lo)),
        )?;
        // Pad the mirrored band by a couple of modes so edge modes find partners.
        let pad = 2.0 * self.resonator.fsr_hz(hz_to_wavelength_nm(nu_p - nu_lo), temperature_c)?;
        let idler_band = (
            hz_to_wavelength_nm(nu_p - nu_lo + pad),
            hz_to_wavelength_nm(nu_p - nu_hi - pad),
        );
        let idler = mode_comb(&self.resonator, temperature_c, idler_band)?;
        let order = |nu: f64| nearest_order(&self.resonator, nu, temperature_c);
        let pairs = signal
            .frequencies_hz
            .iter()
            .filter_map(|&nu_s| {
                idler.nearest(nu_p - nu_s).map(|(_, nu_i)| ModePair {
                    signal_order: order(nu_s),
                    signal_hz: nu_s,
                    idler_order: order(nu_i),
                    idler_hz: nu_i,
                    detuning_hz: nu_s + nu_i - nu_p,
                })
            })
            .collect();
        let idler_detuning_hz = idler
            .frequencies_hz
            .iter()
            .map(|&nu_i| match signal.nearest(nu_p - nu_i) {
                Some((_, nu_s)) => (nu_p - nu_s) - nu_i,
                None => f64::NAN,
            })
            .collect();
        Ok(GmDiagram {
            fwhm_hz: signal.fwhm_hz,
            signal,
            idler,
            pairs,
            idler_detuning_hz,
            pump_hz: nu_p,
            temperature_c,
        })
    }

    /// Emission weight seen through the signal filter, relative to one
    /// perfectly doubly resonant mode at the filter centre.
    pub fn filtered_weight(&self, temperature_c: f64) -> Result<f64> {
        let nu_f = wavelength_nm_to_hz(self.filter.signal_nm);
        self.check_pair(nu_f, temperature_c)?;
        let fsr = self.resonator.fsr_hz(self.filter.signal_nm, temperature_c)?;
        let hwhm = 0.5e6 * bandwidth_pm_to_mhz(self.filter.fwhm_pm, self.filter.signal_nm)?;
        let step = 5e6;
        let n = (8.0 * fsr / step).round() as i64;
        let sum: f64 = (-n / 2..=n / 2)
            .map(|j| {
                let nu = nu_f + j as f64 * step;
                let x = (nu - nu_f) / hwhm;
                self.weight_at_hz(nu, temperature_c) / (1.0 + x * x)
            })
            .sum();
        let rho = self.round_trip_factor();
        let f = 4.0 * rho / ((1.0 - rho) * (1.0 - rho));
        let mean_airy_sq = (2.0 + f) / (2.0 * (1.0 + f).powf(1.5));
        Ok(sum * step / (fsr * mean_airy_sq))
    }

    /// Emission weight exactly at the signal filter centre: non-zero only
    /// when a signal mode sits on the filter and is doubly resonant.
    pub fn filter_point_weight(&self, temperature_c: f64) -> Result<f64> {
        let nu_f = wavelength_nm_to_hz(self.filter.signal_nm);
        self.check_pair(nu_f, temperature_c)?;
        Ok(self.weight_at_hz(nu_f, temperature_c))
    }

    /// Filter-point weight sampled on a temperature grid (inclusive ends).
    pub fn double_resonance_scan(&self, t_lo: f64, t_hi: f64, step: f64) -> Result<Vec<(f64, f64)>> {
        if !(step > 0.0) || t_hi < t_lo {
            return Err(Error::InvalidInput(format!(
                "temperature scan needs step > 0 and an ordered range (got [{t_lo}, {t_hi}], step {step})"
            )));
        }
        let n = ((t_hi - t_lo) / step).round() as usize;
        (0..=n)
            .into_par_iter()
            .map(|i| {
                let t = if n == 0 { t_lo } else { t_lo + (t_hi - t_lo) * i as f64 / n as f64 };
                Ok((t, self.filter_point_weight(t)?))
            })
            .collect()
    }

    fn refine_peak(&self, t: f64, step: f64) -> Result<DoubleResonance> {
        self.filter_point_weight(t)?;
        let f = |x: f64| self.filter_point_weight(x).unwrap_or(0.0);
        let t_best = golden_max(f, t - step, t + step, 1e-5);
        Ok(DoubleResonance {
            temperature_c: t_best,
            weight: self.filter_point_weight(t_best)?,
        })
    }

    /// Best double-resonance temperature in [T0 − range/2, T0 + range/2].
    pub fn find_double_resonance(&self, t0: f64, range: f64) -> Result<DoubleResonance> {
        if range == 0.0 {
            return Ok(DoubleResonance {
                temperature_c: t0,
                weight: self.filter_point_weight(t0)?,
            });
        }
        if !(range > 0.0) {
            return Err(Error::InvalidInput(format!("search range must be ≥ 0, got {range}")));
        }
        let n = ((range / 0.005).ceil() as usize).max(2);
        let step = range / n as f64;
        let scan = self.double_resonance_scan(t0 - 0.5 * range, t0 + 0.5 * range, step)?;
        let (t_best, w_best) = scan
            .iter()
            .cloned()
            .fold((t0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        if w_best < self.cluster_threshold {
            return Err(Error::Search(format!(
                "no double resonance in [{:.4}, {:.4}] °C: best weight at the filter {:.3} at {:.4} °C is below the threshold {:.2}",
                t0 - 0.5 * range,
                t0 + 0.5 * range,
                w_best,
                t_best,
                self.cluster_threshold
            )));
        }
        self.refine_peak(t_best, step)
    }

    /// All local maxima of the filtered weight above threshold in [t_lo, t_hi].
    pub fn double_resonances(&self, t_lo: f64, t_hi: f64) -> Result<Vec<DoubleResonance>> {
        let step = 0.002;
        let scan = self.double_resonance_scan(t_lo, t_hi, step)?;
        let mut found = Vec::new();
        for i in 1..scan.len().saturating_sub(1) {
            let (t, w) = scan[i];
            if w >= self.cluster_threshold && w > scan[i - 1].1 && w >= scan[i + 1].1 {
                found.push(self.refine_peak(t, step)?);
            }
        }
        Ok(found)
    }

    /// ν_s(m_s, T) + ν_i(m_i, T) − ν_p for fixed longitudinal orders.
    fn pair_detuning(&self, m_s: f64, m_i: f64, t: f64, guess: (f64, f64)) -> (f64, (f64, f64)) {
        let s = resonance_of_order(&self.resonator, m_s, t, guess.0);
        let i = resonance_of_order(&self.resonator, m_i, t, guess.1);
        (s + i - self.pump_hz(), (s, i))
    }

    /// Temperature at which the signal mode nearest `signal_nm` and the idler
    /// mode of order `idler_order` are exactly energy-conjugate.
    fn pair_root(&self, m_s: f64, m_i: f64, t0: f64, guess: (f64, f64)) -> Result<f64> {
        let (mut t_a, mut t_b) = (t0, t0 + 1e-3);
        let (mut d_a, mut g) = self.pair_detuning(m_s, m_i, t_a, guess);
        let (mut d_b, g_b) = self.pair_detuning(m_s, m_i, t_b, g);
        g = g_b;
        for _ in 0..40 {
            if (d_b - d_a).abs() < f64::EPSILON {
                break;
            }
            let t_c = t_b - d_b * (t_b - t_a) / (d_b - d_a);
            let (d_c, g_c) = self.pair_detuning(m_s, m_i, t_c, g);
            (t_a, d_a, t_b, d_b, g) = (t_b, d_b, t_c, d_c, g_c);
            if (t_b - t_a).abs() < 1e-10 {
                return Ok(t_b);
            }
        }
        if d_b.abs() < 1.0 {
            Ok(t_b)
        } else {
            Err(Error::Search(format!(
                "pair-resonance root did not converge near {t0} °C (residual {d_b:.3e} Hz)"
            )))
        }
    }

    /// Orders of the signal mode nearest `signal_nm` and of its idler partner at `t`.
    fn orders_near(&self, signal_nm: f64, t: f64) -> Result<(f64, f64, f64, f64)> {
        let nu = wavelength_nm_to_hz(signal_nm);
        self.check_pair(nu, t)?;
        let m_s = nearest_order(&self.resonator, nu, t);
        let nu_s = resonance_of_order(&self.resonator, m_s, t, nu);
        let m_i = nearest_order(&self.resonator, self.pump_hz() - nu_s, t);
        let nu_i = resonance_of_order(&self.resonator, m_i, t, self.pump_hz() - nu_s);
        Ok((m_s, m_i, nu_s, nu_i))
    }

    /// Double-resonance temperatures of the signal mode nearest `signal_nm`
    /// (fixed order) paired with consecutive idler orders, sorted.
    pub fn pair_resonance_temperatures(&self, signal_nm: f64, t_near: f64) -> Result<Vec<f64>> {
        let (m_s, m_i, nu_s, nu_i) = self.orders_near(signal_nm, t_near)?;
        let mut roots = Vec::new();
        for dm in -1..=1 {
            let guess = (nu_s, nu_i + dm as f64 * 1.8e9);
            roots.push(self.pair_root(m_s, m_i + dm as f64, t_near, guess)?);
        }
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(roots)
    }

    /// Double-resonance temperature closest to `t_near` for the signal mode
    /// nearest `signal_nm`.
    pub fn pair_resonance_temperature(&self, signal_nm: f64, t_near: f64) -> Result<f64> {
        self.pair_resonance_temperatures(signal_nm, t_near)?
            .into_iter()
            .min_by(|a, b| (a - t_near).abs().partial_cmp(&(b - t_near).abs()).unwrap())
            .ok_or_else(|| Error::Search("no pair resonance".into()))
    }

    /// Temperature step that moves the pair sum by one FSR, restoring a
    /// double resonance with the neighbouring idler mode.
    pub fn restore_period(&self, t_near: f64) -> Result<f64> {
        let r = self.pair_resonance_temperatures(self.filter.signal_nm, t_near)?;
        Ok(0.5 * (r[2] - r[0]))
    }

    /// Temperature step that moves one signal FSR across the filter.
    pub fn mode_hop_period(&self, t_near: f64) -> Result<f64> {
        let lambda = self.filter.signal_nm;
        let fsr_nm = hz_to_wavelength_nm(wavelength_nm_to_hz(lambda) - self.resonator.fsr_hz(lambda, t_near)?) - lambda;
        Ok(fsr_nm * 1e3 / self.resonator.index.tuning_rate_pm_per_c(lambda, t_near)?)
    }

    /// Moves the signal filter centre onto the cavity mode that is doubly
    /// resonant nearest `t_near`; returns that temperature.
    pub fn snap_signal_filter(&mut self, t_near: f64) -> Result<f64> {
        let t1 = self.pair_resonance_temperature(self.filter.signal_nm, t_near)?;
        let (m_s, _, nu_s, _) = self.orders_near(self.filter.signal_nm, t_near)?;
        let nu = resonance_of_order(&self.resonator, m_s, t1, nu_s);
        self.filter.signal_nm = hz_to_wavelength_nm(nu);
        Ok(t1)
    }
}

/// Sliding maximum over a ±`half` sample window (monotone deque).
fn sliding_max(values: &[f64], half: usize) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    for (i, slot) in out.iter_mut().enumerate() {
        let hi = (i + half).min(n.saturating_sub(1));
        while next <= hi && next < n {
            while dq.back().is_some_and(|&j| values[j] <= values[next]) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        while dq.front().is_some_and(|&j| j + half < i) {
            dq.pop_front();
        }
        *slot = values[*dq.front().expect("window is non-empty")];
    }
    out
}

fn extract_clusters(freqs: &[f64], weight: &[f64], hold: &[f64], threshold: f64) -> Vec<Cluster> {
    let mut clusters = Vec::new();
    let mut i = 0;
    while i < hold.len() {
        if hold[i] < threshold {
            i += 1;
            continue;
        }
        let start = i;
        while i < hold.len() && hold[i] >= threshold {
            i += 1;
        }
        let (peak, &peak_weight) = weight[start..i]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .expect("non-empty run");
        clusters.push(Cluster {
            start_hz: freqs[start],
            end_hz: freqs[i - 1],
            peak_hz: freqs[start + peak],
            peak_weight,
        });
    }
    clusters
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn model() -> &'static SpdcModel {
        static M: OnceLock<SpdcModel> = OnceLock::new();
        M.get_or_init(SpdcModel::ti_ppln)
    }

    fn t1() -> f64 {
        static T: OnceLock<f64> = OnceLock::new();
        *T.get_or_init(|| model().pair_resonance_temperature(model().filter.signal_nm, 128.6).unwrap())
    }

    #[test]
    fn mismatch_vanishes_at_operating_point() {
        let m = model();
        assert!(m.phase_mismatch(1560.054, 128.6).unwrap().abs() < 1e-6);
        assert!((m.degeneracy_nm() - 1560.054).abs() < 1e-9);
    }

    #[test]
    fn mismatch_is_symmetric_in_signal_and_idler() {
        let m = model();
        for ls in [1540.0, 1555.3, 1590.0] {
            let nu_i = m.pump_hz() - wavelength_nm_to_hz(ls);
            let a = m.phase_mismatch(ls, 130.0).unwrap();
            let b = m.phase_mismatch(hz_to_wavelength_nm(nu_i), 130.0).unwrap();
            assert!((a - b).abs() < 1e-6 * a.abs().max(1.0), "{a} {b}");
        }
    }

    #[test]
    fn single_root_on_one_side_of_degeneracy() {
        // Above T_QPM the mismatch at degeneracy is positive and falls with
        // detuning; the dense grid is the oracle.
        let m = model();
        let t = 128.6 + 0.3;
        let deg = m.degeneracy_nm();
        let n = 4000;
        let values: Vec<f64> = (0..=n)
            .map(|i| m.phase_mismatch(deg + 40.0 * i as f64 / n as f64, t).unwrap())
            .collect();
        let roots = values.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
        assert_eq!(roots, 1);
    }

    #[test]
    fn envelope_peak_zero_and_width() {
        let m = model();
        assert!((m.envelope(1560.054, 128.6).unwrap() - 1.0).abs() < 1e-12);
        // first zero: Δβ·L = 2π
        let target = 2.0 * PI / (m.qpm.length_cm * 1e-2);
        let t = 128.6;
        let f = |l: f64| m.phase_mismatch(l, t).unwrap().abs() - target;
        let (mut a, mut b) = (1560.1, 1640.0);
        assert!(f(a) < 0.0 && f(b) > 0.0);
        for _ in 0..200 {
            let c = 0.5 * (a + b);
            if f(c) < 0.0 {
                a = c;
            } else {
                b = c;
            }
        }
        assert!(m.envelope(0.5 * (a + b), t).unwrap() < 1e-9);
        // full width at half maximum, from the degeneracy outwards
        let half = |dir: f64| {
            let mut l = 1560.054;
            while m.envelope(l, t).unwrap() > 0.5 {
                l += dir * 0.01;
            }
            l
        };
        let width = half(1.0) - half(-1.0);
        assert!(width > 5.0 && width < 150.0, "{width}");
    }

    #[test]
    fn operating_double_resonance_near_phase_match_temperature() {
        let t = t1();
        // independent reference: 128.58172554 °C, mode at 1559.49891 nm
        assert!((t - 128.581_725_5).abs() < 2e-6, "{t}");
        assert!((model().filter.signal_nm - 1_559.498_914).abs() < 2e-5);
    }

    #[test]
    fn cluster_spectrum_symmetry_and_central_cluster() {
        let m = model();
        let half_band = 4e12;
        let c = m.pump_hz() / 2.0;
        let band = (hz_to_wavelength_nm(c + half_band), hz_to_wavelength_nm(c - half_band));
        let s = m.cluster_spectrum(t1(), band).unwrap();
        let n = s.weight.len();
        for i in (0..n).step_by(997) {
            assert!((s.weight[i] - s.weight[n - 1 - i]).abs() < 1e-9);
        }
        let central = s.cluster_containing_nm(1560.0).expect("central cluster");
        let (lo, hi) = central.wavelength_range_nm();
        assert!(lo < 1555.0 && hi > 1565.0, "{lo}..{hi}");
        assert!(s.clusters.iter().all(|c| c.start_hz <= c.end_hz));
        for c in &s.clusters {
            let i = s.frequencies_hz.partition_point(|&v| v < c.peak_hz);
            assert!(s.weight[i] >= s.threshold);
        }
    }

    #[test]
    fn central_cluster_vanishes_and_returns() {
        let m = model();
        let band = DEFAULT_BAND_NM;
        let base = m.cluster_spectrum(t1(), band).unwrap();
        let off = m.cluster_spectrum(t1() + 0.07, band).unwrap();
        assert!(off.cluster_containing_nm(1560.0).is_none());
        assert!(off.peak_hold_at_nm(1560.0).unwrap() < 0.5 * base.max_weight());
        // satellite clusters appear 20–30 nm away from degeneracy
        assert!(off.clusters.iter().any(|c| {
            let d = (hz_to_wavelength_nm(c.peak_hz) - 1560.054).abs();
            (15.0..35.0).contains(&d)
        }));
        let restore = m.restore_period(t1()).unwrap();
        assert!((restore - 0.15).abs() / 0.15 < 0.15, "{restore}");
        let back = m.cluster_spectrum(t1() + restore, band).unwrap();
        assert!(back.cluster_containing_nm(1560.0).is_some());
    }

    #[test]
    fn gm_pairs_at_and_off_resonance() {
        let m = model();
        let band = (1555.0, 1565.0);
        let gm = m.gm_diagram(t1(), band).unwrap();
        let p = gm.pair_nearest_nm(1560.0).unwrap();
        assert!(p.detuning_hz.abs() <= 58.5e6, "{}", p.detuning_hz);
        assert!(gm.resonant_pairs().count() > 100);
        let off = m.gm_diagram(t1() + 0.07, band).unwrap();
        let p = off.pair_nearest_nm(1560.0).unwrap();
        assert!((p.detuning_hz.abs() - 0.8e9).abs() < 0.15e9, "{}", p.detuning_hz);
        // the same mismatch read from the idler side
        for pair in gm.pairs.iter().step_by(37) {
            let (j, _) = gm.idler.nearest(pair.idler_hz).unwrap();
            assert!((gm.idler_detuning_hz[j] + pair.detuning_hz).abs() < 1e3);
        }
        assert!(gm.to_csv().lines().count() == gm.pairs.len() + 1);
    }

    #[test]
    fn double_resonance_search() {
        let m = model();
        let truth = m.find_double_resonance(t1(), 0.02).unwrap();
        assert!((truth.temperature_c - t1()).abs() < 1e-3);
        let found = m.find_double_resonance(truth.temperature_c + 0.07, 0.2).unwrap();
        assert!((found.temperature_c - truth.temperature_c).abs() < 0.002);
        let all = m.double_resonances(truth.temperature_c - 0.01, truth.temperature_c + 0.34).unwrap();
        assert_eq!(all.len(), 2, "{all:?}");
        let spacing = all[1].temperature_c - all[0].temperature_c;
        assert!((spacing - 0.3).abs() / 0.3 < 0.10, "{spacing}");
        let period = m.mode_hop_period(t1()).unwrap();
        assert!((period - spacing).abs() < 0.005, "{period} {spacing}");
        let here = m.find_double_resonance(128.0, 0.0).unwrap();
        assert_eq!(here.temperature_c, 128.0);
        assert!(matches!(
            m.find_double_resonance(truth.temperature_c + 0.1, 0.02),
            Err(Error::Search(_))
        ));
    }

    #[test]
    fn out_of_range_inputs_are_domain_errors() {
        let m = model();
        assert!(matches!(m.phase_mismatch(1560.0, 300.0), Err(Error::Domain { .. })));
        assert!(m.cluster_spectrum(128.6, (300.0, 400.0)).is_err());
    }

    #[test]
    fn sliding_max_matches_naive() {
        let v: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let got = sliding_max(&v, 3);
        for (i, &g) in got.iter().enumerate() {
            let lo = i.saturating_sub(3);
            let hi = (i + 3).min(v.len() - 1);
            let want = v[lo..=hi].iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(g, want);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(64))]
        #[test]
        fn weight_symmetric_about_half_pump(off in 0.0f64..6e12, t in 120.0f64..140.0) {
            let m = model();
            let c = m.pump_hz() / 2.0;
            let a = m.weight_at_hz(c + off, t);
            let b = m.weight_at_hz(c - off, t);
            proptest::prop_assert!((a - b).abs() < 1e-9);
            proptest::prop_assert!((0.0..=1.0).contains(&a));
            let nu_s = c + off;
            let nu_i = m.pump_hz() - nu_s;
            proptest::prop_assert!((nu_s + nu_i - m.pump_hz()).abs() < 1.0);
        }
    }
}
