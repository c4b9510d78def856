//! Closed-form loss, rate and accidental-coincidence bookkeeping. The
//! detector formulas follow the simulator's model (non-paralysable dead
//! time, exponential after-pulse release, gates triggered by detector 1) so
//! the two can be checked against each other.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::montecarlo::{
    marginal_probabilities, DetectorMode, DetectorSpec, LossStage, OpticalChain, SimConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBudget {
    pub arm1: Vec<LossStage>,
    pub arm2: Vec<LossStage>,
    /// Cavity escape probability p_out.
    pub escape_probability: f64,
    pub efficiency: [f64; 2],
}

impl LossBudget {
    pub fn reference() -> Self {
        Self::from_config(&SimConfig::default())
    }

    pub fn from_config(cfg: &SimConfig) -> Self {
        LossBudget {
            arm1: cfg.chain.arm1.clone(),
            arm2: cfg.chain.arm2.clone(),
            escape_probability: cfg.escape_probability,
            efficiency: [cfg.detectors[0].efficiency, cfg.detectors[1].efficiency],
        }
    }

    pub fn validate(&self) -> Result<()> {
        OpticalChain {
            arm1: self.arm1.clone(),
            arm2: self.arm2.clone(),
        }
        .validate()?;
        for p in [self.escape_probability, self.efficiency[0], self.efficiency[1]] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!(
                    "escape probability and efficiencies must lie in [0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmLosses {
    pub db: [f64; 2],
    /// p_out·10^(−dB/10), detector efficiency excluded.
    pub survival: [f64; 2],
}

pub fn arm_losses(b: &LossBudget) -> Result<ArmLosses> {
    b.validate()?;
    let sum = |s: &[LossStage]| s.iter().map(|x| x.loss_db).sum::<f64>();
    let db = [sum(&b.arm1), sum(&b.arm2)];
    Ok(ArmLosses {
        db,
        survival: db.map(|d| b.escape_probability * 10f64.powf(-d / 10.0)),
    })
}

/// Generated pairs/s from the dark-subtracted singles of detector 1, without
/// any dead-time correction.
pub fn infer_generated(singles1: f64, dark1: f64, b: &LossBudget) -> Result<f64> {
    if !(singles1 > dark1) {
        return Err(Error::InvalidInput(format!(
            "no signal: singles {singles1}/s do not exceed dark counts {dark1}/s"
        )));
    }
    let l = arm_losses(b)?;
    let p = l.survival[0] * b.efficiency[0];
    if !(p > 0.0) {
        return Err(Error::InvalidInput("arm 1 has zero detection probability".into()));
    }
    Ok((singles1 - dark1) / p)
}

/// After-pulse release probability beyond the dead time, p_ap·e^(−τd/τa).
fn afterpulse_escape(d: &DetectorSpec) -> f64 {
    if d.afterpulse_prob > 0.0 {
        d.afterpulse_prob * (-d.dead_time_us / d.afterpulse_decay_us).exp()
    } else {
        0.0
    }
}

/// Probability that an after-pulse released past the dead time finds the
/// detector ready, given total arrival rate `arrivals`. The ready
/// probability x after the parent's dead time has Laplace transform
/// 1/(s + Λ − Λe^(−sτd)); averaging over Exp(τa) gives the closed form.
fn afterpulse_success(arrivals: f64, d: &DetectorSpec) -> f64 {
    let ratio = d.dead_time_us / d.afterpulse_decay_us;
    let ta = d.afterpulse_decay_us * 1e-6;
    afterpulse_escape(d) / (1.0 + arrivals * ta * (1.0 - (-ratio).exp()))
}

/// Observed click rate of a free-running detector fed by a Poisson stream
/// of rate λ. Poisson arrivals see the live fraction 1 − Sτd, after-pulses
/// add S·a, so S = λ/(1 − a + λτd); `a` depends weakly on S through the
/// after-pulse arrivals and is iterated to a fixed point.
pub fn free_running_rate(lambda: f64, d: &DetectorSpec) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    let td = d.dead_time_us * 1e-6;
    let pe = afterpulse_escape(d);
    let mut s = lambda / (1.0 + lambda * td);
    for _ in 0..100 {
        let a = afterpulse_success(lambda + s * pe, d);
        let next = lambda / (1.0 - a + lambda * td);
        if (next - s).abs() <= 1e-15 * next {
            return next;
        }
        s = next;
    }
    s
}

/// Inverse of [`free_running_rate`]: the input rate λ producing `observed`.
pub fn free_running_input(observed: f64, d: &DetectorSpec) -> Result<f64> {
    let td = d.dead_time_us * 1e-6;
    if !(observed >= 0.0) || observed * td >= 1.0 {
        return Err(Error::InvalidInput(format!(
            "observed rate {observed}/s is not reachable with a {} µs dead time",
            d.dead_time_us
        )));
    }
    if observed == 0.0 {
        return Ok(0.0);
    }
    // S grows monotonically with λ; after-pulses only add clicks, so λ ≤ S/(1 − Sτd)
    let (mut lo, mut hi) = (0.0, observed / (1.0 - observed * td));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if free_running_rate(mid, d) < observed {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePrediction {
    /// Pairs/s in the filter window.
    pub generated: f64,
    /// Photons/s reaching each detector, efficiency included.
    pub photons: [f64; 2],
    pub singles: [f64; 2],
    /// Fraction of time each detector can click.
    pub live_fraction: [f64; 2],
    /// Detector-1 clicks split into photon, dark and after-pulse parts.
    pub photon_clicks1: f64,
    pub dark_clicks1: f64,
    pub afterpulse_clicks1: f64,
    /// True coincidences/s (both photons of one pair detected).
    pub coincidences: f64,
    /// Coincidences ÷ (η₁η₂) per MHz of linewidth per mW of pump.
    pub brightness: f64,
    /// Pairs per coherence time, R·τ_coh.
    pub mu: f64,
    /// Uncorrelated detector-2 event probability per ns: photons and darks.
    /// For a free-running detector these are click densities.
    pub photon_density2: f64,
    pub dark_density2: f64,
    pub gate_width_ns: Option<f64>,
}

impl RatePrediction {
    /// Coincidences/s falling within ±`half_ns` of zero delay, true pairs
    /// plus the flat accidental floor. Only meaningful without a Franson
    /// interferometer.
    pub fn window_coincidences(&self, linewidth_mhz: f64, half_ns: f64) -> f64 {
        let true_part = self.coincidences * (1.0 - (-2.0 * PI * linewidth_mhz * 1e-3 * half_ns).exp());
        true_part + self.accidental_density() * 2.0 * half_ns
    }

    /// Accidental coincidence density in Hz/ns.
    pub fn accidental_density(&self) -> f64 {
        self.singles[0] * (self.photon_density2 + self.dark_density2)
    }
}

/// Forward prediction for `pairs_per_s` generated pairs under `cfg`.
pub fn predict_rates(pairs_per_s: f64, cfg: &SimConfig, pump_power_mw: f64) -> Result<RatePrediction> {
    cfg.validate()?;
    if !(pairs_per_s >= 0.0) || !(pump_power_mw > 0.0) {
        return Err(Error::InvalidInput(format!(
            "need pairs ≥ 0 and pump power > 0 (got {pairs_per_s}/s, {pump_power_mw} mW)"
        )));
    }
    let (m1, m2, both) = marginal_probabilities(cfg);
    let [d1, d2] = &cfg.detectors;
    let photons = [pairs_per_s * m1, pairs_per_s * m2];

    let lambda1 = photons[0] + d1.dark_rate_hz;
    let s1 = free_running_rate(lambda1, d1);
    let live1 = 1.0 - s1 * d1.dead_time_us * 1e-6;
    let photon_clicks1 = photons[0] * live1;
    let dark_clicks1 = d1.dark_rate_hz * live1;
    let afterpulse_clicks1 = s1 - lambda1 * live1;

    let mut photon_density2 = photons[1] * 1e-9;
    let (s2, live2, capture, dark_density2, gate) = match d2.mode {
        DetectorMode::Gated => {
            let w = d2.gate_width_ns;
            let dd = d2.dark_prob_per_ns;
            // partner click blocked only by an earlier event in its own gate
            let capture = 1.0 - (photon_density2 + dd) * 0.5 * w;
            let f = pairs_per_s * both * live1 * capture / s1.max(f64::MIN_POSITIVE);
            let background = 1.0 - (1.0 - dd * w) * (-photon_density2 * w).exp();
            let p_click = f + (1.0 - f) * background;
            (s1 * p_click, 1.0, capture, dd, Some(w))
        }
        DetectorMode::FreeRunning => {
            let lambda2 = photons[1] + d2.dark_rate_hz;
            let s2 = free_running_rate(lambda2, d2);
            let live2 = 1.0 - s2 * d2.dead_time_us * 1e-6;
            let dark = d2.dark_rate_hz * live2;
            photon_density2 = (s2 - dark) * 1e-9;
            (s2, live2, live2, dark * 1e-9, None)
        }
    };
    let coincidences = pairs_per_s * both * live1 * capture;
    let eta = d1.efficiency * d2.efficiency;
    let brightness = if eta > 0.0 {
        coincidences / (eta * cfg.linewidth_mhz * pump_power_mw)
    } else {
        0.0
    };
    let tau_coh = 1.0 / (PI * cfg.linewidth_mhz * 1e6);
    Ok(RatePrediction {
        generated: pairs_per_s,
        photons,
        singles: [s1, s2],
        live_fraction: [live1, live2],
        photon_clicks1,
        dark_clicks1,
        afterpulse_clicks1,
        coincidences,
        brightness,
        mu: pairs_per_s * tau_coh,
        photon_density2,
        dark_density2,
        gate_width_ns: gate,
    })
}

/// Inverts [`predict_rates`] for the generated pair rate, given the observed
/// detector-1 singles (dead time and after-pulses included).
pub fn infer_generated_observed(singles1: f64, cfg: &SimConfig) -> Result<f64> {
    cfg.validate()?;
    let d1 = &cfg.detectors[0];
    let lambda = free_running_input(singles1, d1)?;
    let (m1, _, _) = marginal_probabilities(cfg);
    if !(lambda > d1.dark_rate_hz) {
        return Err(Error::InvalidInput(format!(
            "no signal: singles {singles1}/s are explained by dark counts"
        )));
    }
    if !(m1 > 0.0) {
        return Err(Error::InvalidInput("arm 1 has zero detection probability".into()));
    }
    Ok((lambda - d1.dark_rate_hz) / m1)
}

/// Accidental coincidence densities in Hz/ns, as seen by a start on
/// detector 1 and a stop on detector 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccidentalBreakdown {
    pub detector_noise: f64,
    pub afterpulse: f64,
    pub independent_pairs: f64,
    pub total: f64,
}

pub fn accidental_budget(rates: &RatePrediction) -> AccidentalBreakdown {
    let s2 = rates.photon_density2;
    let d2 = rates.dark_density2;
    let detector_noise = rates.dark_clicks1 * (s2 + d2) + rates.photon_clicks1 * d2;
    let afterpulse = rates.afterpulse_clicks1 * (s2 + d2);
    let independent_pairs = rates.photon_clicks1 * s2;
    AccidentalBreakdown {
        detector_noise,
        afterpulse,
        independent_pairs,
        total: detector_noise + afterpulse + independent_pairs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub losses: ArmLosses,
    pub inferred_plain: Option<f64>,
    pub inferred_dead_time: Option<f64>,
    pub rates: RatePrediction,
    pub accidentals: AccidentalBreakdown,
}

/// Budget at `pairs_per_s`; if `observed_singles1` is given the generation
/// rate is also inferred back from it both ways.
pub fn report(
    cfg: &SimConfig,
    pairs_per_s: f64,
    pump_power_mw: f64,
    observed_singles1: Option<f64>,
) -> Result<BudgetReport> {
    let b = LossBudget::from_config(cfg);
    let losses = arm_losses(&b)?;
    let rates = predict_rates(pairs_per_s, cfg, pump_power_mw)?;
    let (inferred_plain, inferred_dead_time) = match observed_singles1 {
        Some(s) => (
            Some(infer_generated(s, cfg.detectors[0].dark_rate_hz, &b)?),
            Some(infer_generated_observed(s, cfg)?),
        ),
        None => (None, None),
    };
    Ok(BudgetReport {
        losses,
        inferred_plain,
        inferred_dead_time,
        rates,
        accidentals: accidental_budget(&rates),
    })
}

impl BudgetReport {
    pub fn to_text(&self) -> String {
        let r = &self.rates;
        let a = &self.accidentals;
        let mut s = String::new();
        let mut row = |k: &str, v: String, unit: &str| {
            let _ = writeln!(s, "{k:<34} {v:>14} {unit}");
        };
        row("arm 1 losses", format!("{:.2}", self.losses.db[0]), "dB");
        row("arm 2 losses", format!("{:.2}", self.losses.db[1]), "dB");
        row("arm 1 survival", format!("{:.5}", self.losses.survival[0]), "");
        row("arm 2 survival", format!("{:.5}", self.losses.survival[1]), "");
        row("generated pairs", format!("{:.4e}", r.generated), "/s");
        if let Some(v) = self.inferred_plain {
            row("inferred pairs (dark-subtracted)", format!("{v:.4e}"), "/s");
        }
        if let Some(v) = self.inferred_dead_time {
            row("inferred pairs (dead-time aware)", format!("{v:.4e}"), "/s");
        }
        row("singles detector 1", format!("{:.1}", r.singles[0]), "/s");
        row("singles detector 2", format!("{:.1}", r.singles[1]), "/s");
        row("live fraction detector 1", format!("{:.4}", r.live_fraction[0]), "");
        row("coincidences", format!("{:.3}", r.coincidences), "/s");
        row("spectral brightness", format!("{:.2}", r.brightness), "/(s MHz mW)");
        row("pairs per coherence time", format!("{:.4}", r.mu), "");
        row("accidentals: detector noise", format!("{:.3e}", a.detector_noise), "Hz/ns");
        row("accidentals: after-pulses", format!("{:.3e}", a.afterpulse), "Hz/ns");
        row("accidentals: independent pairs", format!("{:.3e}", a.independent_pairs), "Hz/ns");
        row("accidentals: total", format!("{:.3e}", a.total), "Hz/ns");
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn reference_arm_losses() {
        let l = arm_losses(&LossBudget::reference()).unwrap();
        assert_relative_eq!(l.db[0], 10.8, epsilon = 1e-12);
        assert_relative_eq!(l.db[1], 11.8, epsilon = 1e-12);
        assert!((l.survival[1] - 0.02).abs() < 0.001);
        let empty = LossBudget {
            arm1: vec![],
            arm2: vec![],
            escape_probability: 1.0,
            efficiency: [1.0, 1.0],
        };
        assert_eq!(arm_losses(&empty).unwrap().survival, [1.0, 1.0]);
    }

    #[test]
    fn inference_from_reference_singles() {
        let b = LossBudget::reference();
        let r = infer_generated(3400.0, 600.0, &b).unwrap();
        assert!((r / 6.6e6 - 1.0).abs() < 0.25, "{r}");
        assert!((r - 5.30e6).abs() < 0.05e6);
        assert!(infer_generated(600.0, 600.0, &b).is_err());
        let mut b2 = b.clone();
        b2.efficiency[0] *= 2.0;
        assert_relative_eq!(infer_generated(3400.0, 600.0, &b2).unwrap(), r / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn reference_operating_point() {
        let cfg = SimConfig::default();
        let r = predict_rates(6.6e6, &cfg, 1.6).unwrap();
        assert!((r.coincidences / 5.2 - 1.0).abs() < 0.15, "{}", r.coincidences);
        assert!((r.singles[0] / 3400.0 - 1.0).abs() < 0.10, "{}", r.singles[0]);
        assert!((r.mu / 0.02 - 1.0).abs() < 0.25, "{}", r.mu);
        assert!((r.mu - 0.018).abs() < 0.0005);
        assert!((r.brightness / 17.0 - 1.0).abs() < 0.10, "{}", r.brightness);
        assert!(r.coincidences <= r.singles[0].min(r.singles[1]));
        let a = accidental_budget(&r);
        assert!(a.detector_noise / 4.7e-2 < 1.5 && 4.7e-2 / a.detector_noise < 1.5);
        assert!(a.independent_pairs / 3.4e-2 < 1.3 && 3.4e-2 / a.independent_pairs < 1.3);
        assert_relative_eq!(a.total, r.accidental_density(), max_relative = 1e-12);
    }

    #[test]
    fn no_dark_no_noise_component() {
        let mut cfg = SimConfig::default();
        cfg.detectors[0].dark_rate_hz = 0.0;
        cfg.detectors[1].dark_prob_per_ns = 0.0;
        let r = predict_rates(6.6e6, &cfg, 1.6).unwrap();
        assert_eq!(accidental_budget(&r).detector_noise, 0.0);
    }

    #[test]
    fn free_running_rate_limits() {
        let mut d = DetectorSpec::ideal();
        assert_relative_eq!(free_running_rate(1000.0, &d), 1000.0);
        d.dead_time_us = 10.0;
        assert_relative_eq!(free_running_rate(1e5, &d), 1e5 / 2.0, max_relative = 1e-12);
        assert!(free_running_input(2e5, &d).is_err());
    }

    #[test]
    fn report_formats() {
        let rep = report(&SimConfig::default(), 6.6e6, 1.6, Some(3400.0)).unwrap();
        let text = rep.to_text();
        assert!(text.contains("arm 1 losses") && text.contains("10.80"));
        let back: BudgetReport = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(back, rep);
    }

    proptest! {
        #[test]
        fn forward_backward_closure(
            rate in 1e4f64..1e8,
            dark in 0.0f64..5000.0,
            dead in 0.0f64..50.0,
            ap in 0.0f64..0.2,
            tau in 1.0f64..50.0,
            eff in 0.01f64..1.0,
        ) {
            let mut cfg = SimConfig::default();
            let d = &mut cfg.detectors[0];
            d.dark_rate_hz = dark;
            d.dead_time_us = dead;
            d.afterpulse_prob = ap;
            d.afterpulse_decay_us = tau;
            d.efficiency = eff;
            let r = predict_rates(rate, &cfg, 1.6).unwrap();
            let back = infer_generated_observed(r.singles[0], &cfg).unwrap();
            prop_assert!((back / rate - 1.0).abs() < 1e-9, "{} vs {}", back, rate);
        }
    }
}
