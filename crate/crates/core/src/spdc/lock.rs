//! Side-of-fringe PID temperature lock on the filtered signal count rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{DoubleResonance, SpdcModel};
use crate::error::{Error, Result};

/// Gains act on the relative count error and return °C.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidGains {
    pub kp: f64,
    /// Per second.
    pub ki: f64,
    /// Seconds.
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            kp: 0.02,
            ki: 0.01,
            kd: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockState {
    pub setpoint_cps: f64,
    pub gains: PidGains,
    /// Heater temperature the loop was engaged at.
    pub base_c: f64,
    /// Current heater command, base plus the PID output.
    pub heater_c: f64,
    /// ∫ error dt, in seconds.
    pub integrator: f64,
    /// Bound on |ki·integrator| in °C.
    pub integrator_limit_c: f64,
    pub last_error: Option<f64>,
    pub stability_bound_c: f64,
}

impl LockState {
    pub fn new(setpoint_cps: f64, gains: PidGains, base_c: f64) -> Self {
        LockState {
            setpoint_cps,
            gains,
            base_c,
            heater_c: base_c,
            integrator: 0.0,
            integrator_limit_c: 5.0,
            last_error: None,
            stability_bound_c: 1e-3,
        }
    }
}

/// One PID update. The lock sits on the high-temperature flank, where more
/// counts than the setpoint mean the crystal is too cold, so the output
/// rises with the error. Returns the new state and the heater offset from
/// `base_c`.
pub fn lock_step(state: &LockState, measured_cps: f64, dt: f64) -> Result<(LockState, f64)> {
    if !measured_cps.is_finite() {
        return Err(Error::InvalidInput(format!(
            "lock measurement must be finite, got {measured_cps}"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("lock time step must be positive, got {dt}")));
    }
    if !(state.setpoint_cps > 0.0) {
        return Err(Error::InvalidInput("lock setpoint must be positive".into()));
    }
    let g = state.gains;
    let e = (measured_cps - state.setpoint_cps) / state.setpoint_cps;
    let mut integrator = state.integrator + e * dt;
    if g.ki != 0.0 {
        let cap = state.integrator_limit_c / g.ki.abs();
        integrator = integrator.clamp(-cap, cap);
    }
    let derivative = state.last_error.map_or(0.0, |prev| (e - prev) / dt);
    let u = g.kp * e + g.ki * integrator + g.kd * derivative;
    let next = LockState {
        heater_c: state.base_c + u,
        integrator,
        last_error: Some(e),
        ..state.clone()
    };
    Ok((next, u))
}

/// First-order thermal plant with linear ambient drift and Poisson counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalPlant {
    pub time_constant_s: f64,
    pub drift_c_per_min: f64,
    /// Count rate with the cavity doubly resonant at the filter.
    pub peak_cps: f64,
    pub dt_s: f64,
    /// Crystal temperature offset from the lock point at t = 0.
    pub initial_offset_c: f64,
}

impl Default for ThermalPlant {
    fn default() -> Self {
        ThermalPlant {
            time_constant_s: 5.0,
            drift_c_per_min: 0.01,
            peak_cps: 3400.0 / LOCK_FRACTION,
            dt_s: 1.0,
            initial_offset_c: 5e-4,
        }
    }
}

/// Locked fraction of the peak rate: the 2.4 dB side-of-fringe penalty.
pub const LOCK_FRACTION: f64 = 0.575_439_937_337_156_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockTrace {
    pub time_s: Vec<f64>,
    pub temperature_c: Vec<f64>,
    pub counts_cps: Vec<f64>,
    pub heater_c: Vec<f64>,
    pub peak_temperature_c: f64,
    pub lock_temperature_c: f64,
    pub peak_cps: f64,
    pub setpoint_cps: f64,
}

impl LockTrace {
    fn after(&self, settle_s: f64) -> usize {
        self.time_s.partition_point(|&t| t < settle_s)
    }

    /// Largest |T − T_lock| once `settle_s` has elapsed.
    pub fn max_excursion(&self, settle_s: f64) -> f64 {
        self.temperature_c[self.after(settle_s)..]
            .iter()
            .map(|t| (t - self.lock_temperature_c).abs())
            .fold(0.0, f64::max)
    }

    pub fn mean_counts(&self, settle_s: f64) -> f64 {
        let c = &self.counts_cps[self.after(settle_s)..];
        c.iter().sum::<f64>() / c.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,temperature_c,counts_cps,heater_c\n");
        for i in 0..self.time_s.len() {
            out.push_str(&format!(
                "{},{:.7},{:.1},{:.7}\n",
                self.time_s[i], self.temperature_c[i], self.counts_cps[i], self.heater_c[i]
            ));
        }
        out
    }
}

/// Temperature on the high-T flank where the filtered weight falls to
/// `fraction` of its value at `t_peak`.
fn flank_temperature(model: &SpdcModel, t_peak: f64, w_peak: f64, fraction: f64) -> Result<f64> {
    let target = fraction * w_peak;
    let (mut a, mut b) = (t_peak, t_peak + 1e-3);
    while model.filtered_weight(b)? > target {
        a = b;
        b += 1e-3;
        if b - t_peak > 0.05 {
            return Err(Error::Search("no flank found above the double resonance".into()));
        }
    }
    for _ in 0..60 {
        let c = 0.5 * (a + b);
        if model.filtered_weight(c)? > target {
            a = c;
        } else {
            b = c;
        }
    }
    Ok(0.5 * (a + b))
}

/// Runs the closed loop for `duration_s`, starting from the double
/// resonance nearest the model's filter mode.
pub fn simulate_lock(
    model: &SpdcModel,
    plant: &ThermalPlant,
    gains: PidGains,
    t_near: f64,
    duration_s: f64,
    seed: u64,
) -> Result<LockTrace> {
    if !(plant.dt_s > 0.0) || !(plant.time_constant_s > 0.0) || !(plant.peak_cps > 0.0) {
        return Err(Error::InvalidInput(
            "plant needs positive dt, time constant and peak rate".into(),
        ));
    }
    let found = model.find_double_resonance(t_near, 0.02)?;
    let peak = DoubleResonance {
        temperature_c: found.temperature_c,
        weight: model.filtered_weight(found.temperature_c)?,
    };
    let t_lock = flank_temperature(model, peak.temperature_c, peak.weight, LOCK_FRACTION)?;
    let setpoint = LOCK_FRACTION * plant.peak_cps;
    let mut state = LockState::new(setpoint, gains, t_lock);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decay = (-plant.dt_s / plant.time_constant_s).exp();
    let drift_per_s = plant.drift_c_per_min / 60.0;
    let mut temp = t_lock + plant.initial_offset_c;
    let steps = (duration_s / plant.dt_s).round() as usize;
    let mut trace = LockTrace {
        time_s: Vec::with_capacity(steps),
        temperature_c: Vec::with_capacity(steps),
        counts_cps: Vec::with_capacity(steps),
        heater_c: Vec::with_capacity(steps),
        peak_temperature_c: peak.temperature_c,
        lock_temperature_c: t_lock,
        peak_cps: plant.peak_cps,
        setpoint_cps: setpoint,
    };
    for k in 0..steps {
        let t = (k + 1) as f64 * plant.dt_s;
        let equilibrium = state.heater_c + drift_per_s * t;
        temp = equilibrium + (temp - equilibrium) * decay;
        let mean = plant.peak_cps * model.filtered_weight(temp)? / peak.weight * plant.dt_s;
        let n = if mean > 0.0 {
            Poisson::new(mean).map_err(|e| Error::Model(e.to_string()))?.sample(&mut rng)
        } else {
            0.0
        };
        let measured = n / plant.dt_s;
        state = lock_step(&state, measured, plant.dt_s)?.0;
        trace.time_s.push(t);
        trace.temperature_c.push(temp);
        trace.counts_cps.push(measured);
        trace.heater_c.push(state.heater_c);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_fraction_is_the_penalty() {
        assert!((LOCK_FRACTION - 10f64.powf(-0.24)).abs() < 1e-15);
    }

    #[test]
    fn zero_gains_give_zero_command() {
        let s = LockState::new(
            1000.0,
            PidGains {
                kp: 0.0,
                ki: 0.0,
                kd: 0.0,
            },
            128.6,
        );
        let (next, u) = lock_step(&s, 1500.0, 1.0).unwrap();
        assert_eq!(u, 0.0);
        assert_eq!(next.heater_c, 128.6);
    }

    #[test]
    fn non_finite_measurement_rejected() {
        let s = LockState::new(1000.0, PidGains::default(), 128.6);
        assert!(lock_step(&s, f64::NAN, 1.0).is_err());
        assert!(lock_step(&s, 1000.0, 0.0).is_err());
    }

    #[test]
    fn integrator_is_clamped() {
        let mut s = LockState::new(1000.0, PidGains::default(), 128.6);
        for _ in 0..10_000 {
            s = lock_step(&s, 1e6, 1.0).unwrap().0;
        }
        assert!((s.gains.ki * s.integrator - s.integrator_limit_c).abs() < 1e-9);
    }

    #[test]
    fn closed_loop_holds_under_drift() {
        let model = SpdcModel::ti_ppln();
        let plant = ThermalPlant::default();
        let trace = simulate_lock(&model, &plant, PidGains::default(), 128.58, 1200.0, 7).unwrap();
        let exc = trace.max_excursion(200.0);
        assert!(exc < 1e-3, "excursion {exc}");
        let ratio = trace.mean_counts(200.0) / trace.peak_cps;
        assert!((ratio / LOCK_FRACTION - 1.0).abs() < 0.02, "{ratio}");
        // without feedback the drift walks the crystal off the fringe
        let open = simulate_lock(
            &model,
            &plant,
            PidGains {
                kp: 0.0,
                ki: 0.0,
                kd: 0.0,
            },
            128.58,
            1200.0,
            7,
        )
        .unwrap();
        assert!(open.max_excursion(200.0) > 0.1);
    }
}
