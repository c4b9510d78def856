//! End-to-end reproduction of the source characterisation: every headline
//! number is recomputed and compared with its reference value.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    bell_check, central_window, coherence_times, delay_histogram, find_peaks, fit_g2,
    fit_visibility, fringe_scan, sideband_baseline, subtract_accidentals, window_count,
    BellVerdict, CorrectedVisibility, FringeFit, FringeScan, G2Fit, Histogram, PeakSearch,
};
use crate::budget::{self, BudgetReport};
use crate::cavity::{escape_probability, finesse, golden_max, ResonatorSpec};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::montecarlo::{derived_seed, simulate_coincidences, SimConfig};
use crate::spdc::{simulate_lock, ClusterSpectrum, GmDiagram, LockTrace, LOCK_FRACTION};
use crate::units::{hz_to_wavelength_nm, wavelength_nm_to_hz};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub quantity: String,
    pub reference: String,
    pub computed: f64,
    pub tolerance: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub title: String,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl CriterionResult {
    fn new(id: u32, title: &str) -> Self {
        CriterionResult {
            id,
            title: title.into(),
            checks: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn push(&mut self, quantity: &str, reference: String, computed: f64, tolerance: String, pass: bool) {
        self.checks.push(Check {
            quantity: quantity.into(),
            reference,
            computed,
            tolerance,
            pass,
        });
    }

    /// |x − target| ≤ tol.
    fn abs(&mut self, quantity: &str, computed: f64, target: f64, tol: f64) {
        self.push(
            quantity,
            format!("{target}"),
            computed,
            format!("± {tol}"),
            (computed - target).abs() <= tol,
        );
    }

    /// |x/target − 1| ≤ tol.
    fn rel(&mut self, quantity: &str, computed: f64, target: f64, tol: f64) {
        self.push(
            quantity,
            format!("{target}"),
            computed,
            format!("± {}%", tol * 100.0),
            (computed / target - 1.0).abs() <= tol,
        );
    }

    /// target/f ≤ x ≤ target·f.
    fn factor(&mut self, quantity: &str, computed: f64, target: f64, f: f64) {
        self.push(
            quantity,
            format!("{target}"),
            computed,
            format!("factor {f}"),
            computed >= target / f && computed <= target * f,
        );
    }

    fn at_least(&mut self, quantity: &str, computed: f64, bound: f64) {
        self.push(quantity, format!("≥ {bound}"), computed, "bound".into(), computed >= bound);
    }

    fn at_most(&mut self, quantity: &str, computed: f64, bound: f64) {
        self.push(quantity, format!("< {bound}"), computed, "bound".into(), computed < bound);
    }
}

/// Numeric finesse: resonance spacing over the half-maximum width of the
/// Airy transmission sampled near `lambda_nm`.
fn scanned_finesse(spec: &ResonatorSpec, lambda_nm: f64, temperature_c: f64) -> Result<(f64, f64, f64)> {
    let nu0 = wavelength_nm_to_hz(lambda_nm);
    let fsr = spec.fsr_hz(lambda_nm, temperature_c)?;
    let tr = |nu: f64| spec.transmission_unchecked(nu, temperature_c);
    let peak = |guess: f64| {
        // coarse scan then golden refinement of one resonance
        let step = fsr / 400.0;
        let best = (0..400)
            .map(|k| guess - 0.5 * fsr + k as f64 * step)
            .max_by(|a, b| tr(*a).total_cmp(&tr(*b)))
            .expect("non-empty");
        golden_max(tr, best - step, best + step, 1.0)
    };
    let p1 = peak(nu0);
    let p2 = peak(p1 + fsr);
    let tmax = tr(p1);
    let half = |dir: f64| {
        let (mut a, mut b) = (p1, p1 + dir * 0.5 * fsr);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if tr(m) > 0.5 * tmax {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    };
    let fwhm = half(1.0) - half(-1.0);
    let spacing = p2 - p1;
    Ok((spacing / fwhm, spacing, fwhm))
}

pub fn cavity_closure(cfg: &RunConfig) -> Result<CriterionResult> {
    let mut c = CriterionResult::new(1, "Cavity closure: finesse and numeric FSR/FWHM");
    let spec = cfg.resonator()?;
    let f = finesse(&spec)?;
    c.abs("finesse", f, 15.4, 0.1);
    let (f_num, fsr, fwhm) = scanned_finesse(&spec, 1560.0, cfg.dispersion.reference_temperature_c)?;
    c.push(
        "scanned FSR/FWHM vs analytic finesse",
        format!("{f:.4}"),
        f_num,
        "± 0.5%".into(),
        (f_num / f - 1.0).abs() <= 0.005,
    );
    c.notes.push(format!(
        "scanned spacing {:.4} GHz, FWHM {:.2} MHz, propagation loss {:.4} dB/cm (0.06 quoted)",
        fsr * 1e-9,
        fwhm * 1e-6,
        spec.loss_db_per_cm
    ));
    Ok(c)
}

pub fn escape_check(_cfg: &RunConfig) -> Result<CriterionResult> {
    let mut c = CriterionResult::new(2, "Escape probability at t_pass = 0.9515, R = 0.85");
    let p = escape_probability(0.9515, 0.85)?;
    c.abs("escape probability", p, 0.43, 0.005);
    c.notes.push(
        "closed form gives 0.4230; the 0.43 reference is not reproduced by the formula at these inputs"
            .into(),
    );
    Ok(c)
}

pub fn dispersion_check(cfg: &RunConfig) -> Result<(CriterionResult, f64)> {
    let mut c = CriterionResult::new(3, "Dispersion calibration and thermal periods");
    let model = cfg.spdc_model()?;
    let t_ref = cfg.dispersion.reference_temperature_c;
    let idx = &model.resonator.index;
    let fsr = idx.fsr_hz(cfg.cavity.length_cm, 1560.0, t_ref)?;
    c.rel("FSR at 1560 nm (GHz)", fsr * 1e-9, 1.8, 0.005);
    let rate = idx.tuning_rate_pm_per_c(1560.0, t_ref)?;
    c.rel("resonance tuning (pm/°C)", rate, 44.5, 0.02);
    let t1 = model
        .find_double_resonance(cfg.lock.t_near_c, 0.02)?
        .temperature_c;
    let hop = model.mode_hop_period(t1)?;
    c.rel("mode-hop period (°C)", hop, 0.3, 0.10);
    let restore = model.restore_period(t1)?;
    c.rel("half-FSR restore period (°C)", restore, 0.15, 0.15);
    c.notes.push(format!("double resonance at {t1:.5} °C"));
    Ok((c, t1))
}

pub fn coherence_check(cfg: &RunConfig) -> Result<CriterionResult> {
    let mut c = CriterionResult::new(4, "Time-domain formulas at Δν = 117 MHz");
    let (tc, tau) = coherence_times(cfg.simulation.linewidth_mhz)?;
    c.abs("T_c (ns)", tc, 1.891, 5e-4);
    c.abs("τ_coh (ns)", tau, 2.721, 5e-4);
    Ok(c)
}

fn g2_histogram(cfg: &RunConfig, sim: &SimConfig) -> Result<Histogram> {
    let run = simulate_coincidences(sim, cfg.analysis.span_ns)?;
    delay_histogram(&run.delays_ps, cfg.analysis.bin_width_ps, cfg.analysis.span_ns)
}

/// Fraction of seeded runs whose fitted Δν lies within 3 standard errors
/// of the generating value, and the number of failed fits.
fn g2_coverage(cfg: &RunConfig, sim: &SimConfig) -> Result<(f64, usize)> {
    let trials = cfg.analysis.g2_trials.max(1);
    let truth = sim.linewidth_mhz;
    let outcomes: Vec<Option<bool>> = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let s = SimConfig {
                seed: derived_seed(sim.seed, k),
                ..sim.clone()
            };
            let h = g2_histogram(cfg, &s).ok()?;
            let f = fit_g2(&h).ok()?;
            Some((f.delta_nu_mhz - truth).abs() <= 3.0 * f.delta_nu_err_mhz)
        })
        .collect();
    let failed = outcomes.iter().filter(|o| o.is_none()).count();
    let inside = outcomes.iter().filter(|o| **o == Some(true)).count();
    Ok((inside as f64 / trials as f64, failed))
}

pub fn g2_round_trip(cfg: &RunConfig) -> Result<(CriterionResult, Histogram, G2Fit)> {
    let mut c = CriterionResult::new(5, "G² round trip: fitted Δν coverage");
    let sim = cfg.sim_config()?;
    let h = g2_histogram(cfg, &sim)?;
    let fit = fit_g2(&h)?;
    c.notes.push(format!(
        "seed {}: Δν = {:.1} ± {:.1} MHz from {} coincidences",
        sim.seed, fit.delta_nu_mhz, fit.delta_nu_err_mhz, h.total
    ));
    let (cov, failed) = g2_coverage(cfg, &sim)?;
    c.at_least("coverage at nominal rate", cov, 0.95);
    c.notes.push(format!("{failed} failed fits at nominal rate"));
    let fast = SimConfig {
        pair_rate_hz: 10.0 * sim.pair_rate_hz,
        ..sim.clone()
    };
    let (cov10, failed10) = g2_coverage(cfg, &fast)?;
    c.at_least("coverage at 10× rate", cov10, 0.95);
    c.notes.push(format!("{failed10} failed fits at 10× rate"));
    Ok((c, h, fit))
}

pub fn rate_budget(cfg: &RunConfig) -> Result<(CriterionResult, BudgetReport)> {
    let mut c = CriterionResult::new(6, "Rate budget");
    let sim = cfg.sim_config()?;
    let rep = budget::report(&sim, sim.pair_rate_hz, cfg.pump.power_mw, Some(3400.0))?;
    c.abs("arm 1 losses (dB)", rep.losses.db[0], 10.8, 1e-9);
    c.abs("arm 2 losses (dB)", rep.losses.db[1], 11.8, 1e-9);
    c.rel("arm 2 survival", rep.losses.survival[1], 0.02, 0.05);
    c.rel("coincidences (/s)", rep.rates.coincidences, 5.2, 0.15);
    c.rel("singles detector 1 (/s)", rep.rates.singles[0], 3400.0, 0.10);
    c.rel("pairs per coherence time", rep.rates.mu, 0.02, 0.25);
    c.rel("spectral brightness (/(s MHz mW))", rep.rates.brightness, 17.0, 0.10);
    let inferred = rep.inferred_plain.expect("singles given");
    c.rel("inferred generation rate (/s)", inferred, 6.6e6, 0.25);
    c.notes.push(format!(
        "dead-time aware inference from 3400/s: {:.3e} pairs/s",
        rep.inferred_dead_time.expect("singles given")
    ));
    Ok((c, rep))
}

pub fn accidental_check(
    cfg: &RunConfig,
    report: &BudgetReport,
    g2: &G2Fit,
) -> Result<CriterionResult> {
    let mut c = CriterionResult::new(7, "Accidental-coincidence budget");
    let a = &report.accidentals;
    c.factor("detector noise (Hz/ns)", a.detector_noise, 4.7e-2, 1.5);
    c.factor("independent pairs (Hz/ns)", a.independent_pairs, 3.4e-2, 1.3);
    let d = cfg.simulation.duration_s;
    let mc = g2.baseline_hz_per_ns(d);
    let sigma = g2.baseline_err_hz_per_ns(d);
    c.push(
        "Monte-Carlo baseline (Hz/ns)",
        format!("{:.4e}", a.total),
        mc,
        format!("2σ = {:.2e}", 2.0 * sigma),
        (mc - a.total).abs() <= 2.0 * sigma,
    );
    c.notes.push(format!("after-pulse component {:.2e} Hz/ns", a.afterpulse));
    Ok(c)
}

/// Sidebands start this far from any peak; the coherence tails have fallen
/// to about 1% of the peak height there.
const SIDEBAND_EXCLUSION_NS: f64 = 6.0;

/// Raw visibility is judged on scans this many times longer than the nominal
/// one; a single nominal-length scan scatters by about its own error bar.
const LONG_SCAN_FACTOR: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeRun {
    pub histogram: Histogram,
    pub scan: FringeScan,
    pub fit: FringeFit,
    pub accidental_per_point: f64,
    pub corrected: CorrectedVisibility,
    pub bell: BellVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FransonOutcome {
    /// Configured integration time per point.
    pub nominal: FringeRun,
    pub long: FringeRun,
    pub peaks: PeakSearch,
    pub balanced_areas: [f64; 3],
}

/// Fringe analysis of one coincidence delay list per phase: central-window
/// counts, visibility fit, and the accidental floor per point taken from the
/// side bands of the histogram summed over phases.
pub fn fringe_from_delays(
    cfg: &RunConfig,
    phases: &[f64],
    delays_ps: &[Vec<i64>],
    integration_s: f64,
) -> Result<FringeRun> {
    if phases.len() != delays_ps.len() {
        return Err(Error::InvalidInput(format!(
            "{} phases but {} delay lists",
            phases.len(),
            delays_ps.len()
        )));
    }
    let a = &cfg.analysis;
    let counts = delays_ps
        .iter()
        .map(|d| central_window(&delay_histogram(d, a.bin_width_ps, a.span_ns)?, cfg.franson.window_ns))
        .collect::<Result<Vec<f64>>>()?;
    let all: Vec<i64> = delays_ps.iter().flatten().copied().collect();
    let histogram = delay_histogram(&all, a.bin_width_ps, a.span_ns)?;
    let scan = fringe_scan(
        |p, _| {
            let k = phases.iter().position(|&q| q == p).expect("scanned phase");
            Ok(counts[k])
        },
        phases,
        integration_s,
    )?;
    let fit = fit_visibility(&scan)?;
    let d = cfg.franson.arm_delay_ns;
    let (b, be) = sideband_baseline(&histogram, &[-d, 0.0, d], SIDEBAND_EXCLUSION_NS)?;
    let scale = cfg.franson.window_ns / (a.bin_width_ps * 1e-3) / phases.len() as f64;
    let acc = b * scale;
    let corrected = subtract_accidentals(fit.visibility, fit.visibility_err_fit, fit.mean, acc, be * scale)?;
    let bell = bell_check(fit.visibility, fit.visibility_err_fit);
    Ok(FringeRun {
        histogram,
        scan,
        fit,
        accidental_per_point: acc,
        corrected,
        bell,
    })
}

/// Evenly spaced phases over one period.
pub fn scan_phases(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

/// Simulates the phase scan with a distinct seed per point and analyses it.
pub fn fringe_run(cfg: &RunConfig, seed: u64, integration_s: f64) -> Result<FringeRun> {
    let phases = scan_phases(cfg.franson.phase_points);
    let delays = phases
        .par_iter()
        .enumerate()
        .map(|(k, &p)| {
            let mut sim = cfg.franson_sim(p)?;
            sim.seed = derived_seed(seed, k as u64);
            sim.duration_s = integration_s;
            Ok(simulate_coincidences(&sim, cfg.analysis.span_ns)?.delays_ps)
        })
        .collect::<Result<Vec<Vec<i64>>>>()?;
    fringe_from_delays(cfg, &phases, &delays, integration_s)
}

fn fringe_note(label: &str, r: &FringeRun) -> String {
    format!(
        "{label}: V_raw = {:.3} ± {:.3} (fit) / ± {:.3} (√N); V_net = {:.3} ± {:.3}; Bell excess {:.1}σ",
        r.fit.visibility,
        r.fit.visibility_err_fit,
        r.fit.visibility_err_poisson,
        r.corrected.visibility,
        r.corrected.error,
        r.bell.significance_sigma
    )
}

pub fn franson_check(cfg: &RunConfig) -> Result<(CriterionResult, FransonOutcome)> {
    let mut c = CriterionResult::new(8, "Folded Franson interferometer");
    let delay = cfg.franson.arm_delay_ns;
    let bin_ns = cfg.analysis.bin_width_ps * 1e-3;
    let centres = [-delay, 0.0, delay];

    let nominal = fringe_run(cfg, cfg.seed, cfg.franson.integration_s)?;
    let long = fringe_run(
        cfg,
        derived_seed(cfg.seed, u64::MAX),
        LONG_SCAN_FACTOR * cfg.franson.integration_s,
    )?;

    let peaks = find_peaks(&long.histogram, 3)?;
    if let Some(s) = &peaks.shortfall {
        return Err(Error::Fit(s.clone()));
    }
    for (p, want) in peaks.peaks.iter().zip(centres) {
        c.abs(&format!("peak centre near {want} ns"), p.center_ns, want, bin_ns);
    }

    // 2:1:1 with the two-photon interference switched off
    let mut flat = cfg.clone();
    flat.franson.visibility = 0.0;
    flat.franson.integration_s = 10.0 * cfg.franson.integration_s;
    let sim = flat.franson_sim(0.0)?;
    let run = simulate_coincidences(&sim, cfg.analysis.span_ns)?;
    let h0 = delay_histogram(&run.delays_ps, cfg.analysis.bin_width_ps, cfg.analysis.span_ns)?;
    let (base, _) = sideband_baseline(&h0, &centres, SIDEBAND_EXCLUSION_NS)?;
    let area_w = 6.0;
    let raw: Vec<f64> = centres
        .iter()
        .map(|&t| window_count(&h0, t, area_w))
        .collect::<Result<_>>()?;
    let bg = base * area_w / bin_ns;
    let areas = [raw[0] - bg, raw[1] - bg, raw[2] - bg];
    for (k, side) in [0usize, 2].into_iter().enumerate() {
        // side − central/2 against its Poisson spread
        let diff = areas[side] - 0.5 * areas[1];
        let sigma = (raw[side] + 0.25 * raw[1]).sqrt();
        c.push(
            if k == 0 { "side/central ratio (−delay)" } else { "side/central ratio (+delay)" },
            "0.5".into(),
            areas[side] / areas[1],
            format!("3σ = {:.3}", 3.0 * sigma / areas[1]),
            diff.abs() <= 3.0 * sigma,
        );
    }

    c.abs("raw visibility", long.fit.visibility, 0.81, 0.06);
    c.at_least("accidental-subtracted visibility", long.corrected.visibility, 0.88);
    c.push(
        "raw visibility above 1/√2",
        "> 0.7071".into(),
        long.fit.visibility,
        "bound".into(),
        long.bell.violates,
    );
    let ps = &nominal.fit;
    c.push(
        "nominal-length scan consistent with 0.81",
        "0.81".into(),
        ps.visibility,
        format!("2σ = {:.3}", 2.0 * ps.visibility_err_fit),
        (ps.visibility - 0.81).abs() <= 2.0 * ps.visibility_err_fit,
    );
    c.notes.push(fringe_note(
        &format!("{:.0} s per point", LONG_SCAN_FACTOR * cfg.franson.integration_s),
        &long,
    ));
    c.notes.push(fringe_note(
        &format!("{:.0} s per point", cfg.franson.integration_s),
        &nominal,
    ));
    Ok((
        c,
        FransonOutcome {
            nominal,
            long,
            peaks,
            balanced_areas: areas,
        },
    ))
}

pub fn lock_check(cfg: &RunConfig) -> Result<(CriterionResult, LockTrace)> {
    let mut c = CriterionResult::new(9, "Side-of-fringe temperature lock");
    let model = cfg.spdc_model()?;
    let l = &cfg.lock;
    let trace = simulate_lock(&model, &l.plant(), l.gains, l.t_near_c, l.duration_s, cfg.seed)?;
    c.at_most("max |ΔT| after settling (°C)", trace.max_excursion(l.settle_s), 1e-3);
    c.rel(
        "locked throughput / peak",
        trace.mean_counts(l.settle_s) / trace.peak_cps,
        LOCK_FRACTION,
        0.02,
    );
    Ok((c, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub spectrum: ClusterSpectrum,
    pub gm: GmDiagram,
    pub tune_scan: Vec<(f64, f64)>,
    pub g2_histogram: Histogram,
    pub g2_fit: G2Fit,
    pub budget: BudgetReport,
    pub franson: FransonOutcome,
    pub lock: LockTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reproduction {
    pub seed: u64,
    pub criteria: Vec<CriterionResult>,
    pub artifacts: Artifacts,
}

/// Criteria 1–9 and the figure data. Determinism (10) is judged by the
/// caller by comparing two runs.
pub fn reproduce(cfg: &RunConfig) -> Result<Reproduction> {
    let model = cfg.spdc_model()?;
    let s = &cfg.spectrum;
    let t_spec = cfg.spectrum_temperature(&model)?;
    let spectrum = model.cluster_spectrum(t_spec, (s.band_nm[0], s.band_nm[1]))?;
    let centre = hz_to_wavelength_nm(model.pump_hz() / 2.0);
    let gm = model.gm_diagram(t_spec, (centre - 2.0, centre + 2.0))?;
    let t = &cfg.tune;
    let tune_scan = model.double_resonance_scan(t.t_min_c, t.t_max_c, t.step_c)?;

    let mut criteria = vec![cavity_closure(cfg)?, escape_check(cfg)?];
    let (c3, _) = dispersion_check(cfg)?;
    criteria.push(c3);
    criteria.push(coherence_check(cfg)?);
    let (c5, g2_histogram, g2_fit) = g2_round_trip(cfg)?;
    criteria.push(c5);
    let (c6, budget) = rate_budget(cfg)?;
    criteria.push(c6);
    criteria.push(accidental_check(cfg, &budget, &g2_fit)?);
    let (c8, franson) = franson_check(cfg)?;
    criteria.push(c8);
    let (c9, lock) = lock_check(cfg)?;
    criteria.push(c9);
    Ok(Reproduction {
        seed: cfg.seed,
        criteria,
        artifacts: Artifacts {
            spectrum,
            gm,
            tune_scan,
            g2_histogram,
            g2_fit,
            budget,
            franson,
            lock,
        },
    })
}

/// Determinism row: two serialised runs must match byte for byte.
pub fn determinism(first: &str, second: &str) -> CriterionResult {
    let mut c = CriterionResult::new(10, "Determinism under a fixed seed");
    let same = first == second;
    c.push(
        "identical outputs across two runs",
        "identical".into(),
        if same { 1.0 } else { 0.0 },
        "exact".into(),
        same,
    );
    c
}

pub fn summary_table(criteria: &[CriterionResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<3} {:<6} {:<44} {:>16} {:>14} {:<18}",
        "#", "result", "quantity", "reference", "computed", "tolerance"
    );
    for c in criteria {
        let _ = writeln!(s, "{:<3} {:<6} {}", c.id, if c.pass() { "PASS" } else { "FAIL" }, c.title);
        for k in &c.checks {
            let _ = writeln!(
                s,
                "{:<3} {:<6} {:<44} {:>16} {:>14.6} {:<18}",
                "",
                if k.pass { "ok" } else { "FAIL" },
                k.quantity,
                k.reference,
                k.computed,
                k.tolerance
            );
        }
        for n in &c.notes {
            let _ = writeln!(s, "{:<10} note: {n}", "");
        }
    }
    s
}
