use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;

use wgopo_core::analysis::{coherence_times, delay_histogram, fit_g2, G2Fit, Histogram};
use wgopo_core::budget;
use wgopo_core::config::RunConfig;
use wgopo_core::montecarlo::{derived_seed, io, simulate, tdc_coincidences, EventStream};
use wgopo_core::reproduce::{
    determinism, fringe_from_delays, reproduce, scan_phases, summary_table, FringeRun, Reproduction,
};
use wgopo_core::spdc::{simulate_lock, ClusterSpectrum, GmDiagram, LockTrace, LOCK_FRACTION};
use wgopo_core::units::hz_to_wavelength_nm;

use crate::manifest::{self, Outputs};
use crate::plot::{self, Figure, Series};
use crate::{Cli, Command, Format, Global, Mode};

/// A request the CLI refuses before any computation (exit code 1).
#[derive(Debug)]
pub struct Rejected(pub String);

impl fmt::Display for Rejected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Rejected {}

#[derive(Debug)]
struct CriteriaFailed(Vec<u32>);

impl fmt::Display for CriteriaFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "criteria not met: {}", ids.join(", "))
    }
}

impl std::error::Error for CriteriaFailed {}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = RunConfig::resolve(g.config.as_deref(), &g.overrides)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(g: &Global, command: &str) -> PathBuf {
    g.out.clone().unwrap_or_else(|| Path::new("out").join(command))
}

fn band(arg: &Option<Vec<f64>>, default: (f64, f64)) -> Result<(f64, f64)> {
    match arg.as_deref() {
        None => Ok(default),
        Some([lo, hi]) if lo < hi => Ok((*lo, *hi)),
        Some(v) => Err(Rejected(format!("--band needs LO < HI, got {v:?}")).into()),
    }
}

fn duration(g: &Global) -> Result<Option<f64>> {
    match g.duration {
        Some(d) if !d.is_finite() || d < 0.0 => {
            Err(Rejected(format!("--duration must be a finite number ≥ 0, got {d}")).into())
        }
        d => Ok(d),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let cfg = load_config(g)?;
    match &cli.command {
        Command::Spectrum { band: b, temperature } => spectrum(g, &cfg, b, *temperature),
        Command::Clusters { band: b, temperature } => clusters(g, &cfg, b, *temperature),
        Command::Tune => tune(g, &cfg),
        Command::Lock => lock(g, cfg),
        Command::Simulate { format, franson_scan } => {
            if *franson_scan {
                simulate_scan(g, cfg, *format)
            } else {
                simulate_plain(g, cfg, *format)
            }
        }
        Command::Analyze { mode: Mode::G2, inputs } => analyze_g2(g, &cfg, inputs),
        Command::Analyze { mode: Mode::Franson, inputs } => analyze_franson(g, &cfg, inputs),
        Command::Budget { observed_singles } => budget_cmd(g, &cfg, *observed_singles),
        Command::ReproducePaper => reproduce_paper(g, &cfg),
    }
}

fn spectrum_figure(out: &mut Outputs, name: &str, s: &ClusterSpectrum, stride: usize) -> Result<()> {
    let stride = stride.max(1);
    let envelope: Vec<(f64, f64)> = s
        .peak_hold
        .chunks(stride)
        .enumerate()
        .map(|(k, c)| {
            let i = k * stride;
            (hz_to_wavelength_nm(s.frequencies_hz[i]), c.iter().cloned().fold(0.0, f64::max))
        })
        .collect();
    plot::write(
        &out.path(name),
        &Figure {
            title: &format!("Cluster emission at {:.3} °C", s.temperature_c),
            x_label: "signal wavelength (nm)",
            y_label: "doubly resonant weight (envelope)",
            series: vec![Series::line("", envelope, plot::BLUE_)],
            errors: vec![],
        },
    )
}

fn spectrum(g: &Global, cfg: &RunConfig, b: &Option<Vec<f64>>, t: Option<f64>) -> Result<()> {
    let model = cfg.spdc_model()?;
    let t = match t {
        Some(t) => t,
        None => cfg.spectrum_temperature(&model)?,
    };
    let band_nm = band(b, (cfg.spectrum.band_nm[0], cfg.spectrum.band_nm[1]))?;
    let s = model.cluster_spectrum(t, band_nm)?;
    let mut out = Outputs::create(&out_dir(g, "spectrum"))?;
    out.text("spectrum.csv", &s.to_csv(cfg.spectrum.csv_stride))?;
    out.text("clusters.csv", &s.clusters_csv())?;
    spectrum_figure(&mut out, "spectrum.svg", &s, cfg.spectrum.csv_stride)?;
    println!("{} clusters in {:.1}–{:.1} nm at {t:.3} °C", s.clusters.len(), band_nm.0, band_nm.1);
    let probe = model.filter.signal_nm;
    match s.cluster_containing_nm(probe) {
        Some(c) => {
            let (lo, hi) = c.wavelength_range_nm();
            println!("cluster containing {probe:.3} nm: {lo:.3}–{hi:.3} nm");
        }
        None => println!("no cluster contains {probe:.3} nm at this temperature"),
    }
    out.finish(
        "spectrum",
        cfg,
        json!({ "temperature_c": t, "band_nm": [band_nm.0, band_nm.1], "clusters": s.clusters.len() }),
    )
}

fn gm_figure(out: &mut Outputs, name: &str, gm: &GmDiagram) -> Result<()> {
    let half = 0.5 * gm.fwhm_hz;
    let (res, off): (Vec<_>, Vec<_>) = gm.pairs.iter().partition(|p| p.detuning_hz.abs() <= half);
    let pts = |v: Vec<&wgopo_core::spdc::ModePair>| {
        v.iter()
            .map(|p| (hz_to_wavelength_nm(p.signal_hz), p.detuning_hz * 1e-6))
            .collect::<Vec<_>>()
    };
    plot::write(
        &out.path(name),
        &Figure {
            title: &format!("Signal/idler mode pairing at {:.3} °C", gm.temperature_c),
            x_label: "signal wavelength (nm)",
            y_label: "ν_s + ν_i − ν_p (MHz)",
            series: vec![
                Series::dots("off resonance", pts(off), plot::BLUE_),
                Series::dots("within FWHM/2", pts(res), plot::RED_),
            ],
            errors: vec![],
        },
    )
}

fn clusters(g: &Global, cfg: &RunConfig, b: &Option<Vec<f64>>, t: Option<f64>) -> Result<()> {
    let model = cfg.spdc_model()?;
    let t = match t {
        Some(t) => t,
        None => cfg.spectrum_temperature(&model)?,
    };
    let centre = model.degeneracy_nm();
    let band_nm = band(b, (centre - 2.0, centre + 2.0))?;
    let gm = model.gm_diagram(t, band_nm)?;
    let s = model.cluster_spectrum(t, (cfg.spectrum.band_nm[0], cfg.spectrum.band_nm[1]))?;
    let mut out = Outputs::create(&out_dir(g, "clusters"))?;
    out.text("gm.csv", &gm.to_csv())?;
    out.text("clusters.csv", &s.clusters_csv())?;
    gm_figure(&mut out, "gm.svg", &gm)?;
    println!("{:>12} {:>12} {:>12} {:>10}", "start_nm", "end_nm", "peak_nm", "weight");
    for c in &s.clusters {
        let (lo, hi) = c.wavelength_range_nm();
        println!(
            "{lo:>12.4} {hi:>12.4} {:>12.4} {:>10.4}",
            hz_to_wavelength_nm(c.peak_hz),
            c.peak_weight
        );
    }
    let resonant = gm.resonant_pairs().count();
    println!("{resonant} of {} mode pairs within FWHM/2 in {:.2}–{:.2} nm", gm.pairs.len(), band_nm.0, band_nm.1);
    out.finish(
        "clusters",
        cfg,
        json!({ "temperature_c": t, "gm_band_nm": [band_nm.0, band_nm.1], "resonant_pairs": resonant }),
    )
}

fn tune_figure(out: &mut Outputs, name: &str, scan: &[(f64, f64)]) -> Result<()> {
    plot::write(
        &out.path(name),
        &Figure {
            title: "Filtered emission against crystal temperature",
            x_label: "temperature (°C)",
            y_label: "filtered weight",
            series: vec![Series::line("", scan.to_vec(), plot::BLUE_)],
            errors: vec![],
        },
    )
}

fn scan_csv(scan: &[(f64, f64)]) -> String {
    let mut s = String::from("temperature_c,filtered_weight\n");
    for (t, w) in scan {
        s.push_str(&format!("{t:.5},{w:.6e}\n"));
    }
    s
}

fn tune(g: &Global, cfg: &RunConfig) -> Result<()> {
    let model = cfg.spdc_model()?;
    let t = &cfg.tune;
    let scan = model.double_resonance_scan(t.t_min_c, t.t_max_c, t.step_c)?;
    let peaks = model.double_resonances(t.t_min_c, t.t_max_c)?;
    let mut out = Outputs::create(&out_dir(g, "tune"))?;
    out.text("tune.csv", &scan_csv(&scan))?;
    let mut rows = String::from("temperature_c,weight\n");
    for p in &peaks {
        rows.push_str(&format!("{:.5},{:.6e}\n", p.temperature_c, p.weight));
    }
    out.text("resonances.csv", &rows)?;
    tune_figure(&mut out, "tune.svg", &scan)?;
    println!("{} double resonances in {:.3}–{:.3} °C", peaks.len(), t.t_min_c, t.t_max_c);
    for p in &peaks {
        println!("  {:.4} °C  weight {:.4}", p.temperature_c, p.weight);
    }
    let near = model.find_double_resonance(cfg.lock.t_near_c, 0.02)?;
    let hop = model.mode_hop_period(near.temperature_c)?;
    let restore = model.restore_period(near.temperature_c)?;
    println!(
        "near {:.4} °C: mode-hop period {hop:.4} °C, half-FSR restore {restore:.4} °C",
        near.temperature_c
    );
    out.finish(
        "tune",
        cfg,
        json!({
            "resonances_c": peaks.iter().map(|p| p.temperature_c).collect::<Vec<_>>(),
            "mode_hop_period_c": hop,
            "restore_period_c": restore,
        }),
    )
}

fn lock_figures(out: &mut Outputs, trace: &LockTrace) -> Result<()> {
    let dt: Vec<(f64, f64)> = trace
        .time_s
        .iter()
        .zip(&trace.temperature_c)
        .map(|(&t, &x)| (t, (x - trace.lock_temperature_c) * 1e3))
        .collect();
    plot::write(
        &out.path("lock_temperature.svg"),
        &Figure {
            title: "Crystal temperature about the lock point",
            x_label: "time (s)",
            y_label: "T − T_lock (mK)",
            series: vec![Series::line("", dt, plot::BLUE_)],
            errors: vec![],
        },
    )?;
    let counts: Vec<(f64, f64)> = trace.time_s.iter().copied().zip(trace.counts_cps.iter().copied()).collect();
    plot::write(
        &out.path("lock_counts.svg"),
        &Figure {
            title: "Detector-1 counts under lock",
            x_label: "time (s)",
            y_label: "counts (/s)",
            series: vec![
                Series::line("counts", counts, plot::BLUE_),
                Series::line(
                    "set point",
                    vec![(0.0, trace.setpoint_cps), (*trace.time_s.last().unwrap_or(&0.0), trace.setpoint_cps)],
                    plot::RED_,
                ),
            ],
            errors: vec![],
        },
    )
}

fn lock(g: &Global, mut cfg: RunConfig) -> Result<()> {
    if let Some(d) = duration(g)? {
        cfg.lock.duration_s = d;
    }
    let model = cfg.spdc_model()?;
    let l = &cfg.lock;
    let trace = simulate_lock(&model, &l.plant(), l.gains, l.t_near_c, l.duration_s, cfg.seed)?;
    let mut out = Outputs::create(&out_dir(g, "lock"))?;
    out.text("lock.csv", &trace.to_csv())?;
    lock_figures(&mut out, &trace)?;
    let exc = trace.max_excursion(l.settle_s);
    let frac = trace.mean_counts(l.settle_s) / trace.peak_cps;
    println!(
        "lock point {:.5} °C (peak {:.5} °C), set point {:.0}/s",
        trace.lock_temperature_c, trace.peak_temperature_c, trace.setpoint_cps
    );
    println!("after {:.0} s: max |ΔT| = {:.2e} °C, throughput {frac:.4} of peak (target {LOCK_FRACTION:.4})", l.settle_s, exc);
    out.finish(
        "lock",
        &cfg,
        json!({ "max_excursion_c": exc, "throughput_fraction": frac, "lock_temperature_c": trace.lock_temperature_c }),
    )
}

fn ext(format: Format) -> &'static str {
    match format {
        Format::Bin => "bin",
        Format::Csv => "csv",
    }
}

fn simulate_plain(g: &Global, mut cfg: RunConfig, format: Format) -> Result<()> {
    if let Some(d) = duration(g)? {
        cfg.simulation.duration_s = d;
    }
    let sim = cfg.sim_config()?;
    let run = simulate(&sim)?;
    let mut out = Outputs::create(&out_dir(g, "simulate"))?;
    let e = ext(format);
    io::write_file(&out.path(&format!("ch1.{e}")), &[&run.det1])?;
    io::write_file(&out.path(&format!("ch2.{e}")), &[&run.det2])?;
    let c = &run.counts;
    println!(
        "{:.1} s: channel 1 {} events ({:.1}/s), channel 2 {} events ({:.2}/s)",
        c.duration_s,
        c.singles[0],
        c.singles_rate(0),
        c.singles[1],
        c.singles_rate(1)
    );
    out.finish(
        "simulate",
        &cfg,
        json!({ "mode": "plain", "duration_s": sim.duration_s, "counts": c }),
    )
}

fn simulate_scan(g: &Global, mut cfg: RunConfig, format: Format) -> Result<()> {
    if let Some(d) = duration(g)? {
        cfg.franson.integration_s = d;
    }
    let phases = scan_phases(cfg.franson.phase_points);
    let mut out = Outputs::create(&out_dir(g, "simulate"))?;
    let e = ext(format);
    let mut entries = Vec::new();
    for (k, &phase) in phases.iter().enumerate() {
        let mut sim = cfg.franson_sim(phase)?;
        sim.seed = derived_seed(cfg.seed, k as u64);
        let run = simulate(&sim)?;
        let f1 = format!("phase{k:02}_ch1.{e}");
        let f2 = format!("phase{k:02}_ch2.{e}");
        io::write_file(&out.path(&f1), &[&run.det1])?;
        io::write_file(&out.path(&f2), &[&run.det2])?;
        entries.push(json!({ "phase_rad": phase, "files": [f1, f2], "counts": run.counts }));
    }
    println!(
        "{} phase points of {:.1} s written to {}",
        phases.len(),
        cfg.franson.integration_s,
        out.dir.display()
    );
    out.finish(
        "simulate",
        &cfg,
        json!({ "mode": "franson_scan", "integration_s": cfg.franson.integration_s, "phases": entries }),
    )
}

/// Channel 1 and 2 streams gathered from any number of files.
fn load_channels(files: &[PathBuf]) -> Result<(EventStream, EventStream)> {
    let mut ch = [EventStream::new(1), EventStream::new(2)];
    for f in files {
        let streams = io::read_file(f).with_context(|| format!("reading {}", f.display()))?;
        for s in streams {
            let slot = match s.channel {
                1 => &mut ch[0],
                2 => &mut ch[1],
                other => {
                    return Err(Rejected(format!("{}: unexpected channel {other}", f.display())).into())
                }
            };
            if !slot.is_empty() {
                return Err(Rejected(format!("channel {} appears in more than one file", s.channel)).into());
            }
            *slot = s;
        }
    }
    let [a, b] = ch;
    if a.is_empty() && b.is_empty() {
        return Err(Rejected("no events on channels 1 and 2".into()).into());
    }
    Ok((a, b))
}

/// Acquisition time: --duration, else the manifest next to the files, else
/// the span of the recorded events.
fn acquisition_time(g: &Global, files: &[PathBuf], a: &EventStream, b: &EventStream) -> Result<f64> {
    if let Some(d) = duration(g)? {
        return Ok(d);
    }
    if let Some(dir) = files.first().and_then(|f| f.parent()) {
        if let Ok(m) = manifest::read(dir) {
            if let Some(d) = m.details.get("duration_s").and_then(|v| v.as_f64()) {
                return Ok(d);
            }
        }
    }
    let first = a.timestamps_ps.first().into_iter().chain(b.timestamps_ps.first()).min();
    let last = a.timestamps_ps.last().into_iter().chain(b.timestamps_ps.last()).max();
    match (first, last) {
        (Some(f), Some(l)) if l > f => Ok((l - f) as f64 * 1e-12),
        _ => Err(Rejected("cannot infer the acquisition time; pass --duration".into()).into()),
    }
}

fn histogram_csv_and_plot(out: &mut Outputs, stem: &str, title: &str, h: &Histogram, fit: Option<&G2Fit>) -> Result<()> {
    out.text(&format!("{stem}.csv"), &h.to_csv())?;
    let pts: Vec<(f64, f64)> = (0..h.len()).map(|i| (h.center_ns(i), h.counts[i] as f64)).collect();
    let mut series = vec![Series::dots("coincidences", pts, plot::BLUE_)];
    if let Some(f) = fit {
        let m: Vec<(f64, f64)> = (0..h.len() * 4)
            .map(|k| {
                let t = h.origin_ns + (k as f64 + 0.5) * h.bin_width_ns() / 4.0;
                (t, f.model(t))
            })
            .collect();
        series.push(Series::line("fit", m, plot::RED_));
    }
    plot::write(
        &out.path(&format!("{stem}.svg")),
        &Figure {
            title,
            x_label: "delay t₂ − t₁ (ns)",
            y_label: &format!("coincidences per {:.0} ps bin", h.bin_width_ps),
            series,
            errors: vec![],
        },
    )
}

fn g2_text(fit: &G2Fit, duration_s: f64) -> Result<String> {
    let (tc, tau) = coherence_times(fit.delta_nu_mhz)?;
    Ok(format!(
        "Δν        {:.2} ± {:.2} MHz\nT_c       {:.3} ns\nτ_coh     {:.3} ns\ncentre    {:.3} ± {:.3} ns\namplitude {:.2} ± {:.2} per bin\nbaseline  {:.4e} ± {:.1e} Hz/ns\nχ²/dof    {:.3}\nconverged {} after {} iterations\n",
        fit.delta_nu_mhz,
        fit.delta_nu_err_mhz,
        tc,
        tau,
        fit.center_ns,
        fit.center_err_ns,
        fit.amplitude,
        fit.amplitude_err,
        fit.baseline_hz_per_ns(duration_s),
        fit.baseline_err_hz_per_ns(duration_s),
        fit.reduced_chi2,
        fit.converged,
        fit.iterations
    ))
}

fn analyze_g2(g: &Global, cfg: &RunConfig, files: &[PathBuf]) -> Result<()> {
    let (a, b) = load_channels(files)?;
    let d = acquisition_time(g, files, &a, &b)?;
    let an = &cfg.analysis;
    let delays = tdc_coincidences(&a, &b, an.span_ns);
    let h = delay_histogram(&delays, an.bin_width_ps, an.span_ns)?;
    let fit = fit_g2(&h)?;
    let text = g2_text(&fit, d)?;
    let mut out = Outputs::create(&out_dir(g, "analyze"))?;
    histogram_csv_and_plot(&mut out, "g2_histogram", "Signal–idler cross-correlation", &h, Some(&fit))?;
    out.text("g2_report.txt", &text)?;
    out.text("g2_fit.json", &serde_json::to_string_pretty(&fit)?)?;
    print!("{} coincidences within ±{} ns over {d:.1} s\n{text}", delays.len(), an.span_ns);
    out.finish(
        "analyze g2",
        cfg,
        json!({ "inputs": files, "duration_s": d, "delta_nu_mhz": fit.delta_nu_mhz, "delta_nu_err_mhz": fit.delta_nu_err_mhz }),
    )
}

fn fringe_figure(out: &mut Outputs, name: &str, r: &FringeRun) -> Result<()> {
    let s = &r.scan;
    let pts: Vec<(f64, f64)> = s.phases_rad.iter().copied().zip(s.counts.iter().copied()).collect();
    let errors: Vec<(f64, f64, f64)> = pts.iter().zip(&s.errors).map(|(&(x, y), &e)| (x, y, e)).collect();
    let top = s.phases_rad.last().copied().unwrap_or(0.0);
    let model: Vec<(f64, f64)> = (0..=200)
        .map(|k| {
            let p = top * k as f64 / 200.0;
            (p, r.fit.model(p))
        })
        .collect();
    plot::write(
        &out.path(name),
        &Figure {
            title: &format!(
                "Two-photon fringe: V = {:.3} ± {:.3}",
                r.fit.visibility, r.fit.visibility_err_fit
            ),
            x_label: "interferometer phase (rad)",
            y_label: &format!("coincidences in {:.0} s", s.integration_s),
            series: vec![
                Series::dots("central window", pts, plot::BLUE_),
                Series::line("fit", model, plot::RED_),
            ],
            errors,
        },
    )
}

fn fringe_text(r: &FringeRun) -> String {
    format!(
        "raw visibility        {:.4} ± {:.4} (fit) ± {:.4} (√N)\nphase offset          {:.4} rad\nmean per point        {:.2}\naccidentals per point {:.2}\nnet visibility        {:.4} ± {:.4}{}\nBell bound 1/√2       {} ({:+.2}σ)\n",
        r.fit.visibility,
        r.fit.visibility_err_fit,
        r.fit.visibility_err_poisson,
        r.fit.phase_offset_rad,
        r.fit.mean,
        r.accidental_per_point,
        r.corrected.visibility,
        r.corrected.error,
        if r.corrected.unphysical { " (exceeds 1)" } else { "" },
        if r.bell.violates { "violated" } else { "not violated" },
        r.bell.significance_sigma
    )
}

fn analyze_franson(g: &Global, cfg: &RunConfig, inputs: &[PathBuf]) -> Result<()> {
    let [dir] = inputs else {
        return Err(Rejected("franson mode takes one scan directory".into()).into());
    };
    let m = manifest::read(dir)?;
    let bad = |what: &str| Rejected(format!("{}: not a phase-scan manifest ({what})", dir.display()));
    if m.details.get("mode").and_then(|v| v.as_str()) != Some("franson_scan") {
        return Err(bad("mode").into());
    }
    let integration = m.details.get("integration_s").and_then(|v| v.as_f64()).ok_or_else(|| bad("integration_s"))?;
    let entries = m.details.get("phases").and_then(|v| v.as_array()).ok_or_else(|| bad("phases"))?;
    let mut phases = Vec::with_capacity(entries.len());
    let mut delays = Vec::with_capacity(entries.len());
    for e in entries {
        phases.push(e.get("phase_rad").and_then(|v| v.as_f64()).ok_or_else(|| bad("phase_rad"))?);
        let files: Vec<PathBuf> = e
            .get("files")
            .and_then(|v| v.as_array())
            .ok_or_else(|| bad("files"))?
            .iter()
            .map(|f| f.as_str().map(|s| dir.join(s)).ok_or_else(|| bad("files")))
            .collect::<std::result::Result<_, _>>()?;
        let (a, b) = load_channels(&files)?;
        delays.push(tdc_coincidences(&a, &b, cfg.analysis.span_ns));
    }
    let r = fringe_from_delays(cfg, &phases, &delays, integration)?;
    let text = fringe_text(&r);
    let mut out = Outputs::create(&out_dir(g, "analyze"))?;
    out.text("fringe.csv", &r.scan.to_csv())?;
    fringe_figure(&mut out, "fringe.svg", &r)?;
    histogram_csv_and_plot(&mut out, "franson_histogram", "Folded-interferometer delay histogram", &r.histogram, None)?;
    out.text("franson_report.txt", &text)?;
    out.text("franson_report.json", &serde_json::to_string_pretty(&r)?)?;
    print!("{text}");
    out.finish(
        "analyze franson",
        cfg,
        json!({ "input": dir, "visibility": r.fit.visibility, "net_visibility": r.corrected.visibility, "bell_violated": r.bell.violates }),
    )
}

fn budget_cmd(g: &Global, cfg: &RunConfig, observed: Option<f64>) -> Result<()> {
    let sim = cfg.sim_config()?;
    let rep = budget::report(&sim, sim.pair_rate_hz, cfg.pump.power_mw, observed)?;
    let text = rep.to_text();
    let mut out = Outputs::create(&out_dir(g, "budget"))?;
    out.text("budget.txt", &text)?;
    out.text("budget.json", &rep.to_json())?;
    print!("{text}");
    out.finish("budget", cfg, json!({ "observed_singles": observed }))
}

fn write_artifacts(out: &mut Outputs, cfg: &RunConfig, r: &Reproduction) -> Result<()> {
    let a = &r.artifacts;
    out.text("spectrum.csv", &a.spectrum.to_csv(cfg.spectrum.csv_stride))?;
    out.text("clusters.csv", &a.spectrum.clusters_csv())?;
    spectrum_figure(out, "spectrum.svg", &a.spectrum, cfg.spectrum.csv_stride)?;
    out.text("gm.csv", &a.gm.to_csv())?;
    gm_figure(out, "gm.svg", &a.gm)?;
    out.text("tune.csv", &scan_csv(&a.tune_scan))?;
    tune_figure(out, "tune.svg", &a.tune_scan)?;
    histogram_csv_and_plot(out, "g2_histogram", "Signal–idler cross-correlation", &a.g2_histogram, Some(&a.g2_fit))?;
    out.text("g2_report.txt", &g2_text(&a.g2_fit, cfg.simulation.duration_s)?)?;
    out.text("budget.txt", &a.budget.to_text())?;
    out.text("budget.json", &a.budget.to_json())?;
    let f = &a.franson;
    histogram_csv_and_plot(out, "franson_histogram", "Folded-interferometer delay histogram", &f.long.histogram, None)?;
    out.text("fringe.csv", &f.nominal.scan.to_csv())?;
    fringe_figure(out, "fringe.svg", &f.nominal)?;
    out.text("franson_report.txt", &fringe_text(&f.nominal))?;
    out.text("fringe_long.csv", &f.long.scan.to_csv())?;
    fringe_figure(out, "fringe_long.svg", &f.long)?;
    out.text("franson_long_report.txt", &fringe_text(&f.long))?;
    out.text("lock.csv", &a.lock.to_csv())?;
    lock_figures(out, &a.lock)
}

fn reproduce_paper(g: &Global, cfg: &RunConfig) -> Result<()> {
    let first = reproduce(cfg)?;
    let second = reproduce(cfg)?;
    let j1 = serde_json::to_string(&first)?;
    let j2 = serde_json::to_string(&second)?;
    let mut criteria = first.criteria.clone();
    criteria.push(determinism(&j1, &j2));
    let table = summary_table(&criteria);

    let mut out = Outputs::create(&out_dir(g, "reproduce-paper"))?;
    out.text("summary.txt", &table)?;
    out.text("criteria.json", &serde_json::to_string_pretty(&criteria)?)?;
    write_artifacts(&mut out, cfg, &first)?;
    print!("{table}");
    let failed: Vec<u32> = criteria.iter().filter(|c| !c.pass()).map(|c| c.id).collect();
    out.finish(
        "reproduce-paper",
        cfg,
        json!({ "passed": criteria.len() - failed.len(), "failed": failed }),
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CriteriaFailed(failed).into())
    }
}
