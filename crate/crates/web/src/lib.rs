//! Browser bindings. Each export returns a JSON string so the page needs no
//! glue beyond `JSON.parse`.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use wgopo_core::analysis::{delay_histogram, fit_g2};
use wgopo_core::cavity::{self, ResonatorSpec};
use wgopo_core::config::RunConfig;
use wgopo_core::dispersion::WaveguideIndexModel;
use wgopo_core::montecarlo::simulate_coincidences;
use wgopo_core::units::{hz_to_wavelength_nm, wavelength_nm_to_hz};

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Max-pooled down to at most `n` points so the page can draw it directly.
fn pooled(xs: &[f64], ys: &[f64], n: usize) -> Vec<(f64, f64)> {
    let step = xs.len().div_ceil(n.max(1)).max(1);
    xs.chunks(step)
        .zip(ys.chunks(step))
        .map(|(x, y)| {
            let (i, m) = y
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
            (x[i], m)
        })
        .collect()
}

/// Emission spectrum over a signal band at one crystal temperature.
/// `temperature_c` NaN selects the double resonance at the signal filter.
#[wasm_bindgen]
pub fn cluster_spectrum(temperature_c: f64, lo_nm: f64, hi_nm: f64, points: usize) -> Result<String, JsValue> {
    let cfg = RunConfig::default();
    let model = cfg.spdc_model().map_err(js_err)?;
    let t = if temperature_c.is_nan() {
        cfg.spectrum_temperature(&model).map_err(js_err)?
    } else {
        temperature_c
    };
    let s = model.cluster_spectrum(t, (lo_nm, hi_nm)).map_err(js_err)?;
    let nm: Vec<f64> = s.frequencies_hz.iter().map(|&f| hz_to_wavelength_nm(f)).collect();
    let curve: Vec<Value> = pooled(&nm, &s.weight, points)
        .into_iter()
        .map(|(x, y)| json!([x, y]))
        .collect();
    let clusters: Vec<Value> = s
        .clusters
        .iter()
        .map(|c| {
            json!({
                "start_nm": hz_to_wavelength_nm(c.end_hz),
                "end_nm": hz_to_wavelength_nm(c.start_hz),
                "peak_nm": hz_to_wavelength_nm(c.peak_hz),
                "peak_weight": c.peak_weight,
            })
        })
        .collect();
    Ok(json!({ "temperature_c": t, "curve": curve, "clusters": clusters }).to_string())
}

/// Airy transmission across three free spectral ranges near 1560 nm for a
/// symmetric resonator with face reflectivity `r`.
#[wasm_bindgen]
pub fn airy(r: f64, loss_db_per_cm: f64, length_cm: f64, points: usize) -> Result<String, JsValue> {
    let spec = ResonatorSpec::new(length_cm, r, r, loss_db_per_cm, WaveguideIndexModel::ti_ppln())
        .map_err(js_err)?;
    let t_c = RunConfig::default().filter.operating_temperature_c;
    let fsr = spec.fsr_hz(1560.0, t_c).map_err(js_err)?;
    let centre = cavity::nearest_resonance(&spec, wavelength_nm_to_hz(1560.0), t_c);
    let n = points.max(16);
    let curve: Vec<Value> = (0..n)
        .map(|i| {
            let x = -1.5 + 3.0 * i as f64 / (n - 1) as f64;
            json!([x, spec.transmission_unchecked(centre + x * fsr, t_c)])
        })
        .collect();
    let finesse = cavity::finesse(&spec).map_err(js_err)?;
    let escape = cavity::escape_probability(spec.single_pass_transmission(), r).map_err(js_err)?;
    Ok(json!({
        "finesse": finesse,
        "fsr_ghz": fsr * 1e-9,
        "fwhm_mhz": fsr / finesse * 1e-6,
        "escape_probability": escape,
        "curve": curve,
    })
    .to_string())
}

/// Monte-Carlo coincidence histogram at the default operating point with
/// the pair rate and acquisition time scaled, followed by the g² fit.
#[wasm_bindgen]
pub fn g2_run(pair_rate_hz: f64, duration_s: f64, seed: u64) -> Result<String, JsValue> {
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    cfg.simulation.pair_rate_hz = pair_rate_hz;
    cfg.simulation.duration_s = duration_s;
    let span = cfg.analysis.span_ns;
    let run = simulate_coincidences(&cfg.sim_config().map_err(js_err)?, span).map_err(js_err)?;
    let h = delay_histogram(&run.delays_ps, cfg.analysis.bin_width_ps, span).map_err(js_err)?;
    let bins: Vec<Value> = h
        .counts
        .iter()
        .enumerate()
        .map(|(i, &c)| json!([h.center_ns(i), c]))
        .collect();
    let (fit, model) = match fit_g2(&h) {
        Ok(f) => {
            let m: Vec<Value> = (0..h.len())
                .map(|i| json!([h.center_ns(i), f.model(h.center_ns(i))]))
                .collect();
            (serde_json::to_value(&f).map_err(js_err)?, m)
        }
        Err(e) => (json!({ "error": e.to_string() }), Vec::new()),
    };
    Ok(json!({
        "singles": run.counts.singles,
        "coincidences": h.total,
        "bins": bins,
        "model": model,
        "fit": fit,
    })
    .to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: Result<String, JsValue>) -> Value {
        serde_json::from_str(&s.unwrap_or_else(|_| panic!("call failed"))).unwrap()
    }

    #[test]
    fn spectrum_is_pooled_and_has_the_filter_cluster() {
        let v = parse(cluster_spectrum(f64::NAN, 1540.0, 1580.0, 500));
        assert!(v["curve"].as_array().unwrap().len() <= 500);
        let hit = v["clusters"].as_array().unwrap().iter().any(|c| {
            c["start_nm"].as_f64().unwrap() <= 1559.5 && 1559.5 <= c["end_nm"].as_f64().unwrap()
        });
        assert!(hit, "{}", v["clusters"]);
    }

    #[test]
    fn airy_peaks_near_one_with_no_loss() {
        let v = parse(airy(0.85, 0.0, 3.6, 601));
        let peak = v["curve"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p[1].as_f64().unwrap())
            .fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-3, "{peak}");
        assert!((v["finesse"].as_f64().unwrap() - 19.31).abs() < 0.01);
    }

    #[test]
    fn g2_run_fits_a_linewidth() {
        let v = parse(g2_run(6.6e7, 20.0, 3));
        let dnu = v["fit"]["delta_nu_mhz"].as_f64().unwrap();
        assert!((80.0..160.0).contains(&dnu), "{dnu}");
    }
}
