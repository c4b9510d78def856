//! Pair births, loss thinning and the folded Franson interferometer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{laplace_ps, poisson, slab_rng, DetectorMode, FransonConfig, OpticalChain, SimConfig, PS_PER_S};

/// Arms taken by (signal, idler) in the unbalanced interferometer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathClass {
    Direct,
    ShortShort,
    LongLong,
    ShortLong,
    LongShort,
}

impl PathClass {
    /// Pairs that end up in the central coincidence peak.
    pub fn is_central(self) -> bool {
        matches!(self, PathClass::Direct | PathClass::ShortShort | PathClass::LongLong)
    }
}

/// A photon is `None` once it has been lost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhotonPair {
    pub signal_ps: Option<i64>,
    pub idler_ps: Option<i64>,
    pub path: PathClass,
}

/// Poisson pair births over the configured duration with Laplace-distributed
/// idler delays.
pub fn generate_pairs(cfg: &SimConfig) -> Vec<PhotonPair> {
    let scale = cfg.delay_scale_ps();
    let mut out = Vec::new();
    for (k, start, end) in cfg.slabs() {
        let mut rng = slab_rng(cfg.seed, k);
        let dur = (end - start) as f64 / PS_PER_S as f64;
        let n = poisson(&mut rng, cfg.pair_rate_hz * dur);
        let mut births: Vec<i64> = (0..n).map(|_| rng.gen_range(start..end)).collect();
        births.sort_unstable();
        out.extend(births.into_iter().map(|t| PhotonPair {
            signal_ps: Some(t),
            idler_ps: Some(t + laplace_ps(&mut rng, scale)),
            path: PathClass::Direct,
        }));
    }
    out
}

/// Independent Bernoulli thinning of every photon with survival
/// p_out·10^(−dB/10) of its arm.
pub fn apply_chain(
    pairs: &[PhotonPair],
    chain: &OpticalChain,
    escape_probability: f64,
    seed: u64,
) -> Vec<PhotonPair> {
    let (a, b) = chain.arm_db();
    let s1 = escape_probability * 10f64.powf(-a / 10.0);
    let s2 = escape_probability * 10f64.powf(-b / 10.0);
    let mut rng = slab_rng(seed, u64::MAX - 1);
    pairs
        .iter()
        .map(|p| PhotonPair {
            signal_ps: p.signal_ps.filter(|_| rng.gen::<f64>() < s1),
            idler_ps: p.idler_ps.filter(|_| rng.gen::<f64>() < s2),
            path: p.path,
        })
        .collect()
}

/// Exit probabilities (both, signal only, idler only) of the port towards
/// the detectors, conditional on the path class.
fn exit_table(path: PathClass, fc: &FransonConfig) -> [f64; 3] {
    match path {
        PathClass::Direct => [1.0, 0.0, 0.0],
        PathClass::ShortShort | PathClass::LongLong => {
            let vc = fc.visibility * fc.phase_rad.cos();
            [0.25 * (1.0 + vc), 0.25 * (1.0 - vc), 0.25 * (1.0 - vc)]
        }
        PathClass::ShortLong | PathClass::LongShort => [0.25, 0.25, 0.25],
    }
}

fn path_table(fc: &FransonConfig) -> [(PathClass, f64, i64, i64); 4] {
    let s = fc.split;
    let d = fc.delay_ps();
    [
        (PathClass::ShortShort, s * s, 0, 0),
        (PathClass::LongLong, (1.0 - s) * (1.0 - s), d, d),
        (PathClass::ShortLong, s * (1.0 - s), 0, d),
        (PathClass::LongShort, (1.0 - s) * s, d, 0),
    ]
}

/// Routes each pair through the folded interferometer: each photon takes
/// the short or long arm, then leaves through the detector-side port.
/// Pairs that took equal arms interfere at the level of the joint exit
/// probability; the marginal of each photon stays ½.
pub fn franson_transform(pairs: &[PhotonPair], fc: &FransonConfig, seed: u64) -> Vec<PhotonPair> {
    let mut rng = slab_rng(seed, u64::MAX - 2);
    let table = path_table(fc);
    pairs
        .iter()
        .map(|p| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = table[3];
            for row in table {
                acc += row.1;
                if u < acc {
                    pick = row;
                    break;
                }
            }
            let (path, _, d1, d2) = pick;
            let (exit1, exit2) = match (p.signal_ps, p.idler_ps) {
                (Some(_), Some(_)) => {
                    let [both, only1, only2] = exit_table(path, fc);
                    let v: f64 = rng.gen();
                    if v < both {
                        (true, true)
                    } else if v < both + only1 {
                        (true, false)
                    } else if v < both + only1 + only2 {
                        (false, true)
                    } else {
                        (false, false)
                    }
                }
                _ => (rng.gen::<bool>(), rng.gen::<bool>()),
            };
            PhotonPair {
                signal_ps: p.signal_ps.filter(|_| exit1).map(|t| t + d1),
                idler_ps: p.idler_ps.filter(|_| exit2).map(|t| t + d2),
                path,
            }
        })
        .collect()
}

/// Sorted photon arrival times per arm.
pub fn arm_streams(pairs: &[PhotonPair]) -> (Vec<i64>, Vec<i64>) {
    let mut a: Vec<i64> = pairs.iter().filter_map(|p| p.signal_ps).collect();
    let mut b: Vec<i64> = pairs.iter().filter_map(|p| p.idler_ps).collect();
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

/// Detection outcome of one generated pair, for the thinned sampler.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Outcome {
    prob: f64,
    shift1: i64,
    shift2: i64,
    /// Whether the idler is also detected (the signal always is).
    both: bool,
}

/// Outcome probabilities of a generated pair: the list of outcomes in which
/// the signal reaches detector 1, and the total probability that only the
/// idler reaches detector 2. Detector efficiencies are included.
pub(crate) fn outcome_table(cfg: &SimConfig) -> (Vec<Outcome>, f64) {
    let (p1, p2) = cfg.detection_probability();
    let classes: Vec<(f64, i64, i64, [f64; 3])> = match &cfg.franson {
        None => vec![(1.0, 0, 0, [1.0, 0.0, 0.0])],
        Some(fc) => path_table(fc)
            .iter()
            .map(|&(path, w, d1, d2)| (w, d1, d2, exit_table(path, fc)))
            .collect(),
    };
    let mut with_signal = Vec::new();
    let mut only2 = 0.0;
    for (w, d1, d2, [eb, e1, e2]) in classes {
        with_signal.push(Outcome {
            prob: w * eb * p1 * p2,
            shift1: d1,
            shift2: d2,
            both: true,
        });
        with_signal.push(Outcome {
            prob: w * (eb * p1 * (1.0 - p2) + e1 * p1),
            shift1: d1,
            shift2: d2,
            both: false,
        });
        only2 += w * (eb * (1.0 - p1) * p2 + e2 * p2);
    }
    (with_signal, only2)
}

/// Per-pair probabilities that detector 1 sees the signal, that detector 2
/// sees the idler, and that both do (detector readiness aside).
pub fn marginal_probabilities(cfg: &SimConfig) -> (f64, f64, f64) {
    let (p1, p2) = cfg.detection_probability();
    match &cfg.franson {
        None => (p1, p2, p1 * p2),
        Some(fc) => path_table(fc).iter().fold((0.0, 0.0, 0.0), |acc, &(path, w, _, _)| {
            let [eb, e1, e2] = exit_table(path, fc);
            (
                acc.0 + w * (eb + e1) * p1,
                acc.1 + w * (eb + e2) * p2,
                acc.2 + w * eb * p1 * p2,
            )
        }),
    }
}

/// Detected-photon arrivals for one slab, sampling only pairs that leave a
/// photon at a detector. Idler-only events are returned as a rate when the
/// second detector is gated (they are drawn inside the gates later).
pub(crate) fn fast_photons(
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
    start: i64,
    end: i64,
) -> (Vec<i64>, Vec<i64>, f64) {
    let (table, q2) = outcome_table(cfg);
    let q1: f64 = table.iter().map(|o| o.prob).sum();
    let dur = (end - start) as f64 / PS_PER_S as f64;
    let scale = cfg.delay_scale_ps();
    let n = poisson(rng, cfg.pair_rate_hz * q1 * dur);
    let mut cum = Vec::with_capacity(table.len());
    let mut acc = 0.0;
    for o in &table {
        acc += o.prob / q1;
        cum.push(acc);
    }
    let mut photons1 = Vec::with_capacity(n as usize);
    let mut photons2 = Vec::new();
    for _ in 0..n {
        let t = rng.gen_range(start..end);
        let u: f64 = rng.gen();
        let k = cum.partition_point(|&c| c <= u).min(table.len() - 1);
        let o = table[k];
        photons1.push(t + o.shift1);
        if o.both {
            photons2.push(t + laplace_ps(rng, scale) + o.shift2);
        }
    }
    let only2_rate = cfg.pair_rate_hz * q2;
    if cfg.detectors[1].mode == DetectorMode::Gated {
        (photons1, photons2, only2_rate)
    } else {
        let m = poisson(rng, only2_rate * dur);
        photons2.extend((0..m).map(|_| rng.gen_range(start..end)));
        (photons1, photons2, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::{DetectorSpec, OpticalChain};

    fn cfg(rate: f64, dur: f64) -> SimConfig {
        SimConfig {
            pair_rate_hz: rate,
            duration_s: dur,
            ..SimConfig::default()
        }
    }

    #[test]
    fn delay_statistics() {
        let c = cfg(1e6, 1.0);
        let pairs = generate_pairs(&c);
        let n = pairs.len() as f64;
        assert!((n - 1e6).abs() < 5.0 * 1e3);
        let mean_abs: f64 = pairs
            .iter()
            .map(|p| (p.idler_ps.unwrap() - p.signal_ps.unwrap()).abs() as f64)
            .sum::<f64>()
            / n;
        // 1/(2π·117 MHz) = 1360.3 ps
        assert!((mean_abs / 1360.3 - 1.0).abs() < 0.01, "{mean_abs}");
        assert_eq!(pairs, generate_pairs(&c));
        assert!(generate_pairs(&cfg(1e6, 0.0)).is_empty());
    }

    #[test]
    fn delay_distribution_ks() {
        let c = cfg(1e5, 1.0);
        let mut d: Vec<f64> = generate_pairs(&c)
            .iter()
            .map(|p| (p.idler_ps.unwrap() - p.signal_ps.unwrap()) as f64)
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let s = c.delay_scale_ps();
        let cdf = |x: f64| if x < 0.0 { 0.5 * (x / s).exp() } else { 1.0 - 0.5 * (-x / s).exp() };
        let n = d.len() as f64;
        let ks = d
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        // p > 0.01 ⇔ D·√n < 1.628 (asymptotic Kolmogorov), with rounding slack
        assert!(ks * n.sqrt() < 1.63, "{}", ks * n.sqrt());
    }

    #[test]
    fn chain_survival_statistics() {
        let c = cfg(1e6, 1.0);
        let pairs = generate_pairs(&c);
        let out = apply_chain(&pairs, &c.chain, 0.3, 5);
        let n = pairs.len() as f64;
        let k = out.iter().filter(|p| p.idler_ps.is_some()).count() as f64;
        let p = 0.3 * 10f64.powf(-1.18);
        assert!((p - 0.0198).abs() < 1e-4);
        assert!((k - n * p).abs() < 3.0 * (n * p * (1.0 - p)).sqrt(), "{k} vs {}", n * p);
        let all = apply_chain(&pairs, &OpticalChain::lossless(), 1.0, 5);
        assert_eq!(all, pairs);
    }

    #[test]
    fn franson_peaks_and_balance() {
        let c = cfg(4e5, 1.0);
        let pairs = generate_pairs(&c);
        let fc = FransonConfig {
            visibility: 0.0,
            ..FransonConfig::reference(0.0)
        };
        let out = franson_transform(&pairs, &fc, 3);
        let both: Vec<&PhotonPair> = out
            .iter()
            .filter(|p| p.signal_ps.is_some() && p.idler_ps.is_some())
            .collect();
        let mut counts = [0f64; 3];
        for p in &both {
            match p.path {
                PathClass::ShortLong => counts[2] += 1.0,
                PathClass::LongShort => counts[0] += 1.0,
                _ => counts[1] += 1.0,
            }
        }
        // 2 : 1 : 1
        let total: f64 = counts.iter().sum();
        for (k, expect) in [0.25, 0.5, 0.25].iter().enumerate() {
            let sigma = (total * expect * (1.0 - expect)).sqrt();
            assert!((counts[k] - total * expect).abs() < 3.0 * sigma, "{counts:?}");
        }
        let mean_delay = |cls: PathClass| {
            let v: Vec<f64> = both
                .iter()
                .filter(|p| p.path == cls)
                .map(|p| (p.idler_ps.unwrap() - p.signal_ps.unwrap()) as f64)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!((mean_delay(PathClass::ShortLong) - 10_000.0).abs() < 100.0);
        assert!((mean_delay(PathClass::LongShort) + 10_000.0).abs() < 100.0);
        assert!(mean_delay(PathClass::ShortShort).abs() < 100.0);
    }

    #[test]
    fn franson_interference_extremes() {
        let c = cfg(4e5, 1.0);
        let pairs = generate_pairs(&c);
        let central = |phase: f64| {
            let fc = FransonConfig {
                visibility: 1.0,
                ..FransonConfig::reference(phase)
            };
            let out = franson_transform(&pairs, &fc, 11);
            let count = |f: fn(PathClass) -> bool| {
                out.iter()
                    .filter(|p| p.signal_ps.is_some() && p.idler_ps.is_some() && f(p.path))
                    .count() as f64
            };
            (count(|p| p.is_central()), count(|p| !p.is_central()))
        };
        let (max_c, side_a) = central(0.0);
        let (min_c, side_b) = central(std::f64::consts::PI);
        assert_eq!(min_c, 0.0);
        assert!(max_c > 0.2 * pairs.len() as f64);
        assert!((side_a - side_b).abs() < 4.0 * side_a.sqrt());
    }

    #[test]
    fn outcome_table_probabilities() {
        let c = SimConfig {
            detectors: [DetectorSpec::ideal(), DetectorSpec::ideal()],
            franson: Some(FransonConfig::reference(0.3)),
            ..SimConfig::default()
        };
        let (table, q2) = outcome_table(&c);
        let (p1, p2) = c.detection_probability();
        let q1: f64 = table.iter().map(|o| o.prob).sum();
        // marginals: each photon leaves the port with probability ½
        assert!((q1 - 0.5 * p1).abs() < 1e-15);
        let both: f64 = table.iter().filter(|o| o.both).map(|o| o.prob).sum();
        assert!((q2 + both - 0.5 * p2).abs() < 1e-15);
    }
}
