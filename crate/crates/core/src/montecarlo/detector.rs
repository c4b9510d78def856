//! Single-photon detector physics: efficiency, dark counts, non-paralysable
//! dead time, after-pulsing and gating.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};

use super::{poisson, slab_rng, DetectorMode, DetectorSpec, EventStream, EventTag, PS_PER_NS, PS_PER_S};
use crate::error::{Error, Result};

#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct DetectorCounts {
    pub darks: u64,
    pub afterpulses: u64,
    pub gates: u64,
}

/// Merged, sorted gate windows [start, end).
fn gate_windows(triggers: &[i64], spec: &DetectorSpec) -> Vec<(i64, i64)> {
    let (g0, g1) = spec.gate_ps();
    let mut out: Vec<(i64, i64)> = Vec::with_capacity(triggers.len());
    for &t in triggers {
        let (a, b) = (t + g0, t + g1);
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

fn window_of(windows: &[(i64, i64)], t: i64) -> Option<(i64, i64)> {
    let i = windows.partition_point(|w| w.1 <= t);
    windows.get(i).copied().filter(|w| w.0 <= t)
}

fn uniform_in(rng: &mut ChaCha8Rng, a: i64, b: i64) -> i64 {
    if b > a {
        rng.gen_range(a..b)
    } else {
        a
    }
}

/// Runs one detector over [start, end). `photons` are photons that will
/// click if the detector is ready (efficiency already applied). For a gated
/// detector, `gates` holds the trigger times and `extra_rate_hz` adds
/// uncorrelated photons drawn only inside open gates.
pub(crate) fn run(
    spec: &DetectorSpec,
    mut photons: Vec<i64>,
    gates: Option<&[i64]>,
    extra_rate_hz: f64,
    rng: &mut ChaCha8Rng,
    start: i64,
    end: i64,
) -> (EventStream, DetectorCounts) {
    let mut counts = DetectorCounts::default();
    photons.sort_unstable();
    let mut candidates: Vec<(i64, EventTag)>;
    let windows = match (spec.mode, gates) {
        (DetectorMode::Gated, Some(trig)) => {
            let windows = gate_windows(trig, spec);
            counts.gates = windows.len() as u64;
            candidates = Vec::new();
            let mut j = 0;
            for &(a, b) in &windows {
                while j < photons.len() && photons[j] < a {
                    j += 1;
                }
                while j < photons.len() && photons[j] < b {
                    candidates.push((photons[j], EventTag::Photon));
                    j += 1;
                }
                let width_ns = (b - a) as f64 / PS_PER_NS;
                if rng.gen::<f64>() < spec.dark_prob_per_ns * width_ns {
                    candidates.push((uniform_in(rng, a, b), EventTag::Dark));
                }
                let n = poisson(rng, extra_rate_hz * width_ns * 1e-9);
                for _ in 0..n {
                    candidates.push((uniform_in(rng, a, b), EventTag::Photon));
                }
            }
            Some(windows)
        }
        _ => {
            candidates = photons.iter().map(|&t| (t, EventTag::Photon)).collect();
            let dur_s = (end - start) as f64 / PS_PER_S as f64;
            let n = poisson(rng, spec.dark_rate_hz * dur_s);
            for _ in 0..n {
                candidates.push((uniform_in(rng, start, end), EventTag::Dark));
            }
            None
        }
    };
    candidates.sort_unstable();

    let dead = spec.dead_ps();
    let ap_scale = spec.afterpulse_decay_us * 1e6;
    let mut out = EventStream::new(0);
    let mut pending: BinaryHeap<Reverse<i64>> = BinaryHeap::new();
    let mut ready = i64::MIN;
    let mut last = i64::MIN;
    let mut i = 0;
    loop {
        let next_c = candidates.get(i).map(|c| c.0);
        let next_a = pending.peek().map(|r| r.0);
        let (t, tag) = match (next_c, next_a) {
            (None, None) => break,
            (Some(c), Some(a)) if a < c => {
                pending.pop();
                (a, EventTag::AfterPulse)
            }
            (Some(c), _) => {
                i += 1;
                (c, candidates[i - 1].1)
            }
            (None, Some(a)) => {
                pending.pop();
                (a, EventTag::AfterPulse)
            }
        };
        // both sources are consumed in time order
        if t >= end {
            break;
        }
        if t < start || t < ready || t <= last {
            continue;
        }
        let mut block_until = t + dead;
        if let Some(w) = &windows {
            match window_of(w, t) {
                Some((_, b)) => block_until = block_until.max(b),
                None => continue,
            }
        }
        out.push(t, tag);
        match tag {
            EventTag::Dark => counts.darks += 1,
            EventTag::AfterPulse => counts.afterpulses += 1,
            EventTag::Photon => {}
        }
        last = t;
        ready = block_until;
        if spec.afterpulse_prob > 0.0 && rng.gen::<f64>() < spec.afterpulse_prob {
            let e: f64 = rng.sample(Exp1);
            pending.push(Reverse(t + (e * ap_scale).round() as i64));
        }
    }
    if spec.jitter_ps > 0.0 {
        apply_jitter(&mut out, spec.jitter_ps, rng);
    }
    (out, counts)
}

fn apply_jitter(stream: &mut EventStream, sigma_ps: f64, rng: &mut ChaCha8Rng) {
    let normal = Normal::new(0.0, sigma_ps).expect("finite sigma");
    let mut ev: Vec<(i64, EventTag)> = stream
        .timestamps_ps
        .iter()
        .zip(&stream.tags)
        .map(|(&t, &g)| (t + normal.sample(rng).round() as i64, g))
        .collect();
    ev.sort_by_key(|e| e.0);
    for k in 1..ev.len() {
        if ev[k].0 <= ev[k - 1].0 {
            ev[k].0 = ev[k - 1].0 + 1;
        }
    }
    stream.timestamps_ps = ev.iter().map(|e| e.0).collect();
    stream.tags = ev.iter().map(|e| e.1).collect();
}

/// Detects time-sorted `photons` arriving at the detector during
/// [span.0, span.1) ps. Each photon clicks with the detector efficiency if
/// the detector is ready. A gated detector needs `trigger`.
pub fn detect(
    photons: &[i64],
    spec: &DetectorSpec,
    trigger: Option<&EventStream>,
    span_ps: (i64, i64),
    seed: u64,
) -> Result<EventStream> {
    spec.validate()?;
    if spec.mode == DetectorMode::Gated && trigger.is_none() {
        return Err(Error::Config("gated detector requires a trigger stream".into()));
    }
    let mut rng = slab_rng(seed, u64::MAX);
    let kept: Vec<i64> = photons
        .iter()
        .copied()
        .filter(|_| rng.gen::<f64>() < spec.efficiency)
        .collect();
    let gates = trigger.map(|t| &t.timestamps_ps[..]);
    Ok(run(spec, kept, gates, 0.0, &mut rng, span_ps.0, span_ps.1).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free(dark: f64, dead_us: f64) -> DetectorSpec {
        DetectorSpec {
            dark_rate_hz: dark,
            dead_time_us: dead_us,
            ..DetectorSpec::ideal()
        }
    }

    fn poisson_times(rate: f64, dur_s: f64, seed: u64) -> Vec<i64> {
        let mut rng = slab_rng(seed, 0);
        let n = poisson(&mut rng, rate * dur_s);
        let mut v: Vec<i64> = (0..n)
            .map(|_| rng.gen_range(0..(dur_s * PS_PER_S as f64) as i64))
            .collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn pure_dark_counts() {
        let spec = free(600.0, 0.0);
        let s = detect(&[], &spec, None, (0, 100 * PS_PER_S), 3).unwrap();
        let n = s.len() as f64;
        assert!((n - 60_000.0).abs() < 3.0 * 60_000f64.sqrt(), "{n}");
        assert_eq!(s.count(EventTag::Dark), s.len());
        assert!(s.is_strictly_increasing());
    }

    #[test]
    fn non_paralysable_dead_time() {
        let photons = poisson_times(3400.0, 50.0, 1);
        let with = detect(&photons, &free(0.0, 30.0), None, (0, 50 * PS_PER_S), 2).unwrap();
        let without = detect(&photons, &free(0.0, 0.0), None, (0, 50 * PS_PER_S), 2).unwrap();
        let reduction = 1.0 - with.len() as f64 / without.len() as f64;
        // R/(1 + Rτ) at 3400 cps and 30 µs
        let expected = 1.0 - 1.0 / (1.0 + 3400.0 * 30e-6);
        assert!((reduction - expected).abs() < 0.005, "{reduction} vs {expected}");
        let gaps_ok = with.timestamps_ps.windows(2).all(|w| w[1] - w[0] >= 30_000_000);
        assert!(gaps_ok);
    }

    #[test]
    fn dead_time_monotone() {
        let photons = poisson_times(20_000.0, 5.0, 9);
        let mut last = usize::MAX;
        for dead in [0.0, 1.0, 5.0, 20.0, 50.0] {
            let n = detect(&photons, &free(0.0, dead), None, (0, 5 * PS_PER_S), 4)
                .unwrap()
                .len();
            assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn afterpulses_follow_clicks() {
        let spec = DetectorSpec {
            afterpulse_prob: 0.2,
            afterpulse_decay_us: 5.0,
            dead_time_us: 1.0,
            ..DetectorSpec::ideal()
        };
        let photons = poisson_times(1000.0, 20.0, 5);
        let s = detect(&photons, &spec, None, (0, 20 * PS_PER_S), 6).unwrap();
        let ap = s.count(EventTag::AfterPulse) as f64;
        let clicks = s.len() as f64;
        // survival past the dead time e^{-1/5}, competing arrivals negligible
        let expected = 0.2 * (-0.2f64).exp() * clicks;
        assert!((ap - expected).abs() < 4.0 * expected.sqrt(), "{ap} vs {expected}");
    }

    #[test]
    fn gated_detector_needs_trigger_and_respects_windows() {
        let spec = DetectorSpec::gated_reference();
        assert!(matches!(detect(&[], &spec, None, (0, PS_PER_S), 1), Err(Error::Config(_))));
        let mut trig = EventStream::new(1);
        for k in 0..1000 {
            trig.push(k * 1_000_000_000 + 500_000, EventTag::Photon);
        }
        let spec = DetectorSpec {
            efficiency: 1.0,
            dark_prob_per_ns: 0.0,
            ..spec
        };
        // one photon inside each gate, one far outside
        let photons: Vec<i64> = trig
            .timestamps_ps
            .iter()
            .flat_map(|&t| [t + 3_000, t + 200_000])
            .collect();
        let s = detect(&photons, &spec, Some(&trig), (0, PS_PER_S), 1).unwrap();
        assert_eq!(s.len(), 1000);
        assert!(s
            .timestamps_ps
            .iter()
            .zip(&trig.timestamps_ps)
            .all(|(a, b)| a - b == 3_000));
    }

    #[test]
    fn gated_darks_per_gate() {
        let mut trig = EventStream::new(1);
        for k in 0..200_000 {
            trig.push(k * 1_000_000, EventTag::Photon);
        }
        let spec = DetectorSpec {
            dark_prob_per_ns: 1e-4,
            ..DetectorSpec::gated_reference()
        };
        let s = detect(&[], &spec, Some(&trig), (0, PS_PER_S), 8).unwrap();
        let expected = 200_000.0 * 1e-4 * 50.0;
        assert!((s.len() as f64 - expected).abs() < 4.0 * expected.sqrt());
    }

    #[test]
    fn jitter_keeps_order() {
        let photons = poisson_times(1e6, 0.01, 2);
        let spec = DetectorSpec {
            jitter_ps: 300.0,
            ..DetectorSpec::ideal()
        };
        let s = detect(&photons, &spec, None, (0, PS_PER_S / 100), 3).unwrap();
        assert!(s.is_strictly_increasing());
        assert!(s.len() as f64 > 0.99 * photons.len() as f64);
    }
}
