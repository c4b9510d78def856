//! Multi-stop time-to-digital converter.

use super::{EventStream, PS_PER_NS};

/// Every (start, stop) pair with |stop − start| ≤ `span_ns`, reported as
/// stop − start in ps. Both streams must be time-sorted.
pub fn tdc_coincidences(start: &EventStream, stop: &EventStream, span_ns: f64) -> Vec<i64> {
    let span = (span_ns * PS_PER_NS).round() as i64;
    let stops = &stop.timestamps_ps;
    let mut out = Vec::new();
    let mut lo = 0;
    for &t in &start.timestamps_ps {
        while lo < stops.len() && stops[lo] < t - span {
            lo += 1;
        }
        let mut j = lo;
        while j < stops.len() && stops[j] <= t + span {
            out.push(stops[j] - t);
            j += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::EventTag;

    fn stream(ts: &[i64]) -> EventStream {
        EventStream {
            channel: 0,
            timestamps_ps: ts.to_vec(),
            tags: vec![EventTag::Photon; ts.len()],
        }
    }

    #[test]
    fn multi_stop_matches_brute_force() {
        let a = stream(&[0, 1000, 1500, 40_000]);
        let b = stream(&[-3000, 200, 1100, 2600, 39_000, 60_000]);
        let mut fast = tdc_coincidences(&a, &b, 2.5);
        let mut slow: Vec<i64> = a
            .timestamps_ps
            .iter()
            .flat_map(|&s| b.timestamps_ps.iter().map(move |&e| e - s))
            .filter(|d| d.abs() <= 2500)
            .collect();
        fast.sort_unstable();
        slow.sort_unstable();
        assert_eq!(fast, slow);
        assert!(tdc_coincidences(&stream(&[]), &b, 10.0).is_empty());
    }
}
