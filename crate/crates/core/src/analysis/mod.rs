//! Delay histograms, peak finding and coincidence windows. Fits live in
//! the submodules.

mod fringe;
mod g2;

pub use fringe::{
    bell_check, fit_visibility, fringe_scan, subtract_accidentals, BellVerdict, CorrectedVisibility,
    FringeFit, FringeScan, BELL_BOUND,
};
pub use g2::{coherence_times, fit_g2, G2Fit};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bin width of the time-to-digital converter histogram.
pub const DEFAULT_BIN_PS: f64 = 263.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width_ps: f64,
    /// Left edge of bin 0.
    pub origin_ns: f64,
    pub counts: Vec<u64>,
    pub total: u64,
    /// Delays that fell outside the range.
    pub dropped: u64,
}

impl Histogram {
    pub fn bin_width_ns(&self) -> f64 {
        self.bin_width_ps * 1e-3
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn center_ns(&self, i: usize) -> f64 {
        self.origin_ns + (i as f64 + 0.5) * self.bin_width_ns()
    }

    pub fn end_ns(&self) -> f64 {
        self.origin_ns + self.counts.len() as f64 * self.bin_width_ns()
    }

    /// Merges groups of `factor` bins; a trailing partial group becomes one
    /// (narrower in content, same nominal width) bin so totals are kept.
    pub fn rebin(&self, factor: usize) -> Result<Histogram> {
        if factor == 0 {
            return Err(Error::InvalidInput("rebin factor must be ≥ 1".into()));
        }
        Ok(Histogram {
            bin_width_ps: self.bin_width_ps * factor as f64,
            origin_ns: self.origin_ns,
            counts: self.counts.chunks(factor).map(|c| c.iter().sum()).collect(),
            total: self.total,
            dropped: self.dropped,
        })
    }

    /// Three-bin moving average, edges averaged over the bins available.
    pub fn smoothed(&self) -> Vec<f64> {
        let n = self.counts.len();
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(n - 1);
                self.counts[lo..=hi].iter().sum::<u64>() as f64 / (hi - lo + 1) as f64
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("delay_ns,counts\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{:.4},{c}\n", self.center_ns(i)));
        }
        out
    }
}

/// Bins `delays_ns` into half-open bins [origin + k·w, origin + (k+1)·w)
/// covering `range_ns`.
pub fn histogram(delays_ns: &[f64], bin_width_ps: f64, range_ns: (f64, f64)) -> Result<Histogram> {
    if !(bin_width_ps > 0.0) || !bin_width_ps.is_finite() {
        return Err(Error::InvalidInput(format!(
            "histogram bin width must be positive, got {bin_width_ps} ps"
        )));
    }
    let (lo, hi) = range_ns;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!(
            "histogram range [{lo}, {hi}] ns is empty"
        )));
    }
    let w = bin_width_ps * 1e-3;
    // guard against (hi − lo)/w landing a hair above an integer
    let n = ((hi - lo) / w * (1.0 - 1e-12)).ceil() as usize;
    let mut counts = vec![0u64; n];
    let mut dropped = 0;
    for &d in delays_ns {
        let k = ((d - lo) / w).floor();
        if d.is_finite() && k >= 0.0 && (k as usize) < n {
            counts[k as usize] += 1;
        } else {
            dropped += 1;
        }
    }
    let total = counts.iter().sum();
    Ok(Histogram {
        bin_width_ps,
        origin_ns: lo,
        counts,
        total,
        dropped,
    })
}

/// Histogram of integer ps delays, with bins centred on zero delay and
/// covering ±`half_span_ns`.
pub fn delay_histogram(delays_ps: &[i64], bin_width_ps: f64, half_span_ns: f64) -> Result<Histogram> {
    if !(half_span_ns > 0.0) {
        return Err(Error::InvalidInput("histogram span must be positive".into()));
    }
    let w = bin_width_ps * 1e-3;
    let half_bins = (half_span_ns / w - 0.5).ceil().max(0.0);
    let lo = -(half_bins + 0.5) * w;
    let ns: Vec<f64> = delays_ps.iter().map(|&d| d as f64 * 1e-3).collect();
    histogram(&ns, bin_width_ps, (lo, -lo))
}

/// Counts in [center − w/2, center + w/2], with partially covered bins
/// prorated by overlap.
pub fn window_count(h: &Histogram, center_ns: f64, width_ns: f64) -> Result<f64> {
    if !(width_ns >= 0.0) {
        return Err(Error::InvalidInput(format!("window width must be ≥ 0, got {width_ns}")));
    }
    let (a, b) = (center_ns - 0.5 * width_ns, center_ns + 0.5 * width_ns);
    let w = h.bin_width_ns();
    Ok(h
        .counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let lo = h.origin_ns + i as f64 * w;
            let overlap = (b.min(lo + w) - a.max(lo)).max(0.0);
            c as f64 * overlap / w
        })
        .sum())
}

/// Window centred on zero delay.
pub fn central_window(h: &Histogram, width_ns: f64) -> Result<f64> {
    window_count(h, 0.0, width_ns)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub center_ns: f64,
    /// Background-subtracted counts within ±`PEAK_HALF_BINS`.
    pub area: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSearch {
    /// Sorted by delay.
    pub peaks: Vec<Peak>,
    pub baseline_per_bin: f64,
    pub shortfall: Option<String>,
}

const PEAK_HALF_BINS: usize = 5;

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// The `count` highest significant local maxima of the 3-bin smoothed
/// histogram, each refined to the background-subtracted centroid of the
/// surrounding bins.
pub fn find_peaks(h: &Histogram, count: usize) -> Result<PeakSearch> {
    if count == 0 {
        return Err(Error::InvalidInput("peak count must be ≥ 1".into()));
    }
    if h.counts.len() < 3 {
        return Err(Error::InvalidInput("histogram too short for peak search".into()));
    }
    let s = h.smoothed();
    let base = median(&mut s.clone());
    // noise of a 3-bin mean of Poisson counts
    let sigma = (base.max(1.0) / 3.0).sqrt();
    let threshold = base + 5.0 * sigma;
    let n = s.len();
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = if i > 0 { s[i - 1] } else { f64::NEG_INFINITY };
            let right = if i + 1 < n { s[i + 1] } else { f64::NEG_INFINITY };
            s[i] >= left && s[i] > right && s[i] > threshold
        })
        .collect();
    candidates.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = Vec::new();
    for i in candidates {
        if chosen.len() == count {
            break;
        }
        if chosen.iter().all(|&j| i.abs_diff(j) > 2 * PEAK_HALF_BINS) {
            chosen.push(i);
        }
    }
    let mut peaks: Vec<Peak> = chosen
        .iter()
        .map(|&i| {
            let lo = i.saturating_sub(PEAK_HALF_BINS);
            let hi = (i + PEAK_HALF_BINS).min(n - 1);
            let area: f64 = (lo..=hi).map(|k| h.counts[k] as f64 - base).sum();
            Peak {
                center_ns: centroid(h, base, i),
                area,
                height: s[i] - base,
            }
        })
        .collect();
    peaks.sort_by(|a, b| a.center_ns.total_cmp(&b.center_ns));
    let shortfall = (peaks.len() < count).then(|| {
        format!("requested {count} peaks, found {} above 5σ of the background", peaks.len())
    });
    Ok(PeakSearch {
        peaks,
        baseline_per_bin: base,
        shortfall,
    })
}

/// Excess-weighted centroid over ±`PEAK_HALF_BINS` bins. The window starts
/// on the maximum bin and follows the centroid, so a noisy maximum does not
/// drag the estimate toward its side.
fn centroid(h: &Histogram, base: f64, start: usize) -> f64 {
    let n = h.len();
    let w = h.bin_width_ns();
    let mut c = h.center_ns(start);
    for _ in 0..50 {
        let mid = ((c - h.origin_ns) / w).floor().clamp(0.0, (n - 1) as f64) as usize;
        let lo = mid.saturating_sub(PEAK_HALF_BINS);
        let hi = (mid + PEAK_HALF_BINS).min(n - 1);
        let (mut wsum, mut tsum) = (0.0, 0.0);
        for k in lo..=hi {
            let excess = (h.counts[k] as f64 - base).max(0.0);
            wsum += excess;
            tsum += excess * h.center_ns(k);
        }
        if wsum <= 0.0 {
            break;
        }
        let next = tsum / wsum;
        if (next - c).abs() < 1e-3 * w {
            return next;
        }
        c = next;
    }
    c
}

/// Mean counts per bin outside ±`exclusion_ns` of every listed peak, with
/// its standard error.
pub fn sideband_baseline(h: &Histogram, peaks_ns: &[f64], exclusion_ns: f64) -> Result<(f64, f64)> {
    let picked: Vec<f64> = (0..h.len())
        .filter(|&i| {
            let t = h.center_ns(i);
            peaks_ns.iter().all(|p| (t - p).abs() > exclusion_ns)
        })
        .map(|i| h.counts[i] as f64)
        .collect();
    if picked.is_empty() {
        return Err(Error::InvalidInput("no histogram bins outside the peaks".into()));
    }
    let m = picked.iter().sum::<f64>() / picked.len() as f64;
    Ok((m, (m / picked.len() as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_delay_at_bin_centre() {
        let h = delay_histogram(&[0], 263.0, 5.0).unwrap();
        let i = h.counts.iter().position(|&c| c == 1).unwrap();
        assert!(h.center_ns(i).abs() < 1e-12);
        assert_eq!(h.total, 1);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn half_open_bins_and_dropped() {
        let h = histogram(&[0.0, 1.0, 1.999, 2.0, -0.1, f64::NAN], 1000.0, (0.0, 2.0)).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
        assert_eq!(h.dropped, 3);
        assert_eq!(h.total, 3);
        assert!(histogram(&[], 0.0, (0.0, 1.0)).is_err());
    }

    #[test]
    fn windows() {
        let h = histogram(&[0.5, 1.5, 2.5, 3.5], 1000.0, (0.0, 4.0)).unwrap();
        assert_eq!(window_count(&h, 2.0, 100.0).unwrap(), 4.0);
        assert_eq!(window_count(&h, 2.0, 0.0).unwrap(), 0.0);
        assert!((window_count(&h, 2.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((window_count(&h, 0.75, 0.5).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn peaks_and_shortfall() {
        let mut delays = Vec::new();
        for (c, n) in [(-10.0, 400), (0.0, 800), (10.0, 400)] {
            for k in 0..n {
                delays.push(c + ((k % 9) as f64 - 4.0) * 0.1);
            }
        }
        for k in 0..600 {
            delays.push(-20.0 + k as f64 * 40.0 / 600.0);
        }
        let h = histogram(&delays, 263.0, (-20.0, 20.0)).unwrap();
        let p = find_peaks(&h, 3).unwrap();
        assert!(p.shortfall.is_none());
        let c: Vec<f64> = p.peaks.iter().map(|p| p.center_ns).collect();
        for (got, want) in c.iter().zip([-10.0, 0.0, 10.0]) {
            assert!((got - want).abs() < 0.263, "{c:?}");
        }
        assert!((c[0] + c[2]).abs() < 0.263);
        let single: Vec<f64> = (0..500).map(|k| ((k % 9) as f64 - 4.0) * 0.1).collect();
        let h1 = histogram(&single, 263.0, (-20.0, 20.0)).unwrap();
        let p1 = find_peaks(&h1, 3).unwrap();
        assert_eq!(p1.peaks.len(), 1);
        assert!(p1.shortfall.is_some());
    }

    proptest! {
        #[test]
        fn rebin_conserves(counts in proptest::collection::vec(0u64..50, 1..80), f in 1usize..7) {
            let total = counts.iter().sum();
            let h = Histogram { bin_width_ps: 263.0, origin_ns: -3.0, counts, total, dropped: 0 };
            let r = h.rebin(f).unwrap();
            prop_assert_eq!(r.counts.iter().sum::<u64>(), total);
        }

        #[test]
        fn adjacent_windows_add(a in -6.0f64..6.0, w1 in 0.0f64..4.0, w2 in 0.0f64..4.0) {
            let delays: Vec<f64> = (0..400).map(|k| -8.0 + k as f64 * 0.04).collect();
            let h = histogram(&delays, 263.0, (-8.0, 8.0)).unwrap();
            let left = window_count(&h, a + 0.5 * w1, w1).unwrap();
            let right = window_count(&h, a + w1 + 0.5 * w2, w2).unwrap();
            let both = window_count(&h, a + 0.5 * (w1 + w2), w1 + w2).unwrap();
            prop_assert!((left + right - both).abs() < 1e-9);
        }
    }
}
