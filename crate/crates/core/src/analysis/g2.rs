//! Poisson maximum-likelihood fit of the cross-correlation peak
//! A·e^(−2πΔν|t−t₀|) + B.

use std::f64::consts::PI;

use argmin::core::{CostFunction, Executor, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{median, Histogram};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Fit {
    pub delta_nu_mhz: f64,
    pub delta_nu_err_mhz: f64,
    /// Peak height in counts per bin.
    pub amplitude: f64,
    pub amplitude_err: f64,
    pub center_ns: f64,
    pub center_err_ns: f64,
    /// Accidental level in counts per bin.
    pub baseline: f64,
    pub baseline_err: f64,
    /// Pearson χ² per degree of freedom.
    pub reduced_chi2: f64,
    pub converged: bool,
    pub iterations: u64,
    pub bin_width_ps: f64,
}

impl G2Fit {
    /// Baseline as an accidental density, given the acquisition time.
    pub fn baseline_hz_per_ns(&self, duration_s: f64) -> f64 {
        self.baseline / (self.bin_width_ps * 1e-3 * duration_s)
    }

    pub fn baseline_err_hz_per_ns(&self, duration_s: f64) -> f64 {
        self.baseline_err / (self.bin_width_ps * 1e-3 * duration_s)
    }

    /// Expected counts per bin centred at `t_ns`.
    pub fn model(&self, t_ns: f64) -> f64 {
        let w = self.bin_width_ps * 1e-3;
        let k = 2.0 * PI * self.delta_nu_mhz * 1e-3;
        bin_average(self.amplitude, k, self.center_ns, t_ns - 0.5 * w, t_ns + 0.5 * w) + self.baseline
    }
}

/// (T_c, τ_coh) in ns: the FWHM 1.39/(2πΔν) of the correlation peak and
/// the coherence time 1/(πΔν).
pub fn coherence_times(delta_nu_mhz: f64) -> Result<(f64, f64)> {
    if !(delta_nu_mhz > 0.0) || !delta_nu_mhz.is_finite() {
        return Err(Error::InvalidInput(format!(
            "linewidth must be positive, got {delta_nu_mhz} MHz"
        )));
    }
    let nu = delta_nu_mhz * 1e6;
    Ok((1.39 / (2.0 * PI * nu) * 1e9, 1.0 / (PI * nu) * 1e9))
}

/// Mean of A·e^(−k|t−t₀|) over [a, b).
fn bin_average(amp: f64, k: f64, t0: f64, a: f64, b: f64) -> f64 {
    let w = b - a;
    let integral = if t0 <= a {
        ((-k * (a - t0)).exp() - (-k * (b - t0)).exp()) / k
    } else if t0 >= b {
        ((-k * (t0 - b)).exp() - (-k * (t0 - a)).exp()) / k
    } else {
        (2.0 - (-k * (t0 - a)).exp() - (-k * (b - t0)).exp()) / k
    };
    amp * integral / w
}

struct Problem<'a> {
    edges: Vec<(f64, f64)>,
    counts: &'a [u64],
}

impl Problem<'_> {
    /// θ = (ln A, ln k, t₀, ln B).
    fn means(&self, th: &[f64]) -> impl Iterator<Item = f64> + '_ {
        let (amp, k, t0, base) = (th[0].exp(), th[1].exp(), th[2], th[3].exp());
        self.edges.iter().map(move |&(a, b)| bin_average(amp, k, t0, a, b) + base)
    }

    fn nll(&self, th: &[f64]) -> f64 {
        let v: f64 = self
            .means(th)
            .zip(self.counts)
            .map(|(mu, &n)| {
                if n == 0 {
                    mu
                } else {
                    mu - n as f64 * mu.ln()
                }
            })
            .sum();
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }
}

impl CostFunction for Problem<'_> {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.nll(p))
    }
}

fn simplex(center: &[f64], steps: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![center.to_vec()];
    for (i, s) in steps.iter().enumerate() {
        let mut p = center.to_vec();
        p[i] += s;
        out.push(p);
    }
    out
}

/// Central-difference Hessian.
fn hessian(f: impl Fn(&[f64]) -> f64, x: &[f64], h: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut m = DMatrix::zeros(n, n);
    let at = |di: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, d) in di {
            y[i] += d;
        }
        f(&y)
    };
    let f0 = f(x);
    for i in 0..n {
        m[(i, i)] = (at(&[(i, h[i])]) - 2.0 * f0 + at(&[(i, -h[i])])) / (h[i] * h[i]);
        for j in 0..i {
            let v = (at(&[(i, h[i]), (j, h[j])]) - at(&[(i, h[i]), (j, -h[j])])
                - at(&[(i, -h[i]), (j, h[j])])
                + at(&[(i, -h[i]), (j, -h[j])]))
                / (4.0 * h[i] * h[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

const MAX_ITERS: u64 = 4000;
const MAX_RESTARTS: usize = 8;

/// Fits the peak by Poisson maximum likelihood, restarting Nelder–Mead
/// from its best point until the likelihood stops improving. Errors come
/// from the inverse observed information.
pub fn fit_g2(h: &Histogram) -> Result<G2Fit> {
    if h.counts.len() < 20 {
        return Err(Error::InvalidInput(format!(
            "g² fit needs at least 20 bins, got {}",
            h.counts.len()
        )));
    }
    let w = h.bin_width_ns();
    let s = h.smoothed();
    let (imax, &smax) = s
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty");
    let t_peak = h.center_ns(imax);

    // baseline from the outer 40 % of the range
    let span = h.end_ns() - h.origin_ns;
    let mut tails: Vec<f64> = (0..h.len())
        .filter(|&i| (h.center_ns(i) - t_peak).abs() > 0.3 * span)
        .map(|i| h.counts[i] as f64)
        .collect();
    let b0 = median(&mut tails);
    let excess = smax - b0;
    let significant = excess * 3.0 >= 5.0 * (3.0 * b0 + 1.0).sqrt();
    if !(smax > 3.0 * b0) || !significant {
        return Err(Error::Fit(format!(
            "no detectable peak: smoothed maximum {smax:.2} at {t_peak:.2} ns against baseline {b0:.2} counts/bin"
        )));
    }

    // width from the half-maximum crossing of the smoothed peak
    let half = b0 + 0.5 * excess;
    let mut r = imax;
    while r + 1 < s.len() && s[r] > half {
        r += 1;
    }
    let mut l = imax;
    while l > 0 && s[l] > half {
        l -= 1;
    }
    let hwhm = (0.5 * (r - l) as f64 * w).max(0.5 * w);
    let k0 = std::f64::consts::LN_2 / hwhm;
    let amp0 = excess.max(1.0) * 1.2;
    let base0 = b0.max(0.05 * excess.max(1.0) / h.len() as f64);

    let edges: Vec<(f64, f64)> = (0..h.len())
        .map(|i| {
            let a = h.origin_ns + i as f64 * w;
            (a, a + w)
        })
        .collect();
    let problem = Problem {
        edges,
        counts: &h.counts,
    };
    let mut best = vec![amp0.ln(), k0.ln(), t_peak, base0.ln()];
    let mut best_cost = problem.nll(&best);
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..MAX_RESTARTS {
        let solver = NelderMead::new(simplex(&best, &[0.3, 0.3, 0.5 * w, 0.5]))
            .with_sd_tolerance(1e-12 * best_cost.abs().max(1.0))
            .map_err(|e| Error::Fit(e.to_string()))?;
        let res = Executor::new(
            Problem {
                edges: problem.edges.clone(),
                counts: &h.counts,
            },
            solver,
        )
        .configure(|st| st.max_iters(MAX_ITERS))
        .timer(false)
        .run()
        .map_err(|e| Error::Fit(e.to_string()))?;
        iterations += res.state.iter;
        let hit_limit = matches!(
            res.state.termination_status,
            TerminationStatus::Terminated(TerminationReason::MaxItersReached)
        );
        let p = res.state.best_param.clone().unwrap_or_else(|| best.clone());
        let c = res.state.best_cost;
        let improvement = best_cost - c;
        if c < best_cost {
            best = p;
            best_cost = c;
        }
        if !hit_limit && improvement.abs() < 1e-9 * best_cost.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Fit(format!(
            "g² fit did not converge after {iterations} iterations"
        )));
    }

    let info = hessian(|th| problem.nll(th), &best, &[1e-4, 1e-4, 1e-4 * w, 1e-4]);
    let cov = info
        .clone()
        .try_inverse()
        .filter(|c| (0..4).all(|i| c[(i, i)] >= 0.0))
        .ok_or_else(|| Error::Fit("observed information matrix is singular".into()))?;
    let (amp, k, t0, base) = (best[0].exp(), best[1].exp(), best[2], best[3].exp());
    let sd = |i: usize| cov[(i, i)].sqrt();

    let mu: DVector<f64> = DVector::from_iterator(h.len(), problem.means(&best));
    let chi2: f64 = mu
        .iter()
        .zip(&h.counts)
        .map(|(m, &n)| (n as f64 - m).powi(2) / m)
        .sum();
    let delta_nu_mhz = k / (2.0 * PI) * 1e3;
    Ok(G2Fit {
        delta_nu_mhz,
        delta_nu_err_mhz: delta_nu_mhz * sd(1),
        amplitude: amp,
        amplitude_err: amp * sd(0),
        center_ns: t0,
        center_err_ns: sd(2),
        baseline: base,
        baseline_err: base * sd(3),
        reduced_chi2: chi2 / (h.len() as f64 - 4.0),
        converged,
        iterations,
        bin_width_ps: h.bin_width_ps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::histogram;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Exp1;

    fn synthetic(n_peak: usize, n_flat: usize, dnu_mhz: f64, seed: u64) -> Histogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1e3 / (2.0 * PI * dnu_mhz);
        let mut d: Vec<f64> = (0..n_peak)
            .map(|_| {
                let e: f64 = rng.sample(Exp1);
                if rng.gen::<bool>() {
                    e * scale
                } else {
                    -e * scale
                }
            })
            .collect();
        let edge = 76.0 * 0.263;
        d.extend((0..n_flat).map(|_| rng.gen_range(-edge..edge)));
        histogram(&d, 263.0, (-edge, edge)).unwrap()
    }

    #[test]
    fn coherence_time_values() {
        let (tc, tau) = coherence_times(117.0).unwrap();
        assert!((tc - 1.891).abs() < 5e-4, "{tc}");
        assert!((tau - 2.721).abs() < 5e-4, "{tau}");
        assert!((tau / tc - 2.0 / 1.39).abs() < 1e-12);
        let (tc2, tau2) = coherence_times(234.0).unwrap();
        assert!((tc2 - tc / 2.0).abs() < 1e-12 && (tau2 - tau / 2.0).abs() < 1e-12);
        assert!(coherence_times(0.0).is_err());
    }

    #[test]
    fn recovers_linewidth() {
        let h = synthetic(100_000, 20_000, 117.0, 3);
        let f = fit_g2(&h).unwrap();
        assert!((f.delta_nu_mhz / 117.0 - 1.0).abs() < 0.05, "{f:?}");
        assert!((f.delta_nu_mhz - 117.0).abs() < 4.0 * f.delta_nu_err_mhz);
        assert!(f.center_ns.abs() < 0.05);
        // 20000 flat events over 152 bins
        assert!((f.baseline / (20_000.0 / 152.0) - 1.0).abs() < 0.05);
        assert!(f.reduced_chi2 < 1.5, "{}", f.reduced_chi2);
    }

    #[test]
    fn small_sample_fit() {
        let h = synthetic(480, 270, 117.0, 9);
        let f = fit_g2(&h).unwrap();
        assert!(f.delta_nu_err_mhz > 3.0 && f.delta_nu_err_mhz < 30.0, "{f:?}");
    }

    #[test]
    fn baseline_only_is_rejected() {
        let h = synthetic(0, 5000, 117.0, 1);
        let e = fit_g2(&h).unwrap_err();
        assert!(e.to_string().contains("no detectable peak"), "{e}");
        let short = histogram(&[0.0], 263.0, (-1.0, 1.0)).unwrap();
        assert!(fit_g2(&short).is_err());
    }
}
