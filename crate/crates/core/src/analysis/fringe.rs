//! Two-photon fringe scans, visibility fits and the Bell-bound check.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Visibility above which a two-photon fringe cannot be explained by a
/// local hidden-variable model.
pub const BELL_BOUND: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeScan {
    pub phases_rad: Vec<f64>,
    pub counts: Vec<f64>,
    /// √N per point.
    pub errors: Vec<f64>,
    pub integration_s: f64,
}

impl FringeScan {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase_rad,counts,error\n");
        for i in 0..self.phases_rad.len() {
            out.push_str(&format!(
                "{:.6},{},{:.4}\n",
                self.phases_rad[i], self.counts[i], self.errors[i]
            ));
        }
        out
    }
}

/// Runs `runner(phase, integration_s)` for each phase; the runner returns
/// the central-window coincidence count.
pub fn fringe_scan<F>(runner: F, phases_rad: &[f64], integration_s: f64) -> Result<FringeScan>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    if phases_rad.is_empty() {
        return Err(Error::InvalidInput("fringe scan needs at least one phase".into()));
    }
    let counts = phases_rad
        .iter()
        .map(|&p| runner(p, integration_s))
        .collect::<Result<Vec<f64>>>()?;
    Ok(FringeScan {
        phases_rad: phases_rad.to_vec(),
        errors: counts.iter().map(|c| c.max(0.0).sqrt()).collect(),
        counts,
        integration_s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub visibility: f64,
    /// From the residual scatter of the points about the fit.
    pub visibility_err_fit: f64,
    /// From the √N error bars of the points.
    pub visibility_err_poisson: f64,
    pub phase_offset_rad: f64,
    pub mean: f64,
    pub mean_err: f64,
    /// The raw estimate exceeded 1 and was clipped to keep the fitted
    /// fringe non-negative.
    pub clipped: bool,
}

impl FringeFit {
    pub fn model(&self, phase: f64) -> f64 {
        self.mean * (1.0 + self.visibility * (phase + self.phase_offset_rad).cos())
    }
}

/// Linear least squares of a + b·cos φ + c·sin φ, read as
/// M·(1 + V·cos(φ + φ₀)).
pub fn fit_visibility(scan: &FringeScan) -> Result<FringeFit> {
    let (ph, y) = (&scan.phases_rad, &scan.counts);
    if ph.len() != y.len() {
        return Err(Error::InvalidInput("phase and count lists differ in length".into()));
    }
    let lo = ph.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ph.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if ph.len() < 5 || hi - lo < std::f64::consts::PI - 1e-12 {
        return Err(Error::Fit(format!(
            "fringe fit needs ≥ 5 points spanning ≥ π, got {} over {:.3} rad",
            ph.len(),
            hi - lo
        )));
    }
    let basis = |p: f64| Vector3::new(1.0, p.cos(), p.sin());
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    let mut atwa = Matrix3::zeros();
    for (&p, &v) in ph.iter().zip(y) {
        let x = basis(p);
        ata += x * x.transpose();
        aty += x * v;
        atwa += x * x.transpose() / v.max(1.0);
    }
    let inv = ata
        .try_inverse()
        .ok_or_else(|| Error::Fit("fringe phases are degenerate".into()))?;
    let beta = inv * aty;
    let rss: f64 = ph
        .iter()
        .zip(y)
        .map(|(&p, &v)| (v - basis(p).dot(&beta)).powi(2))
        .sum();
    let dof = (ph.len() - 3) as f64;
    let cov_fit = inv * (rss / dof);
    let cov_poisson = atwa
        .try_inverse()
        .ok_or_else(|| Error::Fit("fringe phases are degenerate".into()))?;

    let (a, b, c) = (beta[0], beta[1], beta[2]);
    if !(a > 0.0) {
        return Err(Error::Fit(format!("fringe mean {a:.3} is not positive")));
    }
    let amp = (b * b + c * c).sqrt();
    let v = amp / a;
    // ∂V/∂(a, b, c)
    let grad = if amp > 0.0 {
        Vector3::new(-v / a, b / (amp * a), c / (amp * a))
    } else {
        Vector3::new(0.0, 1.0 / a, 0.0)
    };
    let sd = |cov: &Matrix3<f64>| (grad.transpose() * cov * grad)[(0, 0)].max(0.0).sqrt();
    Ok(FringeFit {
        visibility: v.min(1.0),
        visibility_err_fit: sd(&cov_fit),
        visibility_err_poisson: sd(&cov_poisson),
        phase_offset_rad: (-c).atan2(b),
        mean: a,
        mean_err: cov_fit[(0, 0)].sqrt(),
        clipped: v > 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectedVisibility {
    pub visibility: f64,
    pub error: f64,
    /// Set when the corrected value exceeds 1.
    pub unphysical: bool,
}

/// V_net = V_raw·C/(C − A) for fringe mean C and accidental level A in the
/// same window.
pub fn subtract_accidentals(
    v_raw: f64,
    v_raw_err: f64,
    fringe_mean: f64,
    accidental: f64,
    accidental_err: f64,
) -> Result<CorrectedVisibility> {
    if !(accidental < fringe_mean) || accidental < 0.0 {
        return Err(Error::InvalidInput(format!(
            "accidental level {accidental:.3} must lie in [0, fringe mean {fringe_mean:.3})"
        )));
    }
    let g = fringe_mean / (fringe_mean - accidental);
    let v = v_raw * g;
    let dv_da = v_raw * fringe_mean / (fringe_mean - accidental).powi(2);
    let err = ((v_raw_err * g).powi(2) + (dv_da * accidental_err).powi(2)).sqrt();
    let unphysical = v > 1.0;
    if unphysical {
        log::warn!("accidental-corrected visibility {v:.3} exceeds 1");
    }
    Ok(CorrectedVisibility {
        visibility: v,
        error: err,
        unphysical,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BellVerdict {
    pub violates: bool,
    /// (V − 1/√2)/σ.
    pub significance_sigma: f64,
}

pub fn bell_check(visibility: f64, error: f64) -> BellVerdict {
    let excess = visibility - BELL_BOUND;
    BellVerdict {
        violates: excess > 0.0,
        significance_sigma: if error > 0.0 { excess / error } else { 0.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn scan(f: impl Fn(f64) -> f64, n: usize) -> FringeScan {
        let phases: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
        fringe_scan(|p, _| Ok(f(p)), &phases, 100.0).unwrap()
    }

    #[test]
    fn exact_sinusoid() {
        let s = scan(|p| 100.0 * (1.0 + 0.5 * (p + 0.3).cos()), 12);
        let f = fit_visibility(&s).unwrap();
        assert!((f.visibility - 0.5).abs() < 1e-9);
        assert!((f.phase_offset_rad - 0.3).abs() < 1e-9);
        assert!(f.visibility_err_fit < 1e-9);
        assert!((f.model(1.0) - 100.0 * (1.0 + 0.5 * 1.3f64.cos())).abs() < 1e-6);
    }

    #[test]
    fn flat_and_degenerate() {
        let f = fit_visibility(&scan(|_| 50.0, 8)).unwrap();
        assert!(f.visibility < 1e-12);
        let short = fringe_scan(|_, _| Ok(1.0), &[0.0, 0.1, 0.2, 0.3, 0.4], 1.0).unwrap();
        assert!(fit_visibility(&short).is_err());
        assert!(fringe_scan(|_, _| Ok(1.0), &[], 1.0).is_err());
    }

    #[test]
    fn background_lowers_visibility() {
        let mut last = 1.0;
        for bg in [0.0, 10.0, 40.0, 100.0] {
            let v = fit_visibility(&scan(|p| 100.0 * (1.0 + 0.9 * p.cos()) + bg, 10))
                .unwrap()
                .visibility;
            assert!(v < last || bg == 0.0);
            last = v;
        }
    }

    #[test]
    fn accidental_subtraction() {
        let c = subtract_accidentals(0.812, 0.055, 100.0, 0.0, 0.0).unwrap();
        assert_eq!(c.visibility, 0.812);
        // A/C = 0.14 restores 94.4 %
        let c = subtract_accidentals(0.812, 0.055, 100.0, 13.98, 0.0).unwrap();
        assert!((c.visibility - 0.944).abs() < 0.002);
        assert!((c.error - 0.064).abs() < 0.002);
        assert!(subtract_accidentals(0.8, 0.05, 10.0, 10.0, 0.0).is_err());
        assert!(subtract_accidentals(0.95, 0.05, 10.0, 3.0, 0.0).unwrap().unphysical);
    }

    #[test]
    fn bell_verdicts() {
        let v = bell_check(0.812, 0.055);
        assert!(v.violates);
        assert!((v.significance_sigma - 1.907).abs() < 0.01);
        let b = bell_check(BELL_BOUND, 0.055);
        assert!(!b.violates && b.significance_sigma.abs() < 0.01);
        assert!(!bell_check(0.5, 0.05).violates);
    }
}
