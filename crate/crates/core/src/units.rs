//! Physical constants and unit conversions.

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const C: f64 = 299_792_458.0;

pub fn wavelength_nm_to_hz(lambda_nm: f64) -> f64 {
    C / (lambda_nm * 1e-9)
}

pub fn hz_to_wavelength_nm(nu_hz: f64) -> f64 {
    C / nu_hz * 1e9
}

/// Converts a wavelength width (pm) at centre wavelength `lambda_nm` into a
/// frequency width in MHz, using Δν = c·Δλ/λ².
pub fn bandwidth_pm_to_mhz(width_pm: f64, lambda_nm: f64) -> Result<f64> {
    check_wavelength(lambda_nm)?;
    let lambda = lambda_nm * 1e-9;
    Ok(C * width_pm * 1e-12 / (lambda * lambda) * 1e-6)
}

/// Inverse of [`bandwidth_pm_to_mhz`].
pub fn bandwidth_mhz_to_pm(width_mhz: f64, lambda_nm: f64) -> Result<f64> {
    check_wavelength(lambda_nm)?;
    let lambda = lambda_nm * 1e-9;
    Ok(width_mhz * 1e6 * lambda * lambda / C * 1e12)
}

fn check_wavelength(lambda_nm: f64) -> Result<()> {
    if lambda_nm > 0.0 && lambda_nm.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(
            "wavelength",
            lambda_nm,
            (0.0, f64::INFINITY),
            "nm",
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fsr_in_picometres_maps_to_gigahertz() {
        let mhz = bandwidth_pm_to_mhz(14.0, 1560.0).unwrap();
        assert!((mhz - 1724.6).abs() < 0.5, "{mhz}");
    }

    #[test]
    fn linewidth_conversion() {
        let mhz = bandwidth_pm_to_mhz(0.91, 1560.0).unwrap();
        assert!((mhz - 112.1).abs() < 0.2, "{mhz}");
        assert_eq!(bandwidth_pm_to_mhz(0.0, 1234.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_non_positive_wavelength() {
        assert!(bandwidth_pm_to_mhz(1.0, 0.0).is_err());
        assert!(bandwidth_mhz_to_pm(1.0, -3.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn conversion_round_trips(width in 0.0f64..1e4, lambda in 300.0f64..5000.0) {
            let back = bandwidth_mhz_to_pm(bandwidth_pm_to_mhz(width, lambda).unwrap(), lambda).unwrap();
            proptest::prop_assert!((back - width).abs() <= 1e-12 * width.max(1e-300));
        }
    }
}
