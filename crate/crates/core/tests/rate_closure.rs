use proptest::prelude::*;
use wgopo_core::budget::predict_rates;
use wgopo_core::montecarlo::{simulate, simulate_coincidences, DetectorMode, SimConfig};

fn within(sim: f64, pred: f64, duration: f64, k: f64) -> bool {
    let sigma = (pred * duration).sqrt().max(1.0) / duration;
    (sim - pred).abs() <= k * sigma
}

fn check(cfg: &SimConfig) -> Result<(), TestCaseError> {
    let pred = predict_rates(cfg.pair_rate_hz, cfg, 1.6).unwrap();
    let half_ns = 5.0;
    let run = simulate_coincidences(cfg, half_ns).unwrap();
    let d = cfg.duration_s;
    let s1 = run.counts.singles_rate(0);
    let s2 = run.counts.singles_rate(1);
    let c = run.delays_ps.len() as f64 / d;
    let c_pred = pred.window_coincidences(cfg.linewidth_mhz, half_ns);
    // singles are not Poisson under dead time, but sub-Poissonian, so √N is conservative
    prop_assert!(within(s1, pred.singles[0], d, 3.0), "singles1 {} vs {}", s1, pred.singles[0]);
    prop_assert!(within(s2, pred.singles[1], d, 3.0), "singles2 {} vs {}", s2, pred.singles[1]);
    prop_assert!(within(c, c_pred, d, 3.0), "coincidences {} vs {}", c, c_pred);
    Ok(())
}

#[test]
fn reference_defaults_close() {
    let cfg = SimConfig {
        duration_s: 20.0,
        ..SimConfig::default()
    };
    check(&cfg).unwrap();
    let full = simulate(&cfg).unwrap();
    assert!(full.det1.is_strictly_increasing() && full.det2.is_strictly_increasing());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]
    #[test]
    fn randomized_configs_close(
        rate_scale in 0.2f64..5.0,
        eff1 in 0.01f64..0.2,
        eff2 in 0.02f64..0.3,
        extra_db in 0.0f64..3.0,
        dark1 in 0.0f64..2000.0,
        dark2 in 0.0f64..4e-5,
        dead in 0.0f64..40.0,
        ap in 0.0f64..0.1,
        gated in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let mut cfg = SimConfig {
            pair_rate_hz: 6.6e6 * rate_scale,
            duration_s: 5.0,
            seed,
            ..SimConfig::default()
        };
        cfg.chain.arm1[0].loss_db += extra_db;
        let [d1, d2] = &mut cfg.detectors;
        d1.efficiency = eff1;
        d1.dark_rate_hz = dark1;
        d1.dead_time_us = dead;
        d1.afterpulse_prob = ap;
        d2.efficiency = eff2;
        d2.dark_prob_per_ns = dark2;
        if !gated {
            d2.mode = DetectorMode::FreeRunning;
            d2.dark_rate_hz = dark2 * 1e9;
            d2.dead_time_us = dead;
        }
        check(&cfg)?;
    }
}
