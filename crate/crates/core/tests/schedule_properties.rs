mod common;

use common::{coeffs, diffusion_consistency_z, semigroup_errors, SCHEDULES};
use pdmd_core::NoiseSchedule;
use proptest::prelude::*;

#[test]
fn semigroup_holds_on_a_dense_grid() {
    for schedule in SCHEDULES {
        let (ea, ev) = semigroup_errors(schedule, 50);
        assert!(ea < 1e-10, "{schedule:?}: alpha composition off by {ea:e}");
        assert!(ev < 1e-10, "{schedule:?}: variance composition off by {ev:e}");
    }
}

#[test]
fn marginals_match_closed_forms() {
    for schedule in SCHEDULES {
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            let (a, s) = schedule.coeffs(t).unwrap();
            let (ea, es) = coeffs(schedule, t);
            assert!((a - ea).abs() < 1e-12 && (s - es).abs() < 1e-12, "{schedule:?} t={t}");
        }
    }
}

#[test]
fn two_stage_diffusion_matches_direct() {
    let pairs = [(0.0, 0.3), (0.2, 0.5), (0.5, 0.9), (0.1, 0.99), (0.7, 0.71)];
    for (k, schedule) in SCHEDULES.into_iter().enumerate() {
        for (j, &(s, t)) in pairs.iter().enumerate() {
            let z = diffusion_consistency_z(schedule, s, t, 100_000, (10 * k + j) as u64);
            assert!(z < 3.0, "{schedule:?} s={s} t={t}: z = {z:.2}");
        }
    }
}

#[test]
fn snr_decreases_strictly() {
    for schedule in SCHEDULES {
        let n = 10_000;
        let mut prev = f64::INFINITY;
        for i in 1..n {
            let snr = schedule.snr(i as f64 / n as f64).unwrap();
            assert!(snr < prev, "{schedule:?} at step {i}");
            prev = snr;
        }
    }
}

#[test]
fn bridge_rejects_reversed_times() {
    assert!(NoiseSchedule::RectifiedFlow.bridge_coeffs(0.6, 0.4).is_err());
    assert!(NoiseSchedule::VariancePreservingCosine.bridge_coeffs(1.0, 1.0).is_ok());
}

proptest! {
    #[test]
    fn semigroup_at_random_triples(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0, vp in any::<bool>()) {
        let schedule = if vp { NoiseSchedule::VariancePreservingCosine } else { NoiseSchedule::RectifiedFlow };
        let mut v = [a, b, c];
        v.sort_by(f64::total_cmp);
        let [r, s, t] = v;
        let sr = schedule.bridge_coeffs(r, s).unwrap();
        let ts = schedule.bridge_coeffs(s, t).unwrap();
        let tr = schedule.bridge_coeffs(r, t).unwrap();
        prop_assert!((ts.alpha_ts * sr.alpha_ts - tr.alpha_ts).abs() < 1e-10);
        let rhs = ts.sigma_ts.powi(2) + ts.alpha_ts.powi(2) * sr.sigma_ts.powi(2);
        prop_assert!((tr.sigma_ts.powi(2) - rhs).abs() < 1e-10);
        prop_assert!(tr.sigma_ts >= 0.0 && tr.alpha_ts > 0.0);
    }
}
