//! Property tests over randomized shapes and schedules.

use proptest::prelude::*;

use pjrm_core::adam::{adam_step, AdamState};
use pjrm_core::analysis::time_lapse_std;
use pjrm_core::poststack::{ricker_wavelet, PoststackOperator};
use pjrm_core::scenario::{grow_plume, PlumeSchedule};
use pjrm_core::{Grid2D, StreamRng};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // dot-product identity on random grid shapes and wavelets
    #[test]
    fn adjoint_identity_holds_everywhere(
        nz in 2usize..40,
        nx in 1usize..20,
        hw in 1usize..8,
        seed in 0u64..1_000_000,
        dz in 1.0f64..20.0,
        scale in 0.1f64..3.0,
    ) {
        let w = ricker_wavelet(15.0, 0.01, hw).unwrap();
        let op = PoststackOperator::new(nz, nx, w, dz, scale).unwrap();
        let mut rng = StreamRng::new(seed, 0);
        let mut x = Grid2D::<f64>::zeros(nz, nx);
        let mut y = Grid2D::<f64>::zeros(nz, nx);
        rng.fill_normal(x.as_mut_slice());
        rng.fill_normal(y.as_mut_slice());
        let ax = op.apply_forward(&x).unwrap();
        let aty = op.apply_adjoint(&y).unwrap();
        let lhs = ax.dot(&y).unwrap();
        let rhs = x.dot(&aty).unwrap();
        let rel = (lhs - rhs).abs() / (ax.norm() * y.norm() + 1e-30);
        prop_assert!(rel < 1e-10, "rel {}", rel);
    }

    // plume supports nest whenever the schedule's growth dominates its drift
    #[test]
    fn plume_masks_nest_for_valid_schedules(
        r0 in 3.0f64..6.0,
        grow in 1.0f64..4.0,
        drift in 0.0f64..0.8,
        power in 0.8f64..2.0,
    ) {
        let s = PlumeSchedule {
            num_surveys: 4,
            center_z: 50.0,
            center_x: 30.0,
            radius_z: (r0, r0 + grow),
            radius_x: (r0, r0 + grow),
            amplitude: (-0.2, -0.4),
            drift_per_survey: drift,
            profile_power: power,
        };
        if s.validate(100, 60).is_err() {
            return Ok(()); // schedule leaves the grid; nothing to check
        }
        prop_assume!(grow / 3.0 > drift); // per-step growth must beat drift
        let mut prev: Option<Grid2D<bool>> = None;
        for i in 1..=4 {
            let a: Grid2D<f64> = grow_plume(&s, i, 100, 60).unwrap();
            let support = a.map(|v| v != 0.0);
            if let Some(p) = &prev {
                for (&was, &now) in p.as_slice().iter().zip(support.as_slice()) {
                    prop_assert!(!was || now);
                }
            }
            prev = Some(support);
        }
    }

    // pixel-wise std of sample differences is non-negative and zero for
    // identical pairs
    #[test]
    fn time_lapse_std_is_nonnegative(
        s in 2usize..6,
        nz in 1usize..8,
        nx in 1usize..8,
        seed in 0u64..1_000_000,
    ) {
        let mut rng = StreamRng::new(seed, 1);
        let a: Vec<Grid2D<f64>> = (0..s).map(|_| {
            let mut g = Grid2D::zeros(nz, nx);
            rng.fill_normal(g.as_mut_slice());
            g
        }).collect();
        let b: Vec<Grid2D<f64>> = (0..s).map(|_| {
            let mut g = Grid2D::zeros(nz, nx);
            rng.fill_normal(g.as_mut_slice());
            g
        }).collect();
        let sd = time_lapse_std(&a, &b).unwrap();
        prop_assert!(sd.as_slice().iter().all(|&v| v >= 0.0));
        let zero = time_lapse_std(&a, &a).unwrap();
        prop_assert!(zero.as_slice().iter().all(|&v| v.abs() < 1e-12));
    }

    // ADAM preserves shapes, counts steps by one, and keeps params finite
    // for finite gradients
    #[test]
    fn adam_preserves_shape_and_counts_steps(
        len in 1usize..64,
        steps in 1usize..20,
        seed in 0u64..1_000_000,
        lr in 1e-4f64..0.5,
    ) {
        let mut rng = StreamRng::new(seed, 2);
        let mut params = vec![0.0f64; len];
        rng.fill_normal(&mut params);
        let mut st = AdamState::new(len);
        for k in 1..=steps {
            let mut grads = vec![0.0f64; len];
            rng.fill_normal(&mut grads);
            adam_step(&mut params, &grads, &mut st, lr).unwrap();
            prop_assert_eq!(st.step(), k as u64);
        }
        prop_assert_eq!(params.len(), len);
        prop_assert!(params.iter().all(|v| v.is_finite()));
    }
}
