use proptest::prelude::*;

use extprof_core::classify::{classify, labels_monotone, DEFAULT_MARGIN};
use extprof_core::ode::StepControl;
use extprof_core::profile::integrate_profile;
use extprof_core::psi::{compare_on_grid, integrate_psi, start_ordinate, Y_START};
use extprof_core::Params;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn profile_stays_in_its_bounds(p in 1.15f64..1.9, la in -3.0f64..2.0) {
        let pr = Params::new(p).unwrap();
        let a = 10f64.powf(la);
        let prof = integrate_profile(&pr, a, 30.0, &StepControl::relative(1e-10)).unwrap();
        let r = prof.radii();
        for i in 1..prof.interior_len() {
            // f - a ~ r^{p/(p-1)} vanishes in double precision near the origin
            prop_assert!(prof.f(i) <= prof.f(i - 1));
            prop_assert!(prof.g(i) < a * (1.0 - (-r[i]).exp()) * (1.0 + 1e-9));
        }
    }

    #[test]
    fn labels_are_ordered_in_the_parameter(p in 1.15f64..1.9, l1 in -2.0f64..1.5, l2 in -2.0f64..1.5) {
        let pr = Params::new(p).unwrap();
        let (a1, a2) = (10f64.powf(l1.min(l2)), 10f64.powf(l1.max(l2)));
        let r1 = classify(&pr, a1, DEFAULT_MARGIN).unwrap().regime;
        let r2 = classify(&pr, a2, DEFAULT_MARGIN).unwrap().regime;
        prop_assert!(labels_monotone(&[r1, r2]), "{a1} {r1} / {a2} {r2}");
    }

    #[test]
    fn psi_is_ordered_in_the_parameter(p in 1.2f64..1.8, l1 in -1.5f64..0.5, dl in 0.05f64..0.5) {
        let pr = Params::new(p).unwrap();
        let (a1, a2) = (10f64.powf(l1), 10f64.powf(l1 + dl));
        let ctrl = StepControl::relative(1e-10);
        let lo = integrate_psi(&pr, a1, 0.99, &ctrl).unwrap();
        let hi = integrate_psi(&pr, a2, 0.99, &ctrl).unwrap();
        let rep = compare_on_grid(&lo, &hi).unwrap();
        prop_assert!(rep.max_lhs_minus_rhs <= 1e-8);
        prop_assert!(rep.max_rhs_minus_lhs > 0.0);
    }

    #[test]
    fn start_ordinate_shrinks_with_the_parameter(p in 1.1f64..1.9, a in 1e-3f64..10.0) {
        let pr = Params::new(p).unwrap();
        let y = start_ordinate(&pr, a);
        prop_assert!(y > 0.0 && y <= Y_START);
        prop_assert!(start_ordinate(&pr, a / 2.0) <= y);
    }
}
