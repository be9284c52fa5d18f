mod common;

use common::*;
use les_core::fields::{Field3, Shape};
use les_core::microphys::{merge_ranges, warm_rain_tendencies, MicroConfig};
use proptest::prelude::*;

#[test]
fn scan_and_reduction_agree_on_random_masks() {
    assert_eq!(active_range_mismatches(1000, 4), 0);
}

#[test]
fn sedimentation_strategies_agree_and_conserve_mass() {
    let r = sedimentation_check(8, 40);
    assert!(r.strategy_rel <= 1e-14, "{r:?}");
    assert!(r.mass_rel <= 1e-12, "{r:?}");
}

#[test]
fn conversion_never_exceeds_available_cloud_water() {
    let s = Shape::new(4, 4, 3, 1);
    let ql = Field3::filled(s, 2e-3);
    let qr = Field3::filled(s, 5e-3);
    let dt = 1e4;
    let (qr_t, ql_t) = warm_rain_tendencies(&ql, &qr, Some((0, 2)), &MicroConfig::default(), Some(dt));
    for (a, b) in qr_t.interior().iter().zip(ql_t.interior()) {
        assert_eq!(*a, -b);
        assert!(b * dt >= -2e-3 * (1.0 + 1e-12));
    }
}

proptest! {
    #[test]
    fn range_merge_is_commutative_and_associative(
        a in proptest::option::of((0usize..50, 0usize..50)),
        b in proptest::option::of((0usize..50, 0usize..50)),
        c in proptest::option::of((0usize..50, 0usize..50)),
    ) {
        let norm = |r: Option<(usize, usize)>| r.map(|(x, y)| (x.min(y), x.max(y)));
        let (a, b, c) = (norm(a), norm(b), norm(c));
        prop_assert_eq!(merge_ranges(a, b), merge_ranges(b, a));
        prop_assert_eq!(merge_ranges(merge_ranges(a, b), c), merge_ranges(a, merge_ranges(b, c)));
        prop_assert_eq!(merge_ranges(a, None), a);
    }
}
