mod common;

use common::halo_mismatch;

#[test]
fn exchanged_halos_equal_the_periodic_global_field() {
    assert_eq!(halo_mismatch(12, 8, 4, 1, &[(1, 1), (2, 2), (3, 2), (6, 1)]), 0.0);
    assert_eq!(halo_mismatch(12, 12, 4, 3, &[(1, 1), (2, 2), (4, 4), (1, 3)]), 0.0);
}
