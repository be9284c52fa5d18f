mod common;

use common::table_mismatches;
use les_core::perf::{comparison_table, fractions, metric, reference, weak_scaling, TableRow};

#[test]
fn metric_unit_examples() {
    assert_eq!(metric(9711.7, 1, 1_000_000), 9711.7);
    assert_eq!(metric(2000.0, 2, 1_000_000), 1000.0);
    assert_eq!(metric(500.0, 1, 500_000), 1000.0);
}

#[test]
fn component_table_derived_columns() {
    let bad = table_mismatches(&reference::COMPONENT_TIMINGS, "Timestep loop", false);
    assert!(bad.is_empty(), "{bad:?}");
}

#[test]
fn poisson_table_derived_columns() {
    // The Total row speedups do not follow from that row's raw timings.
    let bad = table_mismatches(&reference::POISSON_TIMINGS, "Total", true);
    assert!(bad.is_empty(), "{bad:?}");
}

#[test]
fn headline_cells() {
    let cpu = reference::column(&reference::COMPONENT_TIMINGS, 0);
    let t = comparison_table(&cpu, &reference::column(&reference::COMPONENT_TIMINGS, 1), "Timestep loop").unwrap();
    let row = |n: &str| -> &TableRow { t.iter().find(|r| r.name == n).unwrap() };
    assert_eq!(format!("{:.2}", row("Timestep loop").speedup), "3.97");
    assert_eq!(format!("{:.1}", row("Poisson").base_fraction), "28.1");
    assert_eq!(format!("{:.2}", row("Poisson").speedup), "1.89");
    assert_eq!(format!("{:.1}", row("Thermodynamics").base_fraction), "12.1");
}

#[test]
fn fractions_of_total() {
    let f = fractions(&reference::column(&reference::COMPONENT_TIMINGS, 0), "Timestep loop").unwrap();
    assert_eq!(f.last().unwrap().1, 100.0);
}

#[test]
fn flat_components_scale_perfectly() {
    let runs: Vec<_> = [1usize, 2, 4, 8].iter().map(|&n| (n, vec![("a".to_string(), 3.5)])).collect();
    let rows = weak_scaling(&runs).unwrap();
    assert!(rows.iter().all(|r| r.efficiency == 1.0));
}
