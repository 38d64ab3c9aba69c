use std::sync::OnceLock;

use ecc_motion::ecc::{pair_inconsistency, total_cost, weighted_table, EccConfig};
use ecc_motion::geometry::{apply_motion, ProjectionMatrix, RigidParams};
use ecc_motion::radon::{default_grid, RadonDerivativeTable};
use ecc_motion::simulation::{forward_project_area, make_phantom, short_scan_trajectory, ScanGeometry};
use proptest::prelude::*;

struct Scan {
    ps: Vec<ProjectionMatrix>,
    tables: Vec<RadonDerivativeTable>,
}

/// Default scan of the tibia-like phantom with 4× pixel supersampling.
fn scan() -> &'static Scan {
    static SCAN: OnceLock<Scan> = OnceLock::new();
    SCAN.get_or_init(|| {
        let g = ScanGeometry::default();
        let ps = short_scan_trajectory(&g).unwrap();
        let ph = make_phantom("tibia-like").unwrap();
        let (na, nt) = default_grid(g.detector_cols, g.detector_rows);
        let tables = ps
            .iter()
            .map(|p| {
                let img = forward_project_area(&ph, p, g.detector_rows, g.detector_cols, g.pixel_pitch_mm, 4).unwrap();
                weighted_table(&img, p, na, nt).unwrap()
            })
            .collect();
        Scan { ps, tables }
    })
}

fn cost_with_view0(params0: RigidParams) -> f64 {
    let s = scan();
    let mut params = vec![RigidParams::ZERO; s.ps.len()];
    params[0] = params0;
    total_cost(&s.ps, &s.tables, &params, &EccConfig::default()).unwrap()
}

#[test]
fn clean_geometry_is_a_local_minimum_along_each_axis() {
    let clean = cost_with_view0(RigidParams::ZERO);
    for k in 0..6 {
        let step = if k < 3 { 0.05 } else { 1.0 };
        for sign in [-1.0, 1.0] {
            let mut a = [0.0; 6];
            a[k] = sign * step;
            let c = cost_with_view0(RigidParams::from_array(a));
            if k == 5 {
                assert!(c >= clean, "rz {sign}: {c} < {clean}");
            } else {
                assert!(c > clean, "axis {k} {sign}: {c} <= {clean}");
            }
        }
    }
}

#[test]
fn total_cost_does_not_depend_on_thread_count() {
    let s = scan();
    let params: Vec<RigidParams> = (0..s.ps.len())
        .map(|i| RigidParams {
            tz: 0.001 * (i % 7) as f64,
            rx: 0.05 * (i % 3) as f64,
            ..RigidParams::ZERO
        })
        .collect();
    let cfg = EccConfig::default();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| total_cost(&s.ps, &s.tables, &params, &cfg).unwrap())
    };
    let one = run(1);
    assert_eq!(one.to_bits(), run(3).to_bits());
    assert_eq!(one.to_bits(), run(4).to_bits());
}

#[test]
fn pair_stride_selects_a_subset() {
    let s = scan();
    let zeros = vec![RigidParams::ZERO; s.ps.len()];
    let all = total_cost(&s.ps, &s.tables, &zeros, &EccConfig::default()).unwrap();
    let strided = EccConfig {
        pair_stride: 4,
        ..EccConfig::default()
    };
    let some = total_cost(&s.ps, &s.tables, &zeros, &strided).unwrap();
    assert!(some > 0.0 && some < all);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pair_inconsistency_is_symmetric(
        i in 0usize..60,
        gap in 1usize..59,
        t in prop::array::uniform3(-0.05f64..0.05),
        r in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let s = scan();
        let j = (i + gap) % 60;
        let motion = RigidParams::from_array([t[0], t[1], t[2], r[0], r[1], r[2]]);
        let pi = apply_motion(&s.ps[i], &motion);
        let cfg = EccConfig::default();
        let a = pair_inconsistency(&pi, &s.ps[j], &s.tables[i], &s.tables[j], &cfg).unwrap();
        let b = pair_inconsistency(&s.ps[j], &pi, &s.tables[j], &s.tables[i], &cfg).unwrap();
        prop_assert!(a.is_finite() && a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300), "{} vs {}", a, b);
    }

    #[test]
    fn global_rigid_motion_leaves_the_cost_unchanged(
        t in prop::array::uniform3(-0.05f64..0.05),
        r in prop::array::uniform3(-1.0f64..1.0),
    ) {
        // Moving the object moves every epipolar plane consistently.
        let s = scan();
        let g = RigidParams::from_array([t[0], t[1], t[2], r[0], r[1], r[2]]);
        let cfg = EccConfig::default();
        let m = RigidParams { tz: 0.03, rx: 0.5, ..RigidParams::ZERO };
        for (i, j) in [(0usize, 13usize), (5, 50), (20, 21)] {
            let pi = apply_motion(&s.ps[i], &m);
            let a = pair_inconsistency(&pi, &s.ps[j], &s.tables[i], &s.tables[j], &cfg).unwrap();
            let (gi, gj) = (apply_motion(&pi, &g), apply_motion(&s.ps[j], &g));
            let b = pair_inconsistency(&gi, &gj, &s.tables[i], &s.tables[j], &cfg).unwrap();
            // Equal up to table interpolation at the shifted planes.
            prop_assert!((a - b).abs() <= 0.1 * a, "pair ({}, {}): {} vs {}", i, j, a, b);
        }
    }
}
