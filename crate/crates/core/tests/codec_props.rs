use std::f64::consts::FRAC_PI_2;

use cfcnet::anchors::{decode_offsets, encode_offsets, generate_grid, PyramidSpec};
use cfcnet::geometry::{normalize_angle, RotatedBox};
use proptest::prelude::*;

fn arb_box() -> impl Strategy<Value = RotatedBox> {
    (
        -1e3..1e3f64,
        -1e3..1e3f64,
        1.0..300.0f64,
        1.0..300.0f64,
        -FRAC_PI_2..FRAC_PI_2,
    )
        .prop_map(|(x, y, w, h, t)| RotatedBox::new(x, y, w, h, t).unwrap())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1024))]

    #[test]
    fn decode_inverts_encode(a in arb_box(), t in arb_box(), dt in -1.2..1.2f64) {
        let target = RotatedBox::new(t.cx(), t.cy(), t.w(), t.h(), a.theta() + dt).unwrap();
        let back = decode_offsets(&a, &encode_offsets(&a, &target));
        prop_assert!(rel(back.cx(), target.cx()) < 1e-9);
        prop_assert!(rel(back.cy(), target.cy()) < 1e-9);
        prop_assert!(rel(back.w(), target.w()) < 1e-9);
        prop_assert!(rel(back.h(), target.h()) < 1e-9);
        prop_assert!(normalize_angle(back.theta() - target.theta()).abs() < 1e-9);
    }

    #[test]
    fn encoding_is_translation_invariant(a in arb_box(), t in arb_box(), dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
        let o1 = encode_offsets(&a, &t);
        let o2 = encode_offsets(&a.translated(dx, dy), &t.translated(dx, dy));
        for (x, y) in o1.to_array().iter().zip(o2.to_array()) {
            prop_assert!((x - y).abs() < 1e-6 * x.abs().max(1.0));
        }
    }

    #[test]
    fn grid_count_matches_levels(w in 1u32..1500, h in 1u32..1500) {
        let spec = PyramidSpec::p3_p7(w, h);
        let expected: usize = [8u32, 16, 32, 64, 128]
            .iter()
            .map(|s| (w.div_ceil(*s) * h.div_ceil(*s)) as usize)
            .sum();
        prop_assert_eq!(spec.anchor_count(), expected);
        prop_assert_eq!(generate_grid(&spec).len(), expected);
    }
}
