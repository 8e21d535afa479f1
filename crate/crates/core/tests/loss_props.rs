use cfcnet::losses::{focal_loss, smooth_l1, total_loss, LossConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1024))]

    #[test]
    fn focal_loss_monotone(p in 0.0..=1.0f64, q in 0.0..=1.0f64) {
        let cfg = LossConfig::default();
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(focal_loss(lo, true, &cfg) >= focal_loss(hi, true, &cfg));
        prop_assert!(focal_loss(lo, false, &cfg) <= focal_loss(hi, false, &cfg));
        prop_assert!(focal_loss(p, true, &cfg) >= 0.0);
        prop_assert!(focal_loss(p, true, &cfg).is_finite());
    }

    #[test]
    fn focal_mirror(p in 0.0..=1.0f64) {
        // a positive at p is a negative at 1 - p with alpha swapped
        let cfg = LossConfig::default();
        let swapped = LossConfig { focal_alpha: 1.0 - cfg.focal_alpha, ..cfg };
        let a = focal_loss(p, true, &cfg);
        let b = focal_loss(1.0 - p, false, &swapped);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn smooth_l1_even_and_monotone(x in -10.0..10.0f64, y in -10.0..10.0f64, beta in 0.01..2.0f64) {
        prop_assert_eq!(smooth_l1(x, beta), smooth_l1(-x, beta));
        if x.abs() <= y.abs() {
            prop_assert!(smooth_l1(x, beta) <= smooth_l1(y, beta));
        }
        // continuous and below |x|
        prop_assert!(smooth_l1(x, beta) <= x.abs());
        prop_assert!(smooth_l1(x, beta) >= x.abs() - beta / 2.0 - 1e-12);
    }

    #[test]
    fn composition_is_linear(c in 0.0..10.0f64, r in 0.0..10.0f64, g in 0.0..10.0f64) {
        let cfg = LossConfig::default();
        prop_assert_eq!(total_loss(c, r, g, &cfg), c + 0.5 * r + 0.5 * g);
    }
}
