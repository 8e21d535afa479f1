use cfcnet::pam::{
    channel_attention, pam_forward, pam_fuse, psi_cls, psi_reg, spatial_attention, PamWeights,
    SpatialKernels, TaskKind, DEFAULT_ETA,
};
use cfcnet::tensor::{conv2d, DenseTensor, Matrix};
use proptest::prelude::*;

fn tensor(shape: [usize; 4], vals: &[f32]) -> DenseTensor {
    let mut i = 0;
    DenseTensor::from_fn(shape, |_| {
        let v = vals[i % vals.len()];
        i += 1;
        v
    })
}

fn arb_vals(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-2.0f32..2.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn psi_cls_symmetry(x in 0.0..=1.0f64, eta in 0.1..50.0f64) {
        prop_assert!((psi_cls(x, eta) + psi_cls(1.0 - x, eta) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn psi_cls_increasing(x in 0.0..1.0f64, d in 1e-6..1.0f64) {
        let y = (x + d).min(1.0);
        if y > x {
            prop_assert!(psi_cls(y, DEFAULT_ETA) > psi_cls(x, DEFAULT_ETA));
        }
    }

    #[test]
    fn psi_reg_tent(x in 0.0..=1.0f64) {
        // 1 - (1 - x) is not always x in binary floating point
        prop_assert!((psi_reg(x) - psi_reg(1.0 - x)).abs() <= f64::EPSILON / 2.0);
        prop_assert!(psi_reg(x) <= 0.5);
        if x != 0.5 {
            prop_assert!(psi_reg(x) < 0.5);
        }
    }

    #[test]
    fn conv_is_linear(a in arb_vals(50), b in arb_vals(50), k in arb_vals(18), s in -2.0f32..2.0, d in 1usize..3) {
        let shape = [1, 2, 5, 5];
        let (ta, tb) = (tensor(shape, &a), tensor(shape, &b));
        let kernel = tensor([1, 2, 3, 3], &k);
        let lhs = conv2d(&ta.zip_map(&tb, |x, y| s * x + y).unwrap(), &kernel, (d, d)).unwrap();
        let ca = conv2d(&ta, &kernel, (d, d)).unwrap();
        let cb = conv2d(&tb, &kernel, (d, d)).unwrap();
        let rhs = ca.zip_map(&cb, |x, y| s * x + y).unwrap();
        prop_assert_eq!(lhs.shape(), [1, 1, 5, 5]);
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((x - y).abs() < 1e-4 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn attention_maps_in_unit_interval(f in arb_vals(4 * 36), w0 in arb_vals(8), w1 in arb_vals(8), k in arb_vals(4 * 9)) {
        let spatial = SpatialKernels {
            branch_3x3: tensor([1, 4, 3, 3], &k),
            branch_1x3_dilated: tensor([1, 4, 1, 3], &k),
            branch_3x1_dilated: tensor([1, 4, 3, 1], &k),
            branch_3x3_dilated: tensor([1, 4, 3, 3], &k),
            fuse_3x3: tensor([1, 4, 3, 3], &k),
        };
        let w = PamWeights::new(
            Matrix::new(2, 4, w0).unwrap(),
            Matrix::new(4, 2, w1).unwrap(),
            spatial,
            2,
            2,
            DEFAULT_ETA,
        )
        .unwrap();
        let feat = tensor([1, 4, 6, 6], &f);
        let mc = channel_attention(&feat, &w).unwrap();
        let ms = spatial_attention(&feat, &w).unwrap();
        prop_assert_eq!(mc.shape(), [1, 4, 1, 1]);
        prop_assert_eq!(ms.shape(), [1, 1, 6, 6]);
        // an f32 sigmoid saturates to exactly 0 or 1 for large inputs
        prop_assert!(mc.data().iter().chain(ms.data()).all(|&v| (0.0..=1.0).contains(&v)));
        for task in [TaskKind::Classification, TaskKind::Regression] {
            prop_assert_eq!(pam_forward(&feat, &w, task).unwrap().shape(), feat.shape());
        }
    }

    #[test]
    fn zero_maps_scale_by_one_and_a_half(f in arb_vals(2 * 3 * 4 * 5)) {
        let feat = tensor([2, 3, 4, 5], &f);
        let mc = DenseTensor::zeros([2, 3, 1, 1]);
        let ms = DenseTensor::zeros([2, 1, 4, 5]);
        for task in [TaskKind::Classification, TaskKind::Regression] {
            let out = pam_fuse(&feat, &mc, &ms, task, DEFAULT_ETA).unwrap();
            for (o, x) in out.data().iter().zip(feat.data()) {
                prop_assert_eq!(*o, 1.5 * x);
            }
        }
    }
}

#[test]
fn zero_features_give_the_attention_product() {
    let feat = DenseTensor::zeros([1, 2, 3, 3]);
    let mc = DenseTensor::new([1, 2, 1, 1], vec![0.25, 0.75]).unwrap();
    let ms = DenseTensor::filled([1, 1, 3, 3], 0.5);
    let out = pam_fuse(&feat, &mc, &ms, TaskKind::Classification, DEFAULT_ETA).unwrap();
    assert!(out.data()[..9].iter().all(|&v| v == 0.125));
    assert!(out.data()[9..].iter().all(|&v| v == 0.375));
}
